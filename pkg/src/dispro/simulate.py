"""Synthetic cohort generation.

Parameters are drawn from the model's priors, patients are assigned to two
(or more) demographic groups, latents are drawn from their group
distributions, visits from the discretized severity-dependent point process,
and features emitted with Gaussian noise at every visit bin. The generating
parameters and per-patient latents are returned in a truth sidecar keyed by
the same canonical names the sampler output uses.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import LOG_RATE_CAP
from .priors import PriorSpec, simulation_priors
from .types import (
    ConfigurationError,
    Dataset,
    GroupId,
    GroupParams,
    PatientLatents,
    PatientRecord,
    SharedParams,
)


@dataclass
class SimConfig:
    """Synthetic cohort settings.

    group_probability is the chance a patient belongs to the non-pinned
    group(s). n_bins counts bins after the first visit, so records span
    n_bins * bin_width time units. group_specific_rates draws a separate
    progression-rate distribution per group (used by the ablation-bias
    experiment, where groups must differ in all three disparities); the
    default draws a single shared pair.
    """

    n_patients: int = 1000
    group_probability: float = 0.5
    n_features: int = 4
    n_bins: int = 50
    bin_width: float = 1.0 / 50.0
    seed: int = 0
    n_groups: int = 2
    group_specific_rates: bool = False
    priors: PriorSpec | None = None

    def __post_init__(self):
        if not (0.0 < self.group_probability < 1.0):
            raise ConfigurationError("group_probability must lie in (0, 1)")
        if min(self.n_patients, self.n_features, self.n_bins, self.n_groups) < 1:
            raise ConfigurationError("counts must be positive")
        if self.n_groups < 2:
            raise ConfigurationError("need a pinned and at least one other group")
        if self.bin_width <= 0:
            raise ConfigurationError("bin_width must be positive")

    def prior_spec(self) -> PriorSpec:
        return self.priors if self.priors is not None else simulation_priors()


@dataclass
class TruthSidecar:
    """Ground truth for a synthetic dataset: canonical parameter names to
    values, plus per-patient latents and the generating config."""

    params: dict[str, float]
    latents: dict[str, float]
    meta: dict = field(default_factory=dict)

    def latent(self, patient_id: str) -> PatientLatents:
        return PatientLatents(self.latents[f"init_sev[{patient_id}]"],
                              self.latents[f"rate[{patient_id}]"])

    def true_severity(self, patient_id: str, time: float) -> float:
        return self.latent(patient_id).severity(time)

    def param_bundles(self):
        """Rebuild (SharedParams, [GroupParams]) from the canonical names."""
        p = self.params
        d = 0
        while f"loading[{d}]" in p:
            d += 1
        shared = SharedParams(
            loadings=[p[f"loading[{j}]"] for j in range(d)],
            feat_intercepts=[p[f"feat_intercept[{j}]"] for j in range(d)],
            noise_vars=[p[f"noise_var[{j}]"] for j in range(d)],
            visit_intercept=p["visit_intercept"],
            visit_severity=p["visit_severity"],
        )
        groups = []
        g = 0
        while f"init_sev_mean[{g}]" in p:
            groups.append(GroupParams(p[f"init_sev_mean[{g}]"],
                                      p[f"init_sev_sd[{g}]"],
                                      p[f"rate_mean[{g}]"],
                                      p[f"rate_sd[{g}]"],
                                      p[f"visit_offset[{g}]"]))
            g += 1
        return shared, groups


def draw_true_params(cfg: SimConfig, rng: np.random.Generator):
    """Draw generating parameters from the priors. The pinned group keeps
    init N(0, 1) and zero visit offset; rate parameters are drawn once and
    shared across groups unless cfg.group_specific_rates."""
    pr = cfg.prior_spec()
    d = cfg.n_features
    loadings = np.empty(d)
    loadings[0] = pr.for_role("loading0", 0).draw(rng)
    for j in range(1, d):
        loadings[j] = pr.for_role("loading", j).draw(rng)
    shared = SharedParams(
        loadings=loadings,
        feat_intercepts=pr.feat_intercept.draw(rng, size=d),
        noise_vars=pr.noise_var.draw(rng, size=d),
        visit_intercept=float(pr.visit_intercept.draw(rng)),
        visit_severity=float(pr.visit_severity.draw(rng)),
    )
    if not cfg.group_specific_rates:
        rate_mean = float(pr.rate_mean.draw(rng))
        rate_sd = float(pr.rate_sd.draw(rng))
    groups = []
    for g in range(cfg.n_groups):
        if cfg.group_specific_rates:
            rate_mean = float(pr.rate_mean.draw(rng))
            rate_sd = float(pr.rate_sd.draw(rng))
        if g == 0:
            groups.append(GroupParams(0.0, 1.0, rate_mean, rate_sd, 0.0))
        else:
            groups.append(GroupParams(
                init_sev_mean=float(pr.init_sev_mean.draw(rng)),
                init_sev_sd=float(pr.init_sev_sd.draw(rng)),
                rate_mean=rate_mean,
                rate_sd=rate_sd,
                visit_offset=float(pr.visit_offset.draw(rng)),
            ))
    return shared, groups


def _simulate_patient(pid, group, shared, gp, cfg, rng):
    sev0 = rng.normal(gp.init_sev_mean, gp.init_sev_sd)
    rate = rng.normal(gp.rate_mean, gp.rate_sd)
    t = np.arange(cfg.n_bins + 1)
    sev = sev0 + rate * t * cfg.bin_width
    eta = np.minimum(shared.visit_intercept + shared.visit_severity * sev
                     + gp.visit_offset, LOG_RATE_CAP)
    p_visit = -np.expm1(-np.exp(eta) * cfg.bin_width)
    visits = np.zeros(cfg.n_bins + 1, dtype=np.int8)
    visits[0] = 1
    visits[1:] = rng.random(cfg.n_bins) < p_visit[1:]
    features = np.full((cfg.n_bins + 1, cfg.n_features), np.nan)
    vbins = np.flatnonzero(visits)
    noise = rng.normal(size=(vbins.size, cfg.n_features)) * np.sqrt(shared.noise_vars)
    features[vbins] = (np.outer(sev[vbins], shared.loadings)
                       + shared.feat_intercepts + noise)
    record = PatientRecord(patient_id=pid, group=group, horizon=cfg.n_bins,
                           visits=visits, features=features)
    return record, PatientLatents(float(sev0), float(rate))


def simulate_dataset(cfg: SimConfig, params=None, rng=None):
    """Generate one cohort. Returns (Dataset, TruthSidecar).

    Reproducibility contract: one root seed deterministically yields the
    parameter draw, the group assignment, and one independent substream per
    patient, so per-patient simulation order does not matter.
    """
    root = np.random.SeedSequence(cfg.seed)
    streams = root.spawn(2 + cfg.n_patients)
    if params is None:
        params = draw_true_params(cfg, np.random.Generator(np.random.Philox(streams[0])))
    shared, groups = params

    assign_rng = np.random.Generator(np.random.Philox(streams[1]))
    if cfg.n_groups == 2:
        assignment = (assign_rng.random(cfg.n_patients)
                      < cfg.group_probability).astype(int)
    else:
        probs = np.full(cfg.n_groups,
                        cfg.group_probability / (cfg.n_groups - 1))
        probs[0] = 1.0 - cfg.group_probability
        assignment = assign_rng.choice(cfg.n_groups, size=cfg.n_patients, p=probs)

    width = max(4, len(str(cfg.n_patients - 1)))
    group_ids = [GroupId(g, is_pinned=(g == 0)) for g in range(cfg.n_groups)]
    patients, latents = [], {}
    for i in range(cfg.n_patients):
        pid = f"p{i:0{width}d}"
        g = int(assignment[i])
        rec, lat = _simulate_patient(
            pid, group_ids[g], shared, groups[g], cfg,
            np.random.Generator(np.random.Philox(streams[2 + i])))
        patients.append(rec)
        latents[f"init_sev[{pid}]"] = lat.init_sev
        latents[f"rate[{pid}]"] = lat.rate

    data = Dataset(patients=patients, n_groups=cfg.n_groups,
                   n_features=cfg.n_features, bin_width=cfg.bin_width)
    truth = TruthSidecar(
        params=truth_param_names(shared, groups),
        latents=latents,
        meta={"seed": cfg.seed, "n_patients": cfg.n_patients,
              "n_bins": cfg.n_bins, "bin_width": cfg.bin_width,
              "n_groups": cfg.n_groups, "n_features": cfg.n_features,
              "group_probability": cfg.group_probability,
              "group_specific_rates": cfg.group_specific_rates},
    )
    return data, truth


def truth_param_names(shared: SharedParams, groups: list[GroupParams]) -> dict[str, float]:
    """Canonical name -> value map for generating parameters. Group rate
    parameters are always recorded per group (identical values when shared)."""
    out = {}
    for j in range(shared.n_features):
        out[f"loading[{j}]"] = float(shared.loadings[j])
    for j in range(shared.n_features):
        out[f"feat_intercept[{j}]"] = float(shared.feat_intercepts[j])
    for j in range(shared.n_features):
        out[f"noise_var[{j}]"] = float(shared.noise_vars[j])
    out["visit_intercept"] = shared.visit_intercept
    out["visit_severity"] = shared.visit_severity
    for g, gp in enumerate(groups):
        out[f"init_sev_mean[{g}]"] = gp.init_sev_mean
        out[f"init_sev_sd[{g}]"] = gp.init_sev_sd
        out[f"rate_mean[{g}]"] = gp.rate_mean
        out[f"rate_sd[{g}]"] = gp.rate_sd
        out[f"visit_offset[{g}]"] = gp.visit_offset
    # aliases for variants that share the rate distribution across groups
    out["rate_mean"] = float(np.mean([gp.rate_mean for gp in groups]))
    out["rate_sd"] = float(np.mean([gp.rate_sd for gp in groups]))
    return out


def sample_features_at(shared: SharedParams, group: GroupParams, t: float,
                       n: int, rng: np.random.Generator) -> np.ndarray:
    """Monte Carlo draws of the feature vector at time t for one group,
    marginalizing latents; the simulation-side counterpart of
    marginal_feature_moments."""
    sev = (rng.normal(group.init_sev_mean, group.init_sev_sd, size=n)
           + rng.normal(group.rate_mean, group.rate_sd, size=n) * t)
    noise = rng.normal(size=(n, shared.n_features)) * np.sqrt(shared.noise_vars)
    return np.outer(sev, shared.loadings) + shared.feat_intercepts + noise


def sample_visit_rates(shared: SharedParams, group: GroupParams, t: float,
                       n: int, rng: np.random.Generator) -> np.ndarray:
    """Monte Carlo draws of the visit rate at time t for one group."""
    sev = (rng.normal(group.init_sev_mean, group.init_sev_sd, size=n)
           + rng.normal(group.rate_mean, group.rate_sd, size=n) * t)
    return np.exp(shared.visit_intercept + shared.visit_severity * sev
                  + group.visit_offset)


def expected_noiseless_features(shared: SharedParams, latent: PatientLatents,
                                time: float) -> np.ndarray:
    """Feature means for a single patient at a given time (no noise)."""
    sev = latent.severity(time)
    return shared.loadings * sev + shared.feat_intercepts
