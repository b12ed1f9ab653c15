"""Posterior post-processing: severity estimates, parameter-recovery and
calibration reports, disparity-magnitude summaries, and cluster-bootstrap
intervals."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .sampler import PosteriorDraws
from .types import ConfigurationError


def _bin_width(draws: PosteriorDraws) -> float:
    try:
        return float(draws.meta["bin_width"])
    except KeyError:
        raise ConfigurationError(
            "draws carry no bin_width metadata; fit them with fit_model") from None


def severity_estimate(draws: PosteriorDraws, patient_id: str, t: int) -> tuple[float, float]:
    """Posterior mean and sd of one patient's severity at bin t.

    Severity is linear in the latents, so per-draw severity is
    init_sev + rate * t * bin_width and the estimate is its average over
    draws.
    """
    time = t * _bin_width(draws)
    try:
        sev = (draws.column(f"init_sev[{patient_id}]")
               + draws.column(f"rate[{patient_id}]") * time)
    except KeyError:
        raise KeyError(f"patient {patient_id!r} not present in this fit") from None
    return float(sev.mean()), float(sev.std(ddof=1))


def severity_posterior_means(draws: PosteriorDraws):
    """Posterior-mean init_sev and rate per patient, in dataset order."""
    pids = draws.meta["patient_ids"]
    sev0 = np.array([draws.mean(f"init_sev[{p}]") for p in pids])
    rate = np.array([draws.mean(f"rate[{p}]") for p in pids])
    return pids, sev0, rate


@dataclass
class RecoveryReport:
    """True-versus-estimated concordance across repeated synthetic trials."""

    per_param: dict[str, dict]          # name -> {n, pearson_r, slope}
    severity_calibration: dict          # group-level severity scatter stats
    scatter: list[tuple]                # (trial, name, true, estimated)
    severity_scatter: list[tuple]       # (trial, group, mean_true, mean_est)

    def mean_r(self) -> float:
        vals = [v["pearson_r"] for v in self.per_param.values()
                if v["pearson_r"] is not None]
        return float(np.mean(vals)) if vals else math.nan

    def mean_slope(self) -> float:
        vals = [v["slope"] for v in self.per_param.values()
                if v["slope"] is not None]
        return float(np.mean(vals)) if vals else math.nan


def _pearson(x: np.ndarray, y: np.ndarray):
    if x.size < 2 or float(np.std(x)) == 0.0 or float(np.std(y)) == 0.0:
        return None  # correlation undefined under degenerate variance
    return float(np.corrcoef(x, y)[0, 1])


def _slope_through_origin(true: np.ndarray, est: np.ndarray):
    denom = float(true @ true)
    if denom == 0.0:
        return None
    return float(true @ est) / denom


def recovery_report(trials) -> RecoveryReport:
    """Concordance of true and posterior-mean parameters across trials.

    ``trials`` is a sequence of (draws, truth) pairs where truth maps
    canonical parameter names to generating values (a TruthSidecar or its
    params dict). Parameters are matched by name; for each, the report holds
    the Pearson correlation across trials and the no-intercept regression
    slope of estimates on truths. Group-level severity calibration pairs the
    per-group mean true severity with the mean estimated severity, one point
    per (trial, group).
    """
    trials = list(trials)
    if len(trials) < 2:
        raise ConfigurationError("recovery_report needs at least 2 trials")
    by_name: dict[str, list[tuple[float, float]]] = {}
    scatter = []
    severity_scatter = []
    for k, (draws, truth) in enumerate(trials):
        params = truth.params if hasattr(truth, "params") else truth["params"]
        latents = truth.latents if hasattr(truth, "latents") else truth["latents"]
        n_global = draws.meta.get("n_global", len(draws.names))
        for name in draws.names[:n_global]:
            if name in params:
                est = draws.mean(name)
                by_name.setdefault(name, []).append((params[name], est))
                scatter.append((k, name, float(params[name]), est))
        severity_scatter.extend(_group_severity_points(k, draws, latents))

    per_param = {}
    for name, pairs in by_name.items():
        true = np.array([p[0] for p in pairs])
        est = np.array([p[1] for p in pairs])
        per_param[name] = {"n": len(pairs),
                           "pearson_r": _pearson(true, est),
                           "slope": _slope_through_origin(true, est)}

    sev_true = np.array([p[2] for p in severity_scatter])
    sev_est = np.array([p[3] for p in severity_scatter])
    calibration = {"n": len(severity_scatter),
                   "pearson_r": _pearson(sev_true, sev_est),
                   "slope": _slope_through_origin(sev_true, sev_est)}
    return RecoveryReport(per_param=per_param,
                          severity_calibration=calibration,
                          scatter=scatter,
                          severity_scatter=severity_scatter)


def _group_severity_points(trial, draws, latents):
    """Per-group (mean true severity, mean estimated severity) over all
    patient-bins, one point per group."""
    pids = draws.meta["patient_ids"]
    groups = np.asarray(draws.meta["patient_groups"])
    width = _bin_width(draws)
    horizon = draws.meta["horizon_by_patient"]
    pts = []
    _, sev0_est, rate_est = severity_posterior_means(draws)
    sev0_true = np.array([latents[f"init_sev[{p}]"] for p in pids])
    rate_true = np.array([latents[f"rate[{p}]"] for p in pids])
    # mean severity over a trajectory of bins 0..T is sev0 + rate * (T/2) * width
    mean_time = np.array([h * width / 2.0 for h in horizon])
    for g in np.unique(groups):
        m = groups == g
        pts.append((trial, int(g),
                    float(np.mean(sev0_true[m] + rate_true[m] * mean_time[m])),
                    float(np.mean(sev0_est[m] + rate_est[m] * mean_time[m]))))
    return pts


@dataclass
class DisparitySummary:
    """Group differences versus the pinned reference group, with the worked
    unit conversions: initial-severity gaps in care-delay time units
    (gap / population mean progression rate), optionally in calendar years
    (times a user-supplied years-per-unit factor), and visit-rate ratios."""

    reference_group: int
    mean_rate: float
    per_group: dict[int, dict]
    years_per_unit: float | None = None


def disparity_summary(draws: PosteriorDraws, years_per_unit: float | None = None,
                      ci: float = 0.95) -> DisparitySummary:
    """Disparity magnitudes from a fitted model.

    Initial-severity gaps are posterior means of each group's init_sev_mean
    (the pinned group's is 0 by construction). The care-delay conversion
    divides the gap by the posterior-mean progression rate averaged over
    groups; it is undefined when that rate is ~0. Visit-rate ratios are
    exp(visit_offset). Intervals are equal-tailed posterior percentiles.
    """
    meta = draws.meta
    n_groups = int(meta.get("n_groups", 2))
    pinned = int(meta.get("pinned_group", 0))
    if n_groups < 2:
        raise ConfigurationError("disparity_summary needs at least 2 groups")

    rate_cols = []
    for g in range(n_groups):
        if draws.has(f"rate_mean[{g}]"):
            rate_cols.append(draws.column(f"rate_mean[{g}]"))
    if not rate_cols and draws.has("rate_mean"):
        rate_cols.append(draws.column("rate_mean"))
    mean_rate = float(np.mean([c.mean() for c in rate_cols])) if rate_cols else math.nan

    lo_q, hi_q = 100 * (1 - ci) / 2, 100 * (1 + ci) / 2
    per_group = {}
    for g in range(n_groups):
        if g == pinned:
            continue
        entry = {}
        if draws.has(f"init_sev_mean[{g}]"):
            col = draws.column(f"init_sev_mean[{g}]")
            gap = float(col.mean())
            entry["init_sev_gap"] = gap
            entry["init_sev_gap_ci"] = [float(np.percentile(col, lo_q)),
                                        float(np.percentile(col, hi_q))]
            if abs(mean_rate) > 1e-12:
                entry["delay_time_units"] = gap / mean_rate
                if years_per_unit is not None:
                    entry["delay_years"] = gap / mean_rate * years_per_unit
            else:
                entry["delay_time_units"] = None  # undefined at ~zero rate
        if draws.has(f"visit_offset[{g}]"):
            col = draws.column(f"visit_offset[{g}]")
            off = float(col.mean())
            entry["visit_offset"] = off
            entry["visit_rate_ratio"] = math.exp(off)
            entry["visit_rate_ratio_ci"] = [float(np.exp(np.percentile(col, lo_q))),
                                            float(np.exp(np.percentile(col, hi_q)))]
        else:
            entry["visit_offset"] = 0.0
            entry["visit_rate_ratio"] = 1.0
        per_group[g] = entry
    return DisparitySummary(reference_group=pinned, mean_rate=mean_rate,
                            per_group=per_group, years_per_unit=years_per_unit)


def delay_conversion(init_sev_gap: float, mean_rate: float,
                     years_per_unit: float) -> float:
    """Care-delay arithmetic: a severity gap over a progression rate gives
    time units, scaled to calendar years."""
    if abs(mean_rate) < 1e-12:
        raise ConfigurationError("delay undefined: mean progression rate is ~0")
    return init_sev_gap / mean_rate * years_per_unit


def visit_rate_ratio(visit_offset: float) -> float:
    return math.exp(visit_offset)


@dataclass
class BootstrapInterval:
    lower: float
    upper: float
    n_effective: int
    n_dropped: int
    point: float | None = None


def cluster_bootstrap(statistic, data, draws, n_boot: int = 1000,
                      seed: int = 0, ci: float = 0.95) -> BootstrapInterval:
    """Patient-level cluster bootstrap of a cohort statistic.

    ``statistic(patient_ids, data, draws)`` receives a resampled-with-
    replacement list of patient ids (duplicates intended) and returns a
    float; replicates where it raises ValueError/ArithmeticError or returns
    NaN are dropped and counted. The interval is an equal-tailed percentile
    interval, deterministic for a given seed.
    """
    if n_boot < 100:
        raise ConfigurationError("n_boot must be at least 100")
    pids = [p.patient_id for p in data.patients]
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    values, dropped = [], 0
    for _ in range(n_boot):
        take = rng.integers(0, len(pids), size=len(pids))
        sample_ids = [pids[i] for i in take]
        try:
            v = float(statistic(sample_ids, data, draws))
        except (ValueError, ArithmeticError):
            dropped += 1
            continue
        if math.isnan(v):
            dropped += 1
            continue
        values.append(v)
    if not values:
        raise ConfigurationError("statistic failed on every bootstrap replicate")
    lo, hi = np.percentile(values, [100 * (1 - ci) / 2, 100 * (1 + ci) / 2])
    try:
        point = float(statistic(pids, data, draws))
    except (ValueError, ArithmeticError):
        point = None
    return BootstrapInterval(lower=float(lo), upper=float(hi),
                             n_effective=len(values), n_dropped=dropped,
                             point=point)
