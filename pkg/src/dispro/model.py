"""Joint log-density of the progression model and its analytic gradient.

The generative structure: each patient has latent severity
``sev(t) = init_sev + rate * t`` over normalized time. At visit bins,
observed features are ``loadings * sev + feat_intercepts`` plus independent
Gaussian noise with per-feature variances. Visits themselves follow a
discretized log-linear point process: in a bin of width ``w`` starting at
time ``t``, a visit occurs with probability ``1 - exp(-rate_t * w)`` where
``log(rate_t) = visit_intercept + visit_severity * sev(t) + visit_offset``.
The first visit defines t = 0 and is conditioned on, not modeled.

``ProgressionModel`` flattens all sampled parameters into one vector with a
canonical ordering (shared block, then groups by index, then patients in
dataset order; per patient init_sev then rate), maps it to an unconstrained
space for HMC, and evaluates density and gradient in one fused pass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernel
from .priors import PriorSpec, TruncatedNormal, simulation_priors
from .types import (
    Dataset,
    DatasetIndex,
    GroupParams,
    InvalidParameterError,
    PatientLatents,
    SharedParams,
)

_LOG_2PI = math.log(2.0 * math.pi)

# Log visit rates above this cap overflow the likelihood; the density returns
# the -inf sentinel there so the sampler treats the region as rejected.
LOG_RATE_CAP = 30.0


@dataclass(frozen=True)
class VariantConfig:
    """Which group-specific parameter blocks the model learns.

    group_init    per-group initial-severity mean/sd for non-pinned groups
                  (False pins every group to mean 0, sd 1)
    group_rates   per-group progression-rate mean/sd (False learns one shared pair)
    group_visits  per-group visit-rate offsets for non-pinned groups
                  (False fixes every offset to 0)
    """

    group_init: bool = True
    group_rates: bool = True
    group_visits: bool = True


FULL_VARIANT = VariantConfig()


# ---------------------------------------------------------------------------
# likelihood kernels on flat arrays
# ---------------------------------------------------------------------------

def _emission_terms(loadings, intercepts, noise_vars, sev0, rate, idx: DatasetIndex):
    """Per-cell residuals and noise variances for observed feature cells."""
    sev = sev0[idx.cell_patient] + rate[idx.cell_patient] * idx.cell_time
    mean = loadings[idx.cell_feature] * sev + intercepts[idx.cell_feature]
    resid = idx.cell_value - mean
    return sev, resid, noise_vars[idx.cell_feature]


def _emission_loglik(loadings, intercepts, noise_vars, sev0, rate, idx):
    if idx.cell_value.size == 0:
        return 0.0
    _, resid, v = _emission_terms(loadings, intercepts, noise_vars, sev0, rate, idx)
    return float(-0.5 * np.sum(np.log(2.0 * np.pi * v) + resid * resid / v))


def _visit_eta(visit_intercept, visit_severity, offsets, group_of, sev0, rate, idx):
    sev = sev0[idx.row_patient] + rate[idx.row_patient] * idx.row_time
    return sev, visit_intercept + visit_severity * sev + offsets[group_of[idx.row_patient]]


def _visit_loglik(eta, event, bin_width):
    """Sum of per-bin log-probabilities, or None when the rate overflows."""
    if eta.size == 0:
        return 0.0
    if np.max(eta) > LOG_RATE_CAP:
        return None
    q = bin_width * np.exp(eta)
    q_event = q[event]
    if np.any(q_event == 0.0):
        return None  # an observed visit in a zero-probability bin
    with np.errstate(divide="ignore"):
        ll_event = np.sum(np.log(-np.expm1(-q_event)))
    return float(ll_event - np.sum(q[~event]))


def _latent_prior_loglik(means, sds, values):
    z = (values - means) / sds
    return float(np.sum(-0.5 * (_LOG_2PI + z * z) - np.log(sds)))


# ---------------------------------------------------------------------------
# spec-level operations on parameter bundles
# ---------------------------------------------------------------------------

def log_lik_emission(shared: SharedParams, latents: list[PatientLatents],
                     data: Dataset) -> float:
    """Gaussian log-likelihood of every observed feature cell; missing cells
    contribute nothing."""
    if np.any(shared.noise_vars <= 0):
        raise InvalidParameterError("noise variances must be positive")
    idx = DatasetIndex.build(data)
    sev0 = np.array([la.init_sev for la in latents])
    rate = np.array([la.rate for la in latents])
    return _emission_loglik(shared.loadings, shared.feat_intercepts,
                            shared.noise_vars, sev0, rate, idx)


def log_lik_visits(shared: SharedParams, groups: list[GroupParams],
                   latents: list[PatientLatents], data: Dataset) -> float:
    """Censored-Poisson log-likelihood of the visit indicators over bins
    1..horizon per patient. Severity is taken at each bin's left edge."""
    idx = DatasetIndex.build(data)
    sev0 = np.array([la.init_sev for la in latents])
    rate = np.array([la.rate for la in latents])
    offsets = np.array([g.visit_offset for g in groups])
    _, eta = _visit_eta(shared.visit_intercept, shared.visit_severity,
                        offsets, idx.group_of, sev0, rate, idx)
    ll = _visit_loglik(eta, idx.row_event, data.bin_width)
    return -math.inf if ll is None else ll


def log_prior(shared: SharedParams, groups: list[GroupParams],
              latents: list[PatientLatents], data: Dataset, priors: PriorSpec,
              variant: VariantConfig = FULL_VARIANT) -> float:
    """Log-prior of all sampled parameters plus per-patient latent densities
    under their group's distributions. Pinned quantities contribute nothing."""
    model = ProgressionModel(data, priors, variant)
    x = model.pack(shared, groups, latents)
    return model.logprior_constrained(x)


def log_posterior(theta: np.ndarray, data: Dataset, priors: PriorSpec,
                  variant: VariantConfig = FULL_VARIANT) -> float:
    """Unnormalized log-posterior over the unconstrained vector ``theta``."""
    return ProgressionModel(data, priors, variant).log_posterior(theta)


def grad_log_posterior(theta: np.ndarray, data: Dataset, priors: PriorSpec,
                       variant: VariantConfig = FULL_VARIANT) -> np.ndarray:
    return ProgressionModel(data, priors, variant).logp_and_grad(theta)[1]


def marginal_feature_moments(shared: SharedParams, group: GroupParams,
                             t: float) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of the feature vector at time t for one group,
    marginalizing the latents: a one-factor structure whose factor variance
    grows quadratically in t."""
    if t < 0:
        raise InvalidParameterError("t must be non-negative")
    L = shared.loadings
    mean = shared.feat_intercepts + L * (group.rate_mean * t + group.init_sev_mean)
    lat_var = group.rate_sd ** 2 * t * t + group.init_sev_sd ** 2
    cov = lat_var * np.outer(L, L) + np.diag(shared.noise_vars)
    return mean, cov


def expected_visit_rate(shared: SharedParams, group: GroupParams, t: float) -> float:
    """Population-average visit rate at time t: the latents are Gaussian, so
    the log-rate is Gaussian and the mean rate is a lognormal mean, quadratic
    in t on the log scale."""
    if t < 0:
        raise InvalidParameterError("t must be non-negative")
    bz = shared.visit_severity
    quad = 0.5 * bz * bz * group.rate_sd ** 2
    lin = bz * group.rate_mean
    const = (shared.visit_intercept + 0.5 * bz * bz * group.init_sev_sd ** 2
             + bz * group.init_sev_mean + group.visit_offset)
    return float(np.exp(quad * t * t + lin * t + const))


# ---------------------------------------------------------------------------
# flattened parameterization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ParamEntry:
    name: str
    role: str
    lower: float | None
    feature: int | None = None  # feature index for loading entries


def _structural_lower(role: str) -> float | None:
    if role in ("loading0", "noise_var", "init_sev_sd", "rate_sd"):
        return 0.0
    return None


class ProgressionModel:
    """Flattened, differentiable posterior for one dataset and model variant.

    The unconstrained space maps lower-bounded coordinates through
    ``x = lower + exp(u)``; everything else is the identity. The density adds
    the log-Jacobian of that inverse map.
    """

    def __init__(self, data: Dataset, priors: PriorSpec | None = None,
                 variant: VariantConfig = FULL_VARIANT):
        self.data = data
        self.priors = priors if priors is not None else simulation_priors()
        self.variant = variant
        self.idx = DatasetIndex.build(data)
        self._build_layout()
        self._build_prior_tables()
        # Per-feature emission cell counts for the constant log(2*pi*v) term.
        self._cells_per_feature = np.bincount(
            self.idx.cell_feature, minlength=data.n_features).astype(float)
        self._row_group = self.idx.group_of[self.idx.row_patient]
        idx = self.idx
        self._kernel_args = {
            "lower": np.ascontiguousarray(self._lower),
            "bounded": np.ascontiguousarray(self._bounded),
            "prior_mu": np.ascontiguousarray(self._prior_mu),
            "prior_sigma": np.ascontiguousarray(self._prior_sigma),
            "init_mean_idx": np.ascontiguousarray(self._init_mean_idx, dtype=np.int64),
            "init_sd_idx": np.ascontiguousarray(self._init_sd_idx, dtype=np.int64),
            "rate_mean_idx": np.ascontiguousarray(self._rate_mean_idx, dtype=np.int64),
            "rate_sd_idx": np.ascontiguousarray(self._rate_sd_idx, dtype=np.int64),
            "offset_idx": np.ascontiguousarray(self._offset_idx, dtype=np.int64),
            "g_of": np.ascontiguousarray(idx.group_of, dtype=np.int64),
            "cell_patient": np.ascontiguousarray(idx.cell_patient, dtype=np.int64),
            "cell_time": np.ascontiguousarray(idx.cell_time),
            "cell_feature": np.ascontiguousarray(idx.cell_feature, dtype=np.int64),
            "cell_value": np.ascontiguousarray(idx.cell_value),
            "row_patient": np.ascontiguousarray(idx.row_patient, dtype=np.int64),
            "row_time": np.ascontiguousarray(idx.row_time),
            "row_event": np.ascontiguousarray(idx.row_event),
            "row_group": np.ascontiguousarray(self._row_group, dtype=np.int64),
        }

    # -- layout ------------------------------------------------------------

    def _build_layout(self):
        data, variant = self.data, self.variant
        d, G = data.n_features, data.n_groups
        entries: list[ParamEntry] = []

        def add(name, role, feature=None):
            prior = self.priors.for_role(role, feature)
            lower = prior.lower if isinstance(prior, TruncatedNormal) else \
                _structural_lower(role)
            entries.append(ParamEntry(name, role, lower, feature))

        for j in range(d):
            add(f"loading[{j}]", "loading0" if j == 0 else "loading", feature=j)
        for j in range(d):
            add(f"feat_intercept[{j}]", "feat_intercept")
        for j in range(d):
            add(f"noise_var[{j}]", "noise_var")
        add("visit_intercept", "visit_intercept")
        add("visit_severity", "visit_severity")

        init_mean_idx = np.full(G, -1, dtype=np.intp)
        init_sd_idx = np.full(G, -1, dtype=np.intp)
        rate_mean_idx = np.full(G, -1, dtype=np.intp)
        rate_sd_idx = np.full(G, -1, dtype=np.intp)
        offset_idx = np.full(G, -1, dtype=np.intp)

        if not variant.group_rates:
            rate_mean_idx[:] = len(entries)
            add("rate_mean", "rate_mean")
            rate_sd_idx[:] = len(entries)
            add("rate_sd", "rate_sd")
        for g in range(G):
            if variant.group_init and g != data.pinned_group:
                init_mean_idx[g] = len(entries)
                add(f"init_sev_mean[{g}]", "init_sev_mean")
                init_sd_idx[g] = len(entries)
                add(f"init_sev_sd[{g}]", "init_sev_sd")
            if variant.group_rates:
                rate_mean_idx[g] = len(entries)
                add(f"rate_mean[{g}]", "rate_mean")
                rate_sd_idx[g] = len(entries)
                add(f"rate_sd[{g}]", "rate_sd")
            if variant.group_visits and g != data.pinned_group:
                offset_idx[g] = len(entries)
                add(f"visit_offset[{g}]", "visit_offset")

        self.entries = entries
        self.n_global = len(entries)
        self.n_patients = data.n_patients
        self.dim = self.n_global + 2 * self.n_patients
        self._init_mean_idx = init_mean_idx
        self._init_sd_idx = init_sd_idx
        self._rate_mean_idx = rate_mean_idx
        self._rate_sd_idx = rate_sd_idx
        self._offset_idx = offset_idx

        names = [e.name for e in entries]
        for p in data.patients:
            names.append(f"init_sev[{p.patient_id}]")
            names.append(f"rate[{p.patient_id}]")
        self.names = names

        lower = np.zeros(self.dim)
        bounded = np.zeros(self.dim, dtype=bool)
        for i, e in enumerate(entries):
            if e.lower is not None:
                bounded[i] = True
                lower[i] = e.lower
        self._lower = lower
        self._bounded = bounded

        self._sl_load = slice(0, d)
        self._sl_fint = slice(d, 2 * d)
        self._sl_noise = slice(2 * d, 3 * d)
        self._i_vint = 3 * d
        self._i_vsev = 3 * d + 1

    def _build_prior_tables(self):
        from scipy.special import log_ndtr

        mu = np.empty(self.n_global)
        sig = np.empty(self.n_global)
        const = np.empty(self.n_global)
        for i, e in enumerate(self.entries):
            prior = self.priors.for_role(e.role, e.feature)
            mu[i] = prior.mu
            sig[i] = prior.sigma
            const[i] = -0.5 * _LOG_2PI - math.log(prior.sigma)
            if isinstance(prior, TruncatedNormal):
                # truncation normalizer: -log P(X > lower)
                const[i] -= float(log_ndtr((prior.mu - prior.lower) / prior.sigma))
        self._prior_mu = mu
        self._prior_sigma = sig
        self._prior_const = const
        self._prior_const_sum = float(const.sum())

    @property
    def global_names(self) -> list[str]:
        return self.names[:self.n_global]

    # -- transforms ----------------------------------------------------------

    def constrain(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        with np.errstate(over="ignore"):
            x = np.where(self._bounded, self._lower + np.exp(u), u)
        return x

    def unconstrain(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise InvalidParameterError(f"expected vector of length {self.dim}")
        if not np.all(np.isfinite(x)):
            raise InvalidParameterError("non-finite parameter value")
        over = x[self._bounded] - self._lower[self._bounded]
        if np.any(over <= 0):
            bad = np.flatnonzero(self._bounded)[over <= 0][0]
            raise InvalidParameterError(
                f"{self.names[bad]} = {x[bad]} violates its lower bound")
        u = x.copy()
        u[self._bounded] = np.log(over)
        return u

    def log_jacobian(self, u: np.ndarray) -> float:
        return float(np.sum(u[self._bounded]))

    # -- packing -------------------------------------------------------------

    def pack(self, shared: SharedParams, groups: list[GroupParams],
             latents: list[PatientLatents]) -> np.ndarray:
        """Flatten parameter bundles into the canonical constrained vector.
        Pinned or shared coordinates must be consistent across the bundles."""
        x = np.empty(self.dim)
        x[self._sl_load] = shared.loadings
        x[self._sl_fint] = shared.feat_intercepts
        x[self._sl_noise] = shared.noise_vars
        x[self._i_vint] = shared.visit_intercept
        x[self._i_vsev] = shared.visit_severity
        for g, gp in enumerate(groups):
            for idx_arr, val in ((self._init_mean_idx, gp.init_sev_mean),
                                 (self._init_sd_idx, gp.init_sev_sd),
                                 (self._rate_mean_idx, gp.rate_mean),
                                 (self._rate_sd_idx, gp.rate_sd),
                                 (self._offset_idx, gp.visit_offset)):
                if idx_arr[g] >= 0:
                    x[idx_arr[g]] = val
        off = self.n_global
        for i, la in enumerate(latents):
            x[off + 2 * i] = la.init_sev
            x[off + 2 * i + 1] = la.rate
        return x

    def unpack(self, x: np.ndarray):
        """Inverse of pack; fills pinned coordinates with their fixed values."""
        shared = SharedParams(
            loadings=x[self._sl_load].copy(),
            feat_intercepts=x[self._sl_fint].copy(),
            noise_vars=x[self._sl_noise].copy(),
            visit_intercept=float(x[self._i_vint]),
            visit_severity=float(x[self._i_vsev]),
        )
        gm, gs, rm, rs, off = self._group_arrays(x)
        groups = [GroupParams(float(gm[g]), float(gs[g]), float(rm[g]),
                              float(rs[g]), float(off[g]))
                  for g in range(self.data.n_groups)]
        base = self.n_global
        latents = [PatientLatents(float(x[base + 2 * i]), float(x[base + 2 * i + 1]))
                   for i in range(self.n_patients)]
        return shared, groups, latents

    def _group_arrays(self, x):
        def resolve(idx_arr, default):
            out = np.full(idx_arr.shape, default, dtype=float)
            free = idx_arr >= 0
            out[free] = x[idx_arr[free]]
            return out
        return (resolve(self._init_mean_idx, 0.0),
                resolve(self._init_sd_idx, 1.0),
                resolve(self._rate_mean_idx, np.nan),
                resolve(self._rate_sd_idx, np.nan),
                resolve(self._offset_idx, 0.0))

    def _latents(self, x):
        base = self.n_global
        return x[base::2], x[base + 1::2]

    # -- densities -----------------------------------------------------------

    def logprior_constrained(self, x: np.ndarray) -> float:
        """Log-prior of sampled globals plus latent densities, in constrained
        space (no Jacobian)."""
        xg = x[:self.n_global]
        if np.any(xg[self._bounded[:self.n_global]]
                  <= self._lower[:self.n_global][self._bounded[:self.n_global]]):
            return -math.inf
        z = (xg - self._prior_mu) / self._prior_sigma
        lp = self._prior_const_sum - 0.5 * float(z @ z)
        gm, gs, rm, rs, _ = self._group_arrays(x)
        sev0, rate = self._latents(x)
        g_of = self.idx.group_of
        lp += _latent_prior_loglik(gm[g_of], gs[g_of], sev0)
        lp += _latent_prior_loglik(rm[g_of], rs[g_of], rate)
        return lp

    def log_posterior(self, theta: np.ndarray) -> float:
        return self.logp_and_grad(theta, want_grad=False)[0]

    def grad_log_posterior(self, theta: np.ndarray) -> np.ndarray:
        return self.logp_and_grad(theta)[1]

    def logp_and_grad(self, theta: np.ndarray, want_grad: bool = True):
        """Fused unnormalized log-posterior and gradient over the
        unconstrained vector. On overflow (capped log visit rate, non-finite
        constrained values) returns (-inf, zeros): a rejected region.

        Dispatches to a compiled single-pass kernel when numba is available;
        ``logp_and_grad_reference`` is the plain-numpy equivalent."""
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            raise InvalidParameterError(f"expected vector of length {self.dim}")
        if not np.all(np.isfinite(theta)):
            raise InvalidParameterError("non-finite unconstrained input")
        if _kernel.HAVE_NUMBA:
            return self._kernel_eval(theta, want_grad, non_centered=False)
        return self.logp_and_grad_reference(theta, want_grad)

    def _kernel_eval(self, theta, want_grad, non_centered):
        k = self._kernel_args
        ll, grad, ok = _kernel.fused_logp_grad(
            theta, k["lower"], k["bounded"], self.n_global,
            k["prior_mu"], k["prior_sigma"], self._prior_const_sum,
            k["init_mean_idx"], k["init_sd_idx"], k["rate_mean_idx"],
            k["rate_sd_idx"], k["offset_idx"], k["g_of"],
            k["cell_patient"], k["cell_time"], k["cell_feature"],
            k["cell_value"], k["row_patient"], k["row_time"],
            k["row_event"], k["row_group"],
            self.data.bin_width, self.data.n_features, want_grad, non_centered)
        if not ok:
            return -math.inf, (np.zeros(self.dim) if want_grad else None)
        return float(ll), (grad if want_grad else None)

    def logp_and_grad_reference(self, theta: np.ndarray, want_grad: bool = True):
        """Vectorized numpy evaluation, kept as the independently readable
        reference for the compiled kernel."""
        theta = np.asarray(theta, dtype=float)
        sentinel = (-math.inf, np.zeros(self.dim) if want_grad else None)
        x = self.constrain(theta)
        if not np.all(np.isfinite(x)):
            return sentinel

        idx = self.idx
        d = self.data.n_features
        L = x[self._sl_load]
        B = x[self._sl_fint]
        V = x[self._sl_noise]
        vint = x[self._i_vint]
        vsev = x[self._i_vsev]
        gm, gs, rm, rs, goff = self._group_arrays(x)
        sev0, rate = self._latents(x)
        g_of = idx.group_of

        # emission
        sev_c = sev0[idx.cell_patient] + rate[idx.cell_patient] * idx.cell_time
        mean_c = L[idx.cell_feature] * sev_c + B[idx.cell_feature]
        resid = idx.cell_value - mean_c
        v_c = V[idx.cell_feature]
        w_c = resid / v_c
        ll = -0.5 * (float(self._cells_per_feature @ np.log(2.0 * np.pi * V))
                     + float(resid @ w_c))

        # visits
        sev_v = sev0[idx.row_patient] + rate[idx.row_patient] * idx.row_time
        eta = vint + vsev * sev_v + goff[self._row_group]
        if eta.size and np.max(eta) > LOG_RATE_CAP:
            return sentinel
        q = self.data.bin_width * np.exp(eta)
        event = idx.row_event
        q_event = q[event]
        if np.any(q_event == 0.0):
            return sentinel
        with np.errstate(divide="ignore"):
            ll += float(np.sum(np.log(-np.expm1(-q_event)))) - float(np.sum(q[~event]))

        # priors: globals then hierarchical latents
        xg = x[:self.n_global]
        zg = (xg - self._prior_mu) / self._prior_sigma
        ll += self._prior_const_sum - 0.5 * float(zg @ zg)

        m_i, s_i = gm[g_of], gs[g_of]
        m_r, s_r = rm[g_of], rs[g_of]
        z_i = (sev0 - m_i) / s_i
        z_r = (rate - m_r) / s_r
        ll += float(np.sum(-0.5 * (_LOG_2PI + z_i * z_i) - np.log(s_i)))
        ll += float(np.sum(-0.5 * (_LOG_2PI + z_r * z_r) - np.log(s_r)))

        # Jacobian of the constraining transform
        ll += float(np.sum(theta[self._bounded]))

        if not np.isfinite(ll):
            return sentinel
        if not want_grad:
            return ll, None

        # ------- gradient in constrained space -------
        gx = np.zeros(self.dim)
        N = self.n_patients
        G = self.data.n_groups

        # emission block
        gx[self._sl_load] += np.bincount(idx.cell_feature, weights=w_c * sev_c,
                                         minlength=d)
        gx[self._sl_fint] += np.bincount(idx.cell_feature, weights=w_c, minlength=d)
        dv = (resid * w_c - 1.0) / (2.0 * v_c)
        gx[self._sl_noise] += np.bincount(idx.cell_feature, weights=dv, minlength=d)
        u_c = w_c * L[idx.cell_feature]
        d_sev0 = np.bincount(idx.cell_patient, weights=u_c, minlength=N)
        d_rate = np.bincount(idx.cell_patient, weights=u_c * idx.cell_time, minlength=N)

        # visit block: d(loglik)/d(eta) per row
        # d/d(eta): events give q * exp(-q) / (1 - exp(-q)) = q / expm1(q),
        # non-events give -q. The 0/0 at q == 0 only arises on non-event rows
        # (event rows with q == 0 hit the sentinel above) and is discarded.
        with np.errstate(over="ignore", invalid="ignore"):
            c_eta = np.where(event, q / np.expm1(q), -q)
        gx[self._i_vint] += float(np.sum(c_eta))
        gx[self._i_vsev] += float(np.sum(c_eta * sev_v))
        c_pat = np.bincount(idx.row_patient, weights=c_eta, minlength=N)
        ct_pat = np.bincount(idx.row_patient, weights=c_eta * idx.row_time, minlength=N)
        d_sev0 += vsev * c_pat
        d_rate += vsev * ct_pat
        off_free = self._offset_idx >= 0
        if np.any(off_free):
            c_grp = np.bincount(g_of, weights=c_pat, minlength=G)
            np.add.at(gx, self._offset_idx[off_free], c_grp[off_free])

        # global priors
        gx[:self.n_global] += -(xg - self._prior_mu) / (self._prior_sigma ** 2)

        # hierarchical latent priors
        d_sev0 += -z_i / s_i
        d_rate += -z_r / s_r
        for idx_arr, zz, ss in ((self._init_mean_idx, z_i, s_i),
                                (self._rate_mean_idx, z_r, s_r)):
            free = idx_arr >= 0
            if np.any(free):
                contrib = np.bincount(g_of, weights=zz / ss, minlength=G)
                np.add.at(gx, idx_arr[free], contrib[free])
        for idx_arr, zz, ss in ((self._init_sd_idx, z_i, s_i),
                                (self._rate_sd_idx, z_r, s_r)):
            free = idx_arr >= 0
            if np.any(free):
                contrib = np.bincount(g_of, weights=(zz * zz - 1.0) / ss, minlength=G)
                np.add.at(gx, idx_arr[free], contrib[free])

        base = self.n_global
        gx[base::2] += d_sev0
        gx[base + 1::2] += d_rate

        # chain rule through x = lower + exp(u), plus d/du of the Jacobian term
        grad = gx
        grad[self._bounded] = grad[self._bounded] * (x[self._bounded]
                                                     - self._lower[self._bounded]) + 1.0
        return ll, grad

    # -- non-centered sampling parameterization -------------------------------
    #
    # The sampler may run over (globals, standardized latents) with
    # z = group_mean + group_sd * u, u ~ N(0, 1): an equivalent posterior
    # that removes the funnel between group scales and per-patient latents.
    # Draws are mapped back to the documented centered, constrained space.

    def logp_and_grad_noncentered(self, theta_nc: np.ndarray,
                                  want_grad: bool = True):
        theta_nc = np.asarray(theta_nc, dtype=float)
        if theta_nc.shape != (self.dim,):
            raise InvalidParameterError(f"expected vector of length {self.dim}")
        if not np.all(np.isfinite(theta_nc)):
            raise InvalidParameterError("non-finite unconstrained input")
        if _kernel.HAVE_NUMBA:
            return self._kernel_eval(theta_nc, want_grad, non_centered=True)
        return self._logp_and_grad_nc_reference(theta_nc, want_grad)

    def _nc_to_centered(self, theta_nc: np.ndarray) -> np.ndarray:
        """Map a non-centered unconstrained vector to the centered one."""
        x = self.constrain(theta_nc)
        gm, gs, rm, rs, _ = self._group_arrays(x)
        g_of = self.idx.group_of
        base = self.n_global
        theta = theta_nc.copy()
        theta[base::2] = gm[g_of] + gs[g_of] * theta_nc[base::2]
        theta[base + 1::2] = rm[g_of] + rs[g_of] * theta_nc[base + 1::2]
        return theta

    def constrain_noncentered(self, theta_nc: np.ndarray) -> np.ndarray:
        return self.constrain(self._nc_to_centered(np.asarray(theta_nc,
                                                              dtype=float)))

    def _logp_and_grad_nc_reference(self, theta_nc, want_grad=True):
        theta = self._nc_to_centered(theta_nc)
        x = self.constrain(theta)
        gm, gs, rm, rs, _ = self._group_arrays(x)
        g_of = self.idx.group_of
        base = self.n_global
        lp, grad_c = self.logp_and_grad_reference(theta, want_grad)
        s_i, s_r = gs[g_of], rs[g_of]
        lp_nc = lp + float(np.sum(np.log(s_i)) + np.sum(np.log(s_r)))
        if not np.isfinite(lp_nc):
            return -math.inf, (np.zeros(self.dim) if want_grad else None)
        if not want_grad:
            return lp_nc, None
        u = theta_nc[base::2]
        w = theta_nc[base + 1::2]
        gz = grad_c[base::2]
        gr = grad_c[base + 1::2]
        grad = grad_c.copy()
        grad[base::2] = gz * s_i
        grad[base + 1::2] = gr * s_r
        G = self.data.n_groups
        for idx_arr, gl, uu, ss, sd_like in (
                (self._init_mean_idx, gz, u, s_i, False),
                (self._rate_mean_idx, gr, w, s_r, False),
                (self._init_sd_idx, gz, u, s_i, True),
                (self._rate_sd_idx, gr, w, s_r, True)):
            free = idx_arr >= 0
            if not np.any(free):
                continue
            if sd_like:
                weights = gl * uu * ss + 1.0  # d(z)/d(log sd) + Jacobian term
            else:
                weights = gl
            contrib = np.bincount(g_of, weights=weights, minlength=G)
            np.add.at(grad, idx_arr[free], contrib[free])
        return lp_nc, grad

    # -- initialization -------------------------------------------------------

    def init_from_priors(self, rng: np.random.Generator,
                         non_centered: bool = False) -> np.ndarray:
        """Unconstrained initial point: globals drawn from their priors,
        latents from the drawn group distributions (standard normal residuals
        in the non-centered parameterization)."""
        x = np.empty(self.dim)
        for i, e in enumerate(self.entries):
            x[i] = self.priors.for_role(e.role, e.feature).draw(rng)
        base = self.n_global
        if non_centered:
            theta = self.unconstrain_globals_only(x)
            theta[base:] = rng.standard_normal(2 * self.n_patients)
            return theta
        gm, gs, rm, rs, _ = self._group_arrays(x)
        g_of = self.idx.group_of
        x[base::2] = rng.normal(gm[g_of], gs[g_of])
        x[base + 1::2] = rng.normal(rm[g_of], rs[g_of])
        return self.unconstrain(x)

    def unconstrain_globals_only(self, x: np.ndarray) -> np.ndarray:
        """unconstrain() applied to the global block, leaving the latent
        block's raw values in place (used by the non-centered path)."""
        u = np.asarray(x, dtype=float).copy()
        b = self._bounded.copy()
        b[self.n_global:] = False
        over = u[b] - self._lower[b]
        if np.any(over <= 0):
            raise InvalidParameterError("bounded global at or below its bound")
        u[b] = np.log(over)
        return u
