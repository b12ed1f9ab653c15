"""Numerical verification of the severity-underestimation bounds.

Each oracle computes the population and group-conditional expected severity
for a scenario by adaptive Gauss-Kronrod quadrature over the latent
densities, then checks the predicted inequality direction:

* initial-severity shift: a group whose initial-severity density
  likelihood-ratio dominates the population's has a strictly higher
  feature-conditional expected severity, so a group-blind model
  underestimates it (and symmetrically for downward shifts);
* rate shift: the same statement for the progression-rate density at t > 0;
* visit-frequency shift: conditioning on having (or not having) a visit in a
  bin, a group that visits less at every severity has a strictly higher
  expected severity.

Expectations are ratios of integrals; the oracle propagates quadrature error
estimates and raises instead of returning a value that misses tolerance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.integrate import quad

from .types import ConfigurationError

QUAD_ABS_TOL = 1e-12
QUAD_REL_TOL = 1e-9   # keeps the ratio's error bound sharp when the
                      # conditioning event has small probability mass
RANGE_SDS = 10.0      # integrate over [mean - 10 sd, mean + 10 sd]


class PrecisionError(RuntimeError):
    """Quadrature error estimate exceeds the requested tolerance."""


class Theorem(Enum):
    INITIAL_SEVERITY = "initial_severity"
    RATE = "rate"
    VISIT_FREQUENCY = "visit_frequency"


@dataclass(frozen=True)
class GaussianLatent:
    mean: float
    sd: float

    def pdf(self, z):
        u = (z - self.mean) / self.sd
        return math.exp(-0.5 * u * u) / (self.sd * math.sqrt(2.0 * math.pi))

    def shifted(self, delta: float) -> "GaussianLatent":
        return GaussianLatent(self.mean + delta, self.sd)

    @property
    def lo(self):
        return self.mean - RANGE_SDS * self.sd

    @property
    def hi(self):
        return self.mean + RANGE_SDS * self.sd


@dataclass(frozen=True)
class SeverityScenario:
    """Scenario for the initial-severity and rate oracles.

    Severity at time t is init + rate * t; one feature is observed as
    coef * severity + intercept plus N(0, noise_sd^2). ``shift`` moves the
    group's latent mean: a positive shift makes the group
    likelihood-ratio-dominate the population (the disadvantaged direction
    for initial severity and rate).
    """

    init: GaussianLatent = GaussianLatent(0.0, 1.0)
    rate: GaussianLatent = GaussianLatent(0.0, 1.0)
    t: float = 0.0
    shift: float = 1.0
    observed: float = 0.0
    coef: float = 1.0
    intercept: float = 0.0
    noise_sd: float = 1.0


@dataclass(frozen=True)
class VisitScenario:
    """Scenario for the visit-frequency oracle.

    The bin-level visit probability at severity z is
    1 - exp(-exp(base_log_rate + severity_coef * z) * bin_width), strictly
    increasing in z with limits 0 and 1 (severity_coef > 0 required). The
    group's curve is the population's shifted by ``shift``: positive shift
    means the group visits less at the same severity.
    """

    severity: GaussianLatent = GaussianLatent(0.0, 1.0)
    base_log_rate: float = 0.0
    severity_coef: float = 1.0
    bin_width: float = 1.0
    shift: float = 1.0
    event: int = 1

    def __post_init__(self):
        if self.severity_coef <= 0:
            raise ConfigurationError("severity_coef must be positive for a "
                                     "monotone visit curve")
        if self.event not in (0, 1):
            raise ConfigurationError("event must be 0 or 1")

    def visit_prob(self, z):
        return -math.expm1(-math.exp(self.base_log_rate
                                     + self.severity_coef * z) * self.bin_width)


@dataclass(frozen=True)
class OracleResult:
    e_population: float
    e_group: float
    inequality_holds: bool
    expected_sign: int        # +1: group above population; -1: below
    error_bound: float


def _quad(fn, lo, hi):
    val, err = quad(fn, lo, hi, epsabs=QUAD_ABS_TOL, epsrel=QUAD_REL_TOL,
                    limit=400)
    return val, err


def _ratio_expectation(weight, value, lo, hi, tol):
    """E[value] under the unnormalized density ``weight`` on [lo, hi], with a
    propagated error bound; raises PrecisionError when the bound is unmet."""
    den, den_err = _quad(weight, lo, hi)
    num, num_err = _quad(lambda z: value(z) * weight(z), lo, hi)
    if den <= 0:
        raise PrecisionError("degenerate scenario: zero total mass")
    e = num / den
    bound = (num_err + abs(e) * den_err) / den
    if bound > tol:
        raise PrecisionError(
            f"quadrature error bound {bound:.2e} exceeds tolerance {tol:.2e}")
    return e, bound


def _severity_expectation(init: GaussianLatent, rate: GaussianLatent,
                          sc: SeverityScenario, tol: float):
    """E[severity_t | observed feature] by quadrature over the latents.

    The feature depends on the latents only through severity, but the
    integration is performed over the full (init, rate) grid so non-Gaussian
    latent families remain usable; at t = 0 the rate integrates out.
    """
    s = sc.noise_sd

    def like(sev):
        u = (sc.observed - (sc.coef * sev + sc.intercept)) / s
        return math.exp(-0.5 * u * u)

    if sc.t == 0.0:
        return _ratio_expectation(lambda z: init.pdf(z) * like(z),
                                  lambda z: z, init.lo, init.hi, tol)

    def weight(z0):
        val, _ = _quad(lambda r: rate.pdf(r) * like(z0 + r * sc.t),
                       rate.lo, rate.hi)
        return init.pdf(z0) * val

    def weighted_sev(z0):
        val, _ = _quad(lambda r: rate.pdf(r) * (z0 + r * sc.t)
                       * like(z0 + r * sc.t), rate.lo, rate.hi)
        return init.pdf(z0) * val

    den, den_err = _quad(weight, init.lo, init.hi)
    num, num_err = _quad(weighted_sev, init.lo, init.hi)
    if den <= 0:
        raise PrecisionError("degenerate scenario: zero total mass")
    e = num / den
    # inner quadrature errors enter both integrands relatively
    span = init.hi - init.lo
    num_err = num_err + QUAD_REL_TOL * abs(num) + QUAD_ABS_TOL * span
    den_err = den_err + QUAD_REL_TOL * abs(den) + QUAD_ABS_TOL * span
    bound = (num_err + abs(e) * den_err) / den
    if bound > tol:
        raise PrecisionError(
            f"quadrature error bound {bound:.2e} exceeds tolerance {tol:.2e}")
    return e, bound


def mlrp_bias_oracle(theorem: Theorem, scenario, tol: float = 1e-6) -> OracleResult:
    """Compute population and group conditional expected severities for one
    scenario and check the predicted inequality.

    For the severity theorems a positive shift puts the group's density above
    the population's in likelihood ratio, so its conditional expectation must
    be strictly larger; for the visit theorem a positive shift means the
    group visits less at every severity, with the same conclusion under
    either event value. Negative shifts must reverse the inequality.
    """
    if theorem in (Theorem.INITIAL_SEVERITY, Theorem.RATE):
        sc = scenario
        if theorem is Theorem.RATE and sc.t <= 0.0:
            raise ConfigurationError("rate scenarios need t > 0")
        e_pop, err1 = _severity_expectation(sc.init, sc.rate, sc, tol)
        if theorem is Theorem.INITIAL_SEVERITY:
            e_grp, err2 = _severity_expectation(sc.init.shifted(sc.shift),
                                                sc.rate, sc, tol)
        else:
            e_grp, err2 = _severity_expectation(sc.init,
                                                sc.rate.shifted(sc.shift), sc, tol)
        expected = int(math.copysign(1.0, sc.shift)) if sc.shift != 0 else 0
    elif theorem is Theorem.VISIT_FREQUENCY:
        sc = scenario
        lat = sc.severity

        def pop_curve(z):
            return sc.visit_prob(z)

        def grp_curve(z):
            return sc.visit_prob(z - sc.shift)

        def weight(curve):
            if sc.event == 1:
                return lambda z: lat.pdf(z) * curve(z)
            return lambda z: lat.pdf(z) * (1.0 - curve(z))

        e_pop, err1 = _ratio_expectation(weight(pop_curve), lambda z: z,
                                         lat.lo, lat.hi, tol)
        e_grp, err2 = _ratio_expectation(weight(grp_curve), lambda z: z,
                                         lat.lo, lat.hi, tol)
        expected = int(math.copysign(1.0, sc.shift)) if sc.shift != 0 else 0
    else:
        raise ConfigurationError(f"unknown theorem {theorem!r}")

    bound = err1 + err2
    if expected > 0:
        holds = e_grp > e_pop + bound
    elif expected < 0:
        holds = e_grp < e_pop - bound
    else:
        holds = abs(e_grp - e_pop) <= max(tol, bound)
    return OracleResult(e_population=e_pop, e_group=e_grp,
                        inequality_holds=holds, expected_sign=expected,
                        error_bound=bound)


def scenario_grid(theorem: Theorem, shifts=None, noise_scales=None,
                  both_directions: bool = True):
    """Standard verification grid: shift magnitudes crossed with noise
    scales, in both shift directions."""
    shifts = list(shifts if shifts is not None
                  else np.round(np.linspace(0.1, 3.0, 5), 3))
    noise_scales = list(noise_scales if noise_scales is not None
                        else [0.25, 0.7, 1.5, 4.0])
    signed = []
    for s in shifts:
        signed.append(float(s))
        if both_directions:
            signed.append(-float(s))
    out = []
    for shift in signed:
        for ns in noise_scales:
            if theorem is Theorem.INITIAL_SEVERITY:
                out.append(SeverityScenario(shift=shift, noise_sd=float(ns),
                                            t=0.0, observed=0.3))
            elif theorem is Theorem.RATE:
                out.append(SeverityScenario(shift=shift, noise_sd=float(ns),
                                            t=0.5, observed=0.3,
                                            rate=GaussianLatent(0.5, 1.0)))
            else:
                for event in (1, 0):
                    out.append(VisitScenario(shift=shift,
                                             severity=GaussianLatent(0.0, float(ns)),
                                             event=event))
    return out


def verify_theorems(tol: float = 1e-6):
    """Run the full grid for all three theorems. Returns (all_passed, rows)
    where each row records the scenario and computed expectations."""
    rows = []
    all_ok = True
    for theorem in Theorem:
        for sc in scenario_grid(theorem):
            res = mlrp_bias_oracle(theorem, sc, tol=tol)
            ok = res.inequality_holds
            all_ok = all_ok and ok
            if theorem is Theorem.VISIT_FREQUENCY:
                desc = {"shift": sc.shift, "noise": sc.severity.sd,
                        "event": sc.event}
            else:
                desc = {"shift": sc.shift, "noise": sc.noise_sd, "t": sc.t}
            rows.append({"theorem": theorem.value, **desc,
                         "e_population": res.e_population,
                         "e_group": res.e_group,
                         "expected_sign": res.expected_sign,
                         "holds": ok})
    return all_ok, rows
