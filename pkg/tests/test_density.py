"""Closed-form and brute-force oracles for the three density components and
their composition."""

import math

import numpy as np
import pytest

from dispro import (
    Dataset,
    GroupParams,
    InvalidParameterError,
    PatientLatents,
    ProgressionModel,
    SharedParams,
    log_lik_emission,
    log_lik_visits,
    log_prior,
    simulation_priors,
)
from dispro.model import FULL_VARIANT, LOG_RATE_CAP
from dispro.priors import Normal, TruncatedNormal

from conftest import (
    make_patient,
    pinned_group_params,
    single_cell_dataset,
    truth_bundles,
    unit_shared,
)

LOG_2PI = math.log(2.0 * math.pi)


class TestEmission:
    def test_standard_normal_at_mode(self):
        data = single_cell_dataset(0.0)
        ll = log_lik_emission(unit_shared(), [PatientLatents(0.0, 0.0)], data)
        assert ll == pytest.approx(-0.5 * LOG_2PI, abs=1e-14)

    def test_two_sd_residual(self):
        data = single_cell_dataset(2.0)
        ll = log_lik_emission(unit_shared(), [PatientLatents(0.0, 0.0)], data)
        assert ll == pytest.approx(-0.5 * LOG_2PI - 2.0, abs=1e-14)

    def test_brute_force_cell_sum(self, small_sim):
        data, truth = small_sim
        shared, groups, latents = truth_bundles(data, truth)
        ll = log_lik_emission(shared, latents, data)
        # independent scalar loop over every observed cell
        total = 0.0
        for p, lat in zip(data.patients, latents):
            for t in range(p.horizon + 1):
                for j in range(data.n_features):
                    x = p.features[t, j]
                    if not np.isfinite(x):
                        continue
                    sev = lat.init_sev + lat.rate * t * data.bin_width
                    mean = shared.loadings[j] * sev + shared.feat_intercepts[j]
                    v = shared.noise_vars[j]
                    total += (-0.5 * math.log(2 * math.pi * v)
                              - (x - mean) ** 2 / (2 * v))
        assert ll == pytest.approx(total, rel=1e-12)

    def test_missing_cells_contribute_nothing(self):
        pat_full = make_patient("p0", 0, [1, 1], [[1.0, 2.0], [0.5, 1.5]])
        pat_miss = make_patient("p0", 0, [1, 1],
                                [[1.0, np.nan], [0.5, np.nan]])
        d_full = Dataset([pat_full], 1, 2, 1.0)
        d_miss = Dataset([pat_miss], 1, 2, 1.0)
        lat = [PatientLatents(0.3, -0.2)]
        sh = unit_shared(2)
        ll_full = log_lik_emission(sh, lat, d_full)
        ll_miss = log_lik_emission(sh, lat, d_miss)
        # removing the second feature's cells removes exactly their terms
        lost = 0.0
        for t in (0, 1):
            sev = 0.3 - 0.2 * t
            lost += -0.5 * LOG_2PI - (([2.0, 1.5][t]) - sev) ** 2 / 2.0
        assert ll_full - ll_miss == pytest.approx(lost, abs=1e-12)

    def test_invalid_noise_rejected(self):
        with pytest.raises(InvalidParameterError):
            SharedParams(loadings=[1.0], feat_intercepts=[0.0],
                         noise_vars=[-1.0], visit_intercept=0.0,
                         visit_severity=0.0)


class TestVisits:
    def make_one_bin(self, d_value):
        feats = [[0.0], [0.0 if d_value else np.nan]]
        pat = make_patient("p0", 0, [1, d_value], feats)
        return Dataset([pat], 1, 1, 1.0)

    def test_no_event_bin(self):
        data = self.make_one_bin(0)
        ll = log_lik_visits(unit_shared(), [pinned_group_params()],
                            [PatientLatents(0.0, 0.0)], data)
        assert ll == pytest.approx(-1.0, abs=1e-14)

    def test_event_bin(self):
        data = self.make_one_bin(1)
        ll = log_lik_visits(unit_shared(), [pinned_group_params()],
                            [PatientLatents(0.0, 0.0)], data)
        assert ll == pytest.approx(math.log(1.0 - math.exp(-1.0)), abs=1e-12)
        assert ll == pytest.approx(-0.4587, abs=5e-5)

    def test_first_bin_not_modeled(self):
        # bin 0 is conditioned on; only bins 1..T contribute
        pat = make_patient("p0", 0, [1, 0, 1],
                           [[0.0], [np.nan], [0.1]])
        data = Dataset([pat], 1, 1, 1.0)
        ll = log_lik_visits(unit_shared(), [pinned_group_params()],
                            [PatientLatents(0.0, 0.0)], data)
        assert ll == pytest.approx(-1.0 + math.log(1 - math.exp(-1.0)), abs=1e-12)

    def test_brute_force_bin_sum(self, small_sim):
        data, truth = small_sim
        shared, groups, latents = truth_bundles(data, truth)
        ll = log_lik_visits(shared, groups, latents, data)
        total = 0.0
        for p, lat in zip(data.patients, latents):
            gp = groups[p.group.index]
            for t in range(1, p.horizon + 1):
                sev = lat.init_sev + lat.rate * t * data.bin_width
                lam = math.exp(shared.visit_intercept
                               + shared.visit_severity * sev + gp.visit_offset)
                q = lam * data.bin_width
                total += math.log(1 - math.exp(-q)) if p.visits[t] else -q
        assert ll == pytest.approx(total, rel=1e-10)


class TestPrior:
    def test_pinned_patient_latent_contribution(self):
        """With one pinned-group patient, log_prior decomposes into the seven
        sampled-global prior terms plus the two latent terms; the z0 = 0 term
        is exactly -log sqrt(2 pi)."""
        data = single_cell_dataset(0.0)
        priors = simulation_priors()
        shared = SharedParams([1.0], [0.0], [1.0], 1.5, 0.5)
        gp = pinned_group_params(rate_mean=0.4, rate_sd=0.7)
        lp = log_prior(shared, [gp], [PatientLatents(0.0, 0.9)], data, priors)
        globals_part = (priors.loading0.logpdf(1.0)
                        + priors.feat_intercept.logpdf(0.0)
                        + priors.noise_var.logpdf(1.0)
                        + priors.visit_intercept.logpdf(1.5)
                        + priors.visit_severity.logpdf(0.5)
                        + priors.rate_mean.logpdf(0.4)
                        + priors.rate_sd.logpdf(0.7))
        z0_term = lp - globals_part - Normal(0.4, 0.7).logpdf(0.9)
        assert z0_term == pytest.approx(-0.5 * LOG_2PI, abs=1e-10)
        # shifting z0 moves the prior by the unit-normal density difference
        lp1 = log_prior(shared, [gp], [PatientLatents(1.0, 0.9)], data, priors)
        assert lp - lp1 == pytest.approx(0.5, abs=1e-12)

    def test_normal_prior_closed_form(self):
        p = Normal(0.0, 4.0)
        assert p.logpdf(0.0) == pytest.approx(-0.5 * math.log(2 * math.pi * 16),
                                              abs=1e-14)

    def test_truncated_normal_vs_quadrature(self):
        from scipy.integrate import quad

        p = TruncatedNormal(1.0, 0.1, 0.0)
        # quadrature oracle: normalize the untruncated density over (0, inf)
        norm, err = quad(lambda x: math.exp(Normal(1.0, 0.1).logpdf(x)),
                         0.0, 3.0, epsabs=1e-12)
        assert err < 1e-10
        expect = Normal(1.0, 0.1).logpdf(1.0) - math.log(norm)
        assert p.logpdf(1.0) == pytest.approx(expect, abs=1e-9)
        # and equals the stated closed form: untruncated minus log Phi(10)
        from scipy.special import log_ndtr
        assert p.logpdf(1.0) == pytest.approx(
            Normal(1.0, 0.1).logpdf(1.0) - float(log_ndtr(10.0)), abs=1e-14)

    def test_sigma_validation(self):
        from dispro import ConfigurationError

        with pytest.raises(ConfigurationError):
            Normal(0.0, -1.0)
        with pytest.raises(ConfigurationError):
            TruncatedNormal(0.0, 0.0, 0.0)


class TestLogPosterior:
    def test_composition_identity(self, small_sim):
        data, truth = small_sim
        priors = simulation_priors()
        shared, groups, latents = truth_bundles(data, truth)
        model = ProgressionModel(data, priors)
        x = model.pack(shared, groups, latents)
        theta = model.unconstrain(x)
        lp = model.log_posterior(theta)
        parts = (log_lik_emission(shared, latents, data)
                 + log_lik_visits(shared, groups, latents, data)
                 + log_prior(shared, groups, latents, data, priors)
                 + model.log_jacobian(theta))
        assert lp == pytest.approx(parts, rel=1e-12, abs=1e-9)

    def test_patient_permutation_invariance(self, small_sim):
        data, truth = small_sim
        priors = simulation_priors()
        model = ProgressionModel(data, priors)
        shared, groups, latents = truth_bundles(data, truth)
        theta = model.unconstrain(model.pack(shared, groups, latents))
        lp = model.log_posterior(theta)

        order = np.random.default_rng(5).permutation(len(data.patients))
        data2 = Dataset([data.patients[i] for i in order], data.n_groups,
                        data.n_features, data.bin_width)
        model2 = ProgressionModel(data2, priors)
        lat2 = [latents[i] for i in order]
        theta2 = model2.unconstrain(model2.pack(shared, groups, lat2))
        lp2 = model2.log_posterior(theta2)
        assert abs(lp - lp2) < 1e-10 * max(1.0, abs(lp))

    def test_straight_line_reimplementation(self):
        """Fully independent scalar reimplementation on a 2-patient dataset."""
        pats = [
            make_patient("a", 0, [1, 1, 0],
                         [[0.5, np.nan], [0.2, 1.0], [np.nan, np.nan]]),
            make_patient("b", 1, [1, 0, 1],
                         [[-0.3, 0.4], [np.nan, np.nan], [0.9, np.nan]],
                         pinned_idx=0),
        ]
        data = Dataset(pats, 2, 2, 0.5)
        priors = simulation_priors()
        shared = SharedParams([1.2, -0.7], [0.1, -0.2], [0.8, 1.5], 0.4, 0.3)
        groups = [GroupParams(0.0, 1.0, 0.6, 0.5, 0.0),
                  GroupParams(0.8, 1.1, 0.9, 0.4, -0.3)]
        lats = [PatientLatents(0.2, 0.7), PatientLatents(-0.4, 1.2)]
        model = ProgressionModel(data, priors)
        theta = model.unconstrain(model.pack(shared, groups, lats))
        lp = model.log_posterior(theta)

        def norm_lpdf(x, mu, sd):
            return -0.5 * math.log(2 * math.pi * sd * sd) \
                - (x - mu) ** 2 / (2 * sd * sd)

        def tn_lpdf(x, mu, sd, lo):
            from scipy.stats import norm as scipy_norm
            return norm_lpdf(x, mu, sd) - math.log(scipy_norm.sf(lo, mu, sd))

        ref = 0.0
        # emission, cell by cell
        for pat, lat in zip(pats, lats):
            for t in range(3):
                for j in range(2):
                    xv = pat.features[t, j]
                    if not np.isfinite(xv):
                        continue
                    sev = lat.init_sev + lat.rate * t * 0.5
                    ref += norm_lpdf(xv, shared.loadings[j] * sev
                                     + shared.feat_intercepts[j],
                                     math.sqrt(shared.noise_vars[j]))
        # visits, bins 1..2
        for pat, lat in zip(pats, lats):
            gp = groups[pat.group.index]
            for t in (1, 2):
                sev = lat.init_sev + lat.rate * t * 0.5
                lam = math.exp(0.4 + 0.3 * sev + gp.visit_offset)
                q = lam * 0.5
                ref += math.log(1 - math.exp(-q)) if pat.visits[t] else -q
        # priors on sampled globals (simulation priors)
        ref += tn_lpdf(1.2, 1.0, 1.0, 0.5)            # first loading
        ref += norm_lpdf(-0.7, 0.0, 2.0)              # second loading
        ref += norm_lpdf(0.1, 0.0, 1.0) + norm_lpdf(-0.2, 0.0, 1.0)
        ref += tn_lpdf(0.8, 5.0, 1.0, 0.0) + tn_lpdf(1.5, 5.0, 1.0, 0.0)
        ref += norm_lpdf(0.4, 1.5, 0.1)               # visit intercept
        ref += tn_lpdf(0.3, 0.5, 0.1, 0.1)            # visit severity
        ref += norm_lpdf(0.8, 0.0, 4.0) + tn_lpdf(1.1, 1.0, 0.1, 0.0)
        ref += norm_lpdf(-0.3, 0.0, 2.0)              # group visit offset
        for g in (0, 1):
            ref += norm_lpdf(groups[g].rate_mean, 1.0, 4.0)
            ref += tn_lpdf(groups[g].rate_sd, 0.1, 0.4, 0.0)
        # latent priors
        ref += norm_lpdf(0.2, 0.0, 1.0) + norm_lpdf(0.7, 0.6, 0.5)
        ref += norm_lpdf(-0.4, 0.8, 1.1) + norm_lpdf(1.2, 0.9, 0.4)
        # Jacobian of the log transforms
        for name, val, lo in (("loading0", 1.2, 0.5), ("nv0", 0.8, 0.0),
                              ("nv1", 1.5, 0.0), ("vsev", 0.3, 0.1),
                              ("sd1", 1.1, 0.0), ("rsd0", 0.5, 0.0),
                              ("rsd1", 0.4, 0.0)):
            ref += math.log(val - lo)
        assert lp == pytest.approx(ref, abs=1e-10)

    def test_overflow_sentinel(self, small_sim):
        data, truth = small_sim
        model = ProgressionModel(data)
        shared, groups, latents = truth_bundles(data, truth)
        x = model.pack(shared, groups, latents)
        x[model.names.index("visit_intercept")] = LOG_RATE_CAP + 5.0
        theta = model.unconstrain(x)
        lp, grad = model.logp_and_grad(theta)
        assert lp == -math.inf
        assert np.all(grad == 0.0)

    def test_nonfinite_theta_rejected(self, small_sim):
        data, _ = small_sim
        model = ProgressionModel(data)
        theta = np.zeros(model.dim)
        theta[0] = np.nan
        with pytest.raises(InvalidParameterError):
            model.log_posterior(theta)

    def test_kernel_matches_reference(self, small_sim):
        data, _ = small_sim
        model = ProgressionModel(data)
        rng = np.random.default_rng(3)
        for _ in range(10):
            theta = model.init_from_priors(rng)
            lp1, g1 = model.logp_and_grad(theta)
            lp2, g2 = model.logp_and_grad_reference(theta)
            assert lp1 == pytest.approx(lp2, rel=1e-12, abs=1e-9)
            np.testing.assert_allclose(g1, g2, rtol=1e-9, atol=1e-9)

    def test_zero_visit_coef_decouples_latents(self, small_sim):
        """With the severity coefficient at zero, the visit likelihood is
        exactly invariant in every latent, i.e. its latent gradient is 0."""
        data, truth = small_sim
        shared, groups, latents = truth_bundles(data, truth)
        shared.visit_severity = 0.0
        base = log_lik_visits(shared, groups, latents, data)
        rng = np.random.default_rng(8)
        for _ in range(5):
            i = int(rng.integers(len(latents)))
            bumped = list(latents)
            bumped[i] = PatientLatents(latents[i].init_sev + rng.normal(),
                                       latents[i].rate + rng.normal())
            assert log_lik_visits(shared, groups, bumped, data) == base
