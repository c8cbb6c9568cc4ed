import numpy as np
import pytest
from scipy.stats import kstest

from qlabc.errors import AllWeightsZero, DimensionMismatch, InitFailed
from qlabc.inference import (
    ChainConfig,
    ChainOutput,
    DistanceSpec,
    ProposalQL,
    abc_importance_sampling,
    abc_mcmc,
    abc_rejection,
    diagnostics,
    distance,
    effective_sample_size,
    epsilon_for_acceptance_rate,
    log_bayes_factor,
    proposal_logdensity,
    propose,
    select_epsilon,
    verify_proposition1,
)
from qlabc.models import get_model
from qlabc.models.base import UniformBoxPrior
from qlabc.numerics import RandomStream

from conftest import make_identity_surrogate, make_linear_surrogate


class NoiseModel:
    """Simulator whose statistic is pure noise around the parameter."""

    name = "noise"

    def __init__(self, box, sd=1.0):
        from qlabc.models.base import SimulatorSpec

        box = np.asarray(box, dtype=np.float64)
        self.sd = sd
        self.spec = SimulatorSpec("noise", box.shape[0], box.shape[0], box, 1, "uniform")
        self.prior = UniformBoxPrior(box)

    def simulate(self, theta, rng):
        return np.asarray(theta) + self.sd * rng.standard_normal(len(theta)), None


class TestDistance:
    def test_euclidean_zero(self):
        spec = DistanceSpec(np.array([1.0, 2.0]))
        assert distance(spec, np.array([1.0, 2.0])) == 0.0

    def test_euclidean_345(self):
        spec = DistanceSpec(np.array([0.0, 0.0]))
        assert distance(spec, np.array([3.0, 4.0])) == pytest.approx(5.0)

    def test_pedigree_full_match_is_zero(self):
        spec = DistanceSpec(
            np.array([0.0]), kind="pedigree-weighted", observed_genotypes=np.array([0, 1, 2])
        )
        assert distance(spec, np.array([9.0]), aux=np.array([0, 1, 2])) == 0.0

    def test_pedigree_partial_match(self):
        spec = DistanceSpec(
            np.array([0.0]), kind="pedigree-weighted", observed_genotypes=np.array([0, 1, 2, 1])
        )
        rho = distance(spec, np.array([2.0]), aux=np.array([0, 1, 0, 0]))
        assert rho == pytest.approx(2.0 * 0.5)

    def test_dimension_mismatch(self):
        spec = DistanceSpec(np.array([0.0, 0.0]))
        with pytest.raises(DimensionMismatch):
            distance(spec, np.array([1.0]))


class TestProposal:
    def test_identity_logq_at_center(self, identity_surrogate):
        prop = ProposalQL(identity_surrogate)
        value = proposal_logdensity(prop, [0.0], [0.0])
        assert value == pytest.approx(-0.5 * np.log(2 * np.pi), abs=1e-8)

    def test_identity_symmetry(self, identity_surrogate):
        prop = ProposalQL(identity_surrogate)
        assert proposal_logdensity(prop, [0.7], [-0.3]) == pytest.approx(
            proposal_logdensity(prop, [-0.3], [0.7]), abs=1e-9
        )

    def test_outside_domain_is_minus_inf(self, identity_surrogate):
        prop = ProposalQL(identity_surrogate)
        assert proposal_logdensity(prop, [3000.0], [0.0]) == -np.inf

    def test_linear_mass_integrates_to_one(self):
        sm = make_linear_surrogate(slope=2.0, half_width=4.0)
        prop = ProposalQL(sm)
        grid = np.linspace(-4, 4, 4001)
        q = np.exp([prop.logq([t], [0.0]) for t in grid])
        assert abs(np.trapezoid(q, grid) - 1.0) < 1e-3

    def test_propose_zero_variance_stays_put(self):
        sm = make_identity_surrogate(half_width=10.0, variance=1e-12)
        prop = ProposalQL(sm)
        rng = RandomStream(1).generator
        for _ in range(10):
            theta = propose(prop, [0.5], rng)
            assert abs(theta[0] - 0.5) < 1e-5

    def test_propose_outside_image_rejected(self):
        # huge proposal variance on a small box: the statistic-space draw
        # almost surely leaves the fitted image and is marked dead
        sm = make_identity_surrogate(half_width=1.0, variance=1e6)
        prop = ProposalQL(sm)
        rng = RandomStream(2).generator
        results = [propose(prop, [0.0], rng) for _ in range(20)]
        assert any(r is None for r in results)

    def test_propose_gaussian_increments(self, identity_surrogate):
        prop = ProposalQL(identity_surrogate)
        rng = RandomStream(3).generator
        draws = np.array([propose(prop, [0.0], rng)[0] for _ in range(20000)])
        assert kstest(draws, "norm").statistic < 0.01


def run_identity_chain(iterations=20000, epsilon=np.inf, seed=99, half_width=2000.0):
    sm = make_identity_surrogate(half_width=half_width)
    prop = ProposalQL(sm)
    model = NoiseModel([[-half_width, half_width]])
    prior = UniformBoxPrior([[-half_width, half_width]])
    cfg = ChainConfig(iterations=iterations, epsilon=epsilon, master_seed=seed, init=np.array([0.0]))
    return abc_mcmc(model, prior, prop, DistanceSpec(np.array([0.0])), cfg)


class TestAbcMcmc:
    def test_symmetric_degenerate_always_accepts(self):
        out = run_identity_chain(iterations=5000)
        assert out.acceptance_rate == 1.0

    def test_rw_reduction_increments_normal(self):
        out = run_identity_chain(iterations=50000)
        increments = np.diff(out.states[:, 0])
        assert kstest(increments, "norm").statistic < 0.01

    def test_states_change_only_on_accept(self, gamma_surrogate, gamma_model):
        prop = ProposalQL(gamma_surrogate)
        dist = DistanceSpec(np.array([-0.12, -0.26]))
        cfg = ChainConfig(iterations=3000, epsilon=0.3, master_seed=5)
        out = abc_mcmc(gamma_model, gamma_model.prior, prop, dist, cfg)
        changed = np.any(out.states[1:] != out.states[:-1], axis=1)
        assert np.array_equal(changed, out.accepted[1:][: changed.size] if False else out.accepted[1:])
        assert 0.0 < out.acceptance_rate < 1.0

    def test_mh_ratio_shift_invariance(self, gamma_surrogate, gamma_model):
        # adding one constant to both proposal log-densities must leave
        # the acceptance decisions bit-identical: only the ratio matters
        class ShiftedProposal(ProposalQL):
            def _log_normal(self, x, mu, sd):
                return super()._log_normal(x, mu, sd) + 7.5

        dist = DistanceSpec(np.array([-0.12, -0.26]))
        cfg = ChainConfig(iterations=2000, epsilon=0.3, master_seed=11)
        base = abc_mcmc(gamma_model, gamma_model.prior, ProposalQL(gamma_surrogate), dist, cfg)
        shifted = abc_mcmc(
            gamma_model, gamma_model.prior, ShiftedProposal(gamma_surrogate), dist, cfg
        )
        assert np.array_equal(base.accepted, shifted.accepted)
        assert np.array_equal(base.states, shifted.states)

    def test_init_failed(self, coalescent_surrogate, coalescent_model):
        prop = ProposalQL(coalescent_surrogate)
        with pytest.raises(InitFailed):
            abc_mcmc(
                coalescent_model,
                coalescent_model.prior,
                prop,
                DistanceSpec(np.array([40.0])),
                ChainConfig(iterations=10, epsilon=1.0, master_seed=1),
            )

    def test_thinning(self, gamma_surrogate, gamma_model):
        prop = ProposalQL(gamma_surrogate)
        dist = DistanceSpec(np.array([-0.12, -0.26]))
        cfg = ChainConfig(iterations=1000, epsilon=np.inf, master_seed=5, thinning=10)
        out = abc_mcmc(gamma_model, gamma_model.prior, prop, dist, cfg)
        assert out.states.shape == (100, 2)

    def test_reproducible(self, gamma_surrogate, gamma_model):
        prop = ProposalQL(gamma_surrogate)
        dist = DistanceSpec(np.array([-0.12, -0.26]))
        cfg = ChainConfig(iterations=500, epsilon=0.5, master_seed=21)
        a = abc_mcmc(gamma_model, gamma_model.prior, prop, dist, cfg)
        b = abc_mcmc(gamma_model, gamma_model.prior, prop, dist, cfg)
        assert np.array_equal(a.states, b.states)
        assert np.array_equal(a.distances, b.distances, equal_nan=True)


class TestRejection:
    def test_epsilon_inf_accepts_all(self):
        model = NoiseModel([[-1, 1]])
        thetas, rhos = abc_rejection(
            model, model.prior, np.inf, 500, DistanceSpec(np.array([0.0])), RandomStream(1)
        )
        assert thetas.shape == (500, 1)

    def test_tiny_epsilon_accepts_none(self):
        model = NoiseModel([[-1, 1]])
        thetas, _ = abc_rejection(
            model, model.prior, 1e-12, 500, DistanceSpec(np.array([0.0])), RandomStream(2)
        )
        assert thetas.shape == (0, 1)


class TestImportanceSampling:
    def test_epsilon_inf_weights_follow_formula(self, identity_surrogate):
        # uniform prior: weights must be proportional to 1/q(theta_i)
        prop = ProposalQL(identity_surrogate)
        model = NoiseModel([[-2000, 2000]])
        dist = DistanceSpec(np.array([0.0]))
        sample = abc_importance_sampling(prop, model, np.inf, 500, dist, RandomStream(3))
        q = np.exp([prop.logq([t], identity_surrogate.inverse(dist.s_obs)) for t in sample.thetas[:, 0]])
        # logq(theta | center) equals the draw density here (identity map)
        expected = (1.0 / q) / (1.0 / q).sum()
        assert np.abs(sample.weights - expected).max() < 1e-10

    def test_all_weights_zero(self, identity_surrogate):
        prop = ProposalQL(identity_surrogate)
        model = NoiseModel([[-2000, 2000]])
        with pytest.raises(AllWeightsZero):
            abc_importance_sampling(
                prop, model, 1e-14, 200, DistanceSpec(np.array([0.0])), RandomStream(4)
            )

    def test_importance_mean_tracks_posterior(self, identity_surrogate):
        # identity surrogate + unit-noise simulator: the ABC posterior at
        # small epsilon is close to N(s_obs, 1) restricted to the box
        prop = ProposalQL(identity_surrogate)
        model = NoiseModel([[-2000, 2000]])
        dist = DistanceSpec(np.array([1.5]))
        sample = abc_importance_sampling(prop, model, 0.5, 4000, dist, RandomStream(5))
        assert abs(sample.mean()[0] - 1.5) < 0.15


class TestSelectEpsilon:
    def test_monotone_in_quantile(self, coalescent_surrogate, coalescent_model):
        prop = ProposalQL(coalescent_surrogate)
        dist = DistanceSpec(np.array([2.0]))
        eps_small = select_epsilon(prop, coalescent_model, 0.1, 400, dist, RandomStream(6))
        eps_large = select_epsilon(prop, coalescent_model, 0.9, 400, dist, RandomStream(6))
        assert eps_small < eps_large

    def test_stability_under_doubling(self, coalescent_surrogate, coalescent_model):
        prop = ProposalQL(coalescent_surrogate)
        dist = DistanceSpec(np.array([2.0]))
        eps1 = select_epsilon(prop, coalescent_model, 0.1, 500, dist, RandomStream(7))
        eps2 = select_epsilon(prop, coalescent_model, 0.1, 1000, dist, RandomStream(8))
        # bootstrap standard error of the 10% quantile at n=500
        rng = RandomStream(9).generator
        from qlabc.inference import _observation_anchor
        from qlabc.inference import distance as dist_fn

        _, L = _observation_anchor(prop, dist.s_obs)
        rhos = []
        attempts = 0
        while len(rhos) < 500 and attempts < 5000:
            attempts += 1
            f = float(dist.s_obs[0]) + float(L[0, 0]) * rng.standard_normal()
            try:
                theta = coalescent_surrogate.inverse(np.array([f]))
            except Exception:
                continue
            stats, aux = coalescent_model.simulate(theta, rng)
            rhos.append(dist_fn(dist, stats, aux))
        rhos = np.array(rhos)
        boots = np.array(
            [np.quantile(rng.choice(rhos, rhos.size), 0.1) for _ in range(200)]
        )
        assert abs(eps1 - eps2) < 3 * max(boots.std(), 1e-3)


class TestEpsilonForRate:
    def test_reaches_band_on_easy_model(self, coalescent_surrogate, coalescent_model):
        prop = ProposalQL(coalescent_surrogate)
        dist = DistanceSpec(np.array([2.0]))
        eps = epsilon_for_acceptance_rate(
            coalescent_model,
            coalescent_model.prior,
            prop,
            dist,
            master_seed=31,
            probe_iterations=1500,
        )
        cfg = ChainConfig(iterations=4000, epsilon=eps, master_seed=77)
        out = abc_mcmc(coalescent_model, coalescent_model.prior, prop, dist, cfg)
        assert 0.15 <= out.acceptance_rate <= 0.45


class TestBayesFactor:
    def make_chain(self, states):
        states = np.asarray(states, dtype=np.float64).reshape(-1, 1)
        n = states.shape[0]
        return ChainOutput(
            states=states,
            accepted=np.ones(n, dtype=bool),
            distances=np.zeros(n),
            logq_fwd=np.zeros(n),
            logq_rev=np.zeros(n),
            acceptance_rate=1.0,
            iterations=n,
            thinning=1,
        )

    def test_symmetric_chain_near_zero(self):
        rng = RandomStream(10).generator
        chain = self.make_chain(rng.standard_normal(20000))
        assert abs(log_bayes_factor(chain, 0)) < 0.1

    def test_all_positive_is_inf(self):
        chain = self.make_chain(np.abs(RandomStream(11).generator.standard_normal(100)) + 0.1)
        assert log_bayes_factor(chain, 0) == np.inf

    def test_all_negative_is_minus_inf(self):
        chain = self.make_chain(-np.abs(RandomStream(12).generator.standard_normal(100)) - 0.1)
        assert log_bayes_factor(chain, 0) == -np.inf

    def test_exact_zeros_ignored(self):
        chain = self.make_chain([0.0, 0.0, 1.0, -1.0, 2.0])
        assert log_bayes_factor(chain, 0, burn_in=0.0) == pytest.approx(np.log(2))


class TestDiagnostics:
    def test_all_accepted_rate(self):
        out = run_identity_chain(iterations=2000)
        d = diagnostics(out)
        assert d.acceptance_rate == 1.0

    def test_iid_ess_close_to_n(self):
        x = RandomStream(13).generator.standard_normal(100000)
        assert abs(effective_sample_size(x) - x.size) < 0.1 * x.size

    def test_constant_chain_ess_minimal(self):
        assert effective_sample_size(np.zeros(1000)) == 1.0

    def test_text_output_keys(self):
        out = run_identity_chain(iterations=2000)
        text = diagnostics(out).as_text()
        for key in ("acceptance_rate", "theta_1.mean", "theta_1.q2.5", "theta_1.ess"):
            assert key in text


class TestVerifyProposition1:
    def test_linear_surrogate_closed_form(self):
        sm = make_linear_surrogate(slope=2.0, half_width=4.0)
        assert verify_proposition1(sm, s_obs=1.0) < 1e-8

    def test_fitted_coalescent_surrogate(self, coalescent_surrogate_constant):
        assert verify_proposition1(coalescent_surrogate_constant, s_obs=2.0) < 1e-6

    def test_scaling_invariance(self):
        a = make_linear_surrogate(slope=2.0, half_width=4.0, variance=1.0)
        b = make_linear_surrogate(slope=2.0, half_width=4.0, variance=4.0)
        da = verify_proposition1(a, s_obs=1.0)
        db = verify_proposition1(b, s_obs=1.0)
        assert da < 1e-8 and db < 1e-8

    def test_requires_constant_variance(self, coalescent_surrogate):
        with pytest.raises(ValueError):
            verify_proposition1(coalescent_surrogate, s_obs=2.0)

    def test_requires_scalar(self, gamma_surrogate):
        with pytest.raises(ValueError):
            verify_proposition1(gamma_surrogate, s_obs=0.0)
