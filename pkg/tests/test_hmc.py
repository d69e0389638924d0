import numpy as np
import pytest

from latentscope import hmc, mixture
from latentscope.mixture import MixtureModel
from latentscope.stats import ks_statistic

STD_NORMAL = MixtureModel.gaussian()
BIMODAL = MixtureModel.symmetric_pair(2.0, 0.25)

# tuned on N(0,1): two leapfrog steps of 1.2 give ~0.92 acceptance with fast mixing
TUNED = dict(step_size=1.2, n_leapfrog=2)


def _target(model=STD_NORMAL, gradient="analytic"):
    return hmc.Target.from_mixture(model, gradient)


class TestLeapfrog:
    @pytest.mark.parametrize("eps,steps", [(0.1, 10), (0.05, 37), (0.3, 5), (1.1, 3)])
    @pytest.mark.parametrize("model", [STD_NORMAL, BIMODAL, MixtureModel.gaussian(1.0, 3.0)])
    def test_reversible(self, eps, steps, model):
        grad = _target(model).grad
        q0, p0 = 0.37, -1.21
        q1, p1 = hmc.leapfrog(q0, p0, grad, eps, steps)
        q2, p2 = hmc.leapfrog(q1, -p1, grad, eps, steps)
        assert abs(q2 - q0) <= 1e-10 and abs(-p2 - p0) <= 1e-10

    def test_energy_error_small(self):
        t = _target()
        q0, p0 = 0.8, 1.1
        q1, p1 = hmc.leapfrog(q0, p0, t.grad, 0.1, 10)
        assert abs(hmc.hamiltonian(t, q1, p1) - hmc.hamiltonian(t, q0, p0)) <= 1e-2

    def test_energy_error_second_order(self):
        t = _target()
        q0, p = np.linspace(-2, 2, 9), np.linspace(1.5, -1.0, 9)
        h0 = hmc.hamiltonian(t, q0, p)
        big = np.abs(hmc.hamiltonian(t, *hmc.leapfrog(q0, p, t.grad, 0.1, 10)) - h0)
        small = np.abs(hmc.hamiltonian(t, *hmc.leapfrog(q0, p, t.grad, 0.05, 20)) - h0)
        ratio = big.max() / small.max()
        assert 3.5 <= ratio <= 4.5

    def test_free_particle(self):
        q, p = hmc.leapfrog(1.0, 0.5, lambda x: np.zeros_like(x), 0.1, 7)
        assert q == pytest.approx(1.0 + 7 * 0.1 * 0.5, abs=1e-15) and p == 0.5

    def test_divergence_does_not_raise(self):
        q, p = hmc.leapfrog(1.0, 1.0, lambda x: 1e300 * np.asarray(x) ** 3, 1.0, 5)
        assert not (np.isfinite(q) and np.isfinite(p))


class TestStep:
    def test_tiny_step_always_accepts(self):
        cfg = hmc.HmcConfig(step_size=1e-12, n_leapfrog=5)
        rng = np.random.default_rng(0)
        accepted = [hmc.hmc_step(0.5, _target(), cfg, rng)[1] for _ in range(50)]
        assert all(accepted)

    def test_deterministic(self):
        cfg = hmc.HmcConfig(**TUNED)
        a = hmc.hmc_step(0.3, _target(), cfg, np.random.default_rng(11))
        b = hmc.hmc_step(0.3, _target(), cfg, np.random.default_rng(11))
        assert a == b

    def test_non_finite_proposal_rejected(self):
        wild = hmc.Target(lambda q: -np.asarray(q, dtype=float) ** 4,
                          lambda q: -4 * np.asarray(q, dtype=float) ** 3)
        cfg = hmc.HmcConfig(step_size=50.0, n_leapfrog=10)
        q, ok = hmc.hmc_step(2.0, wild, cfg, np.random.default_rng(0))
        assert not ok and q == 2.0

    def test_non_finite_start(self):
        with pytest.raises(ValueError):
            hmc.hmc_step(np.nan, _target(), hmc.HmcConfig(), np.random.default_rng(0))

    def test_tuned_acceptance_band(self):
        chain = hmc.run_chain(0.0, STD_NORMAL, hmc.HmcConfig(**TUNED, n_samples=10_000, burn_in=200))
        assert 0.6 <= chain.acceptance_rate <= 0.99


class TestChains:
    def test_standard_normal_moments(self):
        cfg = hmc.HmcConfig(**TUNED, n_samples=10_000, burn_in=500)
        chain = hmc.run_chain(0.0, STD_NORMAL, cfg)
        assert chain.positions.size == 10_000
        assert abs(chain.positions.mean()) < 0.05
        assert abs(chain.positions.var() - 1.0) < 0.1

    def test_acceptance_is_exact_ratio(self):
        chain = hmc.run_chain(0.0, BIMODAL, hmc.HmcConfig(step_size=0.6, n_leapfrog=4, n_samples=777,
                                                          burn_in=10))
        assert chain.acceptance_rate == np.count_nonzero(chain.accepted) / 777
        assert chain.n_proposals == 777

    def test_rejections_repeat_position(self):
        chain = hmc.run_chain(0.0, STD_NORMAL, hmc.HmcConfig(step_size=2.5, n_leapfrog=3, n_samples=500,
                                                             burn_in=0))
        stay = ~chain.accepted[1:]
        np.testing.assert_array_equal(chain.positions[1:][stay], chain.positions[:-1][stay])

    def test_bimodal_with_many_starts(self):
        # one chain per start point, starts drawn from the target as encoder latents would be
        inits = mixture.sample(BIMODAL, 1000, seed=1)
        cfg = hmc.HmcConfig(step_size=0.6, n_leapfrog=4, n_samples=20_000, burn_in=100)
        chain = hmc.run_dimension(inits, BIMODAL, cfg)
        assert chain.positions.size == 20_000
        assert 0.45 <= np.mean(chain.positions > 0) <= 0.55
        oracle = mixture.sample(BIMODAL, 10_000, seed=7)
        assert ks_statistic(chain.positions[::10], oracle) < 0.05

    def test_fd_and_analytic_agree(self):
        base = dict(**TUNED, n_samples=2000, burn_in=50)
        fd = hmc.run_chain(0.1, STD_NORMAL, hmc.HmcConfig(**base, gradient="fd"))
        an = hmc.run_chain(0.1, STD_NORMAL, hmc.HmcConfig(**base, gradient="analytic"))
        # same random streams; scores differ at the 1e-9 level, so the paths coincide
        np.testing.assert_allclose(fd.positions, an.positions, atol=1e-6)

    def test_all_rejected_warns(self, caplog):
        far = MixtureModel.gaussian(0.0, 1e-6)
        with caplog.at_level("WARNING"):
            chain = hmc.run_chain(0.0, far, hmc.HmcConfig(step_size=5.0, n_leapfrog=3, n_samples=50,
                                                          burn_in=0))
        assert chain.acceptance_rate == 0.0
        assert "rejected" in caplog.text


class TestAllDimensions:
    def test_single_dimension_reduces_to_run_chain(self):
        cfg = hmc.HmcConfig(**TUNED, n_samples=300, burn_in=20, n_chains=1)
        chains, rates = hmc.run_all_dimensions(np.array([[0.25]]), [STD_NORMAL], cfg)
        ref = hmc.run_chain(0.25, STD_NORMAL, cfg, dim=0)
        np.testing.assert_array_equal(chains[0].positions, ref.positions)
        assert rates[0] == ref.acceptance_rate

    def test_identical_dimensions_identical_rates(self):
        z = np.tile(np.linspace(-1, 1, 8)[:, None], (1, 3))
        cfg = hmc.HmcConfig(**TUNED, n_samples=400, burn_in=20, n_chains=4, seed=2)
        # same model, same starts and the same stream seeds for every column
        rates = [hmc.run_dimension(hmc.select_inits(z, 4)[:, d], STD_NORMAL, cfg, dim=0).acceptance_rate
                 for d in range(3)]
        assert rates[0] == rates[1] == rates[2]

    def test_rates_match_reference_runs(self):
        models = [STD_NORMAL, MixtureModel.gaussian(0.0, 0.25), BIMODAL]
        rng = np.random.default_rng(3)
        z = np.column_stack([mixture.sample(m, 60, seed=i) for i, m in enumerate(models)])
        cfg = hmc.HmcConfig(step_size=0.4, n_leapfrog=5, n_samples=3000, burn_in=100, n_chains=10)
        _, rates = hmc.run_all_dimensions(z, models, cfg)
        for d, m in enumerate(models):
            ref = hmc.run_chain(float(rng.choice(z[:, d])), m, cfg, dim=d + 100)
            assert abs(rates[d] - ref.acceptance_rate) <= 0.1
        assert np.all((rates >= 0) & (rates <= 1))

    def test_thread_count_does_not_change_results(self, monkeypatch):
        z = np.random.default_rng(0).standard_normal((30, 4))
        cfg = hmc.HmcConfig(**TUNED, n_samples=200, burn_in=10, n_chains=5)
        serial, _ = hmc.run_all_dimensions(z, [STD_NORMAL] * 4, cfg, workers=1)
        monkeypatch.setenv("LATENTSCOPE_THREADS", "3")
        parallel, _ = hmc.run_all_dimensions(z, [STD_NORMAL] * 4, cfg)
        for a, b in zip(serial, parallel):
            assert a.positions.tobytes() == b.positions.tobytes()

    def test_chain_batching_matches_single_chains(self):
        inits = np.array([-0.5, 0.1, 0.9])
        cfg = hmc.HmcConfig(**TUNED, n_samples=30, burn_in=5)
        joint = hmc.run_dimension(inits, STD_NORMAL, cfg, dim=1)
        target = hmc.Target.from_mixture(STD_NORMAL, cfg.gradient, cfg.fd_step)
        for c, q0 in enumerate(inits):
            alone, _ = hmc._run_chains([q0], target, cfg, 10, dim=1, chain_ids=[c])
            np.testing.assert_array_equal(joint.positions[c * 10:(c + 1) * 10], alone[0])

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            hmc.run_all_dimensions(np.zeros((5, 2)), [STD_NORMAL], hmc.HmcConfig())

    def test_bad_thread_env(self, monkeypatch):
        monkeypatch.setenv("LATENTSCOPE_THREADS", "many")
        with pytest.raises(ValueError):
            hmc.worker_count()


class TestConfig:
    @pytest.mark.parametrize("kwargs", [dict(step_size=0), dict(n_leapfrog=0), dict(burn_in=-1),
                                        dict(fd_step=0), dict(gradient="exact")])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            hmc.HmcConfig(**kwargs)
