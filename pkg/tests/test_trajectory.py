import math

import numpy as np
import pytest
from scipy.linalg import expm, solve_discrete_lyapunov

from bae_optomech import closedloop as cl
from bae_optomech import conditional as co
from bae_optomech import trajectory as tr
from bae_optomech.params import DerivedParams
from bae_optomech.spectra import AccuracyError

pytestmark = pytest.mark.filterwarnings("ignore::RuntimeWarning")

N_TRAJ = 100


def dims(**kw):
    kw.setdefault("Omega", 200.0)
    kw.setdefault("C", 500.0)
    kw.setdefault("kappa", 2000.0)
    return DerivedParams.dimensionless(**kw)


def z_scores(stats, n=None):
    m, s, th = (np.array(stats[k]) for k in ("second_moments", "second_moments_se", "theory"))
    n = len(m) if n is None else n
    return np.abs(m[:n] - th[:n]) / s[:n]


@pytest.fixture(scope="module")
def ensemble():
    return tr.simulate(dims(), seed=11, n_traj=N_TRAJ)


class TestSetup:
    def test_timestep_bound(self):
        dp = dims()
        V = co.conditional_state(dp)["V_Xp"]
        rates = (dp.Omega, 1 + dp.C, 4 * dp.Gamma * V)
        assert tr.max_timestep(dp, V) == pytest.approx(1 / max(rates) / 50)

    def test_bandwidth(self):
        dp = dims(eta=0.5)
        V = co.conditional_state(dp)["V_Xp"]
        assert tr.filter_bandwidth(dp, V) == pytest.approx(1 + 2 * dp.Gamma * V)

    def test_dt_too_large(self):
        dp = dims()
        dt = 2 * tr.max_timestep(dp, co.conditional_state(dp)["V_Xp"])
        with pytest.raises(tr.PreconditionError):
            tr.simulate(dp, dt=dt, n_traj=1, duration=1e-3)

    def test_unknown_scheme(self):
        with pytest.raises(ValueError):
            tr.simulate(dims(), n_traj=1, duration=1e-3, scheme="milstein")

    def test_substreams(self):
        a = tr.trajectory_rng(5, 3).standard_normal(4)
        np.testing.assert_array_equal(a, tr.trajectory_rng(5, 3).standard_normal(4))
        assert not np.array_equal(a, tr.trajectory_rng(5, 4).standard_normal(4))


class TestDeterministic:
    def test_spiral(self):
        dp = dims(C=50.0)
        y0 = np.zeros(6)
        y0[2] = 1.0
        rec = tr.simulate(dp, noise=False, y0=y0, n_traj=1, duration=3.0)
        t = rec.t
        np.testing.assert_allclose(rec.truth[0, :, 0], np.exp(-t / 2) * np.cos(dp.Omega * t), atol=1e-9)
        np.testing.assert_allclose(rec.truth[0, :, 1], -np.exp(-t / 2) * np.sin(dp.Omega * t), atol=1e-9)

    def test_identical_records_have_no_spread(self):
        y0 = np.full(6, 0.1)
        stats = tr.ensemble_stats(tr.simulate(dims(), noise=False, y0=y0, n_traj=3, duration=0.5))
        assert np.all(np.array(stats["second_moments_se"]) == 0.0)

    def test_single_record_has_no_spread(self):
        stats = tr.ensemble_stats(tr.simulate(dims(), seed=1, n_traj=1, duration=0.5))
        assert np.all(np.array(stats["second_moments_se"]) == 0.0)


class TestReproducibility:
    def test_same_seed(self):
        a = tr.simulate(dims(), seed=4, n_traj=3, duration=0.2)
        b = tr.simulate(dims(), seed=4, n_traj=3, duration=0.2)
        np.testing.assert_array_equal(a.dr, b.dr)
        np.testing.assert_array_equal(a.truth, b.truth)

    def test_seeds_differ(self):
        a = tr.simulate(dims(), seed=4, n_traj=2, duration=0.2)
        b = tr.simulate(dims(), seed=5, n_traj=2, duration=0.2)
        assert not np.array_equal(a.dr, b.dr)

    def test_independent_of_ensemble_split(self):
        big = tr.simulate(dims(), seed=4, n_traj=3, duration=0.2)
        small = tr.simulate(dims(), seed=4, n_traj=1, duration=0.2)
        # same substream; only the batched matrix products round differently
        np.testing.assert_allclose(big.dr[0], small.dr[0], rtol=1e-10, atol=1e-15)

    def test_record_layout(self, ensemble):
        assert ensemble.truth.shape == ensemble.estimate.shape
        assert ensemble.truth.shape[1] == ensemble.t.size
        assert ensemble.dr.shape[1] == int(round(ensemble.duration / ensemble.dt))
        assert ensemble.params_hash and ensemble.seed == 11


class TestEnsemble:
    def test_moments_match_lyapunov(self, ensemble):
        assert z_scores(tr.ensemble_stats(ensemble)).max() <= 3.0

    def test_open_loop_thermal(self, ensemble):
        stats = tr.ensemble_stats(ensemble)
        i = stats["order"].index("x+")
        assert abs(stats["second_moments"][i] - 0.5) <= 3 * stats["second_moments_se"][i]

    def test_filter_error(self, ensemble):
        stats = tr.ensemble_stats(ensemble)
        cov = co.conditional_state(dims())
        for q, key in enumerate(("V_Xp", "V_Pm")):
            assert abs(stats["filter_error"][q] - cov[key]) <= 3 * stats["filter_error_se"][q]

    def test_innovation_whiteness(self, ensemble):
        inn = tr.ensemble_stats(ensemble)["innovation"]
        assert abs(inn["variance"] - 1.0) <= 3 * inn["variance_se"]
        assert abs(inn["lag1"]) < inn["lag1_bound"]
        assert abs(inn["mean"]) <= 3 / math.sqrt(inn["count"])

    def test_record_duan(self, ensemble):
        out = tr.record_duan_estimate(ensemble)
        assert out["duan"] == pytest.approx(0.0447, rel=0.20)
        assert abs(out["duan"] - tr.kernel_error_theory(ensemble)) <= 3 * out["se"]

    def test_short_record(self):
        rec = tr.simulate(dims(), seed=2, n_traj=2, duration=0.05)
        with pytest.raises(AccuracyError):
            tr.record_duan_estimate(rec)

    def test_empty(self):
        with pytest.raises(ValueError):
            tr._mean_se(np.empty((0, 3)))


class TestConvergence:
    def test_dt_halving_discrete_stationary(self):
        # stationary covariance of the discrete update Y -> Phi Y + B dW
        dp = dims()
        cov = co.conditional_state(dp)
        sysm = tr.augmented_system(dp, cov)
        dt = tr.max_timestep(dp, cov["V_Xp"])

        def stationary(h):
            phi = expm(sysm.A * h)
            return solve_discrete_lyapunov(phi, sysm.B @ sysm.B.T * h)

        a, b = np.diag(stationary(dt)), np.diag(stationary(dt / 2))
        np.testing.assert_allclose(b, a, rtol=0.01)
        np.testing.assert_allclose(b, np.diag(cl.solve_lyapunov(sysm.A, sysm.B @ sysm.B.T)), rtol=0.01)

    def test_dt_halving_ensemble(self, ensemble):
        fine = tr.simulate(dims(), seed=11, n_traj=N_TRAJ, dt=ensemble.dt / 2, duration=ensemble.duration)
        a, b = tr.ensemble_stats(ensemble), tr.ensemble_stats(fine)
        diff = np.abs(np.subtract(a["second_moments"], b["second_moments"]))
        se = np.hypot(a["second_moments_se"], b["second_moments_se"])
        assert np.all(diff <= 3 * se)

    def test_feedback(self):
        dp = dims()
        rec = tr.simulate(dp, seed=8, n_traj=N_TRAJ, alpha=30.0)
        stats = tr.ensemble_stats(rec)
        row = cl.feedback_variances(dp, [30.0])[0]
        for name, key in (("x+", "V_fb_Xp"), ("p-", "V_fb_Pm")):
            i = stats["order"].index(name)
            assert abs(stats["second_moments"][i] - row[key]) <= 3 * stats["second_moments_se"][i]


class TestKernelFilter:
    def test_impulse_response(self):
        dr = np.zeros(200)
        dr[0] = 1.0
        out = tr.kernel_filter(dr, 0.01, 3.0, 0.5, 2.0)
        t = 0.01 * np.arange(200)
        np.testing.assert_allclose(out[0, :, 0], 2.0 * np.exp(-0.5 * t) * np.cos(3.0 * t), atol=1e-12)
        np.testing.assert_allclose(out[0, :, 1], -2.0 * np.exp(-0.5 * t) * np.sin(3.0 * t), atol=1e-12)

    def test_linear(self):
        rng = np.random.default_rng(0)
        a, b = rng.normal(size=(2, 50))
        f = lambda x: tr.kernel_filter(x, 0.01, 3.0, 0.5, 1.0)
        np.testing.assert_allclose(f(a + 2 * b), f(a) + 2 * f(b), atol=1e-12)


@pytest.mark.slow
class TestWeakMeasurement:
    def test_record_matches_oracle(self):
        dp = dims(C=0.1)
        rec = tr.simulate(dp, seed=3, n_traj=40, duration=30.0 / 0.9)
        out = tr.record_duan_estimate(rec)
        oracle = co.duan(co.conditional_state(dp))[0]
        assert oracle == pytest.approx(0.9161, abs=1e-4)
        assert abs(out["duan"] - oracle) <= 3 * out["se"]

    def test_warm_oscillators_not_entangled(self):
        dp = dims(C=0.1, nbar_a=1, nbar_b=1)
        rec = tr.simulate(dp, seed=3, n_traj=40, duration=30.0 / 0.9)
        out = tr.record_duan_estimate(rec)
        assert out["duan"] - 3 * out["se"] > 1.0
