from types import SimpleNamespace

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from cstrswitch.model import PlantParams, initial_state, nonlinear_dynamics, simulate_plant
from cstrswitch.observers import (CapacityError, CovarianceDegeneracyError, DiscreteModel,
                                  EstimateDivergenceError, GainSynthesisError, Observer,
                                  SingularUpdateError, build_bank, ekf_step, elo_step,
                                  gh_point_count, gh_points, init_estimator, observer_seed,
                                  pf_step, qkf_step, steady_state_gain, systematic_resample,
                                  ukf_sigma_points, ukf_step, ukf_weights)
from cstrswitch.observers.common import EstimatorState, safe_cholesky
from cstrswitch.observers.kalman import ekf_predict, qkf_predict, ukf_predict
from cstrswitch.scenario import ObserverConfig, Scenario

from oracles import kalman_filter, scalar_riccati

P = PlantParams()


@pytest.fixture(scope="module")
def special():
    sc = Scenario(case="sc", horizon=10.0, seed=5)
    plant = simulate_plant(sc)
    model = DiscreteModel("sc", P, sc.dt)
    return sc, plant, model


@pytest.fixture(scope="module")
def case1():
    sc = Scenario(case="1", horizon=5.0, seed=3)
    return sc, simulate_plant(sc), DiscreteModel("1", P, sc.dt)


def run_filter(step, state, plant, model, Q, R, steps, **kw):
    xs, Ps = [], []
    for k in range(steps):
        state, _ = step(state, plant.u[k], plant.y[k], model, Q, R, **kw)
        xs.append(state.x_hat)
        Ps.append(state.P)
    return np.array(xs), Ps


class TestInit:
    def test_seeded_is_reproducible(self):
        cfg = ObserverConfig("EKF")
        a = init_estimator(cfg, initial_state("1"), seed=11)
        b = init_estimator(cfg, initial_state("1"), seed=11)
        np.testing.assert_array_equal(a.x_hat, b.x_hat)

    def test_zero_std_is_exact(self):
        s = init_estimator(ObserverConfig("UKF"), initial_state("2"), seed=0, std=0.0)
        np.testing.assert_array_equal(s.x_hat, initial_state("2"))

    def test_p0_is_floored_diagonal(self):
        s = init_estimator(ObserverConfig("EKF"), initial_state("1"), seed=4)
        expected = np.where(s.x_hat > 1e-6, s.x_hat, 1e-6)
        np.testing.assert_array_equal(s.P, np.diag(expected))

    def test_draw_spread(self):
        rng = np.random.default_rng(0)
        draws = np.array([init_estimator(ObserverConfig("EKF"), np.zeros(5), rng=rng).x_hat
                          for _ in range(2000)])
        assert draws.std() == pytest.approx(0.01, rel=0.05)

    def test_particles(self):
        s = init_estimator(ObserverConfig("PF", particles=300), initial_state("1"), seed=1)
        assert s.particles.shape == (300, 5)
        np.testing.assert_allclose(s.weights, 1 / 300)

    def test_observer_streams_differ(self):
        a = np.random.default_rng(observer_seed(1, "EKF")).random()
        b = np.random.default_rng(observer_seed(1, "UKF")).random()
        assert a != b


class TestGain:
    def test_scalar_oracle(self):
        p_ref, k_ref = scalar_riccati(0.5, 1.0, 1.0, 1.0)
        K, Pinf = steady_state_gain([[0.5]], [[1.0]], [[1.0]], [[1.0]], return_covariance=True)
        assert Pinf[0, 0] == pytest.approx(p_ref, rel=1e-12)
        assert K[0, 0] == pytest.approx(k_ref, rel=1e-12)
        assert K[0, 0] == pytest.approx(p_ref / (p_ref + 1), rel=1e-12)

    def test_zero_process_noise(self):
        K = steady_state_gain(np.diag([0.5, 0.9]), [[1.0, 0.0]], np.zeros((2, 2)), [[1.0]])
        np.testing.assert_array_equal(K, 0.0)

    def test_fixed_point(self):
        model = DiscreteModel("1", P, 0.01)
        A = model.jacobian(initial_state("1"), P.inputs("1"))
        C, Q, R = model.H, 4.2e-8 * np.eye(5), 3.5e-8 * np.eye(3)
        _, Pinf = steady_state_gain(A, C, Q, R, return_covariance=True)
        S = C @ Pinf @ C.T + R
        nxt = A @ (Pinf - Pinf @ C.T @ np.linalg.solve(S, C @ Pinf)) @ A.T + Q
        assert np.linalg.norm(nxt - Pinf) <= 1e-12 * np.linalg.norm(Pinf)

    def test_matches_scipy_dare(self):
        model = DiscreteModel("1", P, 0.01)
        A = model.jacobian(initial_state("1"), P.inputs("1"))
        C, Q, R = model.H, 4.2e-8 * np.eye(5), 3.5e-8 * np.eye(3)
        _, Pinf = steady_state_gain(A, C, Q, R, return_covariance=True)
        X = scipy.linalg.solve_discrete_are(A.T, C.T, Q, R)
        np.testing.assert_allclose(Pinf, X, rtol=1e-6, atol=1e-14)

    def test_non_convergence(self):
        # unstable and invisible mode: P grows without bound
        with pytest.raises(GainSynthesisError):
            steady_state_gain([[1.5]], [[0.0]], [[1.0]], [[1.0]], max_iter=200)


class TestELO:
    def test_zero_gain_is_open_loop(self, case1):
        sc, plant, model = case1
        st_ = init_estimator(ObserverConfig("ELO"), initial_state("1"), seed=0)
        x = st_.x_hat.copy()
        for k in range(50):
            st_, _ = elo_step(st_, plant.u[k], plant.y[k], model, np.zeros((5, 3)))
            x = model.f(x, plant.u[k])
        np.testing.assert_array_equal(st_.x_hat, x)

    def test_zero_innovation(self, case1):
        sc, plant, model = case1
        st_ = init_estimator(ObserverConfig("ELO"), initial_state("1"), seed=0)
        L = np.full((5, 3), 0.3)
        new, rec = elo_step(st_, plant.u[0], model.h(st_.x_hat), model, L)
        np.testing.assert_array_equal(rec.e, 0.0)
        np.testing.assert_array_equal(new.x_hat, model.f(st_.x_hat, plant.u[0]))

    def test_bank_uses_steady_state_gain(self):
        sc = Scenario(case="1")
        bank, _ = build_bank(sc)
        elo = bank[0]
        model = elo.model
        A = model.jacobian(initial_state("1"), P.inputs("1"))
        np.testing.assert_allclose(elo.gain, steady_state_gain(A, model.H, sc.process_noise(),
                                                               sc.measurement_noise()))

    def test_divergence(self, case1):
        _, plant, model = case1
        st_ = init_estimator(ObserverConfig("ELO"), initial_state("1"), seed=0)
        with pytest.raises(EstimateDivergenceError):
            elo_step(st_, plant.u[0], plant.y[0], model, np.full((5, 3), np.inf))


class TestLinearConsistency:
    """On the linear case every Kalman-type filter reduces to the textbook KF."""

    def reference(self, sc, plant, model, steps):
        st0 = init_estimator(ObserverConfig("EKF"), initial_state("sc"), seed=9)
        ref = kalman_filter(model.Ad, model.Bd, model.H, sc.process_noise(), sc.measurement_noise(),
                            plant.u[0], plant.y[:steps], st0.x_hat, st0.P)
        return st0, ref

    @pytest.mark.parametrize("step,tol", [(ekf_step, 1e-12), (ukf_step, 1e-9), (qkf_step, 1e-9)])
    def test_matches_kf(self, special, step, tol):
        sc, plant, model = special
        st0, ref = self.reference(sc, plant, model, 1000)
        xs, _ = run_filter(step, st0, plant, model, sc.process_noise(), sc.measurement_noise(), 1000)
        np.testing.assert_allclose(xs, ref, rtol=0, atol=tol)

    def test_ekf_distrusting_measurements_follows_prediction(self, special):
        sc, plant, model = special
        st0 = init_estimator(ObserverConfig("EKF"), initial_state("sc"), seed=2)
        R = sc.measurement_noise() * 1e12
        xs, _ = run_filter(ekf_step, st0, plant, model, sc.process_noise(), R, 200)
        x = st0.x_hat.copy()
        for k in range(1, 200):
            x = model.f(x, plant.u[k])
        np.testing.assert_allclose(xs[-1], x, atol=1e-6)


class TestUKF:
    def test_default_weights(self):
        lam, Wm, Wc = ukf_weights(5)
        assert lam == 0 and Wm[0] == 0 and Wc[0] == 2
        np.testing.assert_allclose(Wm[1:], 1 / 10)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 8), st.floats(0.1, 2.0), st.floats(0.0, 3.0), st.floats(0.0, 2.0))
    def test_weights_sum_to_one(self, L, alpha, beta, kappa):
        _, Wm, _ = ukf_weights(L, alpha, beta, kappa)
        assert abs(Wm.sum() - 1) < 1e-12

    def test_points_reconstruct_mean_and_covariance(self):
        rng = np.random.default_rng(1)
        G = rng.normal(size=(3, 3))
        cov = G @ G.T + 0.1 * np.eye(3)
        mean = rng.normal(size=3)
        pts, Wm, _ = ukf_sigma_points(mean, cov)
        assert pts.shape == (7, 3)
        np.testing.assert_allclose(Wm @ pts, mean, atol=1e-12)
        d = pts - mean
        np.testing.assert_allclose((d.T * Wm) @ d, cov, atol=1e-12)

    def test_degenerate_covariance(self):
        with pytest.raises(CovarianceDegeneracyError):
            ukf_sigma_points(np.zeros(2), np.array([[1.0, 0.0], [0.0, -1.0]]))

    def test_jitter_rescues_semidefinite(self):
        L = safe_cholesky(np.array([[1.0, 1.0], [1.0, 1.0]]))
        assert np.all(np.isfinite(L))

    def test_case1_full_horizon_healthy(self):
        sc = Scenario(case="1")
        plant = simulate_plant(sc)
        model = DiscreteModel("1", P, sc.dt)
        s = init_estimator(ObserverConfig("UKF"), initial_state("1"), seed=0)
        for k in range(plant.n_steps):
            s, _ = ukf_step(s, plant.u[k], plant.y[k], model, sc.process_noise(), sc.measurement_noise())
        assert np.all(np.isfinite(s.x_hat))


class TestGaussHermite:
    def test_one_dimensional_rule(self):
        xi, w = gh_points(1)
        np.testing.assert_allclose(xi[:, 0], [-np.sqrt(3), 0, np.sqrt(3)])
        np.testing.assert_allclose(w, [1 / 6, 2 / 3, 1 / 6])
        np.testing.assert_allclose(np.round(w, 2), [0.17, 0.67, 0.17])

    @pytest.mark.parametrize("n", [1, 2, 3, 5])
    def test_first_two_moments(self, n):
        xi, w = gh_points(n)
        assert abs(w.sum() - 1) < 1e-12
        np.testing.assert_allclose(w @ xi, 0, atol=1e-14)
        np.testing.assert_allclose((xi.T * w) @ xi, np.eye(n), atol=1e-12)

    def test_fourth_mixed_moment(self):
        xi, w = gh_points(2)
        assert len(w) == 9
        assert w @ (xi[:, 0] ** 2 * xi[:, 1] ** 2) == pytest.approx(1.0, abs=1e-12)
        assert w @ xi[:, 0] ** 4 == pytest.approx(3.0, abs=1e-12)

    def test_counts(self):
        assert [gh_point_count(n) for n in (5, 10, 15)] == [243, 59049, 14348907]

    def test_unsupported_order(self):
        with pytest.raises(ValueError, match="3-point"):
            gh_points(2, m=5)

    def test_budget(self):
        with pytest.raises(CapacityError):
            gh_points(15, budget=1_000_000)

    def test_case3_observer_refused(self):
        sc = Scenario(case="3")
        model = DiscreteModel("3", P, sc.dt)
        with pytest.raises(CapacityError):
            Observer(ObserverConfig("QKF"), model, sc.process_noise(), sc.measurement_noise(),
                     initial_state("3"), P.inputs("3"), 0)


class TestHealth:
    @pytest.mark.parametrize("step", [ekf_step, ukf_step, qkf_step])
    def test_covariance_symmetric_psd(self, case1, step):
        sc, plant, model = case1
        s = init_estimator(ObserverConfig("EKF"), initial_state("1"), seed=1)
        _, Ps = run_filter(step, s, plant, model, sc.process_noise(), sc.measurement_noise(), plant.n_steps)
        for Pk in Ps:
            assert np.max(np.abs(Pk - Pk.T)) <= 1e-12 * max(np.abs(Pk).max(), 1.0)
            assert np.linalg.eigvalsh(Pk).min() > -1e-10

    @pytest.mark.parametrize("predict,kw", [(ekf_predict, {}), (ukf_predict, {}), (qkf_predict, {"n_rule": 5})])
    def test_innovation_free_fixed_point(self, case1, predict, kw):
        sc, plant, model = case1
        s = init_estimator(ObserverConfig("EKF"), initial_state("1"), seed=1)
        s.step = 1
        Q, R = sc.process_noise(), sc.measurement_noise()
        x_pred, _ = predict(s.x_hat, s.P, plant.u[1], model, Q, **kw)
        step = {ekf_predict: ekf_step, ukf_predict: ukf_step, qkf_predict: qkf_step}[predict]
        new, _ = step(s, plant.u[1], model.h(x_pred), model, Q, R)
        np.testing.assert_allclose(new.x_hat, x_pred, rtol=1e-13, atol=1e-13)

    @pytest.mark.parametrize("case", ["1", "2"])
    def test_jacobian_matches_complex_step(self, case):
        model = DiscreteModel(case, P, 0.01)
        rng = np.random.default_rng(0)
        x = initial_state(case) + np.abs(rng.normal(0, 0.1, model.n))
        u = P.inputs(case)
        h = 1e-30
        J_cs = np.column_stack([0.01 * nonlinear_dynamics(x + 1j * h * e, u, P, case).imag / h + e
                                for e in np.eye(model.n)])
        J = model.jacobian(x, u)
        big = np.abs(J_cs) > 1e-8
        rel = np.abs(J - J_cs)[big] / np.abs(J_cs)[big]
        assert rel.max() < 1e-6
        assert np.abs(J - J_cs)[~big].max() < 1e-10

    def test_singular_update(self, case1):
        sc, plant, model = case1
        s = EstimatorState(x_hat=initial_state("1"), P=np.zeros((5, 5)))
        with pytest.raises(SingularUpdateError):
            ekf_step(s, plant.u[0], plant.y[0], model, sc.process_noise(), np.zeros((3, 3)))


def toy_model(a=0.9):
    return SimpleNamespace(case=SimpleNamespace(state_names=("x",)),
                           f=lambda X, u: a * X, h=lambda X: X)


class TestParticle:
    def test_uninformative_likelihood(self, case1):
        sc, plant, model = case1
        s = init_estimator(ObserverConfig("PF", particles=200), initial_state("1"), seed=3)
        mean = s.particles.mean(axis=0)
        new, rec = pf_step(s, plant.u[0], plant.y[0], model, sc.process_noise(),
                           sc.measurement_noise() * 1e30, resample=False)
        np.testing.assert_allclose(new.weights, 1 / 200, rtol=1e-12)
        np.testing.assert_allclose(new.x_hat, mean, rtol=1e-12)

    def test_weights_normalized(self, case1):
        sc, plant, model = case1
        s = init_estimator(ObserverConfig("PF"), initial_state("1"), seed=3)
        for k in range(20):
            s, rec = pf_step(s, plant.u[k], plant.y[k], model, sc.process_noise(),
                             sc.measurement_noise(), resample=False)
            assert abs(s.weights.sum() - 1) < 1e-12 and s.weights.min() >= 0
            assert s.particles.shape == (500, 5)

    def test_systematic_resampling_concentrates(self):
        w = np.full(100, 1e-12)
        w[17] = 1.0
        w /= w.sum()
        idx = systematic_resample(w, np.random.default_rng(0))
        assert np.mean(idx == 17) >= 0.99

    def test_systematic_resampling_counts(self):
        w = np.array([0.1, 0.2, 0.3, 0.4])
        idx = systematic_resample(np.repeat(w, 25) / 25, np.random.default_rng(5))
        counts = np.bincount(idx // 25, minlength=4)
        # each stratum receives floor or ceil of N * weight
        assert np.all(np.abs(counts - 100 * w) <= 1)

    def test_weight_collapse_resets(self):
        model = toy_model()
        s = EstimatorState(x_hat=np.zeros(1), P=np.eye(1), particles=np.zeros((10, 1)),
                           weights=np.full(10, 0.1), rng=np.random.default_rng(0))
        new, rec = pf_step(s, None, np.array([np.inf]), model, np.eye(1), np.eye(1))
        assert rec.diagnostics["weight_collapse"]
        np.testing.assert_allclose(new.weights, 0.1)

    def test_zero_process_noise_keeps_mean(self):
        model = toy_model()
        X = np.full((50, 1), 2.0)
        s = EstimatorState(x_hat=np.array([2.0]), P=np.zeros((1, 1)), step=1, particles=X,
                           weights=np.full(50, 0.02), rng=np.random.default_rng(0))
        new, _ = pf_step(s, None, np.array([1.8]), model, np.zeros((1, 1)), np.eye(1))
        assert new.x_hat[0] == pytest.approx(1.8)

    def test_converges_to_kalman_on_linear_toy(self):
        a, q, r, N = 0.9, 1.0, 1.0, 100_000
        rng = np.random.default_rng(12)
        x, ys = 0.0, []
        for _ in range(50):
            ys.append(x + rng.normal(0, np.sqrt(r)))
            x = a * x + rng.normal(0, np.sqrt(q))
        kf = kalman_filter(np.array([[a]]), np.zeros((1, 1)), np.eye(1), q * np.eye(1), r * np.eye(1),
                           np.zeros(1), [np.array([y]) for y in ys], np.zeros(1), np.eye(1))
        model = toy_model(a)
        s = EstimatorState(x_hat=np.zeros(1), P=np.eye(1), particles=rng.normal(0, 1, (N, 1)),
                           weights=np.full(N, 1 / N), rng=np.random.default_rng(7))
        for k, y in enumerate(ys):
            s, rec = pf_step(s, None, np.array([y]), model, q * np.eye(1), r * np.eye(1))
            se = np.sqrt(s.P[0, 0] / rec.diagnostics["ess"])
            assert abs(s.x_hat[0] - kf[k, 0]) < 3 * se, k
