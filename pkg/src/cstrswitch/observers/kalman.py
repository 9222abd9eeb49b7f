"""Extended, unscented and Gauss-Hermite quadrature Kalman filters.

All three share the same step layout: predict with ``u`` (skipped on the
very first sample, where the initial draw is the prior), then update with
``y``.  Noise is additive.
"""

from __future__ import annotations

import functools
import itertools

import numpy as np

from .common import (CapacityError, DiscreteModel, EstimatorState, SingularUpdateError,
                     check_finite, make_record, safe_cholesky, symmetrize)


def _solve_gain(cross: np.ndarray, S: np.ndarray) -> np.ndarray:
    """``cross @ inv(S)`` for symmetric ``S``."""
    try:
        return np.linalg.solve(S, cross.T).T
    except np.linalg.LinAlgError as exc:
        raise SingularUpdateError("innovation covariance is singular") from exc


def _finish(kind, state, model, x, P, y, **diag):
    check_finite(x, model.case, kind)
    new = EstimatorState(x_hat=x, P=P, step=state.step + 1, rng=state.rng)
    return new, make_record(kind, model, x, y, **diag)


# --- EKF -------------------------------------------------------------------

def ekf_predict(x, P, u, model: DiscreteModel, Q):
    F = model.jacobian(x, u)
    return model.f(x, u), symmetrize(F @ P @ F.T + Q)


def ekf_update(x, P, y, model: DiscreteModel, R):
    H = model.H
    S = H @ P @ H.T + R
    K = _solve_gain(P @ H.T, S)
    x_new = x + K @ (np.asarray(y) - model.h(x))
    P_new = symmetrize(P - K @ H @ P)
    return x_new, P_new


def ekf_step(state: EstimatorState, u, y, model: DiscreteModel, Q, R):
    x, P = state.x_hat, state.P
    if state.step > 0:
        x, P = ekf_predict(x, P, u, model, Q)
    x, P = ekf_update(x, P, y, model, R)
    return _finish("EKF", state, model, x, P, y)


# --- UKF -------------------------------------------------------------------

def ukf_weights(L: int, alpha: float = 1.0, beta: float = 2.0, kappa: float = 0.0):
    lam = alpha ** 2 * (L + kappa) - L
    Wm = np.full(2 * L + 1, 1.0 / (2 * (L + lam)))
    Wc = Wm.copy()
    Wm[0] = lam / (L + lam)
    Wc[0] = lam / (L + lam) + (1 - alpha ** 2 + beta)
    return lam, Wm, Wc


def ukf_sigma_points(mean, cov, alpha: float = 1.0, beta: float = 2.0, kappa: float = 0.0):
    """Sigma points ``(2L+1, L)`` with mean and covariance weights."""
    mean = np.asarray(mean, dtype=float)
    L = mean.shape[0]
    lam, Wm, Wc = ukf_weights(L, alpha, beta, kappa)
    S = safe_cholesky((L + lam) * np.asarray(cov, dtype=float))
    pts = np.empty((2 * L + 1, L))
    pts[0] = mean
    pts[1: L + 1] = mean + S.T
    pts[L + 1:] = mean - S.T
    return pts, Wm, Wc


def _weighted_moments(points, Wm, Wc):
    mean = Wm @ points
    d = points - mean
    return mean, (d.T * Wc) @ d, d


def ukf_predict(x, P, u, model: DiscreteModel, Q, alpha=1.0, beta=2.0, kappa=0.0):
    pts, Wm, Wc = ukf_sigma_points(x, P, alpha, beta, kappa)
    prop = model.f(pts, u)
    mean, cov, _ = _weighted_moments(prop, Wm, Wc)
    return mean, symmetrize(cov + Q)


def ukf_update(x, P, y, model: DiscreteModel, R, alpha=1.0, beta=2.0, kappa=0.0):
    pts, Wm, Wc = ukf_sigma_points(x, P, alpha, beta, kappa)
    z = model.h(pts)
    z_mean, Pzz, dz = _weighted_moments(z, Wm, Wc)
    Pzz = Pzz + R
    dx = pts - x
    Pxz = (dx.T * Wc) @ dz
    K = _solve_gain(Pxz, Pzz)
    x_new = x + K @ (np.asarray(y) - z_mean)
    P_new = symmetrize(P - K @ Pzz @ K.T)
    return x_new, P_new


def ukf_step(state: EstimatorState, u, y, model: DiscreteModel, Q, R,
             alpha=1.0, beta=2.0, kappa=0.0):
    x, P = state.x_hat, state.P
    if state.step > 0:
        x, P = ukf_predict(x, P, u, model, Q, alpha, beta, kappa)
    x, P = ukf_update(x, P, y, model, R, alpha, beta, kappa)
    return _finish("UKF", state, model, x, P, y)


# --- QKF -------------------------------------------------------------------

GH3_NODES = np.array([-np.sqrt(3.0), 0.0, np.sqrt(3.0)])
GH3_WEIGHTS = np.array([1.0, 4.0, 1.0]) / 6.0


def gh_point_count(n: int, m: int = 3) -> int:
    return m ** n


@functools.lru_cache(maxsize=8)
def _gh_grid(n: int):
    nodes = np.array(list(itertools.product(GH3_NODES, repeat=n)))
    weights = np.prod(np.array(list(itertools.product(GH3_WEIGHTS, repeat=n))), axis=1)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def gh_points(n: int, m: int = 3, budget: int | None = None):
    """Tensor Gauss-Hermite rule for a standard normal in ``n`` dimensions.

    Returns ``(m**n, n)`` nodes and their weights.  Only ``m = 3`` is
    implemented; ``budget`` caps the point count.
    """
    if m != 3:
        raise ValueError(f"only the 3-point Gauss-Hermite rule is implemented (got m={m})")
    if n < 1:
        raise ValueError("dimension must be >= 1")
    count = gh_point_count(n, m)
    if budget is not None and count > budget:
        raise CapacityError(f"{m}^{n} = {count} quadrature points exceed the budget of {budget}")
    return _gh_grid(n)


@functools.lru_cache(maxsize=8)
def _gh_rule(n: int):
    """Column-major nodes plus the rule's first and second moments."""
    nodes, w = _gh_grid(n)
    cols = np.ascontiguousarray(nodes.T)
    mean = cols @ w
    second = (cols * w) @ cols.T - np.outer(mean, mean)
    for a in (cols, mean, second):
        a.setflags(write=False)
    return cols, w, mean, second


def qkf_predict(x, P, u, model: DiscreteModel, Q, n_rule: int):
    cols, w, _, _ = _gh_rule(n_rule)
    S = safe_cholesky(P)
    pts = S @ cols
    pts += x[:, None]
    prop = model.f_columns(pts, u)
    mean = prop @ w
    prop -= mean[:, None]
    return mean, symmetrize((prop * w) @ prop.T + Q)


def qkf_update(x, P, y, model: DiscreteModel, R, n_rule: int):
    # h is a coordinate selection, so the quadrature sums over h(x + S xi)
    # reduce to the rule's own moments mapped through S and H.
    _, _, mu, cov = _gh_rule(n_rule)
    S = safe_cholesky(P)
    H = model.H
    z_mean = H @ (x + S @ mu)
    Pxz = S @ cov @ S.T @ H.T
    Pzz = H @ Pxz + R
    K = _solve_gain(Pxz, Pzz)
    x_new = x + K @ (np.asarray(y) - z_mean)
    return x_new, symmetrize(P - K @ Pzz @ K.T)


def qkf_step(state: EstimatorState, u, y, model: DiscreteModel, Q, R,
             m: int = 3, budget: int = 1_000_000):
    gh_points(model.n, m, budget)
    x, P = state.x_hat, state.P
    if state.step > 0:
        x, P = qkf_predict(x, P, u, model, Q, model.n)
    x, P = qkf_update(x, P, y, model, R, model.n)
    return _finish("QKF", state, model, x, P, y, points=gh_point_count(model.n, m))
