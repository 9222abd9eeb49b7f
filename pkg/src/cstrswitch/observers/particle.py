"""Bootstrap particle filter with systematic resampling."""

from __future__ import annotations

import numpy as np

from .common import DiscreteModel, EstimatorState, check_finite, make_record


def systematic_resample(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Indices drawn by one uniform offset on an evenly spaced comb."""
    N = len(weights)
    positions = (rng.random() + np.arange(N)) / N
    cumulative = np.cumsum(weights)
    cumulative[-1] = 1.0
    return np.searchsorted(cumulative, positions, side="right").clip(max=N - 1)


def log_likelihood(y, z, R) -> np.ndarray:
    """Gaussian log-density of ``y`` around each row of ``z`` (constants dropped)."""
    r = np.asarray(y) - z
    L = np.linalg.cholesky(R)
    sol = np.linalg.solve(L, r.T)
    return -0.5 * np.sum(sol * sol, axis=0)


def pf_step(state: EstimatorState, u, y, model: DiscreteModel, Q, R,
            resample: bool = True):
    rng = state.rng
    X = state.particles
    N, n = X.shape
    if state.step > 0:
        noise = rng.standard_normal((N, n)) @ np.linalg.cholesky(Q).T if np.any(Q) else 0.0
        X = model.f(X, u) + noise
    with np.errstate(divide="ignore"):
        logw = np.log(state.weights) + log_likelihood(y, model.h(X), R)
    collapsed = not np.any(np.isfinite(logw))
    if collapsed:
        w = np.full(N, 1.0 / N)
    else:
        logw = np.where(np.isfinite(logw), logw, -np.inf)
        w = np.exp(logw - logw.max())
        w /= w.sum()
    x_hat = w @ X
    d = X - x_hat
    P = (d.T * w) @ d
    check_finite(x_hat, model.case, "PF")
    ess = 1.0 / np.sum(w * w)
    if resample:
        X = X[systematic_resample(w, rng)]
        w = np.full(N, 1.0 / N)
    new = EstimatorState(x_hat=x_hat, P=0.5 * (P + P.T), step=state.step + 1,
                         particles=X, weights=w, rng=rng)
    return new, make_record("PF", model, x_hat, y, ess=float(ess), weight_collapse=collapsed)
