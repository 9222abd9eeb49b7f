"""Extended Luenberger observer with a steady-state Kalman gain."""

from __future__ import annotations

import numpy as np

from .common import (DiscreteModel, EstimatorState, GainSynthesisError, check_finite, make_record)


def steady_state_gain(A_d, C, Q, R, rtol: float = 1e-12, max_iter: int = 100_000,
                      return_covariance: bool = False):
    """Limit gain of the discrete Riccati recursion.

    Iterates ``P <- A (P - P C' (C P C' + R)^-1 C P) A' + Q`` from ``P = Q``
    until the relative Frobenius change drops below ``rtol`` and returns
    ``K = P C' (C P C' + R)^-1`` (``n x p``).
    """
    A_d = np.atleast_2d(np.asarray(A_d, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    P = Q.copy()
    for _ in range(max_iter):
        S = C @ P @ C.T + R
        PCt = P @ C.T
        try:
            P_new = A_d @ (P - PCt @ np.linalg.solve(S, PCt.T)) @ A_d.T + Q
        except np.linalg.LinAlgError as exc:
            raise GainSynthesisError("innovation covariance singular during Riccati iteration") from exc
        P_new = 0.5 * (P_new + P_new.T)
        scale = np.linalg.norm(P_new)
        change = np.linalg.norm(P_new - P)
        P = P_new
        if change <= rtol * scale or scale == 0.0:
            break
    else:
        raise GainSynthesisError(f"Riccati recursion did not converge in {max_iter} iterations")
    try:
        K = np.linalg.solve(C @ P @ C.T + R, C @ P).T
    except np.linalg.LinAlgError as exc:
        raise GainSynthesisError("innovation covariance singular at the fixed point") from exc
    if return_covariance:
        return K, P
    return K


def elo_gain(model: DiscreteModel, x_op, u, Q, R) -> np.ndarray:
    """``K_inf`` of the discrete linearization at ``(x_op, u)``."""
    return steady_state_gain(model.jacobian(x_op, u), model.H, Q, R)


def elo_step(state: EstimatorState, u, y, model: DiscreteModel, L):
    """Record the current estimate, then advance ``x <- f_d(x, u) + L (y - h(x))``."""
    x = state.x_hat
    record = make_record("ELO", model, x, y)
    with np.errstate(invalid="ignore", over="ignore"):
        x_next = model.f(x, u) + L @ record.e
    check_finite(x_next, model.case, "ELO")
    new = EstimatorState(x_hat=x_next, P=state.P, step=state.step + 1, rng=state.rng)
    return new, record
