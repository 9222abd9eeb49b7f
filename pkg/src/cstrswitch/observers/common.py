"""Shared pieces of the observer bank: the discrete model, state and record types."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..model import (CaseId, DivergenceError, LinearModel, default_linear_model,
                     nonlinear_dynamics, output_matrix, reactor_params, reactor_rhs)

JITTER_LADDER = (1e-12, 1e-9, 1e-6)
P0_FLOOR = 1e-6


class EstimatorError(ArithmeticError):
    """Base class for failures that make an observer unavailable."""


class CovarianceDegeneracyError(EstimatorError):
    pass


class SingularUpdateError(EstimatorError):
    pass


class CapacityError(EstimatorError):
    pass


class GainSynthesisError(EstimatorError):
    pass


class EstimateDivergenceError(EstimatorError, DivergenceError):
    pass


class ObserverConfigError(EstimatorError):
    """Noise settings a filter cannot work with (e.g. a singular ``R``)."""


class DiscreteModel:
    """Euler-discretized dynamics ``f_d`` and output map ``h`` shared by all filters.

    Batched: ``x`` may be ``(n,)`` or ``(N, n)``.
    """

    def __init__(self, case, params, dt: float, linear_model: LinearModel | None = None):
        self.case = CaseId.parse(case)
        self.params = params
        self.dt = float(dt)
        self.n = self.case.n_states
        self.p = self.case.n_outputs
        self.H = output_matrix(self.case)
        self._out = list(self.case.output_index)
        if self.case.is_linear:
            lm = linear_model or default_linear_model(params)
            self.linear_model = lm
            self.Ad, self.Bd = lm.discretize(self.dt)
        else:
            self.linear_model = None
            self._reactors = reactor_params(params, self.case.n_reactors)

    def f(self, x, u) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.case.is_linear:
            return x @ self.Ad.T + self.Bd @ u
        return x + self.dt * nonlinear_dynamics(x, u, self.params, self.case)

    def f_columns(self, X, u) -> np.ndarray:
        """``f_d`` on a column-major cloud ``X`` of shape ``(n, N)``."""
        X = np.asarray(X, dtype=float)
        if self.case.is_linear:
            return self.Ad @ X + (self.Bd @ u)[:, None]
        rhs = reactor_rhs(list(X), u, self._reactors)
        out = np.array(rhs)
        out *= self.dt
        out += X
        return out

    def h(self, x) -> np.ndarray:
        return np.asarray(x)[..., self._out]

    def jacobian(self, x, u, rel_step: float = 1e-6) -> np.ndarray:
        """``I + dt * df/dx`` at ``x``; exact for the linear case.

        The continuous field is differenced (not ``f_d``), so the large state
        magnitudes do not swamp the small ``dt``-scaled entries.
        """
        if self.case.is_linear:
            return self.Ad.copy()
        x = np.asarray(x, dtype=float)
        steps = rel_step * np.maximum(np.abs(x), 1.0)
        E = np.diag(steps)
        fx = nonlinear_dynamics(np.vstack([x + E, x - E]), u, self.params, self.case)
        J = ((fx[: self.n] - fx[self.n:]) / (2 * steps[:, None])).T
        return np.eye(self.n) + self.dt * J


@dataclass
class EstimatorState:
    x_hat: np.ndarray
    P: np.ndarray
    step: int = 0
    particles: np.ndarray | None = None
    weights: np.ndarray | None = None
    rng: np.random.Generator | None = None


@dataclass
class EstimatorRecord:
    observer: str
    x_hat: np.ndarray
    y_hat: np.ndarray
    e: np.ndarray
    wall_time: float = 0.0
    diagnostics: dict = field(default_factory=dict)


def symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


def safe_cholesky(P: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor, escalating diagonal jitter before giving up."""
    try:
        return np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        pass
    eye = np.eye(P.shape[0])
    for jitter in JITTER_LADDER:
        try:
            return np.linalg.cholesky(P + jitter * eye)
        except np.linalg.LinAlgError:
            continue
    raise CovarianceDegeneracyError("covariance not positive definite after jitter escalation")


def check_finite(x: np.ndarray, case: CaseId, who: str) -> None:
    if not np.all(np.isfinite(x)):
        bad = np.flatnonzero(~np.isfinite(np.atleast_2d(x)).all(axis=0))
        name = case.state_names[int(bad[0])] if bad.size else "?"
        raise EstimateDivergenceError(f"{who} estimate diverged in {name}", component=name)


def init_estimator(config, x0_nominal, seed=None, rng: np.random.Generator | None = None,
                   std: float | None = None) -> EstimatorState:
    """Draw the initial estimate around the nominal state.

    ``x_hat ~ N(x0_nominal, std^2 I)`` and ``P0 = diag(x_hat)`` floored at
    ``P0_FLOOR``.  The particle filter also draws its cloud from the same
    distribution.  ``rng`` (if given) is kept on the state for later steps.
    """
    x0_nominal = np.asarray(x0_nominal, dtype=float)
    n = x0_nominal.shape[0]
    if rng is None:
        rng = np.random.default_rng(seed)
    std = config.init_std if std is None else std
    x_hat = x0_nominal + std * rng.standard_normal(n)
    P = np.diag(np.where(x_hat > P0_FLOOR, x_hat, P0_FLOOR))
    state = EstimatorState(x_hat=x_hat, P=P, rng=rng)
    if config.kind == "PF":
        N = config.particles
        state.particles = x0_nominal + std * rng.standard_normal((N, n))
        state.weights = np.full(N, 1.0 / N)
    return state


def make_record(kind: str, model: DiscreteModel, x_hat, y, **diagnostics) -> EstimatorRecord:
    y_hat = model.h(x_hat)
    return EstimatorRecord(observer=kind, x_hat=np.array(x_hat, copy=True), y_hat=y_hat,
                           e=np.asarray(y) - y_hat, diagnostics=diagnostics)
