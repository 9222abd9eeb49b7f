"""Observability rank tests for the linear and nonlinear reactor models.

The nonlinear test stacks the state gradients of the output map and its Lie
derivatives along the frozen-input vector field.  Lie derivatives are taken
from the Taylor expansion of the flow (``L_f^j h(x) = j! * [y]_j``) and their
gradients by complex step, which stays exact to rounding at any order.  A
central-difference route is kept for low orders as an independent check.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .model import (CaseId, LinearModel, ModelError, PlantParams, default_linear_model,
                    euler_step, initial_state, measurement, reactor_params, reactor_rhs)
from .taylor import flow_coefficients

DEFAULT_TOL = 1e-9


class NumericalFailure(ArithmeticError):
    pass


class Classification(enum.Enum):
    FULLY_OBSERVABLE = "FO"
    PARTIALLY_OBSERVABLE = "PO"


@dataclass
class ObservabilityReport:
    case: CaseId | None
    state_dim: int
    rank: int
    singular_values: np.ndarray
    tol: float
    order: int | None = None
    point_ranks: list[int] = field(default_factory=list)

    @property
    def classification(self) -> Classification:
        if self.rank == self.state_dim:
            return Classification.FULLY_OBSERVABLE
        return Classification.PARTIALLY_OBSERVABLE

    def summary(self) -> str:
        name = self.case.name if self.case else "linear"
        return (f"{name}: rank {self.rank} of {self.state_dim} "
                f"({self.classification.value}), tol={self.tol:g}")


def numerical_rank(M: np.ndarray, tol: float = DEFAULT_TOL) -> tuple[int, np.ndarray]:
    """Rank as the count of singular values above ``tol * sigma_max``."""
    s = np.linalg.svd(M, compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0, s
    return int(np.sum(s > tol * s[0])), s


def observability_matrix(A, C) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    n = A.shape[0]
    if A.shape != (n, n) or C.shape[1] != n:
        raise ModelError(f"need square A and C with {n} columns, got {A.shape} and {C.shape}")
    blocks = [C]
    for _ in range(n - 1):
        blocks.append(blocks[-1] @ A)
    return np.vstack(blocks)


def linear_observability(A, C, tol: float = DEFAULT_TOL, case: CaseId | None = None) -> ObservabilityReport:
    O = observability_matrix(A, C)
    rank, s = numerical_rank(O, tol)
    return ObservabilityReport(case=case, state_dim=O.shape[1], rank=rank,
                               singular_values=s, tol=tol, order=O.shape[1])


def _vector_field(case: CaseId, u0, params, linear_model: LinearModel | None):
    if case.is_linear:
        lm = linear_model or default_linear_model(params if isinstance(params, PlantParams) else None)
        A, b = lm.A, lm.B @ np.asarray(u0, dtype=float)

        def rhs(cols):
            out = []
            for i in range(A.shape[0]):
                acc = b[i]
                for j in range(A.shape[1]):
                    if A[i, j] != 0.0:
                        acc = acc + A[i, j] * cols[j]
                out.append(acc)
            return out
        return rhs

    per_reactor = reactor_params(params, case.n_reactors)

    def rhs(cols):
        return reactor_rhs(cols, u0, per_reactor)
    return rhs


def lie_jacobians(case: CaseId | str, x0, u0, params=None, order: int | None = None,
                  linear_model: LinearModel | None = None, step: float = 1e-20) -> np.ndarray:
    """Stacked gradients ``d(L_f^j h)/dx`` for ``j = 0..order-1`` at ``x0``.

    Returns an array ``(order * p, n)``.
    """
    case = CaseId.parse(case)
    params = params if params is not None else PlantParams()
    x0 = np.asarray(x0, dtype=float)
    n = case.n_states
    order = n if order is None else order
    if order < 1:
        raise ModelError("order must be >= 1")
    rhs = _vector_field(case, u0, params, linear_model)
    h = step * np.maximum(np.abs(x0), 1.0)
    # one complex-stepped copy of x0 per state direction
    X = np.repeat(x0[:, None], n, axis=1).astype(complex)
    X[np.arange(n), np.arange(n)] += 1j * h
    coeffs = flow_coefficients(rhs, X, order - 1)          # (order, n, n)
    Y = coeffs[:, list(case.output_index), :]               # (order, p, n)
    fact = np.array([math.factorial(j) for j in range(order)], dtype=float)
    grads = fact[:, None, None] * Y.imag / h[None, None, :]
    if not np.all(np.isfinite(grads)):
        raise NumericalFailure("non-finite Lie derivative gradient")
    return grads.reshape(order * case.n_outputs, n)


def lie_jacobians_fd(case: CaseId | str, x0, u0, params=None, order: int = 2,
                     linear_model: LinearModel | None = None, rel_step: float = 1e-6) -> np.ndarray:
    """Same as ``lie_jacobians`` but by nested central differences.

    Only meaningful for low orders (rounding error grows like eps / step**order).
    """
    case = CaseId.parse(case)
    params = params if params is not None else PlantParams()
    x0 = np.asarray(x0, dtype=float)
    rhs = _vector_field(case, u0, params, linear_model)
    scale = rel_step * np.maximum(np.abs(x0), 1.0)

    def f(x):
        return np.asarray(rhs([x[i] for i in range(len(x))]), dtype=float)

    def lie(j, x):
        if j == 0:
            return measurement(x, case)
        fx = f(x)
        eps = rel_step * max(np.linalg.norm(x), 1.0) / max(np.linalg.norm(fx), 1e-300)
        return (lie(j - 1, x + eps * fx) - lie(j - 1, x - eps * fx)) / (2 * eps)

    rows = []
    for j in range(order):
        G = np.empty((case.n_outputs, len(x0)))
        for i in range(len(x0)):
            e = np.zeros_like(x0)
            e[i] = scale[i]
            G[:, i] = (lie(j, x0 + e) - lie(j, x0 - e)) / (2 * scale[i])
        rows.append(G)
    out = np.vstack(rows)
    if not np.all(np.isfinite(out)):
        raise NumericalFailure("non-finite Lie derivative gradient")
    return out


def trajectory_points(case: CaseId, x0, u0, params, n_points: int = 5,
                      horizon: float = 40.0, dt: float = 0.01,
                      linear_model: LinearModel | None = None) -> list[np.ndarray]:
    """``n_points`` states spread evenly over the noiseless rollout (excluding t=0)."""
    n_steps = int(round(horizon / dt))
    marks = {int(round(n_steps * (i + 1) / n_points)) for i in range(n_points)}
    x = np.asarray(x0, dtype=float)
    pts = []
    for k in range(1, n_steps + 1):
        x = euler_step(x, u0, dt, params, case, linear_model=linear_model)
        if k in marks:
            pts.append(x.copy())
    return pts


def nonlinear_observability(case: CaseId | str, x0=None, u0=None, order: int | None = None,
                            tol: float = DEFAULT_TOL, params=None, n_points: int = 5,
                            linear_model: LinearModel | None = None) -> ObservabilityReport:
    """Rank of the Lie-derivative observability matrix, maximised over the
    initial state and ``n_points`` states along the noiseless trajectory."""
    case = CaseId.parse(case)
    params = params if params is not None else PlantParams()
    x0 = initial_state(case) if x0 is None else np.asarray(x0, dtype=float)
    if u0 is None:
        u0 = (params if isinstance(params, PlantParams) else params[0]).inputs(case)
    order = case.n_states if order is None else order
    points = [x0]
    if n_points:
        points += trajectory_points(case, x0, u0, params, n_points, linear_model=linear_model)
    best = None
    ranks = []
    for x in points:
        O = lie_jacobians(case, x, u0, params, order, linear_model=linear_model)
        rank, s = numerical_rank(O, tol)
        ranks.append(rank)
        if best is None or rank > best[0]:
            best = (rank, s)
    return ObservabilityReport(case=case, state_dim=case.n_states, rank=best[0],
                               singular_values=best[1], tol=tol, order=order,
                               point_ranks=ranks)
