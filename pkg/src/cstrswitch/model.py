"""Cascaded CSTR dynamics, measurement maps and noisy plant simulation.

States are laid out per reactor as ``[C_A, C_B, C_C, T, T_j]`` and stacked
reactor by reactor.  The linear special case keeps only the three
concentrations of reactor 1.  All array functions accept a trailing state
axis, so ``x`` may be a single state ``(n,)`` or a batch ``(..., n)``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np


class ModelError(ValueError):
    """Contract violation in the reactor model (bad dimensions, bad domain)."""


class DivergenceError(ArithmeticError):
    """Integration produced a non-finite state."""

    def __init__(self, message, component=None):
        super().__init__(message)
        self.component = component


class CaseId(enum.Enum):
    SPECIAL = "sc"
    CASE1 = "1"
    CASE2 = "2"
    CASE3 = "3"

    @classmethod
    def parse(cls, value) -> "CaseId":
        if isinstance(value, CaseId):
            return value
        key = str(value).strip().lower()
        aliases = {"sc": cls.SPECIAL, "special": cls.SPECIAL, "specialcase": cls.SPECIAL,
                   "0": cls.SPECIAL, "1": cls.CASE1, "case1": cls.CASE1,
                   "2": cls.CASE2, "case2": cls.CASE2, "3": cls.CASE3, "case3": cls.CASE3}
        try:
            return aliases[key]
        except KeyError:
            raise ModelError(f"unknown case {value!r}") from None

    @property
    def n_reactors(self) -> int:
        return {"sc": 1, "1": 1, "2": 2, "3": 3}[self.value]

    @property
    def is_linear(self) -> bool:
        return self is CaseId.SPECIAL

    @property
    def state_names(self) -> tuple[str, ...]:
        if self.is_linear:
            return ("CA1", "CB1", "CC1")
        names = []
        for i in range(1, self.n_reactors + 1):
            names += [f"CA{i}", f"CB{i}", f"CC{i}", f"T{i}", f"Tj{i}"]
        return tuple(names)

    @property
    def n_states(self) -> int:
        return len(self.state_names)

    @property
    def output_names(self) -> tuple[str, ...]:
        return tuple(self.state_names[i] for i in self.output_index)

    @property
    def output_index(self) -> tuple[int, ...]:
        return _OUTPUT_INDEX[self]

    @property
    def n_outputs(self) -> int:
        return len(self.output_index)

    @property
    def n_inputs(self) -> int:
        return 3 if self.is_linear else 5

    @property
    def measured_concentrations(self) -> tuple[str, ...]:
        """Concentration outputs scored by the L2 / L-infinity tables."""
        return tuple(n for n in self.output_names if n.startswith("C"))

    @property
    def estimated_concentrations(self) -> tuple[str, ...]:
        """Unmeasured concentrations, the variables of interest for MSE."""
        out = set(self.output_names)
        return tuple(n for n in self.state_names if n.startswith("C") and n not in out)


_OUTPUT_INDEX = {
    CaseId.SPECIAL: (2,),
    CaseId.CASE1: (2, 3, 4),
    CaseId.CASE2: (3, 4, 5, 6, 7, 8, 9),
    CaseId.CASE3: (3, 4, 8, 9, 10, 11, 12, 13, 14),
}


@dataclass(frozen=True)
class PlantParams:
    """Physical constants of one reactor plus the shared feed conditions.

    Units: flows L/min, volumes L, k0 L/(mol min), E and dH cal/mol,
    densities g/L, heat capacities cal/(g K), UA cal/(min K), temperatures K,
    concentrations mol/L.
    """

    F0: float = 6.0
    Fi: float = 12.0
    Fj: float = 30.0
    V: float = 100.0
    Vj: float = 50.0
    k0: float = 5.0e5
    E: float = 1.0e4
    Rg: float = 1.987
    dH: float = -4.0e4
    rho: float = 1.0e3
    rho_j: float = 1.0e3
    cp: float = 4.18
    cpj: float = 4.18
    UA: float = 1.0e5
    T_in: float = 300.0
    Tj_in: float = 370.0
    CA0: float = 1.0
    CB0: float = 0.9

    def __post_init__(self):
        problems = self.violations()
        if problems:
            raise ModelError("invalid PlantParams: " + "; ".join(problems))

    def violations(self) -> list[str]:
        problems = []
        for name in ("V", "Vj", "rho", "rho_j", "cp", "cpj", "Rg"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                problems.append(f"{name} must be > 0 (got {value})")
        for name in ("F0", "Fi", "Fj"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value >= 0):
                problems.append(f"{name} must be >= 0 (got {value})")
        return problems

    def inputs(self, case: CaseId | str = CaseId.CASE1) -> np.ndarray:
        """Constant input vector ``u`` for ``case``."""
        case = CaseId.parse(case)
        if case.is_linear:
            return np.array([self.F0, self.CA0, self.CB0])
        return np.array([self.F0, self.CA0, self.CB0, self.T_in, self.Tj_in])

    def with_(self, **changes) -> "PlantParams":
        return replace(self, **changes)


def initial_state(case: CaseId | str) -> np.ndarray:
    """Nominal initial state: reactor 1 charged with A and B, others empty."""
    case = CaseId.parse(case)
    if case.is_linear:
        return np.array([1.0, 1.0, 0.0])
    x0 = []
    reactor_temps = (300.0, 325.0, 350.0)
    for i in range(case.n_reactors):
        conc = [1.0, 1.0, 0.0] if i == 0 else [0.0, 0.0, 0.0]
        x0 += conc + [reactor_temps[i], 370.0]
    return np.array(x0)


def reactor_params(params, n_reactors: int) -> tuple[PlantParams, ...]:
    """Expand a single parameter set (or a per-reactor sequence) to ``n_reactors`` entries."""
    if isinstance(params, PlantParams):
        return (params,) * n_reactors
    params = tuple(params)
    if len(params) < n_reactors:
        raise ModelError(f"need parameters for {n_reactors} reactors, got {len(params)}")
    return params[:n_reactors]


def _is_series(value) -> bool:
    return hasattr(value, "coeffs")


def _exp(z):
    return z.exp() if _is_series(z) else np.exp(z)


def arrhenius_rate(T, params: PlantParams):
    """Rate constant ``k0 * exp(-E / (Rg T))`` in L/(mol min)."""
    if _is_series(T):
        return params.k0 * _exp((-params.E / params.Rg) * T.reciprocal())
    T_arr = np.asarray(T)
    if np.any(np.real(T_arr) <= 0):
        raise ModelError("arrhenius_rate requires T > 0")
    return params.k0 * np.exp(-params.E / (params.Rg * T))


def reactor_rhs(cols: Sequence, u: Sequence, params: Sequence[PlantParams]) -> list:
    """Right-hand side of the cascade balances, componentwise.

    ``cols`` holds the state components (arrays or Taylor series) in the
    stacked reactor layout; only elementary arithmetic and ``exp`` are used,
    which keeps the function usable with complex steps and series.
    """
    F0, CA0, CB0, T_in, Tj_in = u
    out = []
    for i, p in enumerate(params):
        CA, CB, CC, T, Tj = cols[5 * i: 5 * i + 5]
        k = arrhenius_rate(T, p)
        r = k * CA * CB
        flow = p.Fi / p.V
        if i == 0:
            dCA = (F0 * CA0 - p.Fi * CA) / p.V - r
            dCB = (F0 * CB0 - p.Fi * CB) / p.V - r
            dT = flow * (T_in - T)
        else:
            CA_up, CB_up, _, T_up, _ = cols[5 * (i - 1): 5 * i]
            # downstream reactors are fed at the inter-stage flow Fi
            dCA = flow * (CA_up - CA) - r
            dCB = flow * (CB_up - CB) - r
            dT = flow * (T_up - T)
        dCC = r - flow * CC
        dT = dT - (p.dH / (p.rho * p.cp)) * r + (p.UA / (p.rho * p.cp * p.V)) * (Tj - T)
        dTj = (p.Fj / p.Vj) * (Tj_in - Tj) - (p.UA / (p.rho_j * p.cpj * p.Vj)) * (Tj - T)
        out += [dCA, dCB, dCC, dT, dTj]
    return out


def _check_dims(x, u, case: CaseId):
    if x.shape[-1] != case.n_states:
        raise ModelError(f"state has {x.shape[-1]} components, {case.name} needs {case.n_states}")
    if np.shape(u)[-1] != case.n_inputs:
        raise ModelError(f"input has {np.shape(u)[-1]} components, {case.name} needs {case.n_inputs}")


def nonlinear_dynamics(x, u, params, case: CaseId | str) -> np.ndarray:
    """Time derivative of the nonlinear cascade (per minute)."""
    case = CaseId.parse(case)
    if case.is_linear:
        raise ModelError("the special case uses linear_dynamics")
    x = np.asarray(x)
    _check_dims(x, u, case)
    cols = [x[..., i] for i in range(case.n_states)]
    rhs = reactor_rhs(cols, u, reactor_params(params, case.n_reactors))
    return np.stack(np.broadcast_arrays(*rhs), axis=-1)


@dataclass(frozen=True)
class LinearModel:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    x_op: np.ndarray
    u_op: np.ndarray

    def discretize(self, dt: float) -> tuple[np.ndarray, np.ndarray]:
        """Forward-Euler matrices ``(I + dt A, dt B)``."""
        n = self.A.shape[0]
        return np.eye(n) + dt * self.A, dt * self.B


def linear_dynamics(x, u, model: LinearModel) -> np.ndarray:
    x = np.asarray(x)
    u = np.asarray(u)
    n, m = model.B.shape
    if x.shape[-1] != n or u.shape[-1] != m:
        raise ModelError(f"linear model expects x in R^{n}, u in R^{m}")
    return x @ model.A.T + u @ model.B.T


def linearize(x_op, u_op, params: PlantParams, T_op: float | None = None) -> LinearModel:
    """Closed-form Jacobians of the reactor-1 concentration balances.

    The reactor temperature is held at ``T_op`` (default: the reactor-1 initial
    temperature of 300 K), so ``k1`` is a constant of the linearization.
    """
    x_op = np.asarray(x_op, dtype=float)
    u_op = np.asarray(u_op, dtype=float)
    if x_op.shape != (3,) or u_op.shape != (3,):
        raise ModelError("linearize expects x_op = [CA1, CB1, CC1] and u_op = [F0, CA0, CB0]")
    T1 = 300.0 if T_op is None else T_op
    k1 = float(arrhenius_rate(T1, params))
    CA, CB, _ = x_op
    F0, CA0, CB0 = u_op
    a = params.Fi / params.V
    V = params.V
    A = np.array([
        [-(a + k1 * CB), -k1 * CA, 0.0],
        [-k1 * CB, -(a + k1 * CA), 0.0],
        [k1 * CB, k1 * CA, -a],
    ])
    B = np.array([
        [CA0 / V, F0 / V, 0.0],
        [CB0 / V, 0.0, F0 / V],
        [0.0, 0.0, 0.0],
    ])
    C = np.array([[0.0, 0.0, 1.0]])
    return LinearModel(A=A, B=B, C=C, x_op=x_op, u_op=u_op)


def default_linear_model(params: PlantParams | None = None) -> LinearModel:
    """Linearization at the initial state ``[1, 1, 0]`` with T1 = 300 K."""
    params = params or PlantParams()
    return linearize(initial_state(CaseId.SPECIAL), params.inputs(CaseId.SPECIAL), params)


def measurement(x, case: CaseId | str) -> np.ndarray:
    case = CaseId.parse(case)
    x = np.asarray(x)
    if x.shape[-1] != case.n_states:
        raise ModelError(f"state has {x.shape[-1]} components, {case.name} needs {case.n_states}")
    return x[..., list(case.output_index)]


def output_matrix(case: CaseId | str) -> np.ndarray:
    case = CaseId.parse(case)
    C = np.zeros((case.n_outputs, case.n_states))
    C[np.arange(case.n_outputs), list(case.output_index)] = 1.0
    return C


def euler_step(x, u, dt: float, params, case: CaseId | str,
               linear_model: LinearModel | None = None) -> np.ndarray:
    """One forward-Euler step; raises ``DivergenceError`` on a non-finite result."""
    case = CaseId.parse(case)
    if dt < 0:
        raise ModelError("dt must be nonnegative")
    x = np.asarray(x, dtype=float)
    if case.is_linear:
        lm = linear_model or default_linear_model(params if isinstance(params, PlantParams) else None)
        dx = linear_dynamics(x, u, lm)
    else:
        dx = nonlinear_dynamics(x, u, params, case)
    with np.errstate(over="ignore", invalid="ignore"):
        x_next = x + dt * dx
    if not np.all(np.isfinite(x_next)):
        bad = np.flatnonzero(~np.isfinite(np.atleast_2d(x_next)).all(axis=0))
        name = case.state_names[int(bad[0])] if bad.size else "?"
        raise DivergenceError(f"Euler step produced a non-finite value in {name}", component=name)
    return x_next


@dataclass
class PlantTrajectory:
    """Sampled plant rollout; row ``k`` is time ``t[k] = k * dt``."""

    case: CaseId
    t: np.ndarray
    x: np.ndarray
    y_clean: np.ndarray
    y: np.ndarray
    u: np.ndarray
    extra: dict = field(default_factory=dict)

    @property
    def n_steps(self) -> int:
        return len(self.t)


def _concentration_mask(case: CaseId) -> np.ndarray:
    return np.array([name.startswith("C") for name in case.state_names])


def simulate_plant(scenario, plant_params=None, rng: np.random.Generator | None = None,
                   truncate: bool = False) -> PlantTrajectory:
    """Noisy Euler rollout of the plant described by ``scenario``.

    ``plant_params`` replaces the scenario parameters for the plant only (a
    single set or one per reactor); observers are unaffected.  Process noise
    is added after each step, concentrations are then clamped at zero.

    With ``truncate`` a divergence ends the rollout at the last finite
    sample instead of raising; ``extra["diverged"]`` then names the state.
    """
    case = scenario.case
    params = plant_params if plant_params is not None else scenario.params
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence([scenario.seed, 0]))
    n_steps = scenario.n_steps
    u = scenario.inputs()
    Q = scenario.process_noise()
    R = scenario.measurement_noise()
    lm = scenario.linear_model() if case.is_linear else None
    step_params = params if not case.is_linear else None

    x = np.empty((n_steps + 1, case.n_states))
    x[0] = scenario.initial_state()
    conc = _concentration_mask(case)
    q_std = np.sqrt(np.diag(Q))
    r_std = np.sqrt(np.diag(R))
    extra = {}
    for k in range(n_steps):
        try:
            xn = euler_step(x[k], u, scenario.dt, step_params, case, linear_model=lm)
        except (DivergenceError, ModelError) as exc:
            if not truncate:
                raise
            extra["diverged"] = getattr(exc, "component", None) or str(exc)
            x = x[: k + 1]
            break
        if np.any(q_std):
            xn = xn + q_std * rng.standard_normal(case.n_states)
        xn[conc] = np.maximum(xn[conc], 0.0)
        x[k + 1] = xn
    y_clean = measurement(x, case)
    v = rng.standard_normal(y_clean.shape) * r_std
    y = y_clean + v
    t = scenario.dt * np.arange(len(x))
    return PlantTrajectory(case=case, t=t, x=x, y_clean=y_clean, y=y,
                           u=np.tile(u, (len(x), 1)), extra=extra)
