"""Run configuration and its JSON representation."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import CaseId, LinearModel, PlantParams, default_linear_model, initial_state

OBSERVER_ORDER = ("ELO", "EKF", "UKF", "QKF", "PF")

# Diagonal noise levels (variances) per case.
DEFAULT_NOISE = {
    CaseId.SPECIAL: (4.2e-8, 3.5e-8),
    CaseId.CASE1: (4.2e-8, 3.5e-8),
    CaseId.CASE2: (4.2e-6, 3.5e-6),
    CaseId.CASE3: (4.2e-6, 3.5e-6),
}


class ScenarioError(ValueError):
    """Invalid or unparsable scenario; ``problems`` lists every violation found."""

    def __init__(self, problems, path=None):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        self.path = path
        where = f"{path}: " if path else ""
        super().__init__(where + "; ".join(self.problems))


@dataclass(frozen=True)
class ObserverConfig:
    """Settings for one bank member.  ``Q``/``R`` of ``None`` inherit the scenario's."""

    kind: str
    Q: tuple[float, ...] | None = None
    R: tuple[float, ...] | None = None
    alpha: float = 1.0
    beta: float = 2.0
    kappa: float = 0.0
    points_per_axis: int = 3
    point_budget: int = 1_000_000
    particles: int = 500
    resampling: str = "systematic"
    resample_every: int = 1
    init_std: float = 0.01
    gain_mode: str = "kinf"

    def __post_init__(self):
        kind = self.kind.upper()
        if kind not in OBSERVER_ORDER:
            raise ScenarioError(f"observer kind must be one of {OBSERVER_ORDER}, got {self.kind!r}")
        object.__setattr__(self, "kind", kind)


def default_observers() -> tuple[ObserverConfig, ...]:
    return tuple(ObserverConfig(kind=k) for k in OBSERVER_ORDER)


@dataclass(frozen=True)
class Scenario:
    case: CaseId = CaseId.CASE1
    dt: float = 0.01
    horizon: float = 40.0
    params: PlantParams = field(default_factory=PlantParams)
    x0: tuple[float, ...] | None = None
    Q: tuple[float, ...] | None = None
    R: tuple[float, ...] | None = None
    observers: tuple[ObserverConfig, ...] = field(default_factory=default_observers)
    mode: str = "measurement"
    mask: tuple[str, ...] = ()
    seed: int = 42
    out_dir: str | None = None
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "case", CaseId.parse(self.case))
        problems = self.violations()
        if problems:
            raise ScenarioError(problems)

    def violations(self) -> list[str]:
        case = self.case
        problems = []
        if not (isinstance(self.dt, (int, float)) and np.isfinite(self.dt) and self.dt > 0):
            problems.append(f"dt must be > 0 (got {self.dt})")
        elif not (np.isfinite(self.horizon) and self.horizon >= self.dt):
            problems.append(f"horizon must be >= dt (got {self.horizon})")
        if self.seed is None or isinstance(self.seed, bool) or not isinstance(self.seed, (int, np.integer)):
            problems.append("seed must be an integer")
        elif self.seed < 0:
            problems.append("seed must be nonnegative")
        if self.x0 is not None and len(self.x0) != case.n_states:
            problems.append(f"x0 must have {case.n_states} entries")
        if self.Q is not None and (len(self.Q) != case.n_states or min(self.Q) < 0):
            problems.append(f"Q must be {case.n_states} nonnegative variances")
        if self.R is not None and (len(self.R) != case.n_outputs or min(self.R) < 0):
            problems.append(f"R must be {case.n_outputs} nonnegative variances")
        if self.mode not in ("measurement", "truestate"):
            problems.append(f"mode must be 'measurement' or 'truestate' (got {self.mode!r})")
        kinds = [o.kind for o in self.observers]
        if not kinds:
            problems.append("observer bank is empty")
        if len(set(kinds)) != len(kinds):
            problems.append("observer kinds must be unique")
        unknown = [m for m in self.mask if m.upper() not in OBSERVER_ORDER]
        if unknown:
            problems.append(f"unknown observers in mask: {unknown}")
        if kinds and set(kinds) <= {m.upper() for m in self.mask}:
            problems.append("mask leaves no observer available")
        for o in self.observers:
            if o.Q is not None and len(o.Q) != case.n_states:
                problems.append(f"{o.kind}.Q must have {case.n_states} entries")
            if o.R is not None and len(o.R) != case.n_outputs:
                problems.append(f"{o.kind}.R must have {case.n_outputs} entries")
            if o.particles < 2:
                problems.append(f"{o.kind}.particles must be >= 2")
            if o.init_std < 0:
                problems.append(f"{o.kind}.init_std must be >= 0")
        if not isinstance(self.workers, int) or self.workers < 1:
            problems.append("workers must be a positive integer")
        return problems

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))

    def inputs(self) -> np.ndarray:
        return self.params.inputs(self.case)

    def initial_state(self) -> np.ndarray:
        if self.x0 is not None:
            return np.array(self.x0, dtype=float)
        return initial_state(self.case)

    def process_noise(self) -> np.ndarray:
        q = self.Q if self.Q is not None else (DEFAULT_NOISE[self.case][0],) * self.case.n_states
        return np.diag(np.asarray(q, dtype=float))

    def measurement_noise(self) -> np.ndarray:
        r = self.R if self.R is not None else (DEFAULT_NOISE[self.case][1],) * self.case.n_outputs
        return np.diag(np.asarray(r, dtype=float))

    def linear_model(self) -> LinearModel:
        return default_linear_model(self.params)

    def observer(self, kind: str) -> ObserverConfig:
        for o in self.observers:
            if o.kind == kind.upper():
                return o
        raise KeyError(kind)

    def replace(self, **changes) -> "Scenario":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = {
            "case": self.case.value,
            "dt": self.dt,
            "horizon": self.horizon,
            "params": dataclasses.asdict(self.params),
            "x0": None if self.x0 is None else list(self.x0),
            "Q": None if self.Q is None else list(self.Q),
            "R": None if self.R is None else list(self.R),
            "observers": [_observer_to_dict(o) for o in self.observers],
            "mode": self.mode,
            "mask": list(self.mask),
            "seed": self.seed,
            "out_dir": self.out_dir,
            "workers": self.workers,
        }
        return d


def _observer_to_dict(o: ObserverConfig) -> dict:
    d = dataclasses.asdict(o)
    for key in ("Q", "R"):
        if d[key] is not None:
            d[key] = list(d[key])
    return d


_SCENARIO_KEYS = {f.name for f in dataclasses.fields(Scenario)}
_PARAM_KEYS = {f.name for f in dataclasses.fields(PlantParams)}
_OBSERVER_KEYS = {f.name for f in dataclasses.fields(ObserverConfig)}


def _tuple_or_none(value, name, problems):
    if value is None:
        return None
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return value  # scalar; expanded once the case is known
    if not isinstance(value, list) or not all(isinstance(v, (int, float)) for v in value):
        problems.append(f"{name} must be a list of numbers")
        return None
    return tuple(float(v) for v in value)


def scenario_from_dict(data: dict, path=None, **overrides) -> Scenario:
    """Build a validated ``Scenario`` from plain data; unknown keys are rejected."""
    if not isinstance(data, dict):
        raise ScenarioError("top level must be a JSON object", path)
    data = {**data, **{k: v for k, v in overrides.items() if v is not None}}
    problems = []
    unknown = sorted(set(data) - _SCENARIO_KEYS)
    if unknown:
        problems.append(f"unknown keys: {unknown}")

    kwargs = {}
    if "case" in data:
        try:
            kwargs["case"] = CaseId.parse(data["case"])
        except ValueError as exc:
            problems.append(f"case: {exc}")
    case = kwargs.get("case", CaseId.CASE1)

    params = data.get("params") or {}
    if not isinstance(params, dict):
        problems.append("params must be an object")
    else:
        bad = sorted(set(params) - _PARAM_KEYS)
        if bad:
            problems.append(f"unknown params keys: {bad}")
        else:
            try:
                kwargs["params"] = PlantParams(**{k: float(v) for k, v in params.items()})
            except (TypeError, ValueError) as exc:
                problems.append(f"params: {exc}")

    for key, size in (("x0", case.n_states), ("Q", case.n_states), ("R", case.n_outputs)):
        if key in data:
            value = _tuple_or_none(data[key], key, problems)
            if isinstance(value, (int, float)):
                value = (float(value),) * size
            kwargs[key] = value

    if "observers" in data:
        obs = []
        if not isinstance(data["observers"], list):
            problems.append("observers must be a list")
        else:
            for i, item in enumerate(data["observers"]):
                if isinstance(item, str):
                    item = {"kind": item}
                if not isinstance(item, dict) or "kind" not in item:
                    problems.append(f"observers[{i}] must be an object with a 'kind'")
                    continue
                bad = sorted(set(item) - _OBSERVER_KEYS)
                if bad:
                    problems.append(f"unknown observers[{i}] keys: {bad}")
                    continue
                item = dict(item)
                for key, size in (("Q", case.n_states), ("R", case.n_outputs)):
                    if key in item:
                        value = _tuple_or_none(item[key], f"observers[{i}].{key}", problems)
                        if isinstance(value, (int, float)):
                            value = (float(value),) * size
                        item[key] = value
                try:
                    obs.append(ObserverConfig(**item))
                except (TypeError, ValueError) as exc:
                    problems.append(f"observers[{i}]: {exc}")
        kwargs["observers"] = tuple(obs)

    for key in ("dt", "horizon"):
        if key in data:
            value = data[key]
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                problems.append(f"{key} must be a number")
            else:
                kwargs[key] = float(value)
    if "mask" in data:
        mask = data["mask"]
        if isinstance(mask, str):
            mask = [m for m in mask.split(",") if m]
        kwargs["mask"] = tuple(m.upper() for m in mask)
    for key in ("mode", "seed", "out_dir", "workers"):
        if key in data:
            kwargs[key] = data[key]

    if problems:
        raise ScenarioError(problems, path)
    try:
        return Scenario(**kwargs)
    except ScenarioError as exc:
        raise ScenarioError(exc.problems, path) from None
    except TypeError as exc:
        raise ScenarioError(str(exc), path) from None


def load_scenario(path, **overrides) -> Scenario:
    """Read a JSON scenario; absent fields take the built-in defaults.

    ``overrides`` (e.g. ``case=2``) win over the file.  An empty file is the
    empty object.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario: {exc}", path) from None
    if not text.strip():
        data = {}
    else:
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}", path) from None
    return scenario_from_dict(data, path=path, **overrides)


def save_scenario(scenario: Scenario, path) -> None:
    path = Path(path)
    os.makedirs(path.parent, exist_ok=True)
    path.write_text(json.dumps(scenario.to_dict(), indent=2) + "\n", encoding="utf-8")
