"""Orchestration: plant rollout, bank stepping, switching, Monte Carlo studies."""

from __future__ import annotations

import dataclasses
import time
import warnings
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._alloc import tune_allocator
from .metrics import MetricTable, time_observers
from .model import ModelError, PlantParams, PlantTrajectory, reactor_params, simulate_plant
from .observers import EstimatorError, Observer, build_bank
from .scenario import OBSERVER_ORDER, Scenario
from .switching import swo_step

# Failures that take a single observer out of the bank for the rest of a run.
OBSERVER_FAILURES = (EstimatorError, ArithmeticError, ModelError, np.linalg.LinAlgError)


@dataclass
class RunResult:
    """Everything produced by one run; estimator arrays hold NaN where a member was unavailable."""

    scenario: Scenario
    plant: PlantTrajectory
    observers: tuple[str, ...]
    x_hat: dict
    y_hat: dict
    e: dict
    J: np.ndarray
    selected: list
    unavailable: dict
    failures: dict
    times: dict
    metrics: MetricTable
    diagnostics: dict = field(default_factory=dict)
    partial: bool = False

    @property
    def n_steps(self) -> int:
        return self.plant.n_steps

    def selection_counts(self) -> dict:
        names, counts = np.unique(np.array(self.selected, dtype=object), return_counts=True)
        return {str(n): int(c) for n, c in zip(names, counts)}


def _step_all(bank: list[Observer], u, y, pool):
    """Step every live member; returns ``{kind: record or exception}`` in bank order."""
    def one(obs):
        try:
            return obs.step(u, y)
        except OBSERVER_FAILURES as exc:
            return exc
    results = pool.map(one, bank) if pool is not None else map(one, bank)
    return {obs.kind: res for obs, res in zip(bank, results)}


def run_case(scenario: Scenario, plant_params=None, workers: int | None = None) -> RunResult:
    """Simulate the plant and run the whole bank plus the switched observer.

    ``plant_params`` perturbs the plant only.  Members that cannot be built
    (e.g. the quadrature filter over its point budget) or fail mid-run are
    masked; a plant divergence truncates the run and sets ``partial``.
    """
    tune_allocator()
    case = scenario.case
    workers = scenario.workers if workers is None else workers
    plant = simulate_plant(scenario, plant_params, truncate=True)
    bank, unavailable = build_bank(scenario)
    kinds = tuple(o.kind for o in bank)
    M, n, p = plant.n_steps, case.n_states, case.n_outputs
    x_hat = {k: np.full((M, n), np.nan) for k in kinds + ("SWO",)}
    y_hat = {k: np.full((M, p), np.nan) for k in kinds + ("SWO",)}
    e = {k: np.full((M, p), np.nan) for k in kinds + ("SWO",)}
    J = np.full((M, len(kinds)), np.nan)
    selected: list = []
    failures: dict = {}
    collapses = {k: 0 for k in kinds}
    switch_time = 0.0
    partial = "diverged" in plant.extra
    live = list(bank)
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for k in range(M):
            out = _step_all(live, plant.u[k], plant.y[k], pool)
            records = []
            for kind, res in out.items():
                if isinstance(res, Exception):
                    failures[kind] = {"step": k, "error": f"{type(res).__name__}: {res}"}
                    continue
                records.append(res)
                x_hat[kind][k], y_hat[kind][k], e[kind][k] = res.x_hat, res.y_hat, res.e
                if res.diagnostics.get("weight_collapse"):
                    collapses[kind] += 1
            live = [o for o in live if o.kind not in failures]
            if not records:
                partial = True
                failures.setdefault("SWO", {"step": k, "error": "no observer available"})
                break
            start = time.perf_counter()
            d = swo_step(records, scenario.mode, y=plant.y[k], x_true=plant.x[k], step=k)
            switch_time += time.perf_counter() - start
            for name, j in zip(d.observers, d.J):
                J[k, kinds.index(name)] = j
            selected.append(d.selected)
            x_hat["SWO"][k], y_hat["SWO"][k], e["SWO"][k] = d.x_hat, d.y_hat, d.e
    finally:
        if pool is not None:
            pool.shutdown()
    for kind, info in failures.items():
        if kind in unavailable or kind == "SWO":
            continue
        unavailable[kind] = f"failed at step {info['step']}: {info['error']}"

    times = time_observers({o.kind: o.wall_time for o in bank}, switch_time)
    meta = {"seed": scenario.seed, "dt": scenario.dt, "horizon": scenario.horizon,
            "steps": M, "mode": scenario.mode, "unavailable": dict(unavailable),
            "partial": partial}
    if "diverged" in plant.extra:
        meta["plant_diverged"] = plant.extra["diverged"]
    rows = len(selected)
    metrics = MetricTable.from_series(
        case.value, case.state_names, case.output_names, plant.x[:rows],
        {k: v[:rows] for k, v in x_hat.items()}, {k: v[:rows] for k, v in e.items()},
        times, meta) if rows else MetricTable(case=case.value, time=times, metadata=meta)
    diagnostics = {"weight_collapse": {k: v for k, v in collapses.items() if v}}
    return RunResult(scenario=scenario, plant=plant, observers=kinds, x_hat=x_hat, y_hat=y_hat,
                     e=e, J=J, selected=selected, unavailable=unavailable, failures=failures,
                     times=times, metrics=metrics, diagnostics=diagnostics, partial=partial)


# --- Monte Carlo -------------------------------------------------------------

PERCENTILES = (5.0, 50.0, 95.0)


@dataclass(frozen=True)
class PerturbationSpec:
    """Additive uniform perturbation of plant parameters.

    Each listed reactor gets its own draw unless ``shared`` is set.  Draws
    that would make ``k0`` or ``E`` nonpositive are redrawn.
    """

    targets: tuple[str, ...] = ("k0", "E", "UA", "dH")
    low: float = -1000.0
    high: float = 1000.0
    trials: int = 100
    reactors: tuple[int, ...] = (0, 1)
    shared: bool = False
    scale: float = 1.0

    def __post_init__(self):
        names = {f.name for f in dataclasses.fields(PlantParams)}
        bad = [t for t in self.targets if t not in names]
        if bad:
            raise ValueError(f"unknown perturbation targets {bad}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.high < self.low:
            raise ValueError("high must be >= low")

    def draw(self, params: PlantParams, n_reactors: int, rng: np.random.Generator):
        """Per-reactor parameter sets and the deltas applied (``{reactor: {target: delta}}``)."""
        base = reactor_params(params, n_reactors)
        out, deltas, shared = list(base), {}, None
        for r in self.reactors:
            if r >= n_reactors:
                continue
            if shared is None or not self.shared:
                shared = self._draw_one(base[r], rng)
            delta = shared
            out[r] = base[r].with_(**{t: getattr(base[r], t) + d for t, d in delta.items()})
            deltas[r] = delta
        return tuple(out), deltas

    def _draw_one(self, p: PlantParams, rng) -> dict:
        delta = {}
        for t in self.targets:
            while True:
                d = self.scale * rng.uniform(self.low, self.high)
                if t not in ("k0", "E") or getattr(p, t) + d > 0:
                    break
            delta[t] = float(d)
        return delta


def trial_seed(master: int, trial: int) -> int:
    """Run seed of one trial; depends only on the master seed and the trial index."""
    return int(np.random.SeedSequence([master, trial]).generate_state(1)[0])


@dataclass
class TrialOutcome:
    trial: int
    seed: int
    deltas: dict
    ok: bool
    error: str | None = None
    x_hat: dict | None = None
    metrics: MetricTable | None = None
    selection: dict | None = None


def run_trial(scenario: Scenario, spec: PerturbationSpec, trial: int) -> TrialOutcome:
    seed = trial_seed(scenario.seed, trial)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    case = scenario.case
    plant_params, deltas = spec.draw(scenario.params, case.n_reactors, rng)
    sc = scenario.replace(seed=seed, workers=1)
    try:
        res = run_case(sc, plant_params=plant_params)
    except Exception as exc:  # a failed trial is recorded, never fatal
        return TrialOutcome(trial, seed, deltas, False, f"{type(exc).__name__}: {exc}")
    if res.partial:
        why = res.metrics.metadata.get("plant_diverged") or res.failures.get("SWO", {}).get("error")
        return TrialOutcome(trial, seed, deltas, False, f"partial run: {why}", metrics=res.metrics)
    return TrialOutcome(trial, seed, deltas, True, x_hat=res.x_hat, metrics=res.metrics,
                        selection=res.selection_counts())


@dataclass
class MonteCarloResult:
    scenario: Scenario
    spec: PerturbationSpec
    t: np.ndarray
    bands: dict
    trials: list

    @property
    def n_success(self) -> int:
        return sum(o.ok for o in self.trials)

    @property
    def failures(self) -> list:
        return [(o.trial, o.error) for o in self.trials if not o.ok]

    def band_width(self, estimator: str, state: str) -> np.ndarray:
        i = self.scenario.case.state_names.index(state)
        b = self.bands[estimator]
        return b[2, :, i] - b[0, :, i]


def monte_carlo(scenario: Scenario, spec: PerturbationSpec | None = None, workers: int | None = None,
                mask_default: tuple[str, ...] = ("QKF",), keep_trajectories: bool = False,
                progress=None) -> MonteCarloResult:
    """Repeat ``run_case`` under independent plant perturbations.

    Bands are the 5/50/95 percentiles across successful trials, per step and
    state, for every estimator.  ``mask_default`` is added to the scenario mask
    (the quadrature filter alone would dominate the study's runtime).
    """
    spec = spec or PerturbationSpec()
    scenario = scenario.replace(mask=tuple(sorted(set(scenario.mask) | set(mask_default))))
    workers = scenario.workers if workers is None else workers
    trials = range(spec.trials)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            outcomes = list(ex.map(run_trial, [scenario] * spec.trials, [spec] * spec.trials, trials))
    else:
        outcomes = []
        for i in trials:
            outcomes.append(run_trial(scenario, spec, i))
            if progress:
                progress(outcomes[-1])
    M = scenario.n_steps + 1
    ok = [o for o in outcomes if o.ok]
    names = [k for k in OBSERVER_ORDER + ("SWO",) if ok and k in ok[0].x_hat]
    bands = {}
    for name in names:
        stack = np.stack([o.x_hat[name] for o in ok])
        if np.all(np.isnan(stack)):
            continue
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)  # all-NaN steps stay NaN
            bands[name] = np.nanpercentile(stack, PERCENTILES, axis=0)
    if not keep_trajectories:
        for o in outcomes:
            o.x_hat = None
    return MonteCarloResult(scenario=scenario, spec=spec, t=scenario.dt * np.arange(M),
                            bands=bands, trials=outcomes)
