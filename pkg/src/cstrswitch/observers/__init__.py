"""Observer bank: five estimators behind one ``step(u, y)`` interface."""

from __future__ import annotations

import time

import numpy as np

from ..scenario import OBSERVER_ORDER, ObserverConfig
from .common import (CapacityError, CovarianceDegeneracyError, DiscreteModel, EstimateDivergenceError,
                     EstimatorError, EstimatorRecord, EstimatorState, GainSynthesisError,
                     ObserverConfigError, SingularUpdateError, init_estimator)
from .kalman import (ekf_step, gh_point_count, gh_points, qkf_step, ukf_sigma_points, ukf_step,
                     ukf_weights)
from .luenberger import elo_gain, elo_step, steady_state_gain
from .particle import pf_step, systematic_resample

__all__ = [
    "CapacityError", "CovarianceDegeneracyError", "DiscreteModel", "EstimateDivergenceError",
    "EstimatorError", "EstimatorRecord", "EstimatorState", "GainSynthesisError", "Observer",
    "ObserverConfigError",
    "SingularUpdateError", "build_bank", "ekf_step", "elo_gain", "elo_step", "gh_point_count",
    "gh_points", "init_estimator", "observer_seed", "pf_step", "qkf_step", "steady_state_gain",
    "systematic_resample", "ukf_sigma_points", "ukf_step", "ukf_weights",
]


def observer_seed(seed: int, kind: str) -> np.random.SeedSequence:
    """Independent stream per bank member, fixed by its position in the canonical order."""
    return np.random.SeedSequence([seed, 1, OBSERVER_ORDER.index(kind)])


class Observer:
    """One bank member with its own state, RNG and cumulative step time."""

    def __init__(self, config: ObserverConfig, model: DiscreteModel, Q, R, x0_nominal,
                 u_nominal, seed: int):
        self.config = config
        self.kind = config.kind
        self.model = model
        self.Q = np.diag(config.Q) if config.Q is not None else np.asarray(Q, dtype=float)
        self.R = np.diag(config.R) if config.R is not None else np.asarray(R, dtype=float)
        if not np.all(np.linalg.eigvalsh(self.R) > 0):
            raise ObserverConfigError(f"{self.kind} needs a positive definite measurement covariance")
        if np.any(np.diag(self.Q) < 0):
            raise ObserverConfigError(f"{self.kind} needs a nonnegative process covariance")
        self.wall_time = 0.0
        self.failure: str | None = None
        self.gain = None
        if self.kind == "QKF":
            # refuse up front instead of on the first step
            gh_points(model.n, config.points_per_axis, config.point_budget)
        if self.kind == "ELO":
            start = time.perf_counter()
            self.gain = elo_gain(model, np.asarray(x0_nominal, dtype=float), u_nominal, self.Q, self.R)
            self.wall_time += time.perf_counter() - start
        rng = np.random.default_rng(observer_seed(seed, self.kind))
        self.state = init_estimator(config, x0_nominal, rng=rng)

    def step(self, u, y) -> EstimatorRecord:
        start = time.perf_counter()
        self.state, record = self._advance(u, y)
        elapsed = time.perf_counter() - start
        self.wall_time += elapsed
        record.wall_time = elapsed
        return record

    def _advance(self, u, y):
        cfg, st, m = self.config, self.state, self.model
        if self.kind == "ELO":
            return elo_step(st, u, y, m, self.gain)
        if self.kind == "EKF":
            return ekf_step(st, u, y, m, self.Q, self.R)
        if self.kind == "UKF":
            return ukf_step(st, u, y, m, self.Q, self.R, cfg.alpha, cfg.beta, cfg.kappa)
        if self.kind == "QKF":
            return qkf_step(st, u, y, m, self.Q, self.R, cfg.points_per_axis, cfg.point_budget)
        resample = cfg.resample_every > 0 and (st.step + 1) % cfg.resample_every == 0
        return pf_step(st, u, y, m, self.Q, self.R, resample=resample)


def build_bank(scenario, model: DiscreteModel | None = None):
    """Instantiate every configured observer.

    Returns ``(observers, unavailable)`` where ``unavailable`` maps the kind
    of each member that could not be built (point budget, gain synthesis) or
    was masked to the reason.
    """
    if model is None:
        lm = scenario.linear_model() if scenario.case.is_linear else None
        model = DiscreteModel(scenario.case, scenario.params, scenario.dt, lm)
    Q, R = scenario.process_noise(), scenario.measurement_noise()
    x0, u = scenario.initial_state(), scenario.inputs()
    masked = {m.upper() for m in scenario.mask}
    configs = sorted(scenario.observers, key=lambda c: OBSERVER_ORDER.index(c.kind))
    bank, unavailable = [], {}
    for cfg in configs:
        if cfg.kind in masked:
            unavailable[cfg.kind] = "masked"
            continue
        try:
            bank.append(Observer(cfg, model, Q, R, x0, u, scenario.seed))
        except EstimatorError as exc:
            unavailable[cfg.kind] = f"{type(exc).__name__}: {exc}"
    return bank, unavailable
