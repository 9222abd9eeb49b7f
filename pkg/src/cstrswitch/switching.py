"""Per-sample cost over the bank and argmin selection (the switched observer)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scenario import OBSERVER_ORDER

KL_EPS = 1e-12


class SwitchingError(ValueError):
    pass


class NoObserverError(SwitchingError):
    """Raised when every bank member is unavailable."""


def l1_error(e) -> float:
    return float(np.sum(np.abs(e)))


def kl_error(y, y_hat, eps: float = KL_EPS) -> float:
    """``sum |y| log(|y| / max(|y_hat|, eps))``; entries with ``|y| < eps`` contribute 0."""
    a = np.abs(np.asarray(y, dtype=float))
    b = np.maximum(np.abs(np.asarray(y_hat, dtype=float)), eps)
    if a.shape != b.shape:
        raise SwitchingError(f"shape mismatch {a.shape} vs {b.shape}")
    keep = a >= eps
    return float(np.sum(a[keep] * np.log(a[keep] / b[keep])))


def _normalize(values: np.ndarray) -> np.ndarray:
    top = values.max()
    if top <= 0:
        return np.zeros_like(values)
    return values / top


def switching_cost(l1, kl) -> np.ndarray:
    """``J_j = l1_j / max(l1) + kl_j / max(kl)``; an all-zero column contributes nothing."""
    l1 = np.asarray(l1, dtype=float)
    kl = np.asarray(kl, dtype=float)
    if l1.size == 0:
        raise SwitchingError("empty observer bank")
    if l1.shape != kl.shape:
        raise SwitchingError("l1 and kl lists differ in length")
    if not (np.all(np.isfinite(l1)) and np.all(np.isfinite(kl))):
        raise SwitchingError("costs must be finite")
    if np.any(l1 < 0) or np.any(kl < 0):
        raise SwitchingError("costs must be nonnegative")
    return _normalize(l1) + _normalize(kl)


def select(J, available=None) -> int:
    """Index of the smallest available cost; the earliest index wins ties."""
    J = np.asarray(J, dtype=float)
    mask = np.ones(J.shape, bool) if available is None else np.asarray(available, bool)
    if not mask.any():
        raise NoObserverError("no observer available for selection")
    return int(np.argmin(np.where(mask, J, np.inf)))


@dataclass
class SwitchDecision:
    step: int
    observers: tuple[str, ...]
    l1: np.ndarray
    kl: np.ndarray
    J: np.ndarray
    selected: str
    x_hat: np.ndarray
    y_hat: np.ndarray
    e: np.ndarray

    @property
    def selected_index(self) -> int:
        return self.observers.index(self.selected)


def swo_step(records, mode: str = "measurement", y=None, x_true=None, step: int = 0,
             available=None) -> SwitchDecision:
    """Score the current sample's records and copy the winner's estimate.

    ``mode="measurement"`` compares measured outputs with predicted outputs;
    ``mode="truestate"`` compares the true state (``x_true``) with each
    estimate for the KL term.  L1 always uses the output residual.  The KL
    sum can be negative, so its magnitude enters the cost.
    """
    records = sorted(records, key=lambda r: OBSERVER_ORDER.index(r.observer))
    if not records:
        raise NoObserverError("no observer records")
    names = tuple(r.observer for r in records)
    l1 = np.array([l1_error(r.e) for r in records])
    if mode == "measurement":
        refs = [r.y_hat + r.e if y is None else y for r in records]
        kl = np.array([abs(kl_error(ref, r.y_hat)) for ref, r in zip(refs, records)])
    elif mode == "truestate":
        if x_true is None:
            raise SwitchingError("truestate mode needs the true state")
        kl = np.array([abs(kl_error(x_true, r.x_hat)) for r in records])
    else:
        raise SwitchingError(f"unknown mode {mode!r}")
    if available is not None:
        available = np.array([available.get(n, True) if isinstance(available, dict) else n in available
                              for n in names])
        # unavailable members must not set the normalization scale
        l1 = np.where(available, l1, 0.0)
        kl = np.where(available, kl, 0.0)
    J = switching_cost(l1, kl)
    idx = select(J, available)
    win = records[idx]
    return SwitchDecision(step=step, observers=names, l1=l1, kl=kl, J=J, selected=names[idx],
                          x_hat=win.x_hat, y_hat=win.y_hat, e=win.e)
