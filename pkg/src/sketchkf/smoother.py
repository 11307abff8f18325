"""Fixed-interval RTS smoothing and its budgeted variant."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg as sla

from .errors import ConfigurationError, ContractError, NumericalError
from .statespace import GaussianBelief, LinearDynamicalSystem, symmetrize

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FilterArchive:
    """Forward-pass output: filtered and predicted beliefs for slots ``slots``."""

    filtered: Sequence[GaussianBelief]
    predicted: Sequence[GaussianBelief]
    system: LinearDynamicalSystem
    slots: Sequence[int] | None = None

    def __post_init__(self):
        N = len(self.filtered)
        if N < 1 or len(self.predicted) != N:
            raise ContractError("archive needs equal, nonzero numbers of filtered and predicted beliefs")
        p = self.system.state_dim
        if any(b.dim != p for b in self.filtered) or any(b.dim != p for b in self.predicted):
            raise ContractError("archive belief dimensions do not match the system")
        slots = tuple(range(1, N + 1)) if self.slots is None else tuple(int(s) for s in self.slots)
        if len(slots) != N:
            raise ContractError("one slot index per archived belief is required")
        object.__setattr__(self, "slots", slots)

    def __len__(self) -> int:
        return len(self.filtered)


@dataclass(frozen=True)
class SmoothedTrajectory:
    beliefs: tuple
    smoothed: np.ndarray
    tau_b: float
    q_factorizations: int = 0

    def __len__(self) -> int:
        return len(self.beliefs)

    @property
    def means(self) -> np.ndarray:
        return np.array([b.mean for b in self.beliefs])

    @property
    def smoothed_fraction(self) -> float:
        return float(np.mean(self.smoothed[:-1])) if len(self.smoothed) > 1 else 0.0


class _QWeights:
    """Cholesky factors of ``Q_n``, computed once when ``Q`` is time-invariant."""

    def __init__(self, system: LinearDynamicalSystem):
        self.system = system
        self.count = 0
        self._fixed = None
        self._warned = False

    def _factor(self, Q: np.ndarray, slot: int):
        self.count += 1
        try:
            return sla.cho_factor(Q, lower=True)
        except np.linalg.LinAlgError:
            raise ConfigurationError(f"process noise covariance is singular at slot {slot}") from None

    def norm2(self, r: np.ndarray, slot: int) -> float:
        if self.system.noise_time_invariant:
            if self._fixed is None:
                self._fixed = self._factor(self.system.Q(slot), slot)
            c = self._fixed
        else:
            if not self._warned:
                log.warning("time-varying process noise: one O(p^3) factorization per slot")
                self._warned = True
            c = self._factor(self.system.Q(slot), slot)
        return float(r @ sla.cho_solve(c, r))


def _backward(archive: FilterArchive, tau_b: float | None) -> SmoothedTrajectory:
    N = len(archive)
    system = archive.system
    out = [None] * N
    flags = np.zeros(N, dtype=bool)
    out[-1] = archive.filtered[-1]
    weights = _QWeights(system) if tau_b is not None else None
    for n in range(N - 2, -1, -1):
        filt = archive.filtered[n]
        pred = archive.predicted[n + 1]
        nxt = out[n + 1]
        slot = archive.slots[n + 1]
        F = system.F(slot)
        base = F @ filt.mean
        Gu = system.control_term(slot)
        if Gu is not None:
            base = base + Gu
        if weights is not None:
            resid = nxt.mean - base
            if weights.norm2(resid, slot) <= tau_b:
                out[n] = filt
                continue
        try:
            factor = sla.cho_factor(pred.cov, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            raise NumericalError("predicted covariance is singular", slot=archive.slots[n]) from None
        # B = P_f F^T P_pred^{-1}
        B = sla.cho_solve(factor, F @ filt.cov, check_finite=False).T
        mean = filt.mean + B @ (nxt.mean - base)
        cov = filt.cov + B @ (nxt.cov - pred.cov) @ B.T
        out[n] = GaussianBelief(mean, symmetrize(cov))
        flags[n] = True
    count = weights.count if weights is not None else 0
    return SmoothedTrajectory(tuple(out), flags, float(tau_b or 0.0), count)


def rts_smooth(archive: FilterArchive) -> SmoothedTrajectory:
    """Rauch-Tung-Striebel backward pass over every slot."""
    return _backward(archive, None)


def bud_ks(archive: FilterArchive, tau_b: float) -> SmoothedTrajectory:
    """Budgeted smoother: skip slots whose smoothed successor is model-consistent.

    Slot ``n`` keeps its filtered belief when
    ``||theta_{n+1|N} - F theta_{n|n}||^2_{Q^{-1}} <= tau_b``, comparing
    against the already smoothed successor; otherwise a full RTS step runs.
    """
    if not tau_b >= 0:
        raise ConfigurationError("tau_b must be nonnegative")
    return _backward(archive, float(tau_b))
