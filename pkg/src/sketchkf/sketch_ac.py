"""Innovation-based censoring: block, per-entry and adaptive (AC-LMS)."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla

from . import _kernels
from .errors import ConfigurationError, ContractError, NumericalError
from .kalman import correct_batch
from .sketch_rp import SketchedBatch
from .statespace import GaussianBelief, MeasurementBatch

TAU_FLOOR = 1e-8
#: largest factor by which the controller moves the threshold in one slot
MAX_STEP = 2.0


class BlockDecision(enum.Enum):
    ALL = "all"
    NONE = "none"


@dataclass(frozen=True)
class CensorConfig:
    """Knobs for the AC-LMS pass.

    ``mu=None`` picks ``0.5 / max_i ||x_i||^2`` per slot.  With
    ``normalize_innovation`` the rule keeps rows with ``|e_i / sigma_i| > tau``
    instead of the literal ``|e_i| > tau / sigma_i``.
    """

    tau: float
    mu: float | None = None
    target_d: int | None = None
    controller_gain: float = 0.5
    normalize_innovation: bool = False

    def __post_init__(self):
        if not self.tau >= 0:
            raise ConfigurationError("tau must be nonnegative")
        if self.mu is not None and not self.mu >= 0:
            raise ConfigurationError("mu must be nonnegative")


@dataclass(frozen=True)
class CensorReport:
    selected: np.ndarray
    sketched: SketchedBatch
    final_inner_estimate: np.ndarray


def _sigmas(batch: MeasurementBatch) -> np.ndarray:
    var = batch.variances
    if np.any(var <= 0):
        raise ContractError("censoring needs strictly positive noise variances")
    return np.sqrt(var)


def block_censor(prior: GaussianBelief, batch: MeasurementBatch, tau: float) -> BlockDecision:
    """Keep the whole batch iff the prewhitened innovation norm exceeds ``tau``."""
    S = batch.X @ prior.cov @ batch.X.T + batch.covariance()
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        raise NumericalError("innovation covariance is not positive definite", slot=batch.slot) from None
    white = sla.solve_triangular(L, batch.y - batch.X @ prior.mean, lower=True)
    return BlockDecision.ALL if np.linalg.norm(white) > tau else BlockDecision.NONE


def entry_censor(mean: np.ndarray, batch: MeasurementBatch, tau: float) -> np.ndarray:
    """Indices (0-based, increasing) with ``|(y_i - x_i^T mean) / sigma_i| > tau``."""
    innov = batch.y - batch.X @ np.asarray(mean, dtype=float)
    return np.flatnonzero(np.abs(innov / _sigmas(batch)) > tau)


def default_mu(X: np.ndarray) -> float:
    peak = float(np.max(np.einsum("ij,ij->i", X, X), initial=0.0))
    return 0.5 / peak if peak > 0 else 0.0


def ac_lms_sketch(prior: GaussianBelief, batch: MeasurementBatch, config: CensorConfig) -> CensorReport:
    """One adaptive-censoring pass over the rows of ``batch``.

    A row is retained when its innovation against the running inner
    estimate clears the threshold; each retained row nudges the inner
    estimate by an LMS step of size ``mu``.  Rows are never reordered.
    Censoring uses the diagonal of R; the returned triple keeps the
    corresponding block of the full covariance.
    """
    sig = _sigmas(batch)
    thresh = config.tau * sig if config.normalize_innovation else config.tau / sig
    mu = default_mu(batch.X) if config.mu is None else float(config.mu)
    theta = np.array(prior.mean, dtype=float)
    keep, theta = _kernels.ac_lms_pass(theta, np.ascontiguousarray(batch.X), batch.y, thresh, mu)
    selected = np.flatnonzero(keep)
    sub = batch.rows(selected)
    sketched = SketchedBatch(sub.slot, sub.y, sub.X, R=sub.R, noise_var=sub.noise_var, selection=selected)
    return CensorReport(selected, sketched, theta)


def ac_kf_step(prior: GaussianBelief, batch: MeasurementBatch, config: CensorConfig) -> GaussianBelief:
    """Correction on the AC-LMS selection; an empty selection skips the update."""
    report = ac_lms_sketch(prior, batch, config)
    if report.selected.size == 0:
        return prior
    return correct_batch(prior, report.sketched)


def tune_threshold(
    tau: float,
    count: int,
    target_d: float,
    gain: float = 0.5,
    floor: float = TAU_FLOOR,
    max_step: float = MAX_STEP,
) -> float:
    """Multiplicative controller ``tau * (count / target_d) ** gain``.

    The factor is clipped to ``[1 / max_step, max_step]`` so one empty or
    saturated slot cannot collapse the threshold; the result is floored.
    """
    if target_d < 0:
        raise ConfigurationError("target_d must be nonnegative")
    if target_d == 0:
        return max(max_step * tau, floor) if count > 0 else tau
    factor = min(max((count / target_d) ** gain, 1.0 / max_step), max_step)
    return max(tau * factor, floor)


@dataclass
class ThresholdController:
    """Holds the per-slot threshold and adapts it towards a target count."""

    tau: float
    target_d: float
    gain: float = 0.5
    floor: float = TAU_FLOOR
    max_step: float = MAX_STEP
    history: list = field(default_factory=list)

    def update(self, count: int) -> float:
        self.history.append(int(count))
        self.tau = tune_threshold(self.tau, count, self.target_d, self.gain, self.floor, self.max_step)
        return self.tau


def calibrate_threshold(
    count_fn: Callable[[float], int],
    target_d: float,
    lo: float = 1e-6,
    hi: float = 1e6,
    iters: int = 50,
) -> float:
    """Log-space bisection for a threshold whose count is closest to ``target_d``.

    ``count_fn`` is assumed non-increasing in the threshold.
    """
    best_tau, best_gap = hi, math.inf
    a, b = math.log(lo), math.log(hi)
    for _ in range(iters):
        mid = 0.5 * (a + b)
        tau = math.exp(mid)
        count = count_fn(tau)
        gap = abs(count - target_d)
        if gap < best_gap:
            best_tau, best_gap = tau, gap
        if count == target_d:
            break
        if count > target_d:
            a = mid
        else:
            b = mid
    return best_tau
