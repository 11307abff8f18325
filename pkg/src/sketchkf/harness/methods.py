"""Filter loop and per-method correction steps."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigurationError, NumericalError
from ..kalman import correct_batch
from ..sketch_ac import CensorConfig, ThresholdController, ac_lms_sketch, calibrate_threshold
from ..sketch_rp import rp_sketch
from ..smoother import FilterArchive, bud_ks
from ..statespace import GaussianBelief, LinearDynamicalSystem, MeasurementBatch, Trajectory, predict
from ..uskf import UsKfConfig, us_kf_correct
from .baselines import greedy_rows, random_rows

METHOD_KINDS = ("full", "random", "rp", "ac", "us", "greedy")
#: per-slot squared error above which a run is reported as diverged
DIVERGENCE_CAP = 1e12


@dataclass(frozen=True)
class MethodSpec:
    """One filter variant.  ``tau=None`` lets a threshold method tune itself to the budget."""

    kind: str
    label: str | None = None
    k: int = 0
    mu_mode: str = "optimal"
    decay: float = 1.0
    mu: float | None = None
    normalize_innovation: bool = False
    controller_gain: float = 0.5
    tau: float | None = None
    tau_b: float | None = None
    calibration_slots: int = 10
    gate: str = "innovation"
    full_noise_block: bool = False

    def __post_init__(self):
        if self.kind not in METHOD_KINDS:
            raise ConfigurationError(f"unknown method {self.kind!r}; expected one of {METHOD_KINDS}")
        if self.label is None:
            object.__setattr__(self, "label", self.kind)


@dataclass
class FilterRun:
    label: str
    means: np.ndarray
    mse: np.ndarray
    runtime_ns: np.ndarray
    updates: np.ndarray
    diverged: bool = False
    archive: FilterArchive | None = field(default=None, repr=False)

    @property
    def rmse(self) -> float:
        return float(np.sqrt(np.mean(self.mse)))


class _Thresholded:
    """Shared threshold handling for the censoring and update-selection steps."""

    def __init__(self, spec: MethodSpec, d: int, D: int):
        self.spec = spec
        self.d = d
        self.slots_seen = 0
        self.fixed = spec.tau is not None or d >= D
        tau0 = 0.0 if (spec.tau is None and d >= D) else spec.tau
        self.controller = None if tau0 is None else ThresholdController(tau0, d, spec.controller_gain)

    def threshold(self, count_fn) -> float:
        # the first few slots are calibrated directly, later ones follow the controller
        if not self.fixed and self.slots_seen < max(self.spec.calibration_slots, 1):
            tau = calibrate_threshold(count_fn, self.d)
            if self.controller is None:
                self.controller = ThresholdController(tau, self.d, self.spec.controller_gain)
            self.controller.tau = tau
        self.slots_seen += 1
        return self.controller.tau

    def record(self, count: int) -> None:
        if self.fixed:
            self.controller.history.append(int(count))
        else:
            self.controller.update(count)


class _AC(_Thresholded):
    def _cfg(self, tau):
        s = self.spec
        return CensorConfig(tau, mu=s.mu, normalize_innovation=s.normalize_innovation)

    def __call__(self, prior, batch):
        tau = self.threshold(lambda t: ac_lms_sketch(prior, batch, self._cfg(t)).selected.size)
        report = ac_lms_sketch(prior, batch, self._cfg(tau))
        count = report.selected.size
        self.record(count)
        if count == 0:
            return prior, count
        # censoring works on diag(R); the correction follows suit unless asked otherwise
        sub = report.sketched if self.spec.full_noise_block else report.sketched.diagonal()
        return correct_batch(prior, sub), count


class _US(_Thresholded):
    def _cfg(self, tau):
        s = self.spec
        return UsKfConfig(tau=tau, k=s.k, mu_mode=s.mu_mode, decay=s.decay, gate=s.gate)

    def __call__(self, prior, batch):
        tau = self.threshold(lambda t: us_kf_correct(prior, batch, self._cfg(t))[1].second_order_updates)
        post, trace = us_kf_correct(prior, batch, self._cfg(tau))
        count = trace.second_order_updates
        self.record(count)
        return post, count


def make_corrector(spec: MethodSpec, d: int, D: int, seed: int):
    """Return ``step(prior, batch) -> (posterior, rows_used)`` holding any per-run state."""
    d = int(min(max(d, 0), D))
    if spec.kind == "full":
        return lambda prior, batch: (correct_batch(prior, batch), batch.size)
    if spec.kind == "random":
        def step(prior, batch):
            if d == 0:
                return prior, 0
            sub = batch if d == batch.size else batch.rows(random_rows(batch, d, seed))
            return correct_batch(prior, sub), d
        return step
    if spec.kind == "greedy":
        def step(prior, batch):
            if d == 0:
                return prior, 0
            sub = batch if d == batch.size else batch.rows(greedy_rows(prior, batch, d))
            return correct_batch(prior, sub), d
        return step
    if spec.kind == "rp":
        if d < 1:
            raise ConfigurationError("random projections need d >= 1")
        return lambda prior, batch: (correct_batch(prior, rp_sketch(batch, d, seed)), d)
    if spec.kind == "ac":
        return _AC(spec, d, D)
    return _US(spec, d, D)


def run_filter(
    system: LinearDynamicalSystem,
    trajectory: Trajectory,
    spec: MethodSpec,
    d: int,
    seed: int,
    *,
    timing: bool = False,
    keep_archive: bool = False,
) -> FilterRun:
    """Predict/correct over every slot of ``trajectory`` with the method ``spec``.

    Runtime is measured around the correction step only and is left at zero
    unless ``timing`` is set, so outputs stay reproducible.
    """
    N = len(trajectory)
    D = trajectory.batches[0].size
    step = make_corrector(spec, d, D, seed)
    p = system.state_dim
    means = np.zeros((N, p))
    mse = np.full(N, DIVERGENCE_CAP)
    runtime = np.zeros(N, dtype=np.int64)
    updates = np.zeros(N, dtype=np.int64)
    filtered, predicted = [], []
    keep_archive = keep_archive or spec.tau_b is not None
    belief = system.initial_belief()
    diverged = False
    for n, batch in enumerate(trajectory.batches):
        try:
            prior = predict(belief, system, batch.slot)
            t0 = time.perf_counter_ns() if timing else 0
            belief, used = step(prior, batch)
            if timing:
                runtime[n] = time.perf_counter_ns() - t0
        except NumericalError as exc:
            raise NumericalError(exc.detail, slot=batch.slot, method=spec.label) from exc
        err = belief.mean - trajectory.states[n]
        e2 = float(err @ err)
        updates[n] = used
        if not np.isfinite(e2) or e2 > DIVERGENCE_CAP:
            diverged = True
            means[n:] = np.nan_to_num(belief.mean, nan=0.0, posinf=DIVERGENCE_CAP, neginf=-DIVERGENCE_CAP)
            break
        means[n] = belief.mean
        mse[n] = e2
        if keep_archive:
            filtered.append(belief)
            predicted.append(prior)
    archive = None
    if keep_archive and not diverged:
        archive = FilterArchive(filtered, predicted, system, [b.slot for b in trajectory.batches])
    return FilterRun(spec.label, means, mse, runtime, updates, diverged, archive)


def smoothed_run(run: FilterRun, trajectory: Trajectory, tau_b: float, label: str | None = None) -> FilterRun:
    """Bud-KS pass over a filter run's archive, scored against the truth."""
    label = label or f"{run.label}_smoothed"
    if run.archive is None:
        return FilterRun(label, run.means, run.mse.copy(), run.runtime_ns.copy(), run.updates.copy(), True)
    sm = bud_ks(run.archive, tau_b)
    means = sm.means
    err = means - np.asarray(trajectory.states)
    mse = np.minimum(np.einsum("ij,ij->i", err, err), DIVERGENCE_CAP)
    return FilterRun(label, means, mse, run.runtime_ns.copy(), sm.smoothed.astype(np.int64), False)
