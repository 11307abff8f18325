"""Random-projection sketching: sign flips, Walsh-Hadamard mixing, row sampling."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .kalman import correct_batch
from .rng import RP_SKETCH, stream
from .statespace import GaussianBelief, MeasurementBatch, symmetrize

log = logging.getLogger(__name__)

#: noise variance given to zero-padding rows so the sketched covariance stays invertible
PAD_VARIANCE = 1e-12


@dataclass(frozen=True)
class RPSelection:
    rows: np.ndarray
    signs: np.ndarray
    padding: int


@dataclass(frozen=True)
class SketchedBatch(MeasurementBatch):
    """A reduced triple together with a description of how it was obtained."""

    selection: object = None

    @property
    def source_slot(self) -> int:
        return self.slot


def next_power_of_two(n: int) -> int:
    return 1 if n <= 1 else 1 << (n - 1).bit_length()


def fwht(v) -> np.ndarray:
    """Unnormalized fast Walsh-Hadamard transform along axis 0.

    Returns ``H @ v`` for the Sylvester-ordered Hadamard matrix ``H`` of
    size ``len(v)``, which must be a power of two.  Works on a copy; the
    butterflies run in place on that buffer.
    """
    a = np.array(v, dtype=float)
    n = a.shape[0] if a.ndim else 0
    if n == 0 or n & (n - 1):
        raise ContractError(f"fwht length must be a power of two, got {n}")
    tail = a.shape[1:]
    h = 1
    while h < n:
        b = a.reshape((n // (2 * h), 2, h) + tail)
        top = b[:, 0].copy()
        b[:, 0] += b[:, 1]
        np.subtract(top, b[:, 1], out=b[:, 1])
        h *= 2
    return a


def hadamard_rows(rows, n: int) -> np.ndarray:
    """Rows ``rows`` of the ``n x n`` Sylvester Hadamard matrix, entries +-1."""
    rows = np.asarray(rows, dtype=np.int64)
    parity = np.bitwise_count(rows[:, None] & np.arange(n, dtype=np.int64)[None, :]) & 1
    return 1.0 - 2.0 * parity


def rp_sketch(
    batch: MeasurementBatch,
    d: int,
    seed: int,
    *,
    full_selection: bool = False,
    identity_transform: bool = False,
) -> SketchedBatch:
    """Sketch ``batch`` down to ``d`` rows of ``S H Gamma {y, X}``.

    Rows are zero-padded to the next power of two ``D'``; ``Gamma`` is a
    random diagonal of ``+-1/sqrt(D')`` and ``S`` picks ``d`` rows uniformly
    without replacement.  Draws depend only on ``(seed, batch.slot)``.

    ``full_selection`` and ``identity_transform`` are test hooks forcing
    ``S`` to the first ``d`` rows and ``H Gamma`` to the identity.
    """
    D = batch.size
    d = int(d)
    if d < 1 or d > D:
        raise ContractError(f"sketch size d={d} must lie in [1, D={D}]")
    if d > 0.9 * D:
        log.warning("sketch size d=%d is close to D=%d; little reduction", d, D)
    Dp = next_power_of_two(D)
    pad = Dp - D
    rng = stream(seed, RP_SKETCH, batch.slot)
    signs = rng.choice(np.array([-1.0, 1.0]), size=Dp)
    rows = np.sort(rng.choice(Dp, size=d, replace=False))
    if full_selection:
        rows = np.arange(d)
    p = batch.X.shape[1]

    data = np.zeros((Dp, p + 1))
    data[:D, 0] = batch.y
    data[:D, 1:] = batch.X
    if identity_transform:
        mixed = data[rows]
        W = np.eye(Dp)[rows]
    else:
        gamma = signs / np.sqrt(Dp)
        mixed = fwht(data * gamma[:, None])[rows]
        W = hadamard_rows(rows, Dp) * gamma[None, :]

    W_data, W_pad = W[:, :D], W[:, D:]
    if batch.is_diagonal:
        R_sk = (W_data * batch.noise_var[None, :]) @ W_data.T
    else:
        R_sk = W_data @ batch.R @ W_data.T
    if pad:
        R_sk += PAD_VARIANCE * (W_pad @ W_pad.T)
    selection = RPSelection(rows=rows, signs=signs, padding=pad)
    return SketchedBatch(batch.slot, mixed[:, 0], mixed[:, 1:], R=symmetrize(R_sk), selection=selection)


def rp_kf_step(prior: GaussianBelief, batch: MeasurementBatch, d: int, seed: int, **hooks) -> GaussianBelief:
    """Kalman correction using the random-projection sketch of ``batch``."""
    return correct_batch(prior, rp_sketch(batch, d, seed, **hooks))
