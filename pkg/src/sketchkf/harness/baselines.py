"""Reference measurement-selection schemes: uniform sampling and greedy design."""

from __future__ import annotations

import numpy as np

from ..errors import ContractError
from ..kalman import correct_batch
from ..rng import RANDOM_SAMPLING, stream
from ..statespace import GaussianBelief, MeasurementBatch


def random_rows(batch: MeasurementBatch, d: int, seed: int) -> np.ndarray:
    """Sorted uniform ``d``-subset of row indices, a function of ``(seed, slot)`` only."""
    D = batch.size
    if not 0 <= d <= D:
        raise ContractError(f"sample size d={d} must lie in [0, D={D}]")
    rng = stream(seed, RANDOM_SAMPLING, batch.slot)
    return np.sort(rng.choice(D, size=d, replace=False))


def random_sampling_baseline(prior: GaussianBelief, batch: MeasurementBatch, d: int, seed: int) -> GaussianBelief:
    """Kalman correction on ``d`` rows drawn uniformly without replacement."""
    if d == 0:
        return prior
    if d == batch.size:
        return correct_batch(prior, batch)
    return correct_batch(prior, batch.rows(random_rows(batch, d, seed)))


def greedy_rows(prior: GaussianBelief, batch: MeasurementBatch, d: int) -> np.ndarray:
    """Rows picked one at a time, each maximizing the drop in posterior covariance trace.

    Candidate scores use the diagonal noise variances.  Picking row ``j``
    lowers the trace by ``||P x_j||^2 / (x_j^T P x_j + r_j)``; ``P X^T`` is
    kept current with a rank-one correction per pick, so every round costs
    ``O(D p)``.
    """
    D = batch.size
    if not 0 <= d <= D:
        raise ContractError(f"selection size d={d} must lie in [0, D={D}]")
    X, r = batch.X, batch.variances
    G = prior.cov @ X.T  # p x D, equals P X^T for the current P
    quad = np.einsum("ij,ji->i", X, G)
    avail = np.ones(D, dtype=bool)
    picks = np.empty(d, dtype=np.int64)
    for t in range(d):
        score = np.einsum("ij,ij->j", G, G) / (quad + r)
        score[~avail] = -np.inf
        j = int(np.argmax(score))
        picks[t] = j
        avail[j] = False
        u = G[:, j].copy()
        s = quad[j] + r[j]
        Xu = X @ u
        G -= np.outer(u, Xu / s)
        quad -= Xu**2 / s
    return np.sort(picks)


def greedy_oed_baseline(prior: GaussianBelief, batch: MeasurementBatch, d: int) -> GaussianBelief:
    """Kalman correction on the greedy trace-minimizing selection of ``d`` rows."""
    if d == 0:
        return prior
    if d == batch.size:
        return correct_batch(prior, batch)
    return correct_batch(prior, batch.rows(greedy_rows(prior, batch, d)))
