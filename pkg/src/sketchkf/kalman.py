"""Full-data Kalman correction (batch and entry-by-entry) and the RMSE metric."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg as sla

from .errors import ContractError, NumericalError
from .statespace import GaussianBelief, MeasurementBatch, symmetrize


@dataclass(frozen=True)
class CorrectionReport:
    posterior: GaussianBelief
    innovations: np.ndarray
    gain_norms: np.ndarray | None = None


def correct_batch(prior: GaussianBelief, batch: MeasurementBatch, joseph: bool = False) -> GaussianBelief:
    """Kalman correction of ``prior`` with all rows of ``batch``.

    The innovation covariance ``X P X^T + R`` is Cholesky-factored; no
    explicit inverse is formed.  ``joseph=True`` uses the Joseph-form
    covariance update.
    """
    X, P, m = batch.X, prior.cov, prior.mean
    if X.shape[1] != prior.dim:
        raise ContractError(f"X has {X.shape[1]} columns, belief has dimension {prior.dim}")
    if batch.size == 0:
        return prior
    PXt = P @ X.T
    S = X @ PXt
    if batch.is_diagonal:
        S[np.diag_indices_from(S)] += batch.noise_var
    else:
        S += batch.R
    try:
        factor = sla.cho_factor(S, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        raise NumericalError("innovation covariance is not positive definite", slot=batch.slot) from None
    Kt = sla.cho_solve(factor, PXt.T, check_finite=False)
    innov = batch.y - X @ m
    mean = m + Kt.T @ innov
    if joseph:
        A = np.eye(prior.dim) - Kt.T @ X
        cov = A @ P @ A.T + Kt.T @ batch.covariance() @ Kt
    else:
        cov = P - PXt @ Kt
    if not np.all(np.isfinite(mean)) or not np.all(np.isfinite(cov)):
        raise NumericalError("non-finite posterior", slot=batch.slot)
    return GaussianBelief(mean, symmetrize(cov))


def correct_sequential(prior: GaussianBelief, batch: MeasurementBatch) -> CorrectionReport:
    """Process the rows of a diagonal-noise batch one at a time (RLS form).

    For each row: ``e = y_i - x_i^T m``, ``s = x_i^T P x_i + sigma_i^2``,
    ``k = P x_i / s``, ``m += k e``, ``P -= P x_i x_i^T P / s``.
    """
    if not batch.is_diagonal:
        raise ContractError("sequential correction requires a diagonal noise covariance")
    m = np.array(prior.mean)
    P = np.array(prior.cov)
    D = batch.size
    innovations = np.empty(D)
    gain_norms = np.empty(D)
    for i in range(D):
        x = batch.X[i]
        Px = P @ x
        e = batch.y[i] - x @ m
        s = x @ Px + batch.noise_var[i]
        if not s > 0:
            raise NumericalError(f"nonpositive innovation variance at entry {i}", slot=batch.slot)
        k = Px / s
        m += k * e
        P -= np.outer(k, Px)
        innovations[i] = e
        gain_norms[i] = np.linalg.norm(k)
    return CorrectionReport(GaussianBelief(m, symmetrize(P)), innovations, gain_norms)


def rmse(estimates: Sequence[np.ndarray], truth: Sequence[np.ndarray]) -> float:
    """``sqrt(mean_n ||est_n - truth_n||^2)``."""
    est = np.asarray(estimates, dtype=float)
    tru = np.asarray(truth, dtype=float)
    if est.shape != tru.shape:
        raise ContractError(f"shape mismatch: {est.shape} vs {tru.shape}")
    if est.shape[0] < 1:
        raise ContractError("need at least one estimate")
    err = (est - tru).reshape(est.shape[0], -1)
    return float(np.sqrt(np.mean(np.sum(err**2, axis=1))))
