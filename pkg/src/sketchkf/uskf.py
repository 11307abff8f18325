"""Update-selection Kalman correction.

Rows are processed sequentially.  Each row's informational value is the
symmetric KL divergence between the posteriors before and after a
hypothetical RLS update; rows clearing a ``tau / i`` threshold get the exact
second-order update, the rest a cheap LMS step with an MSE-optimal stepsize
and no covariance change.  The quadratic form ``gamma = x^T P x`` in the gate
is approximated from the top-k eigenpairs of ``P`` plus its trace.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ConfigurationError, ContractError, NumericalError
from .statespace import GaussianBelief, MeasurementBatch, symmetrize

MU_MODES = {"optimal": 1.0, "half_optimal": 0.5, "zero": 0.0}
#: gate metrics: the full symmetric KL or only its innovation-dependent part
GATE_METRICS = ("innovation", "symmetric_kl")
ACTIONS = {_kernels.ACTION_SKIP: "skip", _kernels.ACTION_FIRST_ORDER: "first_order",
           _kernels.ACTION_SECOND_ORDER: "second_order"}

#: relative tolerance for deflation in the rank-one eigen downdate
DEFLATION_TOL = 1e-13
#: downdates between dense re-decompositions of the tracked eigensystem
REFRESH_EVERY = 50


def kl_step(gamma: float, sigma2: float, e_bar: float) -> float:
    """``KL(p_i || p_{i-1})`` for one RLS step, in terms of gamma and the normalized innovation."""
    ratio = gamma / (gamma + sigma2)
    return 0.5 * (e_bar**2 - 1.0) * ratio + 0.5 * math.log1p(gamma / sigma2)


def sym_kl_step(gamma: float, sigma2: float, e_bar: float) -> float:
    """Symmetric KL divergence ``KL(p_i || p_{i-1}) + KL(p_{i-1} || p_i)``.

    The mean terms give ``0.5 e_bar^2 (2 gamma + gamma^2 / sigma2) / s``
    (see ``sym_kl_innovation_term``); the trace terms add
    ``0.5 gamma^2 / (sigma2 s)``, and the log-determinants cancel.
    """
    s = gamma + sigma2
    return sym_kl_innovation_term(gamma, sigma2, e_bar) + 0.5 * gamma**2 / (sigma2 * s)


def sym_kl_innovation_term(gamma: float, sigma2: float, e_bar: float) -> float:
    """Innovation-dependent part ``0.5 e_bar^2 (2 gamma + gamma^2 / sigma2) / s`` of the symmetric KL."""
    s = gamma + sigma2
    return 0.5 * e_bar**2 * (2.0 * gamma + gamma**2 / sigma2) / s


def gamma_exact(x: np.ndarray, P: np.ndarray) -> float:
    return float(x @ P @ x)


@dataclass(frozen=True)
class EigenBasis:
    """Tracked eigensystem of a covariance matrix.

    The complete decomposition is kept (``full_values`` descending) so that
    downdates stay exact; ``vectors`` and ``values`` expose the top ``k``.
    """

    full_values: np.ndarray
    full_vectors: np.ndarray
    k: int
    trace_full: float
    downdates: int = 0

    @classmethod
    def from_cov(cls, P: np.ndarray, k: int) -> "EigenBasis":
        P = np.asarray(P, dtype=float)
        p = P.shape[0]
        if not 0 <= k <= p:
            raise ConfigurationError(f"rank k={k} must lie in [0, {p}]")
        vals, vecs = np.linalg.eigh(symmetrize(P))
        return cls(vals[::-1].copy(), vecs[:, ::-1].copy(), int(k), float(np.trace(P)))

    @property
    def dim(self) -> int:
        return self.full_values.size

    @property
    def values(self) -> np.ndarray:
        return self.full_values[: self.k]

    @property
    def vectors(self) -> np.ndarray:
        return self.full_vectors[:, : self.k]


def gamma_lowrank(x: np.ndarray, basis: EigenBasis, k: int | None = None) -> float:
    """Estimate ``x^T P x`` from the top-k eigenpairs and ``tr(P)``.

    The power of ``x`` outside the top-k subspace is assumed spread evenly
    over the remaining ``p - k`` directions.  ``k = p`` is exact and ``k = 0``
    reduces to ``||x||^2 tr(P) / p``.
    """
    k = basis.k if k is None else int(k)
    p = basis.dim
    if not 0 <= k <= p:
        raise ConfigurationError(f"rank k={k} must lie in [0, {p}]")
    x = np.asarray(x, dtype=float)
    proj = basis.full_vectors[:, :k].T @ x
    lam = basis.full_values[:k]
    g = float(lam @ proj**2)
    if k < p:
        residual = float(x @ x - proj @ proj)
        g += residual * (basis.trace_full - float(lam.sum())) / (p - k)
    return max(g, 0.0)


def eigen_rank_one_downdate(basis: EigenBasis, u: np.ndarray) -> EigenBasis:
    """Eigensystem of ``P - u u^T`` from that of ``P``.

    Solved through the secular equation; every ``REFRESH_EVERY`` downdates
    the tracked decomposition is recomputed densely to bound drift.
    """
    u = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(u)):
        raise NumericalError("non-finite downdate vector")
    unorm2 = float(u @ u)
    if unorm2 == 0.0:
        return basis
    trace = basis.trace_full - unorm2
    if trace < -1e-8:
        raise NumericalError(f"downdate drives the trace negative ({trace:.3e})")
    vals, vecs = _kernels.secular_downdate(basis.full_values, basis.full_vectors, u, DEFLATION_TOL)
    count = basis.downdates + 1
    if count >= REFRESH_EVERY:
        rebuilt = (vecs * vals) @ vecs.T
        vals, vecs = np.linalg.eigh(symmetrize(rebuilt))
        vals, vecs, count = vals[::-1].copy(), vecs[:, ::-1].copy(), 0
    return EigenBasis(vals, vecs, basis.k, trace, count)


def optimal_stepsize(x: np.ndarray, gamma_hat: float, sigma2: float) -> float:
    xn2 = float(x @ x)
    return gamma_hat / (xn2 * (gamma_hat + sigma2))


def first_order_update(mean, x, e: float, gamma_hat: float, sigma2: float, mu_mode: str = "optimal") -> np.ndarray:
    """LMS step ``mean + mu x e``; the covariance is left untouched by design."""
    factor = _mu_factor(mu_mode)
    x = np.asarray(x, dtype=float)
    mean = np.asarray(mean, dtype=float)
    if factor == 0.0 or not x @ x > 0:
        return mean.copy()
    return mean + factor * optimal_stepsize(x, gamma_hat, sigma2) * e * x


def mse_change(mu: float, xn2: float, gamma: float, sigma2: float) -> float:
    """Expected MSE change of an LMS step of size ``mu``."""
    return xn2 * (gamma + sigma2) * mu**2 - 2.0 * gamma * mu


def _mu_factor(mu_mode: str) -> float:
    try:
        return MU_MODES[mu_mode]
    except KeyError:
        raise ConfigurationError(f"unknown mu_mode {mu_mode!r}; expected one of {sorted(MU_MODES)}") from None


@dataclass(frozen=True)
class UsKfConfig:
    tau: float
    k: int = 0
    mu_mode: str = "optimal"
    decay: float = 1.0
    gate: str = "innovation"

    def __post_init__(self):
        if self.gate not in GATE_METRICS:
            raise ConfigurationError(f"unknown gate {self.gate!r}; expected one of {GATE_METRICS}")
        if self.k < 0:
            raise ConfigurationError("k must be nonnegative")
        if not self.tau >= 0:
            raise ConfigurationError("tau must be nonnegative")
        _mu_factor(self.mu_mode)


@dataclass(frozen=True)
class SlotTrace:
    """Per-entry diagnostics of one update-selection pass."""

    gamma_hat: np.ndarray
    innovation: np.ndarray
    s: np.ndarray
    divergence: np.ndarray
    action_codes: np.ndarray

    def __len__(self) -> int:
        return self.action_codes.size

    @property
    def actions(self) -> list[str]:
        return [ACTIONS[int(a)] for a in self.action_codes]

    def count(self, action: str) -> int:
        code = {v: k for k, v in ACTIONS.items()}[action]
        return int(np.count_nonzero(self.action_codes == code))

    @property
    def second_order_updates(self) -> int:
        return self.count("second_order")


def us_kf_correct(prior: GaussianBelief, batch: MeasurementBatch, config: UsKfConfig) -> tuple[GaussianBelief, SlotTrace]:
    """Update-selection correction of ``prior`` with the rows of ``batch``.

    Only the diagonal of the noise covariance is used.
    """
    p = prior.dim
    if config.k > p:
        raise ConfigurationError(f"rank k={config.k} exceeds state dimension {p}")
    if batch.X.shape[1] != p:
        raise ContractError("measurement matrix does not match the state dimension")
    r = np.ascontiguousarray(batch.variances, dtype=float)
    if np.any(r <= 0):
        raise ContractError("update selection needs strictly positive noise variances")
    P = np.array(prior.cov, dtype=float)
    if config.k > 0:
        basis = EigenBasis.from_cov(P, config.k)
        vals, vecs = basis.full_values.copy(), basis.full_vectors.copy()
    else:
        vals, vecs = np.zeros(0), np.zeros((p, 0))
    theta, P, actions, gammas, errs, ss, divs, _, _, _ = _kernels.us_slot_pass(
        np.array(prior.mean, dtype=float), P, np.ascontiguousarray(batch.X), batch.y, r,
        float(config.tau), float(config.decay), int(config.k), _mu_factor(config.mu_mode),
        vals, vecs, float(np.trace(P)), REFRESH_EVERY, DEFLATION_TOL, config.gate == "symmetric_kl",
    )
    if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(P))):
        raise NumericalError("non-finite update-selection posterior", slot=batch.slot)
    return GaussianBelief(theta, symmetrize(P)), SlotTrace(gammas, errs, ss, divs, actions)
