"""Linear Gaussian state-space model, beliefs and trajectory simulation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

from .errors import ConfigurationError, ContractError
from .rng import INITIAL_STATE, MEASUREMENT, MEASUREMENT_NOISE, PROCESS_NOISE, stream

SYMMETRY_TOL = 1e-10
PSD_TOL = 1e-10

MatrixProvider = Union[np.ndarray, Callable[[int], np.ndarray]]
ControlProvider = Callable[[int], "tuple[np.ndarray, np.ndarray]"]
MeasurementModel = Callable[[int, np.random.Generator], "tuple[np.ndarray, np.ndarray]"]


def _frozen(a, ndim: int | None = None, name: str = "array") -> np.ndarray:
    arr = np.array(a, dtype=float)
    if ndim is not None and arr.ndim != ndim:
        raise ContractError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


def symmetrize(c: np.ndarray) -> np.ndarray:
    return 0.5 * (c + c.T)


def _check_psd(c: np.ndarray, name: str, tol: float = PSD_TOL) -> None:
    if not np.array_equal(c, c.T):
        raise ConfigurationError(f"{name} is not symmetric")
    shift = tol * max(1.0, float(np.max(np.abs(c), initial=0.0)))
    try:
        np.linalg.cholesky(c + shift * np.eye(c.shape[0]))
    except np.linalg.LinAlgError:
        raise ConfigurationError(f"{name} is not positive semidefinite") from None


@dataclass(frozen=True)
class GaussianBelief:
    """Mean vector and covariance matrix of a Gaussian state belief."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = _frozen(self.mean, 1, "mean")
        cov = _frozen(self.cov, 2, "cov")
        if cov.shape != (mean.size, mean.size):
            raise ContractError(f"cov shape {cov.shape} does not match mean length {mean.size}")
        scale = max(1.0, float(np.max(np.abs(cov), initial=0.0)))
        if np.max(np.abs(cov - cov.T), initial=0.0) > SYMMETRY_TOL * scale:
            raise ContractError("belief covariance is not symmetric")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size


@dataclass(frozen=True)
class MeasurementBatch:
    """The per-slot triple ``{y, X, R}``.

    Noise covariance is stored either as a full ``D x D`` matrix ``R`` or,
    when tagged diagonal, as the vector of variances ``noise_var``.
    """

    slot: int
    y: np.ndarray
    X: np.ndarray
    R: np.ndarray | None = None
    noise_var: np.ndarray | None = None

    def __post_init__(self):
        y = _frozen(self.y, 1, "y")
        X = _frozen(self.X, 2, "X")
        if X.shape[0] != y.size:
            raise ContractError(f"X has {X.shape[0]} rows but y has {y.size} entries")
        if (self.R is None) == (self.noise_var is None):
            raise ContractError("exactly one of R or noise_var must be given")
        if self.R is not None:
            R = _frozen(self.R, 2, "R")
            if R.shape != (y.size, y.size):
                raise ContractError(f"R shape {R.shape} does not match D={y.size}")
            object.__setattr__(self, "R", R)
        else:
            var = _frozen(self.noise_var, 1, "noise_var")
            if var.size != y.size:
                raise ContractError(f"noise_var has {var.size} entries, expected {y.size}")
            if np.any(var <= 0):
                raise ContractError("diagonal noise variances must be positive")
            object.__setattr__(self, "noise_var", var)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)

    @classmethod
    def from_cov(cls, slot: int, y, X, cov) -> "MeasurementBatch":
        """Build a batch, tagging it diagonal when ``cov`` is a vector."""
        cov = np.asarray(cov, dtype=float)
        if cov.ndim == 1:
            return cls(slot, y, X, noise_var=cov)
        return cls(slot, y, X, R=cov)

    @property
    def size(self) -> int:
        return self.y.size

    @property
    def is_diagonal(self) -> bool:
        return self.noise_var is not None

    @property
    def variances(self) -> np.ndarray:
        """Per-entry noise variances (the diagonal of R)."""
        if self.noise_var is not None:
            return self.noise_var
        return np.diag(self.R)

    def covariance(self) -> np.ndarray:
        if self.R is not None:
            return self.R
        return np.diag(self.noise_var)

    def rows(self, idx) -> "MeasurementBatch":
        """Restrict the triple to the rows in ``idx`` (order preserved)."""
        idx = np.asarray(idx, dtype=np.intp)
        if self.R is not None:
            return MeasurementBatch(self.slot, self.y[idx], self.X[idx], R=self.R[np.ix_(idx, idx)])
        return MeasurementBatch(self.slot, self.y[idx], self.X[idx], noise_var=self.noise_var[idx])

    def diagonal(self) -> "MeasurementBatch":
        """The same data with R replaced by its diagonal."""
        if self.is_diagonal:
            return self
        return MeasurementBatch(self.slot, self.y, self.X, noise_var=np.diag(self.R))


def _as_provider(value: MatrixProvider) -> Callable[[int], np.ndarray]:
    if callable(value):
        return value
    arr = _frozen(value)
    return lambda n: arr


@dataclass(frozen=True)
class LinearDynamicalSystem:
    """``theta_n = F_n theta_{n-1} + G_n u_n + w_n``, ``w_n ~ N(0, Q_n)``.

    ``transition`` and ``process_noise_cov`` may be constant arrays or pure
    functions of the slot index.  ``control`` (optional) maps a slot to
    ``(G_n, u_n)``.
    """

    state_dim: int
    transition: MatrixProvider
    process_noise_cov: MatrixProvider
    initial_mean: np.ndarray
    initial_cov: np.ndarray
    control: ControlProvider | None = None
    _F: Callable[[int], np.ndarray] = field(init=False, repr=False, compare=False)
    _Q: Callable[[int], np.ndarray] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        p = int(self.state_dim)
        if p < 1:
            raise ConfigurationError("state_dim must be positive")
        m0 = _frozen(self.initial_mean, 1, "initial_mean")
        P0 = _frozen(self.initial_cov, 2, "initial_cov")
        if m0.size != p or P0.shape != (p, p):
            raise ConfigurationError("initial belief dimensions do not match state_dim")
        _check_psd(P0, "initial_cov")
        for name in ("transition", "process_noise_cov"):
            value = getattr(self, name)
            if not callable(value):
                arr = _frozen(value, 2, name)
                if arr.shape != (p, p):
                    raise ConfigurationError(f"{name} has shape {arr.shape}, expected {(p, p)}")
                if name == "process_noise_cov":
                    _check_psd(arr, name)
                object.__setattr__(self, name, arr)
        object.__setattr__(self, "state_dim", p)
        object.__setattr__(self, "initial_mean", m0)
        object.__setattr__(self, "initial_cov", P0)
        object.__setattr__(self, "_F", _as_provider(self.transition))
        object.__setattr__(self, "_Q", _as_provider(self.process_noise_cov))

    @property
    def noise_time_invariant(self) -> bool:
        return not callable(self.process_noise_cov)

    def F(self, n: int) -> np.ndarray:
        F = np.asarray(self._F(n), dtype=float)
        if F.shape != (self.state_dim, self.state_dim):
            raise ConfigurationError(f"F_{n} has shape {F.shape}, expected {(self.state_dim,) * 2}")
        return F

    def Q(self, n: int) -> np.ndarray:
        Q = np.asarray(self._Q(n), dtype=float)
        if Q.shape != (self.state_dim, self.state_dim):
            raise ConfigurationError(f"Q_{n} has shape {Q.shape}, expected {(self.state_dim,) * 2}")
        if callable(self.process_noise_cov) and not np.array_equal(Q, Q.T):
            raise ConfigurationError(f"Q_{n} is not symmetric")
        return Q

    def control_term(self, n: int) -> np.ndarray | None:
        """``G_n u_n`` or ``None`` when the system has no control input."""
        if self.control is None:
            return None
        G, u = self.control(n)
        Gu = np.asarray(G, dtype=float) @ np.asarray(u, dtype=float)
        if Gu.shape != (self.state_dim,):
            raise ConfigurationError(f"control term at slot {n} has shape {Gu.shape}")
        return Gu

    def initial_belief(self) -> GaussianBelief:
        return GaussianBelief(self.initial_mean, self.initial_cov)


@dataclass(frozen=True)
class Trajectory:
    """Ground-truth states ``theta_1..theta_N`` and the matching batches."""

    states: np.ndarray
    batches: Sequence[MeasurementBatch]
    seed: int
    initial_state: np.ndarray

    def __post_init__(self):
        if len(self.states) != len(self.batches):
            raise ContractError("states and batches must have equal length")

    def __len__(self) -> int:
        return len(self.batches)


def _is_identity(F: np.ndarray) -> bool:
    n = F.shape[0]
    return bool(np.all(F.diagonal() == 1.0)) and np.count_nonzero(F) == n


def predict(belief: GaussianBelief, system: LinearDynamicalSystem, n: int) -> GaussianBelief:
    """Kalman prediction step for slot ``n``."""
    if belief.dim != system.state_dim:
        raise ConfigurationError(f"belief dimension {belief.dim} != state_dim {system.state_dim}")
    F = system.F(n)
    Gu = system.control_term(n)
    if _is_identity(F):
        # random-walk models: skip the two dense products
        mean, cov = np.array(belief.mean), belief.cov + system.Q(n)
    else:
        mean, cov = F @ belief.mean, F @ belief.cov @ F.T + system.Q(n)
    if Gu is not None:
        mean = mean + Gu
    cov = symmetrize(cov)
    return GaussianBelief(mean, cov)


def ar1_covariance(dim: int, rho: float, scale: float = 1.0) -> np.ndarray:
    """``scale**2 * rho**|i-j|``."""
    if dim < 1:
        raise ConfigurationError("dim must be >= 1")
    if not 0.0 < rho < 1.0:
        raise ConfigurationError(f"rho must lie in (0, 1), got {rho}")
    if scale < 0:
        raise ConfigurationError("scale must be nonnegative")
    idx = np.arange(dim)
    return scale**2 * rho ** np.abs(idx[:, None] - idx[None, :])


def cyclic_shift_transition(dim: int) -> np.ndarray:
    """Permutation matrix with ones on the superdiagonal plus the wrap entry.

    ``(F theta)_i = theta_{i+1}`` and ``(F theta)_p = theta_1``, so ``F e_1 = e_p``.
    """
    if dim < 2:
        raise ConfigurationError("cyclic shift needs dim >= 2")
    F = np.eye(dim, k=1)
    F[dim - 1, 0] = 1.0
    return F


def gaussian_factor(cov: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Return ``L`` with ``L @ L.T == cov``.

    Uses Cholesky when possible and falls back to an eigendecomposition
    (tiny negative eigenvalues clipped) for semidefinite matrices.
    """
    cov = np.asarray(cov, dtype=float)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    vals, vecs = np.linalg.eigh(symmetrize(cov))
    floor = -tol * max(1.0, float(np.max(np.abs(vals), initial=0.0)))
    if np.any(vals < floor):
        raise np.linalg.LinAlgError("matrix is not positive semidefinite")
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


class _FactorCache:
    """Reuse the factor of the last covariance seen (providers often return one object)."""

    def __init__(self):
        self._obj = None
        self._factor = None

    def __call__(self, cov: np.ndarray, what: str, slot: int) -> np.ndarray:
        if self._obj is not None and (cov is self._obj or np.array_equal(cov, self._obj)):
            return self._factor
        try:
            factor = gaussian_factor(cov)
        except np.linalg.LinAlgError:
            raise ConfigurationError(f"{what} covariance is not PSD at slot {slot}") from None
        self._obj, self._factor = cov, factor
        return factor


def simulate(system: LinearDynamicalSystem, meas_model: MeasurementModel, N: int, seed: int) -> Trajectory:
    """Draw a ground-truth trajectory and its measurements.

    ``meas_model(n, rng)`` returns ``(X_n, R_n)`` where ``R_n`` is either a
    full covariance matrix or a vector of diagonal variances.  Each slot
    draws from its own seeded streams, so the result depends only on
    ``seed``.
    """
    if N < 1:
        raise ConfigurationError("N must be >= 1")
    p = system.state_dim
    q_factor, r_factor = _FactorCache(), _FactorCache()
    try:
        L0 = gaussian_factor(system.initial_cov)
    except np.linalg.LinAlgError:
        raise ConfigurationError("initial covariance is not PSD at slot 0") from None
    theta = system.initial_mean + L0 @ stream(seed, INITIAL_STATE).standard_normal(p)
    theta0 = theta.copy()
    states = np.empty((N, p))
    batches = []
    for n in range(1, N + 1):
        Lq = q_factor(system.Q(n), "process noise", n)
        theta = system.F(n) @ theta + Lq @ stream(seed, PROCESS_NOISE, n).standard_normal(p)
        Gu = system.control_term(n)
        if Gu is not None:
            theta = theta + Gu
        X, R = meas_model(n, stream(seed, MEASUREMENT, n))
        X = np.asarray(X, dtype=float)
        R = np.asarray(R, dtype=float)
        noise_rng = stream(seed, MEASUREMENT_NOISE, n)
        if R.ndim == 1:
            if np.any(R < 0):
                raise ConfigurationError(f"measurement noise covariance is not PSD at slot {n}")
            v = np.sqrt(R) * noise_rng.standard_normal(R.size)
        else:
            v = r_factor(R, "measurement noise", n) @ noise_rng.standard_normal(R.shape[0])
        y = X @ theta + v
        states[n - 1] = theta
        batches.append(_unchecked_batch(n, y, X, R))
    states.setflags(write=False)
    return Trajectory(states, batches, seed, theta0)


def _unchecked_batch(n, y, X, R) -> MeasurementBatch:
    # a diagonal tag requires positive variances; zero-noise rows keep a full matrix
    if R.ndim == 1 and np.any(R <= 0):
        return MeasurementBatch(n, y, X, R=np.diag(R))
    return MeasurementBatch.from_cov(n, y, X, R)
