"""Exact sampling of the driving path X = (t, B^H,2, ..., B^H,d).

The first coordinate is time, the remaining d-1 coordinates are independent
fractional Brownian motions on a uniform grid. Two exact-in-distribution
samplers are provided: a dense Cholesky factorization of the increment
covariance (reference, O(n^2) memory) and circulant embedding of the
fractional Gaussian noise covariance (default, O(n log n)).
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityError, DomainError, InternalError

CHOLESKY_MAX_STEPS = 4096


def validate_hurst(hurst, sampling_only=False):
    """Check the Hurst parameter against library scope.

    Samplers are exact for any H in (0,1); the scheme theory only covers
    H > 1/2, so construction outside (1/2,1) is rejected unless
    ``sampling_only`` is set.
    """
    hurst = float(hurst)
    if not 0.0 < hurst < 1.0:
        raise DomainError(f"Hurst parameter must lie in (0,1), got {hurst}")
    if not sampling_only and not hurst > 0.5:
        raise DomainError(
            f"Hurst parameter {hurst} outside (1/2,1); pass sampling_only=True "
            "to sample paths anyway (scheme theory does not apply)"
        )
    return hurst


@dataclass(frozen=True)
class UniformGrid:
    """Uniform partition of [0, horizon] into n steps."""

    horizon: float
    n: int

    def __post_init__(self):
        if self.n < 1:
            raise DomainError(f"step count must be >= 1, got {self.n}")
        if not self.horizon > 0:
            raise DomainError(f"horizon must be positive, got {self.horizon}")

    @property
    def h(self):
        return self.horizon / self.n

    def nodes(self):
        # k * T / n, never repeated addition
        return np.arange(self.n + 1) * self.horizon / self.n


@dataclass(frozen=True)
class SeedRecord:
    """Provenance of a path: enough to check two objects share a realization."""

    seed: tuple
    sampler: str
    hurst: float
    dim: int


@dataclass(frozen=True)
class DrivingPath:
    """Grid-sampled realization of the driver X, stored as levels."""

    grid: UniformGrid
    hurst: float
    values: np.ndarray = field(repr=False)  # (n+1, d)
    seed_record: SeedRecord

    @property
    def d(self):
        return self.values.shape[1]

    def increments(self):
        """Increments Delta X_k = X_{t_{k+1}} - X_{t_k}, shape (n, d)."""
        return np.diff(self.values, axis=0)


def fbm_covariance(s, t, hurst):
    """Covariance E[B^H_s B^H_t] = (t^2H + s^2H - |t-s|^2H) / 2."""
    hurst = validate_hurst(hurst, sampling_only=True)
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(s < 0) or np.any(t < 0):
        raise DomainError("fbm_covariance requires nonnegative times")
    two_h = 2.0 * hurst
    out = 0.5 * (t**two_h + s**two_h - np.abs(t - s) ** two_h)
    return out if out.ndim else float(out)


def fgn_covariance(lag, hurst, step=1.0):
    """Lag covariance of fractional Gaussian noise on a grid with step h.

    gamma(k) = (h^2H / 2)(|k+1|^2H + |k-1|^2H - 2|k|^2H); symmetric in k.
    """
    k = np.abs(np.asarray(lag, dtype=float))
    two_h = 2.0 * hurst
    gamma = 0.5 * step**two_h * (
        (k + 1.0) ** two_h + np.abs(k - 1.0) ** two_h - 2.0 * k**two_h
    )
    return gamma if gamma.ndim else float(gamma)


def _seed_key(seed):
    """Normalize a seed (int or SeedSequence) to a hashable provenance key."""
    if isinstance(seed, np.random.SeedSequence):
        ent = seed.entropy
        ent = tuple(ent) if isinstance(ent, (list, tuple)) else (int(ent),)
        return ent + tuple(seed.spawn_key)
    return (int(seed),)


def _coordinate_rng(seed, coord):
    """RNG substream for coordinate ``coord`` (2..d) of a path.

    Substreams are keyed by (seed, coord) so growing d never perturbs
    existing coordinates.
    """
    if isinstance(seed, np.random.SeedSequence):
        ss = np.random.SeedSequence(
            entropy=seed.entropy, spawn_key=tuple(seed.spawn_key) + (coord,)
        )
    else:
        ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(coord,))
    return np.random.default_rng(ss)


@functools.lru_cache(maxsize=32)
def _increment_cholesky(n, hurst, step):
    """Lower Cholesky factor of the n x n fGn increment covariance."""
    lags = np.arange(n)
    sigma = fgn_covariance(np.abs(lags[:, None] - lags[None, :]), hurst, step)
    try:
        return np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        # theoretically positive definite; one jitter retry for conditioning
        jitter = 1e-12 * np.trace(sigma) / n
        try:
            return np.linalg.cholesky(sigma + jitter * np.eye(n))
        except np.linalg.LinAlgError as exc:
            raise InternalError(
                f"increment covariance not positive definite after jitter "
                f"(H={hurst}, n={n})"
            ) from exc


def _empty_path(grid, d):
    values = np.zeros((grid.n + 1, d))
    values[:, 0] = grid.nodes()
    return values


def sample_path_cholesky(grid, d, hurst, seed, sampling_only=False):
    """Sample the driver exactly via dense Cholesky of the fGn covariance."""
    hurst = validate_hurst(hurst, sampling_only)
    if d < 1:
        raise DomainError(f"driver dimension must be >= 1, got {d}")
    if grid.n > CHOLESKY_MAX_STEPS:
        raise CapacityError(
            f"n={grid.n} exceeds the dense Cholesky guard ({CHOLESKY_MAX_STEPS}); "
            "use sample_path_circulant"
        )
    record = SeedRecord(_seed_key(seed), "cholesky", hurst, d)
    values = _empty_path(grid, d)
    if d > 1:
        chol = _increment_cholesky(grid.n, hurst, grid.h)
        for coord in range(2, d + 1):
            rng = _coordinate_rng(seed, coord)
            incs = chol @ rng.standard_normal(grid.n)
            values[1:, coord - 1] = np.cumsum(incs)
    values.setflags(write=False)
    return DrivingPath(grid, hurst, values, record)


def _circulant_eigenvalues(n, hurst):
    """Eigenvalues of the circulant embedding of the unit-step fGn covariance.

    Embedding size is the smallest power of two >= 2n.
    """
    m = 1 << max(1, (2 * n - 1)).bit_length()
    half = m // 2
    gamma = fgn_covariance(np.arange(half + 1), hurst)
    circ = np.concatenate([gamma, gamma[-2:0:-1]])
    eig = np.fft.fft(circ).real
    floor = -1e-10 * eig.max()
    if eig.min() < floor:
        raise InternalError(
            f"circulant embedding has negative eigenvalue {eig.min():.3e} "
            f"(H={hurst}, n={n})"
        )
    return np.clip(eig, 0.0, None)


def sample_path_circulant(grid, d, hurst, seed, sampling_only=False):
    """Sample the driver via circulant embedding (Davies-Harte)."""
    hurst = validate_hurst(hurst, sampling_only)
    if d < 1:
        raise DomainError(f"driver dimension must be >= 1, got {d}")
    record = SeedRecord(_seed_key(seed), "circulant", hurst, d)
    values = _empty_path(grid, d)
    if d > 1:
        n = grid.n
        eig = _circulant_eigenvalues(n, hurst)
        m = eig.size
        half = m // 2
        scale = grid.h**hurst
        for coord in range(2, d + 1):
            rng = _coordinate_rng(seed, coord)
            w = np.zeros(m, dtype=complex)
            w[0] = np.sqrt(eig[0] / m) * rng.standard_normal()
            w[half] = np.sqrt(eig[half] / m) * rng.standard_normal()
            pair = rng.standard_normal((half - 1, 2))
            coef = np.sqrt(eig[1:half] / (2.0 * m))
            w[1:half] = coef * (pair[:, 0] + 1j * pair[:, 1])
            w[half + 1 :] = np.conj(w[1:half][::-1])
            fgn = np.fft.fft(w).real[:n] * scale
            values[1:, coord - 1] = np.cumsum(fgn)
    values.setflags(write=False)
    return DrivingPath(grid, hurst, values, record)


SAMPLERS = {
    "cholesky": sample_path_cholesky,
    "circulant": sample_path_circulant,
}


def sample_path(grid, d, hurst, seed, sampler="circulant", sampling_only=False):
    """Dispatch to a named sampler."""
    try:
        fn = SAMPLERS[sampler]
    except KeyError:
        raise DomainError(
            f"unknown sampler {sampler!r}; choose from {sorted(SAMPLERS)}"
        ) from None
    return fn(grid, d, hurst, seed, sampling_only=sampling_only)


def restrict(path, factor):
    """Restrict a path to the coarse grid with n/factor steps.

    Values are copied from the fine realization; shared nodes stay
    bit-identical. Provenance is preserved.
    """
    factor = int(factor)
    if factor < 1 or path.grid.n % factor != 0:
        raise DomainError(
            f"factor {factor} does not divide the step count {path.grid.n}"
        )
    coarse = UniformGrid(path.grid.horizon, path.grid.n // factor)
    values = path.values[::factor].copy()
    values.setflags(write=False)
    return DrivingPath(coarse, path.hurst, values, path.seed_record)


def write_path_csv(path, stream):
    """Dump a path as CSV: header t,X1,...,Xd then one row per node.

    Values are written with shortest round-trip decimal formatting so a
    read-back reproduces them bit-exactly.
    """
    d = path.d
    stream.write("t," + ",".join(f"X{l}" for l in range(1, d + 1)) + "\n")
    for k in range(path.grid.n + 1):
        t = path.grid.nodes()[k]
        row = [repr(float(t))] + [repr(float(v)) for v in path.values[k]]
        stream.write(",".join(row) + "\n")


def read_path_values_csv(stream):
    """Read back a path CSV; returns the (n+1, d) value array (column 0 = t
    repeated as X1 per the driver convention: first data column is X1 = t)."""
    header = stream.readline().strip().split(",")
    if not header or header[0] != "t":
        raise DomainError("not a path CSV: header must start with 't'")
    rows = [line.strip().split(",") for line in stream if line.strip()]
    data = np.array([[float(v) for v in row] for row in rows])
    # column 0 is t and column 1 is X1 = t; keep the X columns
    return data[:, 1:]
