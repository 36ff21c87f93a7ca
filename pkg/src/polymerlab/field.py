"""Discretized space-time white noise and Wiener integrals along paths.

Two interchangeable realizations of the Gaussian disorder:

* an explicit field of i.i.d. cell increments ``N(0, h^d dt)`` addressed by
  ``(time step, cell)``.  Increment values are *content-addressed*: a value is
  a hash of (stream key, step, cell), so any consumer -- dense slab, sparse
  path tube, a later run with a longer horizon -- sees the identical
  realization without storing it.  This is what makes nested-horizon
  martingale checks exact and keeps memory flat.

* an implicit replica-Gaussian sampler that draws the vector of path
  integrals directly from ``N(0, Sigma)`` with ``Sigma[i,j]`` the pairwise
  overlap, via Cholesky with a jitter ladder.

Cell convention: cell ``c`` (integer vector) has center ``(c + 1/2) h``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import cholesky
from scipy.special import ndtri

from .errors import CoverageError, FactorizationError, ResourceLimitError
from .mollifier import Mollifier, CovarianceKernel
from .paths import BrownianPath, overlap_matrix
from .rng import SeedStream

logger = logging.getLogger(__name__)

DEFAULT_MAX_BYTES = 1 << 30

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLD = np.uint64(0x9E3779B97F4A7C15)
_S30, _S27, _S31, _S11 = (np.uint64(s) for s in (30, 27, 31, 11))
_INV53 = float(2.0 ** -53)
_HALF54 = float(2.0 ** -54)

_PACK_BITS = 21
_PACK_OFF = 1 << (_PACK_BITS - 1)


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def hashed_normals(key: tuple[int, int], step, cell) -> np.ndarray:
    """Standard normals addressed by (key, step, cell word).

    ``step`` and ``cell`` are broadcastable uint64-convertible arrays.  The
    same address always yields the same value; this is the coupling device
    behind shared disorder, lazy slabs, and horizon nesting.  Distinct
    (step, cell) addresses cannot pre-collide for the bounded cell ranges the
    pack admits, and two mixing rounds give full avalanche.
    """
    with np.errstate(over="ignore"):  # uint64 wraparound is the point
        pre = (np.asarray(step, dtype=np.uint64) * _GOLD
               + np.asarray(cell, dtype=np.uint64))
        v = _mix(pre ^ np.uint64(key[0] & 0xFFFFFFFFFFFFFFFF))
        v = _mix(v + np.uint64(key[1] & 0xFFFFFFFFFFFFFFFF))
    u = (v >> _S11).astype(np.float64) * _INV53 + _HALF54
    return ndtri(u)


def pack_cells(cells: np.ndarray, d: int, checked: bool = True) -> np.ndarray:
    """Pack integer cell coordinates (last axis d <= 3) into one int64 word."""
    if d > 3:
        raise ValueError("explicit noise fields support d <= 3")
    c = np.asarray(cells, dtype=np.int64)
    if checked and c.size and (c.min() <= -_PACK_OFF or c.max() >= _PACK_OFF):
        raise ValueError("cell index out of packable range")
    out = c[..., 0] + _PACK_OFF
    for axis in range(1, d):
        out = (out << np.int64(_PACK_BITS)) | (c[..., axis] + _PACK_OFF)
    return out


def _ball_offsets(radius_cells: float, d: int) -> np.ndarray:
    """Integer offsets o with |o| <= radius_cells, as an (n_off, d) array."""
    r = int(math.ceil(radius_cells))
    axes = [np.arange(-r, r + 1)] * d
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    keep = (grid * grid).sum(axis=1) <= radius_cells * radius_cells
    return grid[keep].astype(np.int64)


# ---------------------------------------------------------------------------
# explicit dense field
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NoiseField:
    """White-noise increments on a box, lazily generated per time slab."""

    box_lo: np.ndarray
    box_hi: np.ndarray
    h: float
    T: float
    dt: float
    stream: SeedStream
    max_bytes: int = DEFAULT_MAX_BYTES

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.box_lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.box_hi, dtype=float))
        if lo.shape != hi.shape or np.any(hi <= lo):
            raise ValueError("box_hi must exceed box_lo componentwise")
        object.__setattr__(self, "box_lo", lo)
        object.__setattr__(self, "box_hi", hi)
        if self.h <= 0 or self.dt <= 0:
            raise ValueError("h and dt must be positive")
        n = int(round(self.T / self.dt))
        if n < 1 or abs(n * self.dt - self.T) > 1e-9 * max(self.T, 1.0):
            raise ValueError("T must be a positive integer multiple of dt")
        req = 2 * 8 * self.n_cells
        if req > self.max_bytes:
            raise ResourceLimitError(req, self.max_bytes)

    @property
    def d(self) -> int:
        return len(self.box_lo)

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def cell_lo(self) -> np.ndarray:
        return np.floor(self.box_lo / self.h + 1e-12).astype(np.int64)

    @property
    def cell_hi(self) -> np.ndarray:
        """Exclusive upper cell index per axis."""
        return np.ceil(self.box_hi / self.h - 1e-12).astype(np.int64)

    @property
    def grid_shape(self) -> tuple[int, ...]:
        return tuple(int(n) for n in (self.cell_hi - self.cell_lo))

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.grid_shape))

    @property
    def sigma(self) -> float:
        """Per-cell increment standard deviation sqrt(h^d dt)."""
        return math.sqrt(self.h**self.d * self.dt)

    def _packed_grid(self) -> np.ndarray:
        axes = [np.arange(lo, hi) for lo, hi in zip(self.cell_lo, self.cell_hi)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        return pack_cells(grid, self.d)

    def slab(self, k: int) -> np.ndarray:
        """Increment array for time step k (shape = grid_shape)."""
        if not 0 <= k < self.n_steps:
            raise IndexError(f"slab index {k} outside [0, {self.n_steps})")
        packed = self._packed_grid()
        vals = hashed_normals(self.stream.key128(), np.uint64(k), packed)
        return self.sigma * vals

    def extended(self, T2: float) -> "NoiseField":
        """Field on a longer horizon; increments on [0, T] are unchanged."""
        if T2 < self.T:
            raise ValueError("extension horizon must be >= current horizon")
        return replace(self, T=T2)

    def cell_centers(self) -> np.ndarray:
        axes = [self.h * (np.arange(lo, hi) + 0.5)
                for lo, hi in zip(self.cell_lo, self.cell_hi)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


def build_noise_field(box_lo, box_hi, h: float, T: float, dt: float,
                      stream: SeedStream,
                      max_bytes: int = DEFAULT_MAX_BYTES) -> NoiseField:
    return NoiseField(np.asarray(box_lo, float), np.asarray(box_hi, float),
                      h, T, dt, stream, max_bytes)


@dataclass(frozen=True)
class WienerIntegralSample:
    """One realization of the noise integral along a fixed path."""

    value: float
    horizon: float
    path: BrownianPath
    mollifier: Mollifier
    discrete_variance: float  # sigma^2 * sum of phi^2 over visited cells


def wiener_integral(field: NoiseField, w: BrownianPath, m: Mollifier,
                    time_reversed: bool = False) -> WienerIntegralSample:
    """Reference explicit-field integral sum_k sum_c phi(x_c - W_k) dB(k, c).

    Left path endpoints weight each slab; only cells within the mollifier
    support window are touched (identical values to the full-slab sum).
    Raises ``CoverageError`` at the first time the support tube leaves the
    box.
    """
    if m.d != field.d or w.d != field.d:
        raise ValueError("dimension mismatch between field, path and mollifier")
    ratio = w.dt / field.dt
    sub = int(round(ratio))
    if sub < 1 or abs(sub * field.dt - w.dt) > 1e-9 * w.dt:
        raise ValueError("field dt must divide path dt (or be equal)")
    n_steps = w.n_steps * sub
    if n_steps > field.n_steps:
        raise ValueError("path horizon exceeds field horizon")
    r_supp = m.effective_radius()
    pos = np.repeat(w.positions[:-1], sub, axis=0)  # left endpoint per field step

    lo_ok = pos - r_supp >= field.box_lo
    hi_ok = pos + r_supp <= field.box_hi
    ok = np.all(lo_ok & hi_ok, axis=1)
    if not np.all(ok):
        bad = int(np.argmin(ok))
        raise CoverageError(bad * field.dt)

    key = field.stream.key128()
    sigma = field.sigma
    total = 0.0
    wsq = 0.0
    cell_lo, cell_hi = field.cell_lo, field.cell_hi
    for k in range(n_steps):
        x = pos[k]
        lo = np.maximum(np.floor((x - r_supp) / field.h).astype(np.int64), cell_lo)
        hi = np.minimum(np.ceil((x + r_supp) / field.h).astype(np.int64), cell_hi)
        axes = [np.arange(a, b) for a, b in zip(lo, hi)]
        centers = np.stack(np.meshgrid(*[field.h * (ax + 0.5) for ax in axes],
                                       indexing="ij"), axis=-1)
        phi = m.value(centers - x)
        packed = pack_cells(np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1),
                            field.d)
        slab_index = (field.n_steps - 1 - k) if time_reversed else k
        vals = hashed_normals(key, np.uint64(slab_index), packed)
        total += float((phi * vals).sum()) * sigma
        wsq += float((phi * phi).sum())
    return WienerIntegralSample(total, n_steps * field.dt, w, m,
                                sigma * sigma * wsq)


# ---------------------------------------------------------------------------
# sparse path-tube coupling
# ---------------------------------------------------------------------------

class PathFieldCoupling:
    """Precomputed (cell, weight) tubes for a bundle of paths sharing one
    explicit disorder.

    Storage is the regular (n_steps, n_paths, n_off) layout: every path point
    carries the same ball of candidate cells (weights vanish outside the
    mollifier support), so reductions are reshapes and the cell words are a
    broadcast sum of a base word and precomputed offset words.

    Supports single content-addressed draws (consistent with ``NoiseField``
    of the same stream), per-step partial integrals for nested horizons, and
    bulk resampling of fresh disorder for fixed paths.
    """

    def __init__(self, paths: list[BrownianPath], m: Mollifier, h: float,
                 step_chunk: int = 64):
        if not paths:
            raise ValueError("need at least one path")
        d = paths[0].d
        if any(not paths[0].same_grid(p) for p in paths):
            raise ValueError("paths must share grid")
        if d != m.d:
            raise ValueError("mollifier dimension mismatch")
        self.m = m
        self.h = float(h)
        self.d = d
        self.n_paths = len(paths)
        self.n_steps = paths[0].n_steps
        self.dt = paths[0].dt
        self.sigma = math.sqrt(self.h**d * self.dt)

        r_supp = m.effective_radius()
        offs = _ball_offsets(r_supp / self.h + 0.51, d)
        self.n_off = len(offs)
        P = np.stack([p.positions[:-1] for p in paths], axis=1)  # (n, N, d)
        if np.any(np.abs(P) / self.h + r_supp / self.h + 2 >= _PACK_OFF):
            raise ValueError("paths range beyond packable cell indices")

        # packing is linear in coordinates (bit fields cannot carry), so the
        # word of (base + offset) is base word + offset word
        off_word = offs[:, 0].copy()
        for ax in range(1, d):
            off_word = (off_word << np.int64(_PACK_BITS)) + offs[:, ax]
        offs_h = offs.astype(float) * self.h

        n_pairs = self.n_steps * self.n_paths * self.n_off
        self.weights = np.empty(n_pairs)
        self.packed = np.empty(n_pairs, dtype=np.int64)
        row = self.n_paths * self.n_off
        for k0 in range(0, self.n_steps, step_chunk):
            pos = P[k0:k0 + step_chunk]                      # (nk, N, d)
            nk = pos.shape[0]
            base = np.floor(pos / self.h).astype(np.int64)
            frac = pos - (base + 0.5) * self.h               # (nk, N, d)
            dist2 = np.zeros((nk, self.n_paths, self.n_off))
            for ax in range(d):
                tmp = offs_h[None, None, :, ax] - frac[:, :, ax, None]
                np.multiply(tmp, tmp, out=tmp)
                dist2 += tmp
            phi = m.radial_sq(dist2)                         # (nk, N, n_off)
            bw = pack_cells(base, d, checked=False)          # (nk, N)
            words = bw[:, :, None] + off_word[None, None, :]
            sl = slice(k0 * row, (k0 + nk) * row)
            self.weights[sl] = phi.reshape(-1)
            self.packed[sl] = words.reshape(-1)
        self._steps_u64 = None
        self._packed_u64 = None
        self._uniq = None
        self._bulk_A = None

    @property
    def n_pairs(self) -> int:
        return len(self.packed)

    def _pair_steps(self) -> np.ndarray:
        if self._steps_u64 is None:
            self._steps_u64 = np.repeat(
                np.arange(self.n_steps, dtype=np.uint64),
                self.n_paths * self.n_off)
        return self._steps_u64

    def _pair_cells(self) -> np.ndarray:
        if self._packed_u64 is None:
            self._packed_u64 = self.packed.astype(np.uint64)
        return self._packed_u64

    def step_path_weight_sq(self) -> np.ndarray:
        """sigma^2 * sum phi^2 per (step, path): per-step conditional variances."""
        w2 = (self.weights * self.weights).reshape(
            self.n_steps, self.n_paths, self.n_off)
        return self.sigma**2 * w2.sum(axis=2)

    def variances(self) -> np.ndarray:
        """Conditional variance of each path integral given the paths."""
        return self.step_path_weight_sq().sum(axis=0)

    def _weighted_values(self, field_stream: SeedStream) -> np.ndarray:
        vals = hashed_normals(field_stream.key128(), self._pair_steps(),
                              self._pair_cells())
        vals *= self.weights
        return vals.reshape(self.n_steps, self.n_paths, self.n_off)

    def step_integrals(self, field_stream: SeedStream) -> np.ndarray:
        """Per-(step, path) contributions under one shared disorder draw.

        Consistent with ``NoiseField(stream=field_stream)``: identical
        addresses yield identical increments.
        """
        return self.sigma * self._weighted_values(field_stream).sum(axis=2)

    def integrals(self, field_stream: SeedStream) -> np.ndarray:
        """Path integral vector M under one shared disorder draw."""
        return self.sigma * self._weighted_values(field_stream).sum(axis=(0, 2))

    def _unique(self):
        if self._uniq is None:
            inverse = np.empty(self.n_pairs, dtype=np.int64)
            counts = 0
            row = self.n_paths * self.n_off
            for k in range(self.n_steps):
                sl = slice(k * row, (k + 1) * row)
                u, inv = np.unique(self.packed[sl], return_inverse=True)
                inverse[sl] = counts + inv
                counts += len(u)
            self._uniq = (counts, inverse)
        return self._uniq

    def _bulk_matrix(self) -> np.ndarray:
        """Dense (n_unique_cells, n_paths) aggregated weight matrix."""
        n_uniq, inverse = self._unique()
        inv = inverse.reshape(self.n_steps, self.n_paths, self.n_off)
        w = self.weights.reshape(self.n_steps, self.n_paths, self.n_off)
        A = np.empty((n_uniq, self.n_paths))
        for i in range(self.n_paths):
            A[:, i] = np.bincount(inv[:, i, :].reshape(-1),
                                  weights=w[:, i, :].reshape(-1),
                                  minlength=n_uniq)
        return A

    def sample_bulk(self, stream: SeedStream, reps: int,
                    chunk_bytes: int = 1 << 28) -> np.ndarray:
        """(n_paths, reps) integrals under fresh i.i.d. disorder draws.

        Bulk Philox draws per unique (step, cell) followed by a dense GEMM;
        faster than hashing when many replicas share the paths.  Draws are
        local to this coupling.
        """
        if self._bulk_A is None:
            self._bulk_A = self._bulk_matrix()
        A = self._bulk_A
        n_uniq = A.shape[0]
        rng = stream.generator()
        out = np.empty((self.n_paths, reps))
        step = max(1, int(chunk_bytes // (8 * n_uniq)))
        for lo in range(0, reps, step):
            m = min(step, reps - lo)
            xi = rng.standard_normal((n_uniq, m))
            out[:, lo:lo + m] = self.sigma * (A.T @ xi)
        return out


# ---------------------------------------------------------------------------
# implicit replica-Gaussian route
# ---------------------------------------------------------------------------

JITTER_BASE_REL = 1e-12
JITTER_DOUBLINGS = 6


def overlap_cholesky(sigma: np.ndarray, scale: float) -> np.ndarray:
    """Lower Cholesky factor of an overlap matrix with the jitter ladder.

    ``scale`` is V(0)*T, the natural size of the diagonal; jitter starts at
    1e-12 * scale and doubles at most 6 times (total <= 1e-10 * scale).
    """
    try:
        return cholesky(sigma, lower=True)
    except np.linalg.LinAlgError:
        pass
    jitter = JITTER_BASE_REL * scale
    for _ in range(JITTER_DOUBLINGS):
        logger.info("overlap factorization: adding jitter %.3e", jitter)
        try:
            return cholesky(sigma + jitter * np.eye(len(sigma)), lower=True)
        except np.linalg.LinAlgError:
            jitter *= 2.0
    raise FactorizationError(float(np.linalg.eigvalsh(sigma).min()))


def replica_gaussian_sample(paths: list[BrownianPath], k: CovarianceKernel,
                            stream: SeedStream, reps: int = 1) -> np.ndarray:
    """Joint sample of the path integrals (M_i) ~ N(0, overlap matrix).

    Returns shape (n_paths,) for reps == 1, else (n_paths, reps).
    """
    if not paths:
        raise ValueError("need at least one path")
    sigma = overlap_matrix(paths, k)
    scale = k.at_zero() * paths[0].T
    L = overlap_cholesky(sigma, scale)
    rng = stream.generator()
    xi = rng.standard_normal((len(paths), reps))
    out = L @ xi
    return out[:, 0] if reps == 1 else out
