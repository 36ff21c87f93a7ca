"""Brownian path sampling, overlaps, proximity stopping times, exit times.

All samplers are pure functions of their ``SeedStream``: resampling with the
same stream reproduces the path bit for bit, and a path resampled with a
longer horizon extends the shorter one (the generator fills increments in
time order).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .mollifier import CovarianceKernel
from .rng import SeedStream
from .stats import RateFit, fit_log_linear


def _num_steps(T: float, dt: float) -> int:
    n = int(round(T / dt))
    if n < 1 or abs(n * dt - T) > 1e-9 * max(T, 1.0):
        raise ValueError(f"horizon T={T} is not a positive integer multiple of dt={dt}")
    return n


@dataclass(frozen=True)
class BrownianPath:
    """Discretized d-dimensional Wiener trajectory on a uniform grid."""

    d: int
    T: float
    dt: float
    positions: np.ndarray  # (n_steps+1, d)
    start: np.ndarray      # (d,)
    stream: SeedStream

    @property
    def n_steps(self) -> int:
        return self.positions.shape[0] - 1

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)

    def same_grid(self, other: "BrownianPath") -> bool:
        return (
            self.d == other.d
            and self.n_steps == other.n_steps
            and abs(self.dt - other.dt) < 1e-12
        )

    def segment(self, i0: int, i1: int) -> "BrownianPath":
        """Sub-path on grid indices [i0, i1] (its own time origin)."""
        pos = self.positions[i0:i1 + 1]
        return BrownianPath(self.d, (i1 - i0) * self.dt, self.dt, pos,
                            pos[0].copy(), self.stream.child("seg", i0, i1))

    def to_bytes(self) -> bytes:
        """Binary record: dims, dt, T, flat coordinate array (little-endian)."""
        head = struct.pack("<iddq", self.d, self.dt, self.T, self.n_steps + 1)
        return head + self.positions.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes, stream: SeedStream | None = None) -> "BrownianPath":
        d, dt, T, n = struct.unpack("<iddq", blob[:28])
        pos = np.frombuffer(blob[28:], dtype="<f8").reshape(n, d).copy()
        return cls(d, T, dt, pos, pos[0].copy(),
                   stream or SeedStream(0, ("deserialized",)))


def sample_path(d: int, x, T: float, dt: float, stream: SeedStream) -> BrownianPath:
    """Brownian path from x with i.i.d. N(0, dt) coordinate increments."""
    if d < 1:
        raise ValueError("dimension must be >= 1")
    if dt <= 0:
        raise ValueError("dt must be positive")
    n = _num_steps(T, dt)
    x = np.broadcast_to(np.asarray(x, dtype=float), (d,))
    rng = stream.generator()
    incs = rng.standard_normal((n, d)) * math.sqrt(dt)
    pos = np.empty((n + 1, d))
    pos[0] = x
    np.cumsum(incs, axis=0, out=pos[1:])
    pos[1:] += x
    return BrownianPath(d, n * dt, dt, pos, pos[0].copy(), stream)


def extend_path(p: BrownianPath, T2: float) -> BrownianPath:
    """Path on the longer horizon T2 that coincides with p on [0, T]."""
    if T2 < p.T:
        raise ValueError("extension horizon must be >= current horizon")
    return sample_path(p.d, p.start, T2, p.dt, p.stream)


def refine_path(p: BrownianPath, stream: SeedStream) -> BrownianPath:
    """Halve dt by sampling the Brownian-bridge midpoints of each step."""
    n, d = p.n_steps, p.d
    rng = stream.generator()
    mid = 0.5 * (p.positions[:-1] + p.positions[1:])
    mid = mid + rng.standard_normal((n, d)) * math.sqrt(p.dt / 4.0)
    pos = np.empty((2 * n + 1, d))
    pos[0::2] = p.positions
    pos[1::2] = mid
    return BrownianPath(d, p.T, p.dt / 2.0, pos, pos[0].copy(), stream)


def overlap(a: BrownianPath, b: BrownianPath, k: CovarianceKernel) -> float:
    """Trapezoidal approximation of the path-pair overlap
    integral_0^T V(W_s - W'_s) ds.  Lies in [0, V(0) T]."""
    if not a.same_grid(b):
        raise ValueError("paths must share grid (d, dt, steps)")
    vals = k.value(a.positions - b.positions)
    return float(np.trapz(vals, dx=a.dt))


def overlap_matrix(paths: list[BrownianPath], k: CovarianceKernel) -> np.ndarray:
    """Symmetric matrix of pairwise overlaps for paths on a shared grid."""
    P = np.stack([p.positions for p in paths])          # (N, n+1, d)
    diffs = P[:, None, :, :] - P[None, :, :, :]         # (N, N, n+1, d)
    vals = k.value(diffs)
    return np.trapz(vals, dx=paths[0].dt, axis=-1)


EXCEEDED = math.inf


@dataclass(frozen=True)
class StoppingTimeSample:
    """First grid time at which two paths separate by at least ``threshold``.

    ``value`` is +inf when the horizon is exceeded.
    """

    threshold: float
    value: float
    horizon: float

    @property
    def exceeded_horizon(self) -> bool:
        return math.isinf(self.value)


def proximity_time(a: BrownianPath, b: BrownianPath, delta: float) -> StoppingTimeSample:
    """tau_delta = first grid time t>0 with |W_t - W'_t| >= delta."""
    if not a.same_grid(b):
        raise ValueError("paths must share grid (d, dt, steps)")
    if delta <= 0:
        raise ValueError("threshold must be positive")
    sep = np.linalg.norm(a.positions - b.positions, axis=1)
    hits = np.nonzero(sep[1:] >= delta)[0]
    if len(hits) == 0:
        return StoppingTimeSample(delta, EXCEEDED, a.T)
    return StoppingTimeSample(delta, float((hits[0] + 1) * a.dt), a.T)


@dataclass
class SurvivalCurve:
    """Monte Carlo survival probabilities with binomial standard errors."""

    times: np.ndarray
    survival: np.ndarray
    stderr: np.ndarray
    reps: int

    def fit_rate(self, r2_target: float = 0.98) -> RateFit:
        counts = np.full_like(self.times, float(self.reps))
        return fit_log_linear(self.times, self.survival, counts, r2_target)

    def export_csv(self, path) -> None:
        import csv

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "survival", "stderr"])
            for t, s, e in zip(self.times, self.survival, self.stderr):
                w.writerow([f"{t:.12g}", f"{s:.12g}", f"{e:.12g}"])


def exit_time_survival(d: int, r: float, t_grid, reps: int, dt: float,
                       stream: SeedStream, batch: int = 4096) -> SurvivalCurve:
    """P_0(first exit of |W| from the ball of radius r > t) on a time grid."""
    if r <= 0:
        raise ValueError("radius must be positive")
    if reps < 1:
        raise ValueError("reps must be >= 1")
    t_grid = np.asarray(sorted(t_grid), dtype=float)
    n = _num_steps(float(t_grid[-1]), dt)
    grid_idx = np.round(t_grid / dt).astype(int)
    alive_counts = np.zeros(len(t_grid), dtype=np.int64)
    done = 0
    b = 0
    while done < reps:
        m = min(batch, reps - done)
        rng = stream.child("batch", b).generator()
        incs = rng.standard_normal((m, n, d)) * math.sqrt(dt)
        pos = np.cumsum(incs, axis=1)
        outside = np.linalg.norm(pos, axis=2) >= r          # (m, n)
        ever_out = np.maximum.accumulate(outside, axis=1)
        # column j of ever_out corresponds to grid time (j+1)*dt
        for i, gi in enumerate(grid_idx):
            if gi == 0:
                alive_counts[i] += m
            else:
                alive_counts[i] += int((~ever_out[:, gi - 1]).sum())
        done += m
        b += 1
    p = alive_counts / reps
    se = np.sqrt(np.maximum(p * (1 - p), 0.0) / reps)
    return SurvivalCurve(t_grid, p, se, reps)
