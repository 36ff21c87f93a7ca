"""Partition-function estimators for the mollified continuum polymer.

The central object is the normalized partition function at disorder strength
beta and smoothing scale eps, represented on the rescaled side where the
horizon is t = eps^{-2}: an average over Brownian replicas of

    exp(beta * M_i - beta^2/2 * var(M_i | path)),

with (M_i) the noise integrals along the replicas under one shared disorder.
Two sampling methods are provided and must agree in law:

* ``replica-gaussian`` -- draw (M_i) ~ N(0, overlap matrix) directly;
* ``explicit-field``  -- evaluate the integrals against an explicit
  discretized noise field (supports nested horizons).

The compensator uses each method's own conditional variance, so estimates
have disorder-mean exactly one at any resolution.  All replica averaging is
done in log space with a max shift; for very large beta consume
``log_value``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dfield

import numpy as np

from .mollifier import Mollifier, CovarianceKernel
from .paths import BrownianPath, sample_path
from .field import PathFieldCoupling, replica_gaussian_sample
from .rng import SeedStream
from .stats import logmeanexp

REPLICA_GAUSSIAN = "replica-gaussian"
EXPLICIT_FIELD = "explicit-field"
_METHODS = (REPLICA_GAUSSIAN, EXPLICIT_FIELD)


def default_dt(scale: float) -> float:
    """Path time step resolving the kernel: dt <= scale^2 / 10."""
    return scale * scale / 10.0


def default_h(scale: float) -> float:
    """Field spacing resolving the mollifier: h = scale / 8."""
    return scale / 8.0


@dataclass(frozen=True)
class PolymerParams:
    """Horizon-side parameters; t is primary and eps = 1/sqrt(t) derived."""

    beta: float
    t: float
    mollifier: Mollifier = Mollifier()
    dt: float | None = None
    h: float | None = None

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if self.mollifier.d < 3:
            raise ValueError("polymer estimators require dimension >= 3")
        if self.t <= 0:
            raise ValueError("horizon t must be positive")
        if self.dt is None:
            object.__setattr__(self, "dt", default_dt(self.mollifier.scale))
        if self.h is None:
            object.__setattr__(self, "h", default_h(self.mollifier.scale))
        n = round(self.t / self.dt)
        if n < 1 or abs(n * self.dt - self.t) > 1e-9 * self.t:
            raise ValueError("t must be a positive integer multiple of dt")

    @property
    def d(self) -> int:
        return self.mollifier.d

    @property
    def eps(self) -> float:
        return 1.0 / math.sqrt(self.t)

    @property
    def kernel(self) -> CovarianceKernel:
        return CovarianceKernel.from_mollifier(self.mollifier)

    def with_beta(self, beta: float) -> "PolymerParams":
        return PolymerParams(beta, self.t, self.mollifier, self.dt, self.h)

    def with_t(self, t: float) -> "PolymerParams":
        return PolymerParams(self.beta, t, self.mollifier, self.dt, self.h)

    def describe(self) -> dict:
        return {
            "beta": self.beta, "t": self.t, "d": self.d,
            "mollifier_kind": self.mollifier.kind,
            "scale": self.mollifier.scale, "dt": self.dt, "h": self.h,
        }


@dataclass(frozen=True)
class PartitionEstimate:
    """N-replica Monte Carlo estimate of the partition function."""

    value: float
    log_value: float
    n_replicas: int
    stderr: float
    method: str
    stream: SeedStream
    params: PolymerParams
    log_weights: np.ndarray = dfield(repr=False, default=None)

    def pair_product_mean(self) -> float:
        """Mean of Lambda_i * Lambda_j over ordered pairs i != j.

        Unbiased for the second moment of the partition function (the
        diagonal terms carry an exp(beta^2 v) bias and are excluded).
        """
        lw = self.log_weights
        n = len(lw)
        if n < 2:
            raise ValueError("need at least two replicas")
        m = float(np.max(lw))
        a = np.exp(lw - m)
        s, q = a.sum(), (a * a).sum()
        return float((s * s - q) / (n * (n - 1)) * math.exp(2 * m))


def _sample_replicas(p: PolymerParams, N: int, stream: SeedStream) -> list[BrownianPath]:
    return [sample_path(p.d, 0.0, p.t, p.dt, stream.child("path", i))
            for i in range(N)]


def _finish(logw: np.ndarray, method: str, stream: SeedStream,
            p: PolymerParams) -> PartitionEstimate:
    logz = float(logmeanexp(logw))
    m = float(np.max(logw))
    shifted = np.exp(logw - m)
    n = len(logw)
    se_shift = shifted.std(ddof=1) / math.sqrt(n) if n > 1 else 0.0
    with np.errstate(over="ignore"):
        value = math.exp(logz) if logz < 709 else math.inf
        stderr = float(se_shift * math.exp(m)) if m < 700 else math.inf
    return PartitionEstimate(value, logz, n, stderr, method, stream, p, logw)


def partition_estimate(p: PolymerParams, N: int, method: str,
                       stream: SeedStream) -> PartitionEstimate:
    """Estimate the partition function with N replicas under one disorder.

    ``beta == 0`` returns exactly 1.  Replica-gaussian draws the integral
    vector jointly from its overlap covariance; explicit-field evaluates a
    discretized noise shared by all replicas.
    """
    if method not in _METHODS:
        raise ValueError(f"unknown method {method!r}")
    if N < 2:
        raise ValueError("need at least two replicas")
    paths = _sample_replicas(p, N, stream)
    if method == REPLICA_GAUSSIAN:
        M = replica_gaussian_sample(paths, p.kernel, stream.child("noise"))
        v = np.full(N, p.kernel.at_zero() * p.t)
    else:
        coup = PathFieldCoupling(paths, p.mollifier, p.h)
        M = coup.integrals(stream.child("noise"))
        v = coup.variances()
    logw = p.beta * M - 0.5 * p.beta**2 * v
    return _finish(logw, method, stream, p)


@dataclass(frozen=True)
class MartingaleTrajectory:
    """Partition values along a dyadic horizon grid with nested noise."""

    t_grid: np.ndarray
    values: np.ndarray
    log_values: np.ndarray
    n_replicas: int
    params: PolymerParams
    stream: SeedStream
    nested_noise: bool = True


def _check_dyadic(t_grid, dt: float) -> np.ndarray:
    ts = np.asarray(sorted(float(t) for t in t_grid))
    if len(ts) < 1:
        raise ValueError("empty horizon grid")
    for a, b in zip(ts[:-1], ts[1:]):
        if abs(b - 2 * a) > 1e-9 * b:
            raise ValueError("horizon grid must be dyadic: each t doubles")
    for t in ts:
        if abs(round(t / dt) * dt - t) > 1e-9 * t:
            raise ValueError("every horizon must be a multiple of dt")
    return ts


def martingale_trajectory(p: PolymerParams, t_grid, N: int,
                          stream: SeedStream) -> MartingaleTrajectory:
    """Partition estimates at dyadic horizons sharing paths and noise.

    Paths are sampled once to the largest horizon; shorter horizons are
    literal prefixes, and the per-step noise contributions are cumulative
    sums, so the family is a martingale in the horizon filtration.
    Explicit-field only.
    """
    ts = _check_dyadic(t_grid, p.dt)
    t_max = float(ts[-1])
    paths = _sample_replicas(p.with_t(t_max), N, stream)
    coup = PathFieldCoupling(paths, p.mollifier, p.h)
    y = coup.step_integrals(stream.child("noise"))      # (n_steps, N)
    vsq = coup.step_path_weight_sq()
    cum_y = np.cumsum(y, axis=0)
    cum_v = np.cumsum(vsq, axis=0)
    logz = np.empty(len(ts))
    for j, t in enumerate(ts):
        k = int(round(t / p.dt))
        logw = p.beta * cum_y[k - 1] - 0.5 * p.beta**2 * cum_v[k - 1]
        logz[j] = logmeanexp(logw)
    with np.errstate(over="ignore"):
        vals = np.exp(logz)
    return MartingaleTrajectory(ts, vals, logz, N, p, stream)


def size_biased_partition(p: PolymerParams, N: int, stream: SeedStream,
                          method: str = REPLICA_GAUSSIAN) -> PartitionEstimate:
    """Partition estimate under the spine-tilted (size-biased) disorder law.

    Samples a spine path W, then averages exp(beta^2 * overlap(W, W'_i))
    times the ordinary replica weights of independent partners W'_i.  As
    N grows this reproduces the law of the partition function under the
    size-biased measure; its disorder mean is the second moment.
    """
    if method not in _METHODS:
        raise ValueError(f"unknown method {method!r}")
    if N < 1:
        raise ValueError("need at least one partner replica")
    spine = sample_path(p.d, 0.0, p.t, p.dt, stream.child("spine"))
    partners = [sample_path(p.d, 0.0, p.t, p.dt, stream.child("partner", i))
                for i in range(N)]
    k = p.kernel
    diffs = np.stack([spine.positions - q.positions for q in partners])
    K = np.trapz(k.value(diffs), dx=p.dt, axis=-1)      # (N,)
    if method == REPLICA_GAUSSIAN:
        M = replica_gaussian_sample(partners, k, stream.child("noise"))
        v = np.full(N, k.at_zero() * p.t)
    else:
        coup = PathFieldCoupling(partners, p.mollifier, p.h)
        M = coup.integrals(stream.child("noise"))
        v = coup.variances()
    logw = p.beta**2 * K + p.beta * M - 0.5 * p.beta**2 * v
    est = _finish(logw, f"size-biased/{method}", stream, p)
    return est


@dataclass(frozen=True)
class InterpolationResult:
    """Distribution samples of the two sides of the disorder-mixing identity.

    ``direct`` holds partition samples at coupling rho*beta under disorder B;
    ``mixed`` holds inner averages over B' of partition samples at beta under
    the mixed disorder rho B + sqrt(1-rho^2) B'.  The two empirical laws
    agree up to inner-average noise.
    """

    rho: float
    direct: np.ndarray
    mixed: np.ndarray
    params: PolymerParams

    def first_moments(self) -> tuple[tuple[float, float], tuple[float, float]]:
        out = []
        for arr in (self.direct, self.mixed):
            out.append((float(arr.mean()),
                        float(arr.std(ddof=1) / math.sqrt(len(arr)))))
        return tuple(out)


def interpolation_check(p: PolymerParams, rho: float, outer: int, inner: int,
                        stream: SeedStream, N: int = 8) -> InterpolationResult:
    """Sample both sides of the Gaussian disorder-mixing identity.

    Within each outer repetition the replicas and the base disorder B are
    shared by both arms, so the identity holds pathwise as the number of
    inner B' draws grows.  Explicit-field method.
    """
    if not 0.0 < rho < 1.0:
        raise ValueError("rho must lie strictly between 0 and 1")
    if outer < 2 or inner < 1:
        raise ValueError("need outer >= 2 and inner >= 1 repetitions")
    beta, rb = p.beta, rho * p.beta
    mix = math.sqrt(max(1.0 - rho * rho, 0.0))
    direct = np.empty(outer)
    mixed = np.empty(outer)
    for r in range(outer):
        srep = stream.child("outer", r)
        paths = _sample_replicas(p, N, srep)
        coup = PathFieldCoupling(paths, p.mollifier, p.h)
        v = coup.variances()
        MB = coup.integrals(srep.child("fieldB"))
        direct[r] = math.exp(logmeanexp(rb * MB - 0.5 * rb**2 * v))
        Mp = coup.sample_bulk(srep.child("fieldBprime"), inner)  # (N, inner)
        logw = (beta * (rho * MB[:, None] + mix * Mp)
                - 0.5 * beta**2 * v[:, None])
        log_inner = logmeanexp(logw, axis=0)                     # (inner,)
        mixed[r] = math.exp(logmeanexp(log_inner))
    return InterpolationResult(rho, direct, mixed, p)
