"""Mollifier profiles and their self-convolution covariance kernels.

Two profile kinds are supported:

* ``compact-bump`` -- the normalized bump c_d * exp(-1/(1-|x/s|^2)) on |x|<s.
  Its convolution has no closed form, so the kernel is precomputed as a radial
  table (adaptive-order quadrature, cubic interpolation).
* ``gaussian`` -- isotropic normal with standard deviation s per axis.  The
  convolution of two Gaussians is again Gaussian, which gives analytic
  kernels and convenient oracles.

Throughout, ``scale`` plays the role of the smoothing length: the profile at
scale s is s^{-d} times the unit profile evaluated at x/s, so mass is
preserved exactly.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import CubicSpline

BUMP = "compact-bump"
GAUSSIAN = "gaussian"
_KINDS = (BUMP, GAUSSIAN)

TABLE_KNOTS = 4096


def sphere_area(d: int) -> float:
    """Surface area of the unit sphere in R^d."""
    return 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0)


@lru_cache(maxsize=None)
def _bump_norm(d: int) -> float:
    """1 / integral of exp(-1/(1-|x|^2)) over the unit ball in R^d."""
    val, err = quad(
        lambda r: r ** (d - 1) * math.exp(-1.0 / (1.0 - r * r)),
        0.0, 1.0, epsabs=1e-14, epsrel=1e-13,
    )
    total = sphere_area(d) * val
    return 1.0 / total


def _unit_profile(kind: str, d: int, r: np.ndarray) -> np.ndarray:
    """Radial profile of the unit-scale mollifier at radii r >= 0."""
    r = np.asarray(r, dtype=float)
    if kind == GAUSSIAN:
        return (2.0 * math.pi) ** (-d / 2.0) * np.exp(-0.5 * r * r)
    out = np.zeros_like(r)
    inside = r < 1.0
    u = r[inside]
    out[inside] = _bump_norm(d) * np.exp(-1.0 / (1.0 - u * u))
    return out


@dataclass(frozen=True)
class Mollifier:
    """Nonnegative, even, unit-mass smoothing profile at a given scale."""

    kind: str = BUMP
    scale: float = 1.0
    d: int = 3

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown mollifier kind {self.kind!r}")
        if self.scale <= 0:
            raise ValueError("scale must be positive")
        if self.d < 1:
            raise ValueError("dimension must be >= 1")

    @property
    def support_radius(self) -> float:
        """Radius outside which the profile vanishes (inf for gaussian)."""
        return self.scale if self.kind == BUMP else math.inf

    def effective_radius(self, tail: float = 4.0) -> float:
        """Truncation radius for grid-based use; exact support for the bump."""
        return self.scale if self.kind == BUMP else tail * self.scale

    def radial(self, r) -> np.ndarray:
        r = np.abs(np.asarray(r, dtype=float))
        return self.scale ** (-self.d) * _unit_profile(self.kind, self.d, r / self.scale)

    def radial_sq(self, r2) -> np.ndarray:
        """Profile as a function of squared radius (avoids the sqrt in bulk)."""
        u2 = np.asarray(r2, dtype=float) / (self.scale * self.scale)
        amp = self.scale ** (-self.d)
        if self.kind == GAUSSIAN:
            return amp * (2.0 * math.pi) ** (-self.d / 2.0) * np.exp(-0.5 * u2)
        out = np.zeros_like(u2)
        inside = u2 < 1.0
        out[inside] = amp * _bump_norm(self.d) * np.exp(-1.0 / (1.0 - u2[inside]))
        return out

    def value(self, x) -> np.ndarray:
        """phi_scale(x) for a point or batch of points with last axis d."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.d:
            raise ValueError(f"point dimension {x.shape[-1]} != mollifier d={self.d}")
        return self.radial(np.linalg.norm(x, axis=-1))

    def with_scale(self, scale: float) -> "Mollifier":
        return Mollifier(self.kind, scale, self.d)


def phi_value(m: Mollifier, x) -> np.ndarray:
    return m.value(x)


# ---------------------------------------------------------------------------
# radial convolution quadrature for the tabulated kernel
# ---------------------------------------------------------------------------

def _convolve_radial(kind: str, d: int, eps: float, delta: float,
                     radii: np.ndarray, order: int) -> np.ndarray:
    """(phi_eps * phi_delta)(r) for radial profiles via Gauss-Legendre.

    d == 3 uses the exact angular reduction (the polar integral of the second
    profile has a closed form through the cumulative of u*q(u)), leaving one
    smooth 1-d integral.  d == 1 is a direct line integral; other d use a
    spherical (s, theta) double quadrature.
    """
    p = lambda s: eps ** (-d) * _unit_profile(kind, d, s / eps)
    q = lambda u: delta ** (-d) * _unit_profile(kind, d, u / delta)
    s_hi = eps if kind == BUMP else 8.0 * eps
    q_hi = delta if kind == BUMP else 8.0 * delta

    xs, ws = np.polynomial.legendre.leggauss(order)
    s = 0.5 * s_hi * (xs + 1.0)
    w_s = 0.5 * s_hi * ws

    if d == 1:
        py = p(s)
        out = np.empty_like(radii)
        for i, r in enumerate(radii):
            out[i] = np.sum(w_s * py * (q(np.abs(r - s)) + q(np.abs(r + s))))
        return out

    if d == 3:
        fine = np.linspace(0.0, q_hi, 8193)
        cum = CubicSpline(fine, fine * q(fine)).antiderivative()
        total = float(cum(q_hi))

        def Q(u):
            return np.where(u >= q_hi, total, cum(np.minimum(u, q_hi)))

        out = np.empty_like(radii)
        sp = w_s * s * p(s)
        r = radii[:, None]
        with np.errstate(invalid="ignore", divide="ignore"):
            vals = (Q(r + s[None, :]) - Q(np.abs(r - s[None, :]))) @ sp
            vals = 2.0 * math.pi * vals / radii
        if radii[0] == 0.0:
            vals[0] = 4.0 * math.pi * np.sum(w_s * s * s * p(s) * q(s))
        return vals

    th = 0.5 * math.pi * (xs + 1.0)
    w_th = 0.5 * math.pi * ws
    area = sphere_area(d - 1)  # unit sphere in R^{d-1}, the azimuthal factor
    integ_s = w_s * s ** (d - 1) * p(s)
    sin_pow = np.sin(th) ** (d - 2)
    cos_th = np.cos(th)

    out = np.empty_like(radii)
    chunk = max(1, int(4e6 // (order * order)))
    for lo in range(0, len(radii), chunk):
        r = radii[lo:lo + chunk, None, None]
        dist = np.sqrt(np.maximum(
            r * r + (s**2)[None, :, None] - 2.0 * r * s[None, :, None] * cos_th[None, None, :],
            0.0,
        ))
        inner = np.einsum("t,rst->rs", w_th * sin_pow, q(dist))
        out[lo:lo + chunk] = area * inner @ integ_s
    return out


_TABLE_CACHE: dict[tuple, tuple[np.ndarray, np.ndarray, CubicSpline]] = {}


def _kernel_table(kind: str, d: int, eps: float, delta: float):
    key = (kind, d, round(float(eps), 12), round(float(delta), 12))
    if key in _TABLE_CACHE:
        return _TABLE_CACHE[key]
    r_max = (eps + delta) if kind == BUMP else 8.0 * math.hypot(eps, delta)
    probe = np.linspace(0.0, r_max, 257)
    order, max_order = 48, 1536 if d == 3 else 384
    prev = _convolve_radial(kind, d, eps, delta, probe, order)
    while 2 * order <= max_order:
        nxt = _convolve_radial(kind, d, eps, delta, probe, 2 * order)
        order *= 2
        done = np.max(np.abs(nxt - prev)) <= 1e-10 * np.max(np.abs(nxt))
        prev = nxt
        if done:
            break
    radii = np.linspace(0.0, r_max, TABLE_KNOTS)
    vals = _convolve_radial(kind, d, eps, delta, radii, order)
    vals = np.maximum(vals, 0.0)
    spline = CubicSpline(radii, vals, bc_type="clamped")
    _TABLE_CACHE[key] = (radii, vals, spline)
    return _TABLE_CACHE[key]


@dataclass(frozen=True)
class CovarianceKernel:
    """V_{eps,delta} = phi_eps * phi_delta for a common profile kind.

    Evaluation is analytic for the gaussian kind and via a cubic radial table
    for the compact bump.  Even in x and symmetric in (eps, delta) by
    construction.
    """

    kind: str
    d: int
    eps: float
    delta: float

    @classmethod
    def from_mollifier(cls, m: Mollifier, delta: float | None = None) -> "CovarianceKernel":
        return cls(m.kind, m.d, m.scale, m.scale if delta is None else delta)

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.eps <= 0 or self.delta <= 0:
            raise ValueError("kernel scales must be positive")

    @property
    def evaluation(self) -> str:
        return "analytic" if self.kind == GAUSSIAN else "tabulated-convolution"

    @property
    def support_radius(self) -> float:
        return self.eps + self.delta if self.kind == BUMP else math.inf

    @property
    def mollifier(self) -> Mollifier:
        """Base mollifier at scale eps."""
        return Mollifier(self.kind, self.eps, self.d)

    def _scales2(self) -> float:
        return self.eps**2 + self.delta**2

    def value_radial(self, r) -> np.ndarray:
        r = np.abs(np.asarray(r, dtype=float))
        if self.kind == GAUSSIAN:
            s2 = self._scales2()
            return (2.0 * math.pi * s2) ** (-self.d / 2.0) * np.exp(-0.5 * r * r / s2)
        radii, _, spline = _kernel_table(self.kind, self.d, *sorted((self.eps, self.delta)))
        out = np.zeros_like(r, dtype=float)
        inside = r < radii[-1]
        out[inside] = np.maximum(spline(r[inside]), 0.0)
        return out

    def value(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.d:
            raise ValueError(f"point dimension {x.shape[-1]} != kernel d={self.d}")
        return self.value_radial(np.linalg.norm(x, axis=-1))

    def at_zero(self) -> float:
        return float(self.value_radial(0.0))

    def integral(self) -> float:
        """Total mass of the kernel by radial quadrature (should be 1)."""
        area = sphere_area(self.d)
        if self.kind == GAUSSIAN:
            f = lambda r: area * r ** (self.d - 1) * float(self.value_radial(r))
            val, _ = quad(f, 0.0, 12.0 * math.sqrt(self._scales2()), limit=200)
            return val
        radii, _, spline = _kernel_table(self.kind, self.d, *sorted((self.eps, self.delta)))
        f = lambda r: area * r ** (self.d - 1) * max(float(spline(r)), 0.0)
        val, _ = quad(f, 0.0, radii[-1], limit=200)
        return val

    def rescaled(self, factor: float) -> "CovarianceKernel":
        """Kernel with both scales multiplied by ``factor``."""
        return CovarianceKernel(self.kind, self.d, self.eps * factor, self.delta * factor)

    def export_table_csv(self, path) -> None:
        """Write (radius, value) rows covering the kernel's radial range."""
        if self.kind == GAUSSIAN:
            radii = np.linspace(0.0, 8.0 * math.hypot(self.eps, self.delta), TABLE_KNOTS)
            vals = self.value_radial(radii)
        else:
            radii, vals, _ = _kernel_table(self.kind, self.d, *sorted((self.eps, self.delta)))
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["radius", "value"])
            for r, v in zip(radii, vals):
                writer.writerow([f"{r:.12g}", f"{v:.12g}"])


def kernel_value(k: CovarianceKernel, x) -> np.ndarray:
    return k.value(x)


def kernel_integral(k: CovarianceKernel) -> float:
    return k.integral()
