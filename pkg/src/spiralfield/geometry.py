"""Closed-form spherical geometry: associated Legendre polynomials, real
spherical harmonics with analytic angular derivatives, and the pole-to-pole
spiral used to order samples on the unit sphere.

Everything here is a pure function of its inputs and safe to call
concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

TAU = 2.0 * math.pi


@dataclass(frozen=True)
class SphericalPoint:
    """Point on the unit sphere, polar angle theta in [0, pi], azimuth phi.

    phi is reduced modulo 2*pi into [0, 2*pi) on construction.
    """

    theta: float
    phi: float

    def __post_init__(self):
        if not 0.0 <= self.theta <= math.pi:
            raise ValueError(f"theta must lie in [0, pi], got {self.theta}")
        phi = self.phi % TAU
        if phi >= TAU:  # guard against float rounding of the modulo
            phi = 0.0
        object.__setattr__(self, "phi", phi)

    def xyz(self) -> tuple[float, float, float]:
        st = math.sin(self.theta)
        return (st * math.cos(self.phi), st * math.sin(self.phi), math.cos(self.theta))


@dataclass(frozen=True)
class HarmonicIndex:
    """Degree/order pair (l, m) with |m| <= l."""

    l: int
    m: int

    def __post_init__(self):
        if self.l < 0:
            raise ValueError(f"degree l must be non-negative, got {self.l}")
        if abs(self.m) > self.l:
            raise ValueError(f"order m must satisfy |m| <= l, got l={self.l}, m={self.m}")


@dataclass(frozen=True)
class SpiralCurve:
    """Pole-to-pole spiral on the unit sphere.

    c sets the number of turns around the z axis; num_points is the sample
    count; t_margin insets the first and last sample away from the exact
    poles, where the angular derivative identities are singular.
    """

    c: float = 32.0
    num_points: int = 100
    t_margin: float = 1e-2

    def __post_init__(self):
        if self.c <= 0:
            raise ValueError(f"spiral constant c must be positive, got {self.c}")
        if self.num_points < 2:
            raise ValueError(f"num_points must be >= 2, got {self.num_points}")
        if not 0.0 < self.t_margin < math.pi / 2:
            raise ValueError(f"t_margin must lie in (0, pi/2), got {self.t_margin}")


def legendre_pnm(l: int, m: int, x: float) -> float:
    """Associated Legendre polynomial P_l^m(x), Condon-Shortley phase included.

    Upward recurrence in the degree for fixed order, seeded with the closed
    form for P_m^m.  Stable for the degree range used here (l <= 31 sits far
    below any loss-of-precision threshold of the recurrence).
    """
    p, _ = _legendre_pair(l, m, x)
    return p


def _legendre_pair(l: int, m: int, x: float) -> tuple[float, float]:
    """Return (P_l^m(x), P_{l-1}^m(x)) from one recurrence pass.

    P_{l-1}^m is 0 when m > l-1, matching the usual convention.
    """
    if m < 0 or m > l:
        raise ValueError(f"order must satisfy 0 <= m <= l, got l={l}, m={m}")
    if not -1.0 <= x <= 1.0:
        raise ValueError(f"argument must lie in [-1, 1], got {x}")
    # P_m^m = (-1)^m (2m-1)!! (1 - x^2)^(m/2)
    pmm = 1.0
    if m > 0:
        s = math.sqrt((1.0 - x) * (1.0 + x))
        for k in range(1, m + 1):
            pmm *= -(2 * k - 1) * s
    if l == m:
        return pmm, 0.0
    # P_{m+1}^m = x (2m+1) P_m^m
    p_prev, p_curr = pmm, x * (2 * m + 1) * pmm
    for k in range(m + 2, l + 1):
        p_prev, p_curr = p_curr, (x * (2 * k - 1) * p_curr - (k + m - 1) * p_prev) / (k - m)
    return p_curr, p_prev


@lru_cache(maxsize=None)
def _norm(l: int, m: int) -> float:
    """Orthonormalization factor sqrt((2l+1)/(4 pi) * (l-m)!/(l+m)!) for m >= 0."""
    ratio = math.prod(range(l - m + 1, l + m + 1))  # (l+m)! / (l-m)!
    return math.sqrt((2 * l + 1) / (4.0 * math.pi) / ratio)


_SQRT2 = math.sqrt(2.0)


def real_spherical_harmonic(idx: HarmonicIndex, p: SphericalPoint) -> float:
    """Real spherical harmonic Y_l^m at a point.

    Real basis: cos(m phi) branch for m > 0, sin(|m| phi) for m < 0, the
    zonal harmonic for m = 0.  Orthonormal over the sphere.
    """
    l, m = idx.l, idx.m
    am = abs(m)
    plm = legendre_pnm(l, am, math.cos(p.theta))
    if m == 0:
        return _norm(l, 0) * plm
    if m > 0:
        return _SQRT2 * _norm(l, am) * plm * math.cos(am * p.phi)
    return _SQRT2 * _norm(l, am) * plm * math.sin(am * p.phi)


def harmonic_gradient(idx: HarmonicIndex, p: SphericalPoint) -> tuple[float, float]:
    """Analytic (dY/dtheta, dY/dphi) of the real harmonic at an interior point.

    The theta derivative uses
        d/dtheta P_l^m(cos t) = -[(l+m) P_{l-1}^m - l cos(t) P_l^m] / sin(t),
    which is singular at the poles; theta must lie strictly in (0, pi).
    """
    l, m = idx.l, idx.m
    if not 0.0 < p.theta < math.pi:
        raise ValueError(f"gradient is undefined at the poles, got theta={p.theta}")
    am = abs(m)
    ct, st = math.cos(p.theta), math.sin(p.theta)
    plm, plm_prev = _legendre_pair(l, am, ct)
    dp_dtheta = -((l + am) * plm_prev - l * ct * plm) / st
    if m == 0:
        return _norm(l, 0) * dp_dtheta, 0.0
    coeff = _SQRT2 * _norm(l, am)
    if m > 0:
        cos_m, sin_m = math.cos(am * p.phi), math.sin(am * p.phi)
        return coeff * dp_dtheta * cos_m, -am * coeff * plm * sin_m
    cos_m, sin_m = math.cos(am * p.phi), math.sin(am * p.phi)
    return coeff * dp_dtheta * sin_m, am * coeff * plm * cos_m


def spiral_point(curve: SpiralCurve, t: float) -> tuple[float, float, float]:
    """Cartesian point of the spiral at parameter t in [0, pi]."""
    if not 0.0 <= t <= math.pi:
        raise ValueError(f"spiral parameter must lie in [0, pi], got {t}")
    st = math.sin(t)
    return (st * math.cos(curve.c * t), st * math.sin(curve.c * t), math.cos(t))


def spiral_angles(curve: SpiralCurve, t: float) -> SphericalPoint:
    """Spiral point at parameter t as spherical coordinates (theta=t, phi=c*t)."""
    if not 0.0 <= t <= math.pi:
        raise ValueError(f"spiral parameter must lie in [0, pi], got {t}")
    return SphericalPoint(theta=t, phi=curve.c * t)


def spiral_sample(curve: SpiralCurve) -> list[SphericalPoint]:
    """Sample the spiral uniformly in t, endpoints inset by t_margin.

    t_i = t_margin + i * (pi - 2 t_margin) / (num_points - 1).  The returned
    order is the token order used everywhere downstream.  Deterministic:
    identical inputs give bit-identical outputs.
    """
    n = curve.num_points
    span = math.pi - 2.0 * curve.t_margin
    return [spiral_angles(curve, curve.t_margin + i * span / (n - 1)) for i in range(n)]
