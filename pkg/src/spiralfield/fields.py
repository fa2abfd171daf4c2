"""Hamiltonian vector fields on the sphere induced by real spherical
harmonics through the bivector sin(theta) dtheta ^ dphi.

For a scalar function H the induced field has coordinate components

    v_theta = -sin(theta) * dH/dphi
    v_phi   =  sin(theta) * dH/dtheta

in the (d/dtheta, d/dphi) basis.  This coordinate form is pinned against a
symbolic bracket oracle in the test suite.  All functions are pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .geometry import HarmonicIndex, SphericalPoint, SpiralCurve, harmonic_gradient, spiral_sample


@dataclass(frozen=True)
class HamiltonianField:
    """Field induced by the real harmonic with index `idx` as Hamiltonian."""

    idx: HarmonicIndex


@dataclass(frozen=True)
class TangentSample:
    """One field evaluation: base point plus coordinate-basis components."""

    point: SphericalPoint
    v_theta: float
    v_phi: float


@dataclass(frozen=True)
class FieldSequence:
    """Ordered field samples along the spiral; the unit the model trains on."""

    field_idx: HarmonicIndex
    samples: tuple[TangentSample, ...]

    def __len__(self) -> int:
        return len(self.samples)

    def components(self):
        """Component pairs as a (num_points, 2) float list [[v_theta, v_phi], ...]."""
        return [[s.v_theta, s.v_phi] for s in self.samples]


def components_from_gradient(p: SphericalPoint, dtheta: float, dphi: float) -> tuple[float, float]:
    """Apply the bivector to a function differential given as (dH/dtheta, dH/dphi)."""
    st = math.sin(p.theta)
    return -st * dphi, st * dtheta


def hamiltonian_components(field: HamiltonianField, p: SphericalPoint) -> TangentSample:
    """Evaluate the field at an interior point (theta strictly inside (0, pi))."""
    dtheta, dphi = harmonic_gradient(field.idx, p)
    v_theta, v_phi = components_from_gradient(p, dtheta, dphi)
    return TangentSample(point=p, v_theta=v_theta, v_phi=v_phi)


def evaluate_on_spiral(field: HamiltonianField, curve: SpiralCurve) -> FieldSequence:
    """Sample the field at the spiral points, in spiral order."""
    samples = tuple(hamiltonian_components(field, p) for p in spiral_sample(curve))
    return FieldSequence(field_idx=field.idx, samples=samples)


def energy_drift(field: HamiltonianField, p: SphericalPoint) -> float:
    """dH(X_H) at a point; zero up to round-off by bracket antisymmetry.

    Test probe: a nonzero value beyond float noise means the bivector
    application lost its antisymmetry.
    """
    dtheta, dphi = harmonic_gradient(field.idx, p)
    v_theta, v_phi = components_from_gradient(p, dtheta, dphi)
    return v_theta * dtheta + v_phi * dphi


def ambient_components(sample: TangentSample) -> tuple[float, float, float]:
    """Push the coordinate components forward to a 3-vector in R^3.

    Visualization export only; the pipeline itself stays in coordinates.
    """
    th, ph = sample.point.theta, sample.point.phi
    ct, st = math.cos(th), math.sin(th)
    cp, sp_ = math.cos(ph), math.sin(ph)
    # d/dtheta = (ct*cp, ct*sp, -st),  d/dphi = (-st*sp, st*cp, 0)
    return (
        sample.v_theta * ct * cp - sample.v_phi * st * sp_,
        sample.v_theta * ct * sp_ + sample.v_phi * st * cp,
        -sample.v_theta * st,
    )
