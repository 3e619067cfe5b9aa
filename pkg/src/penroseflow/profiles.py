"""Bundled initial-data profiles used by the verification suite and the CLI.

All radial profiles are superharmonic (nonnegative scalar curvature) with a
puncture term, so each contains a minimal sphere.  Shells and balls placed
*outside* the horizon make the mass-derivative checks nondegenerate: data that
is exactly monopole outside its horizon sits in the equality case c = m(0).
"""

from __future__ import annotations

import numpy as np

from .geometry import (BallTerm, PointMassSum, PunctureTerm, RadialProfile,
                       ShellTerm, make_brill_lindquist, make_schwarzschild)

__all__ = [
    "bundled_radial_profiles",
    "two_hole_data",
    "random_superharmonic_profile",
    "random_point_mass_sum",
]


def bundled_radial_profiles() -> dict[str, RadialProfile]:
    """Five superharmonic radial profiles with horizons (verification set)."""
    return {
        "schwarzschild-unit": RadialProfile(terms=(PunctureTerm(0.5),)),
        "shell-far": RadialProfile(terms=(PunctureTerm(0.5), ShellTerm(0.3, 5.0))),
        "ball-dense": RadialProfile(terms=(PunctureTerm(0.4), BallTerm(0.5, 3.0))),
        "double-shell": RadialProfile(terms=(PunctureTerm(0.6), ShellTerm(0.2, 2.0),
                                             ShellTerm(0.2, 8.0))),
        "shell-near": RadialProfile(terms=(PunctureTerm(0.3), ShellTerm(0.5, 1.0))),
    }


def two_hole_data(separation: float = 1.0, strengths=(1.0, 1.0)) -> PointMassSum:
    """Two punctures on the x-axis, symmetric about the origin."""
    d = separation / 2.0
    return make_brill_lindquist([((-d, 0.0, 0.0), strengths[0]),
                                 ((+d, 0.0, 0.0), strengths[1])])


def random_superharmonic_profile(rng: np.random.Generator) -> RadialProfile:
    """Random positive superharmonic radial profile with a puncture."""
    terms = [PunctureTerm(float(rng.uniform(0.1, 1.0)))]
    for _ in range(rng.integers(0, 4)):
        mass = float(rng.uniform(0.05, 0.8))
        radius = float(rng.uniform(0.5, 8.0))
        terms.append(ShellTerm(mass, radius) if rng.random() < 0.5
                     else BallTerm(mass, radius))
    return RadialProfile(terms=tuple(terms))


def random_point_mass_sum(rng: np.random.Generator) -> PointMassSum:
    n = int(rng.integers(1, 5))
    punctures = []
    for _ in range(n):
        center = rng.uniform(-3.0, 3.0, size=3)
        strength = float(rng.uniform(0.1, 2.0))
        punctures.append((center, strength))
    return make_brill_lindquist(punctures)
