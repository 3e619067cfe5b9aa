"""Conformally flat asymptotically flat initial data and its geometric quantities.

Everything in this package describes a 3-metric of the form g = W^4 * delta
on (a subset of) R^3, where W > 0 is the conformal factor and delta the flat
metric.  This module holds the concrete representations of W (analytic point
mass sums, radial profiles built from closed-form terms, sampled 3D grids),
closed surfaces, and the pointwise / asymptotic quantities derived from W:
scalar curvature, energy density, ADM mass (both from the asymptotic
expansion and from the flux integral over large coordinate spheres), areas
and mean curvatures of surfaces.

Conventions:
  * the far-field normalization is a = lim W = 1 for all constructed inputs
    (inputs with a != 1 are rescaled on construction; evolved factors produced
    by the flow keep their natural a = e^{-t} and are never renormalized);
  * superharmonic means the flat-chart Laplacian of W is <= 0, which is the
    curvature sign condition R >= 0 for these metrics.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "ExpansionError",
    "ExpansionCoefficients",
    "PointMassSum",
    "RadialProfile",
    "GridField",
    "Sphere",
    "VoxelRegion",
    "CurvatureEstimate",
    "make_schwarzschild",
    "make_brill_lindquist",
    "make_flat",
    "asymptotic_expansion",
    "adm_mass_expansion",
    "adm_mass_surface_integral",
    "scalar_curvature",
    "energy_density",
    "area_of_surface",
    "mean_curvature",
    "sphere_quadrature",
    "save_conformal_factor",
    "load_conformal_factor",
]

SCHWARZSCHILD_QUOTIENT = 1.0 / math.sqrt(16.0 * math.pi)


class ExpansionError(RuntimeError):
    """Asymptotic fit of a conformal factor was rejected (non-decaying field)."""


# ---------------------------------------------------------------------------
# radial closed-form terms
# ---------------------------------------------------------------------------
#
# A RadialProfile is a superposition 1 + sum(term).  Each term knows its value,
# radial derivative and flat Laplacian in closed form, plus its contribution
# to the far-field coefficients (a, b) of W = a + b/r + O(1/r^2).


@dataclass(frozen=True)
class PunctureTerm:
    """b/r: the potential of a point source at the origin."""

    strength: float

    def value(self, r):
        return self.strength / r

    def deriv(self, r):
        return -self.strength / r**2

    def flat_laplacian(self, r):
        return np.zeros_like(np.asarray(r, dtype=float))

    far_a = 0.0

    @property
    def far_b(self):
        return self.strength

    support_radius = 0.0

    def to_json(self):
        return {"kind": "puncture", "strength": self.strength}


@dataclass(frozen=True)
class ShellTerm:
    """mass/max(r, s): potential of a thin uniform shell of radius s."""

    mass: float
    radius: float

    def value(self, r):
        return self.mass / np.maximum(r, self.radius)

    def deriv(self, r):
        r = np.asarray(r, dtype=float)
        return np.where(r > self.radius, -self.mass / r**2, 0.0)

    def flat_laplacian(self, r):
        # surface-delta of negative sign lives exactly at r = s; zero elsewhere
        return np.zeros_like(np.asarray(r, dtype=float))

    far_a = 0.0

    @property
    def far_b(self):
        return self.mass

    @property
    def support_radius(self):
        return self.radius

    def to_json(self):
        return {"kind": "shell", "mass": self.mass, "radius": self.radius}


@dataclass(frozen=True)
class BallTerm:
    """Potential of a uniform ball: smooth, strictly superharmonic inside."""

    mass: float
    radius: float

    def value(self, r):
        r = np.asarray(r, dtype=float)
        s = self.radius
        return np.where(r >= s, self.mass / np.maximum(r, 1e-300),
                        self.mass * (3 * s**2 - r**2) / (2 * s**3))

    def deriv(self, r):
        r = np.asarray(r, dtype=float)
        s = self.radius
        return np.where(r >= s, -self.mass / np.maximum(r, 1e-300)**2,
                        -self.mass * r / s**3)

    def flat_laplacian(self, r):
        r = np.asarray(r, dtype=float)
        return np.where(r < self.radius, -3.0 * self.mass / self.radius**3, 0.0)

    far_a = 0.0

    @property
    def far_b(self):
        return self.mass

    @property
    def support_radius(self):
        return self.radius

    def to_json(self):
        return {"kind": "ball", "mass": self.mass, "radius": self.radius}


@dataclass(frozen=True)
class MonopoleStepTerm:
    """c*(1 - r0/r) for r >= r0, zero inside: one accepted flow increment.

    Flat-harmonic on both sides of r0; the flow only ever evaluates the
    evolved factor outside the surface where all of its steps are active.
    """

    coeff: float
    cutoff: float

    def value(self, r):
        r = np.asarray(r, dtype=float)
        return np.where(r >= self.cutoff,
                        self.coeff * (1.0 - self.cutoff / np.maximum(r, 1e-300)),
                        0.0)

    def deriv(self, r):
        r = np.asarray(r, dtype=float)
        return np.where(r >= self.cutoff,
                        self.coeff * self.cutoff / np.maximum(r, 1e-300)**2,
                        0.0)

    def flat_laplacian(self, r):
        return np.zeros_like(np.asarray(r, dtype=float))

    @property
    def far_a(self):
        return self.coeff

    @property
    def far_b(self):
        return -self.coeff * self.cutoff

    @property
    def support_radius(self):
        return self.cutoff

    def to_json(self):
        return {"kind": "step", "coeff": self.coeff, "cutoff": self.cutoff}


@dataclass(frozen=True)
class AccumulatedStepsTerm:
    """Many monopole step increments evaluated through prefix sums.

    Equivalent to a sum of MonopoleStepTerm(c_i, r_i) with nondecreasing
    cutoffs, as produced by a flow run; evaluation is O(log n) per point.
    The individual kinks are O(dt) small, so the term reports itself as
    smooth with a single support radius at the outermost cutoff.
    """

    cutoffs: np.ndarray
    coeffs: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.cutoffs, dtype=float)
        c = np.asarray(self.coeffs, dtype=float)
        if r.ndim != 1 or r.shape != c.shape:
            raise ValueError("cutoffs and coeffs must be equal-length 1D arrays")
        if np.any(np.diff(r) < 0):
            raise ValueError("cutoffs must be nondecreasing")
        object.__setattr__(self, "cutoffs", r)
        object.__setattr__(self, "coeffs", c)
        object.__setattr__(self, "_s1", np.concatenate([[0.0], np.cumsum(c)]))
        object.__setattr__(self, "_s2", np.concatenate([[0.0], np.cumsum(c * r)]))

    def value(self, r):
        r = np.asarray(r, dtype=float)
        k = np.searchsorted(self.cutoffs, r, side="right")
        return self._s1[k] - self._s2[k] / np.maximum(r, 1e-300)

    def deriv(self, r):
        r = np.asarray(r, dtype=float)
        k = np.searchsorted(self.cutoffs, r, side="right")
        return self._s2[k] / np.maximum(r, 1e-300)**2

    def flat_laplacian(self, r):
        return np.zeros_like(np.asarray(r, dtype=float))

    @property
    def far_a(self):
        return float(self._s1[-1])

    @property
    def far_b(self):
        return -float(self._s2[-1])

    @property
    def support_radius(self):
        return float(self.cutoffs[-1]) if len(self.cutoffs) else 0.0

    def to_json(self):
        return {"kind": "steps", "cutoffs": self.cutoffs.tolist(),
                "coeffs": self.coeffs.tolist()}


@dataclass(frozen=True)
class SampledTerm:
    """Cubic-spline interpolant of sampled W(r) - far_constant values.

    Beyond the last sample the term continues as b/r with b matched at the
    endpoint, so sampled profiles remain asymptotically flat.
    """

    radii: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        from scipy.interpolate import CubicSpline

        r = np.asarray(self.radii, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if r.ndim != 1 or np.any(np.diff(r) <= 0):
            raise ValueError("sample radii must be strictly increasing")
        object.__setattr__(self, "radii", r)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "_spline", CubicSpline(r, v))
        object.__setattr__(self, "_tail_b", v[-1] * r[-1])

    def value(self, r):
        r = np.asarray(r, dtype=float)
        inside = r <= self.radii[-1]
        out = np.where(inside, self._spline(np.minimum(r, self.radii[-1])),
                       self._tail_b / np.maximum(r, 1e-300))
        return out

    def deriv(self, r):
        r = np.asarray(r, dtype=float)
        inside = r <= self.radii[-1]
        return np.where(inside, self._spline(np.minimum(r, self.radii[-1]), 1),
                        -self._tail_b / np.maximum(r, 1e-300)**2)

    def flat_laplacian(self, r):
        r = np.asarray(r, dtype=float)
        inside = r <= self.radii[-1]
        rr = np.minimum(r, self.radii[-1])
        lap = self._spline(rr, 2) + 2.0 / np.maximum(rr, 1e-300) * self._spline(rr, 1)
        return np.where(inside, lap, 0.0)

    far_a = 0.0

    @property
    def far_b(self):
        return self._tail_b

    @property
    def support_radius(self):
        return float(self.radii[-1])

    def to_json(self):
        return {"kind": "samples", "radii": self.radii.tolist(),
                "values": self.values.tolist()}


_TERM_KINDS = {
    "puncture": lambda d: PunctureTerm(d["strength"]),
    "shell": lambda d: ShellTerm(d["mass"], d["radius"]),
    "ball": lambda d: BallTerm(d["mass"], d["radius"]),
    "step": lambda d: MonopoleStepTerm(d["coeff"], d["cutoff"]),
    "steps": lambda d: AccumulatedStepsTerm(np.array(d["cutoffs"]), np.array(d["coeffs"])),
    "samples": lambda d: SampledTerm(np.array(d["radii"]), np.array(d["values"])),
}


# ---------------------------------------------------------------------------
# conformal factors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PointMassSum:
    """W(x) = constant + sum_i strength_i / |x - center_i|.

    Flat-harmonic away from the punctures, hence scalar-flat there; this is
    the Schwarzschild / Brill-Lindquist family.
    """

    constant: float
    punctures: tuple  # of (ndarray shape (3,), float)

    KIND = "point_mass_sum"

    def __post_init__(self):
        pts = tuple((np.asarray(c, dtype=float).reshape(3), float(b))
                    for c, b in self.punctures)
        object.__setattr__(self, "punctures", pts)

    # -- pointwise -----------------------------------------------------------
    def value(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        scalar = pts.ndim == 1
        pts = np.atleast_2d(pts)
        out = np.full(pts.shape[0], self.constant)
        for center, b in self.punctures:
            out += b / np.linalg.norm(pts - center, axis=-1)
        return out[0] if scalar else out

    def gradient(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        scalar = pts.ndim == 1
        pts = np.atleast_2d(pts)
        out = np.zeros_like(pts)
        for center, b in self.punctures:
            d = pts - center
            out += -b * d / np.linalg.norm(d, axis=-1, keepdims=True) ** 3
        return out[0] if scalar else out

    # -- structure -----------------------------------------------------------
    @property
    def total_strength(self) -> float:
        return sum(b for _, b in self.punctures)

    @property
    def far_coefficients(self) -> tuple[float, float]:
        return self.constant, self.total_strength

    def is_radial(self) -> bool:
        return len(self.punctures) == 0 or (
            len(self.punctures) == 1
            and np.allclose(self.punctures[0][0], 0.0))

    def as_radial_profile(self) -> "RadialProfile":
        if not self.is_radial():
            raise ValueError("point mass sum is not spherically symmetric")
        terms = ()
        if self.punctures:
            terms = (PunctureTerm(self.punctures[0][1]),)
        return RadialProfile(constant=self.constant, terms=terms)

    def min_puncture_distance(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if not self.punctures:
            return np.full(pts.shape[0], np.inf)
        return np.min([np.linalg.norm(pts - c, axis=-1)
                       for c, _ in self.punctures], axis=0)

    def to_json_dict(self) -> dict:
        return {"kind": self.KIND, "constant": self.constant,
                "punctures": [{"center": list(map(float, c)), "strength": b}
                              for c, b in self.punctures]}

    @classmethod
    def from_json_dict(cls, doc: dict) -> "PointMassSum":
        return cls(doc["constant"],
                   tuple((np.array(p["center"]), p["strength"])
                         for p in doc["punctures"]))


@dataclass(frozen=True)
class RadialProfile:
    """Spherically symmetric W(r) = constant + sum of closed-form terms."""

    constant: float = 1.0
    terms: tuple = ()

    KIND = "radial_profile"

    # -- evaluation ----------------------------------------------------------
    def radial_value(self, r):
        r = np.asarray(r, dtype=float)
        out = np.full_like(r, self.constant, dtype=float)
        for t in self.terms:
            out = out + t.value(r)
        return out

    def radial_deriv(self, r):
        r = np.asarray(r, dtype=float)
        out = np.zeros_like(r, dtype=float)
        for t in self.terms:
            out = out + t.deriv(r)
        return out

    def radial_flat_laplacian(self, r):
        r = np.asarray(r, dtype=float)
        out = np.zeros_like(r, dtype=float)
        for t in self.terms:
            out = out + t.flat_laplacian(r)
        return out

    def value(self, points):
        pts = np.asarray(points, dtype=float)
        scalar = pts.ndim == 1
        r = np.linalg.norm(np.atleast_2d(pts), axis=-1)
        out = self.radial_value(r)
        return out[0] if scalar else out

    def gradient(self, points):
        pts = np.asarray(points, dtype=float)
        scalar = pts.ndim == 1
        pts = np.atleast_2d(pts)
        r = np.linalg.norm(pts, axis=-1, keepdims=True)
        out = self.radial_deriv(r[..., 0])[..., None] * pts / np.maximum(r, 1e-300)
        return out[0] if scalar else out

    # -- structure -----------------------------------------------------------
    @property
    def far_coefficients(self) -> tuple[float, float]:
        a = self.constant + sum(t.far_a for t in self.terms)
        b = sum(t.far_b for t in self.terms)
        return float(a), float(b)

    @property
    def support_radius(self) -> float:
        """Radius beyond which the profile is exactly a + b/r."""
        return max([t.support_radius for t in self.terms], default=0.0)

    @property
    def breakpoints(self) -> np.ndarray:
        """Radii where the profile is only piecewise smooth."""
        bp = sorted({t.support_radius for t in self.terms} - {0.0})
        return np.array(bp)

    def has_puncture(self) -> bool:
        return any(isinstance(t, PunctureTerm) and t.strength > 0 for t in self.terms)

    def is_radial(self) -> bool:
        return True

    def as_radial_profile(self) -> "RadialProfile":
        return self

    def with_increment(self, coeff: float, cutoff: float) -> "RadialProfile":
        return replace(self, terms=self.terms + (MonopoleStepTerm(coeff, cutoff),))

    @classmethod
    def from_samples(cls, radii, values) -> "RadialProfile":
        """Build a profile from sampled W(r); rescaled so that a = 1."""
        radii = np.asarray(radii, dtype=float)
        values = np.asarray(values, dtype=float)
        # estimate (a, b) from the two outermost samples: W ~ a + b/r
        r1, r2 = radii[-2], radii[-1]
        w1, w2 = values[-2], values[-1]
        b_est = (w1 - w2) / (1.0 / r1 - 1.0 / r2)
        a_est = w2 - b_est / r2
        if a_est <= 0:
            raise ValueError("sampled profile has nonpositive far-field value")
        vals = values / a_est
        return cls(constant=1.0,
                   terms=(SampledTerm(radii, vals - 1.0),))

    def to_json_dict(self) -> dict:
        return {"kind": self.KIND, "constant": self.constant,
                "terms": [t.to_json() for t in self.terms]}

    @classmethod
    def from_json_dict(cls, doc: dict) -> "RadialProfile":
        return cls(doc["constant"],
                   tuple(_TERM_KINDS[t["kind"]](t) for t in doc["terms"]))


@dataclass(frozen=True)
class GridField:
    """W sampled on a uniform x-fastest lattice over the cube [-L, L]^3."""

    box_halfwidth: float
    values: np.ndarray            # shape (N, N, N), indexed [ix, iy, iz]
    punctures: tuple = ()
    excision_spacings: float = 2.0  # excision ball radius in units of h

    KIND = "grid"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 3 or len(set(v.shape)) != 1:
            raise ValueError("grid values must be a cubic 3D array")
        object.__setattr__(self, "values", v)
        pts = tuple((np.asarray(c, dtype=float).reshape(3), float(b))
                    for c, b in self.punctures)
        object.__setattr__(self, "punctures", pts)

    @property
    def resolution(self) -> int:
        return self.values.shape[0]

    @property
    def spacing(self) -> float:
        return 2.0 * self.box_halfwidth / (self.resolution - 1)

    @property
    def axis(self) -> np.ndarray:
        return np.linspace(-self.box_halfwidth, self.box_halfwidth, self.resolution)

    def lattice_radii(self) -> np.ndarray:
        ax = self.axis
        X, Y, Z = np.meshgrid(ax, ax, ax, indexing="ij")
        return np.sqrt(X**2 + Y**2 + Z**2)

    @property
    def excision_radius(self) -> float:
        return self.excision_spacings * self.spacing

    def excision_mask(self) -> np.ndarray:
        """Voxels inside the excision balls around punctures."""
        mask = np.zeros(self.values.shape, dtype=bool)
        if not self.punctures:
            return mask
        ax = self.axis
        X, Y, Z = np.meshgrid(ax, ax, ax, indexing="ij")
        for center, _ in self.punctures:
            r2 = (X - center[0])**2 + (Y - center[1])**2 + (Z - center[2])**2
            mask |= r2 <= self.excision_radius**2
        return mask

    def value(self, points):
        from .gridops import trilinear

        pts = np.asarray(points, dtype=float)
        scalar = pts.ndim == 1
        out = trilinear(self.values, self.box_halfwidth, np.atleast_2d(pts))
        return out[0] if scalar else out

    def gradient(self, points):
        # centered differences of the interpolant; adequate for diagnostics
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        h = self.spacing
        out = np.zeros_like(pts)
        for k in range(3):
            dp = np.zeros(3)
            dp[k] = 0.5 * h
            out[:, k] = (self.value(pts + dp) - self.value(pts - dp)) / h
        return out[0] if np.asarray(points).ndim == 1 else out

    @property
    def far_coefficients(self) -> tuple[float, float]:
        exp = asymptotic_expansion(self)
        return exp.a, exp.b

    def is_radial(self) -> bool:
        return False

    def flat_laplacian_lattice(self) -> np.ndarray:
        from .gridops import laplacian7

        return laplacian7(self.values, self.spacing)

    @classmethod
    def from_factor(cls, factor, box_halfwidth: float, resolution: int,
                    excision_spacings: float = 2.0) -> "GridField":
        """Sample an analytic conformal factor onto a lattice."""
        ax = np.linspace(-box_halfwidth, box_halfwidth, resolution)
        X, Y, Z = np.meshgrid(ax, ax, ax, indexing="ij")
        pts = np.stack([X, Y, Z], axis=-1).reshape(-1, 3)
        punctures = getattr(factor, "punctures", ())
        h = 2.0 * box_halfwidth / (resolution - 1)
        # clamp distances so sampling the 1/r singularity stays finite inside
        # the excision balls; those voxels are never used by the solvers
        vals = np.full(pts.shape[0], getattr(factor, "constant", 1.0))
        if isinstance(factor, PointMassSum):
            for center, b in punctures:
                d = np.linalg.norm(pts - center, axis=-1)
                vals += b / np.maximum(d, 0.5 * excision_spacings * h)
        else:
            vals = factor.value(pts)
        return cls(box_halfwidth, vals.reshape(resolution, resolution, resolution),
                   punctures=punctures, excision_spacings=excision_spacings)

    def to_json_dict(self, array_file: str) -> dict:
        return {"kind": self.KIND, "box_halfwidth": self.box_halfwidth,
                "resolution": self.resolution,
                "excision_spacings": self.excision_spacings,
                "punctures": [{"center": list(map(float, c)), "strength": b}
                              for c, b in self.punctures],
                "array_file": array_file, "dtype": "<f8", "order": "x-fastest"}


def save_conformal_factor(factor, path) -> None:
    """Write a conformal factor to JSON (plus .f64 array file for grids)."""
    path = Path(path)
    if isinstance(factor, GridField):
        array_file = path.with_suffix(".f64").name
        doc = factor.to_json_dict(array_file)
        factor.values.astype("<f8").ravel(order="F").tofile(path.parent / array_file)
    else:
        doc = factor.to_json_dict()
    path.write_text(json.dumps(doc, indent=2))


def load_conformal_factor(path):
    path = Path(path)
    doc = json.loads(path.read_text())
    kind = doc.get("kind")
    if kind == PointMassSum.KIND:
        return PointMassSum.from_json_dict(doc)
    if kind == RadialProfile.KIND:
        return RadialProfile.from_json_dict(doc)
    if kind == GridField.KIND:
        n = doc["resolution"]
        raw = np.fromfile(path.parent / doc["array_file"], dtype="<f8")
        if raw.size != n**3:
            raise ValueError("grid array file has wrong size")
        values = raw.reshape((n, n, n), order="F")
        return GridField(doc["box_halfwidth"], values,
                         punctures=tuple((np.array(p["center"]), p["strength"])
                                         for p in doc["punctures"]),
                         excision_spacings=doc.get("excision_spacings", 2.0))
    raise ValueError(f"unknown conformal factor kind: {kind!r}")


# ---------------------------------------------------------------------------
# surfaces
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Sphere:
    """Coordinate sphere; the workhorse surface of the radial backend."""

    radius: float
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(3))
        if self.radius <= 0:
            raise ValueError("sphere radius must be positive")

    def is_centered(self) -> bool:
        return bool(np.allclose(self.center, 0.0))


@dataclass(frozen=True)
class VoxelRegion:
    """Closed region given by a voxel indicator on a GridField lattice."""

    mask: np.ndarray
    box_halfwidth: float

    def __post_init__(self):
        m = np.asarray(self.mask, dtype=bool)
        if m.ndim != 3 or len(set(m.shape)) != 1:
            raise ValueError("voxel mask must be a cubic 3D array")
        object.__setattr__(self, "mask", m)

    @property
    def resolution(self) -> int:
        return self.mask.shape[0]

    @property
    def spacing(self) -> float:
        return 2.0 * self.box_halfwidth / (self.resolution - 1)

    def volume_voxels(self) -> int:
        return int(self.mask.sum())

    def component_count(self) -> int:
        from scipy import ndimage

        _, n = ndimage.label(self.mask)
        return int(n)

    def touches_boundary(self) -> bool:
        m = self.mask
        return bool(m[0].any() or m[-1].any() or m[:, 0].any() or m[:, -1].any()
                    or m[:, :, 0].any() or m[:, :, -1].any())


# ---------------------------------------------------------------------------
# constructors
# ---------------------------------------------------------------------------


def make_schwarzschild(mass: float) -> PointMassSum:
    """Conformal factor 1 + m/(2|x|): the spatial Schwarzschild slice."""
    if mass <= 0:
        raise ValueError("Schwarzschild mass must be positive")
    return PointMassSum(1.0, ((np.zeros(3), mass / 2.0),))


def make_brill_lindquist(punctures: Iterable[tuple]) -> PointMassSum:
    """Multi-puncture factor 1 + sum_i b_i/|x - x_i| (a = 1 normalization)."""
    pts = [(np.asarray(c, dtype=float).reshape(3), float(b)) for c, b in punctures]
    for _, b in pts:
        if b <= 0:
            raise ValueError("puncture strengths must be positive")
    for i in range(len(pts)):
        for j in range(i + 1, len(pts)):
            if np.allclose(pts[i][0], pts[j][0]):
                raise ValueError("puncture centers must be distinct")
    return PointMassSum(1.0, tuple(pts))


def make_flat() -> PointMassSum:
    return PointMassSum(1.0, ())


# ---------------------------------------------------------------------------
# asymptotics and mass
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExpansionCoefficients:
    """Far-field fit W ~ a + b/r with its (scaled) worst-shell deviation."""

    a: float
    b: float
    residual: float
    accepted: bool


def _default_shells(factor) -> np.ndarray:
    if isinstance(factor, GridField):
        return factor.box_halfwidth * np.array([0.45, 0.55, 0.67, 0.8])
    if isinstance(factor, RadialProfile):
        r0 = 8.0 * max(1.0, factor.support_radius)
    else:
        r0 = 8.0 * max([1.0] + [np.linalg.norm(c) + b for c, b in factor.punctures])
    return r0 * np.array([1.0, 2.0, 4.0, 8.0])


def sphere_quadrature(n_theta: int = 32, n_phi: int = 64, method: str = "gauss"):
    """Quadrature nodes/weights on the unit sphere (weights sum to 1).

    "gauss" uses Gauss-Legendre nodes in cos(theta) (spectrally accurate for
    smooth integrands, used by the fitting paths); "midpoint" is plain uniform
    angular sampling (the flux-integral convention).
    """
    phi = (np.arange(n_phi) + 0.5) * 2.0 * math.pi / n_phi
    if method == "gauss":
        x, wt = np.polynomial.legendre.leggauss(n_theta)
        sin_t = np.sqrt(1.0 - x**2)
        cos_t = x
    elif method == "midpoint":
        theta = (np.arange(n_theta) + 0.5) * math.pi / n_theta
        sin_t = np.sin(theta)
        cos_t = np.cos(theta)
        wt = sin_t
    else:
        raise ValueError(f"unknown quadrature method {method!r}")
    S, P = np.meshgrid(sin_t, phi, indexing="ij")
    C, _ = np.meshgrid(cos_t, phi, indexing="ij")
    nodes = np.stack([S * np.cos(P), S * np.sin(P), C], axis=-1).reshape(-1, 3)
    w = np.repeat(wt, n_phi)
    return nodes, w / w.sum()


def asymptotic_expansion(factor, shell_radii: Sequence[float] | None = None,
                         rel_threshold: float = 1e-2) -> ExpansionCoefficients:
    """Fit shell means of W to a + b/r + q/r^2 by least squares.

    Fitting the 1/r^2 term alongside (a, b) eliminates the leading
    contamination of b (plain two-parameter fits alias the quadratic decay
    into the mass term at any practical shell radius).  The residual is
    max over shells of |mean(W) - fit| * r^2, i.e. the size of the decay the
    model cannot represent; the fit is accepted when the residual is below
    rel_threshold * max(|a|, |b|) * r_max.
    """
    if shell_radii is None:
        radii = _default_shells(factor)
    else:
        radii = np.asarray(shell_radii, dtype=float)
        if radii.ndim != 1 or len(radii) < 2 or np.any(np.diff(radii) <= 0):
            raise ValueError("shell radii must be increasing, at least two")
    if isinstance(factor, GridField) and radii[-1] > factor.box_halfwidth:
        raise ValueError("sampling shell outside grid domain")

    if getattr(factor, "is_radial", lambda: False)() and not isinstance(factor, GridField):
        prof = factor.as_radial_profile() if not isinstance(factor, RadialProfile) else factor
        means = prof.radial_value(radii)
    else:
        nodes, w = sphere_quadrature()
        means = np.array([np.sum(factor.value(r * nodes) * w) for r in radii])

    cols = [np.ones_like(radii), 1.0 / radii]
    if len(radii) >= 3:
        cols.append(1.0 / radii**2)
    A = np.stack(cols, axis=1)
    coef, *_ = np.linalg.lstsq(A, means, rcond=None)
    a, b = float(coef[0]), float(coef[1])
    dev = np.abs(means - A @ coef) * radii**2
    residual = float(dev.max())
    scale = max(abs(a), abs(b)) * radii[-1]
    accepted = residual <= rel_threshold * scale if scale > 0 else residual < 1e-12
    return ExpansionCoefficients(a, b, residual, accepted)


def adm_mass_expansion(factor, shell_radii: Sequence[float] | None = None) -> float:
    """Total mass 2ab read from the far-field expansion of W."""
    exp = asymptotic_expansion(factor, shell_radii)
    if not exp.accepted:
        raise ExpansionError(
            f"asymptotic fit rejected (residual {exp.residual:.3e}); "
            "field does not decay like a + b/r")
    return 2.0 * exp.a * exp.b


def adm_mass_surface_integral(factor, radius: float,
                              n_theta: int = 48, n_phi: int = 96,
                              fd_step: float | None = None) -> float:
    """Flux-integral mass over the coordinate sphere of the given radius.

    Uses centered finite differences of g_ij = W^4 delta_ij and uniform
    angular quadrature; converges to 2ab like 1/radius.
    """
    if radius <= 0:
        raise ValueError("sphere radius must be positive")
    if isinstance(factor, PointMassSum) and factor.punctures:
        if radius <= max(np.linalg.norm(c) for c, _ in factor.punctures):
            raise ValueError("integration sphere must enclose all punctures")
    if isinstance(factor, GridField) and radius >= factor.box_halfwidth:
        raise ValueError("integration sphere outside grid domain")
    h = fd_step if fd_step is not None else 1e-5 * radius
    nodes, w = sphere_quadrature(n_theta, n_phi, method="midpoint")
    pts = radius * nodes

    # dg[k] holds d g_ij / d x_k as (npts, 3, 3); g_ij = W^4 delta_ij
    wvals = {}
    for k in range(3):
        dp = np.zeros(3)
        dp[k] = h
        wvals[k] = (np.asarray(factor.value(pts + dp), dtype=float),
                    np.asarray(factor.value(pts - dp), dtype=float))
    total = np.zeros(len(pts))
    for j in range(3):
        nu_j = nodes[:, j]
        # sum_i dg_ij/dx_i * nu_j : only i = j survives the delta
        gp, gm = wvals[j]
        dgj = (gp**4 - gm**4) / (2 * h)
        total += dgj * nu_j
        # - sum_i dg_ii/dx_j * nu_j : trace term, 3 W^4
        gp, gm = wvals[j]
        dtrace = 3.0 * (gp**4 - gm**4) / (2 * h)
        total -= dtrace * nu_j
    flux = np.sum(total * w) * 4.0 * math.pi * radius**2
    return flux / (16.0 * math.pi)


# ---------------------------------------------------------------------------
# curvature and areas
# ---------------------------------------------------------------------------


def scalar_curvature(factor, point) -> float:
    """R = -8 W^-5 (flat Laplacian of W) at a point away from punctures."""
    x = np.asarray(point, dtype=float).reshape(3)
    if isinstance(factor, PointMassSum):
        if factor.punctures and float(factor.min_puncture_distance(x[None])[0]) < 1e-12:
            raise ValueError("scalar curvature is undefined at a puncture")
        return 0.0
    if isinstance(factor, RadialProfile):
        r = float(np.linalg.norm(x))
        if r < 1e-12 and factor.has_puncture():
            raise ValueError("scalar curvature is undefined at a puncture")
        w = float(factor.radial_value(r))
        lap = float(factor.radial_flat_laplacian(r))
        return -8.0 * w**-5 * lap
    if isinstance(factor, GridField):
        if factor.punctures:
            d = min(np.linalg.norm(x - c) for c, _ in factor.punctures)
            if d <= factor.excision_radius:
                raise ValueError("scalar curvature evaluated inside excision")
        ax = factor.axis
        idx = tuple(int(np.clip(round((xi + factor.box_halfwidth) / factor.spacing),
                                1, factor.resolution - 2)) for xi in x)
        lap = _lattice_laplacian_at(factor.values, idx, factor.spacing)
        w = factor.values[idx]
        return -8.0 * w**-5 * lap
    raise TypeError(f"unsupported conformal factor type {type(factor)!r}")


def _lattice_laplacian_at(values: np.ndarray, idx: tuple, h: float) -> float:
    i, j, k = idx
    c = values[i, j, k]
    s = (values[i + 1, j, k] + values[i - 1, j, k]
         + values[i, j + 1, k] + values[i, j - 1, k]
         + values[i, j, k + 1] + values[i, j, k - 1])
    return (s - 6.0 * c) / h**2


def energy_density(factor, point) -> float:
    """Local energy density R / 16 pi."""
    return scalar_curvature(factor, point) / (16.0 * math.pi)


def area_of_surface(factor, surface) -> float:
    """Area of a closed surface in the metric W^4 delta.

    Spheres use exact radial evaluation when W is radial and angular
    quadrature of W^4 otherwise; voxel regions use the calibrated
    26-neighborhood cut measure shared with the min-cut solver.
    """
    if isinstance(surface, Sphere):
        r = surface.radius
        if getattr(factor, "is_radial", lambda: False)() and surface.is_centered() \
                and not isinstance(factor, GridField):
            prof = factor if isinstance(factor, RadialProfile) else factor.as_radial_profile()
            return 4.0 * math.pi * r**2 * float(prof.radial_value(r))**4
        nodes, w = sphere_quadrature()
        vals = np.asarray(factor.value(surface.center + r * nodes), dtype=float)
        return 4.0 * math.pi * r**2 * float(np.sum(vals**4 * w))
    if isinstance(surface, VoxelRegion):
        from .gridops import voxel_boundary_area

        if surface.volume_voxels() == 0:
            raise ValueError("degenerate surface: empty voxel region")
        if isinstance(factor, GridField):
            w4 = factor.values**4
        else:
            ax = np.linspace(-surface.box_halfwidth, surface.box_halfwidth,
                             surface.resolution)
            X, Y, Z = np.meshgrid(ax, ax, ax, indexing="ij")
            pts = np.stack([X, Y, Z], axis=-1).reshape(-1, 3)
            w4 = (np.asarray(factor.value(pts), dtype=float)**4).reshape(surface.mask.shape)
        return voxel_boundary_area(surface.mask, w4, surface.spacing)
    raise TypeError(f"unsupported surface type {type(surface)!r}")


@dataclass(frozen=True)
class CurvatureEstimate:
    value: float
    uncertainty: float = 0.0


def mean_curvature(factor, surface, point) -> CurvatureEstimate:
    """Signed mean curvature w.r.t. the outward normal at a surface point.

    Conformal transformation of the flat-chart quantities:
        H = W^-2 (H_flat + 4 dW/dnu / W).
    """
    p = np.asarray(point, dtype=float).reshape(3)
    if isinstance(surface, Sphere):
        d = p - surface.center
        r = np.linalg.norm(d)
        if not math.isclose(r, surface.radius, rel_tol=1e-6):
            raise ValueError("point does not lie on the sphere")
        nu = d / r
        w = float(factor.value(p))
        grad = np.asarray(factor.gradient(p), dtype=float)
        h_flat = 2.0 / surface.radius
        return CurvatureEstimate(w**-2 * (h_flat + 4.0 * float(grad @ nu) / w))
    if isinstance(surface, VoxelRegion):
        from .gridops import voxel_mean_curvature

        value, uncertainty = voxel_mean_curvature(surface, factor, p)
        return CurvatureEstimate(value, uncertainty)
    raise TypeError(f"unsupported surface type {type(surface)!r}")
