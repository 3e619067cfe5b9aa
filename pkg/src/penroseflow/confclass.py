"""Harmonic conformal class algebra in dimension n >= 3.

For metrics related by g2 = u^{4/(n-2)} g1 the Laplacians intertwine through

    lap_{g1}(u phi) = u^{(n+2)/(n-2)} lap_{g2}(phi) + phi lap_{g1}(u),

and the scalar curvature transforms with the conformal Laplacian constant
c_n = 4(n-1)/(n-2).  This module checks the identity discretely, classifies
pairs by the harmonicity / superharmonicity of u (the equivalence relation
and partial order this induces), transports curvature signs, and evaluates
the Penrose quotient along the family g_C = (1 + C/|x|)^4 g in n = 3.

The base metric g1 is always flat in these checks: conformally flat bases
reduce to this case through the same identity, applied once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .geometry import RadialProfile, Sphere
from .horizon import _radial_enclosure, radial_minimal_spheres

__all__ = [
    "ConformalPair",
    "RadialFunction",
    "flat_laplacian_fd",
    "gradient_fd",
    "curved_laplacian",
    "identity_residual",
    "is_harmonic_equivalent",
    "superharmonic_order",
    "scalar_sign_transport",
    "penrose_quotient_family",
    "transported_inverse",
    "product_factor",
]

SIGN_DEADBAND = 1e-8


@dataclass(frozen=True)
class RadialFunction:
    """Radial function of |x| in n dimensions with closed-form derivatives."""

    dimension: int
    f: Callable
    df: Callable
    d2f: Callable

    def value(self, x):
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(np.atleast_2d(x), axis=-1)
        out = self.f(r)
        return out[0] if x.ndim == 1 else out

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        pts = np.atleast_2d(x)
        r = np.linalg.norm(pts, axis=-1, keepdims=True)
        out = self.df(r[..., 0])[..., None] * pts / np.maximum(r, 1e-300)
        return out[0] if x.ndim == 1 else out

    def flat_laplacian(self, x):
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(np.atleast_2d(x), axis=-1)
        out = self.d2f(r) + (self.dimension - 1) / np.maximum(r, 1e-300) * self.df(r)
        return out[0] if x.ndim == 1 else out


@dataclass(frozen=True)
class ConformalPair:
    """Transition u between flat g1 and g2 = u^{4/(n-2)} g1 on R^n."""

    dimension: int
    u: object                     # value(x); optionally gradient / flat_laplacian

    def __post_init__(self):
        if int(self.dimension) != self.dimension or self.dimension < 3:
            raise ValueError("dimension must be an integer >= 3")

    @property
    def exponent(self) -> float:
        return 4.0 / (self.dimension - 2)

    @property
    def conformal_constant(self) -> float:
        """c_n = 4(n-1)/(n-2)."""
        n = self.dimension
        return 4.0 * (n - 1) / (n - 2)

    @property
    def laplacian_power(self) -> float:
        """(n+2)/(n-2): the weight of the curved Laplacian in the identity."""
        n = self.dimension
        return (n + 2.0) / (n - 2.0)

    def u_value(self, x):
        return _call(self.u, "value", x)

    def u_gradient(self, x, h: float = 1e-4):
        if hasattr(self.u, "gradient"):
            return self.u.gradient(x)
        return gradient_fd(lambda p: _call(self.u, "value", p), x, h)

    def u_laplacian(self, x, h: float = 1e-4):
        if hasattr(self.u, "flat_laplacian"):
            return self.u.flat_laplacian(x)
        return flat_laplacian_fd(lambda p: _call(self.u, "value", p), x, h)


def _call(obj, name, x):
    if hasattr(obj, name):
        return getattr(obj, name)(x)
    return obj(x)


# ---------------------------------------------------------------------------
# finite differences in n dimensions
# ---------------------------------------------------------------------------


def flat_laplacian_fd(f: Callable, x, h: float) -> float:
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    total = -2.0 * n * float(f(x))
    for i in range(n):
        e = np.zeros(n)
        e[i] = h
        total += float(f(x + e)) + float(f(x - e))
    return total / h**2


def gradient_fd(f: Callable, x, h: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    out = np.zeros(n)
    for i in range(n):
        e = np.zeros(n)
        e[i] = h
        out[i] = (float(f(x + e)) - float(f(x - e))) / (2 * h)
    return out


def curved_laplacian(pair: ConformalPair, phi: Callable, x, h: float = 1e-4) -> float:
    """Laplace-Beltrami of phi in g2 = u^{4/(n-2)} * flat, evaluated discretely.

    For g = Omega^2 delta with Omega = u^{2/(n-2)}:
        lap_g phi = Omega^{-2} (lap phi + (n-2) grad(ln Omega) . grad(phi))
                  = u^{-4/(n-2)} (lap phi + 2 grad(ln u) . grad(phi)).
    """
    x = np.asarray(x, dtype=float)
    u = float(pair.u_value(x))
    if u <= 0:
        raise ValueError("transition function must be positive")
    lap_phi = flat_laplacian_fd(phi, x, h)
    grad_phi = gradient_fd(phi, x, h)
    grad_u = np.asarray(pair.u_gradient(x, h), dtype=float)
    return u ** (-pair.exponent) * (lap_phi + 2.0 * float(grad_u @ grad_phi) / u)


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------


def identity_residual(pair: ConformalPair, phi: Callable, x,
                      h: float = 1e-2) -> float:
    """Discrete defect of the conformal Laplacian identity at a point.

    All three terms are evaluated with the same centered differences, so the
    exact identity leaves an O(h^2) truncation residual.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[0] != pair.dimension:
        raise ValueError("point dimension does not match the pair")
    u_fn = lambda p: _call(pair.u, "value", p)
    u = float(u_fn(x))
    if u <= 0 or not np.isfinite(u):
        raise ValueError("transition function not positive at the point")
    uphi = lambda p: np.asarray(u_fn(p)) * np.asarray(phi(p))
    lhs = flat_laplacian_fd(uphi, x, h)
    lap_g2_phi = _curved_laplacian_fd_only(pair, phi, x, h)
    lap_u = flat_laplacian_fd(u_fn, x, h)
    rhs = u ** pair.laplacian_power * lap_g2_phi + float(phi(x)) * lap_u
    return abs(lhs - rhs)


def _curved_laplacian_fd_only(pair: ConformalPair, phi: Callable, x, h: float) -> float:
    # identical to curved_laplacian but forcing FD for u as well, so the
    # residual measures pure truncation error rather than mixed schemes
    u_fn = lambda p: _call(pair.u, "value", p)
    u = float(u_fn(x))
    lap_phi = flat_laplacian_fd(phi, x, h)
    grad_phi = gradient_fd(phi, x, h)
    grad_u = gradient_fd(u_fn, x, h)
    return u ** (-pair.exponent) * (lap_phi + 2.0 * float(grad_u @ grad_phi) / u)


def _default_sample_points(n: int) -> np.ndarray:
    rng = np.random.default_rng(7)
    pts = rng.uniform(-2.0, 2.0, size=(24, n))
    keep = np.linalg.norm(pts, axis=1) > 0.3
    return pts[keep]


def is_harmonic_equivalent(pair: ConformalPair,
                           points: np.ndarray | None = None,
                           tol: float = 1e-6) -> bool:
    """g2 ~ g1: u is flat-harmonic (within tol) and positive at the samples."""
    pts = _default_sample_points(pair.dimension) if points is None else np.atleast_2d(points)
    for x in pts:
        u = float(pair.u_value(x))
        if u <= 0 or not np.isfinite(u):
            return False
        if abs(float(pair.u_laplacian(x))) > tol:
            return False
    return True


def superharmonic_order(pair: ConformalPair,
                        points: np.ndarray | None = None,
                        tol: float = 1e-10):
    """g2 >= g1 in the superharmonic order: -lap(u) >= 0 and u > 0.

    Returns (flag, per-point report) with the sampled Laplacian values.
    """
    pts = _default_sample_points(pair.dimension) if points is None else np.atleast_2d(points)
    report = []
    ok = True
    for x in pts:
        u = float(pair.u_value(x))
        lap = float(pair.u_laplacian(x))
        good = u > 0 and lap <= tol
        ok = ok and good
        report.append({"point": [float(v) for v in x], "u": u,
                       "laplacian": lap, "superharmonic": bool(good)})
    return ok, report


def scalar_sign_transport(pair: ConformalPair, x) -> tuple[int, int]:
    """Signs of R(g1) and R(g2) at a point (g1 flat, so the first is 0).

    R(g2) = u^{-(n+2)/(n-2)} (-c_n lap(u) + R(g1) u); signs use a small
    deadband to classify numerically-zero curvature.
    """
    x = np.asarray(x, dtype=float)
    u = float(pair.u_value(x))
    if u <= 0 or not np.isfinite(u):
        raise ValueError("transition function not positive at the point")
    r1 = 0.0
    r2 = u ** (-pair.laplacian_power) * (-pair.conformal_constant
                                         * float(pair.u_laplacian(x)) + r1 * u)
    return _sign(r1), _sign(r2)


def scalar_curvature_conformal(pair: ConformalPair, x) -> float:
    """R(g2) for flat g1 through the conformal transformation law."""
    x = np.asarray(x, dtype=float)
    u = float(pair.u_value(x))
    return u ** (-pair.laplacian_power) * (-pair.conformal_constant
                                           * float(pair.u_laplacian(x)))


def _sign(v: float) -> int:
    if v > SIGN_DEADBAND:
        return 1
    if v < -SIGN_DEADBAND:
        return -1
    return 0


# ---------------------------------------------------------------------------
# composition helpers (relation laws)
# ---------------------------------------------------------------------------


def transported_inverse(pair: ConformalPair) -> ConformalPair:
    """The transition of the reversed pair: g1 = (1/u)^{4/(n-2)} g2.

    1/u is g2-harmonic whenever u is g1-harmonic (take phi = 1/u in the
    identity), which is the symmetry of the relation.
    """
    u_obj = pair.u

    class _Inverse:
        def value(self, x):
            return 1.0 / np.asarray(_call(u_obj, "value", x))

    return ConformalPair(pair.dimension, _Inverse())


def product_factor(pair1: ConformalPair, u2_on_g2) -> ConformalPair:
    """Compose transitions: g3 = u2^{4/(n-2)} g2 = (u1 u2)^{4/(n-2)} g1."""

    u1 = pair1.u

    class _Product:
        def value(self, x):
            return (np.asarray(_call(u1, "value", x))
                    * np.asarray(_call(u2_on_g2, "value", x)))

    return ConformalPair(pair1.dimension, _Product())


# ---------------------------------------------------------------------------
# the Penrose quotient family g_C
# ---------------------------------------------------------------------------


class _ProductRadial:
    """Radial factor (1 + C/r) * W(r) with the duck-profile interface.

    Beyond the base support the product still carries a 1/r^2 tail, so the
    search window is widened past the expected horizon location instead of
    relying on a pure-monopole region.
    """

    def __init__(self, base: RadialProfile, C: float):
        self.base = base
        self.C = float(C)
        a, b = base.far_coefficients
        self._far = (float(a), float(b + C * a))

    def radial_value(self, r):
        r = np.asarray(r, dtype=float)
        return (1.0 + self.C / np.maximum(r, 1e-300)) * self.base.radial_value(r)

    def radial_deriv(self, r):
        r = np.asarray(r, dtype=float)
        rr = np.maximum(r, 1e-300)
        return (-self.C / rr**2 * self.base.radial_value(r)
                + (1.0 + self.C / rr) * self.base.radial_deriv(r))

    @property
    def far_coefficients(self):
        return self._far

    @property
    def support_radius(self):
        a, b = self._far
        return max(self.base.support_radius, 6.0 * (self.C + abs(b) / a))

    @property
    def breakpoints(self):
        return self.base.breakpoints


def penrose_quotient_family(factor, c_values: Sequence[float]) -> list[float]:
    """Penrose quotient of g_C = (1 + C/|x|)^4 g for each C (n = 3 only).

    The horizon and the mass of each member are found with the radial
    machinery; the quotients approach (16 pi)^{-1/2} as C grows.
    """
    if not getattr(factor, "is_radial", lambda: False)():
        raise TypeError("the quotient family is computed on radial data")
    base = factor if isinstance(factor, RadialProfile) else factor.as_radial_profile()
    out = []
    for C in c_values:
        if C < 0:
            raise ValueError("C must be nonnegative")
        if C == 0:
            prod = base
        else:
            prod = _ProductRadial(base, C)
        roots = radial_minimal_spheres(prod, 1e-9 * max(C, 1.0))
        if not roots:
            raise ValueError("family member has no horizon")
        r_h = roots[-1]
        enc = _radial_enclosure(prod, r_h)
        a, b = prod.far_coefficients
        mass = 2.0 * a * b
        out.append(mass / math.sqrt(enc.area))
    return out
