"""Exterior Dirichlet problems defining the flow velocity.

The velocity field v of the conformal flow is harmonic in the curved base
metric g0 = U^4 delta, vanishes on the moving surface, and tends to a
prescribed negative constant at infinity.  Multiplying by the base factor
turns this into a *flat* exterior Laplace problem for w = U v:

    flat Laplacian of w = 0 outside the surface,
    w = 0 on the surface,
    w -> a * far_value at infinity   (a = far-field value of U),

which holds wherever U itself is flat-harmonic (true away from punctures for
point-mass data; adopted globally as the defining reformulation here).  All
backends solve this flat problem; v is recovered by dividing by U.

The radial backend is a two-coefficient closed form.  The grid backend
discretizes the cube with the 7-point stencil, imposes a decaying-monopole
Robin condition on the cube faces (exact for pure 1/r tails), and solves the
SPD system with AMG-preconditioned conjugate gradients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .geometry import GridField, PointMassSum, RadialProfile, Sphere, VoxelRegion
from . import gridops

__all__ = [
    "SolverError",
    "HarmonicSolution",
    "GridExteriorSolver",
    "solve_exterior_dirichlet",
    "extract_monopole",
]


class SolverError(RuntimeError):
    """Iterative solver failed to reach the requested residual."""


@dataclass(frozen=True)
class HarmonicSolution:
    """Flat-harmonic field w (= base factor times the flow velocity).

    For the radial backend w(r) = alpha + beta/r outside the surface radius;
    for the grid backend `w_grid` holds lattice values (zero inside the
    surface region).  `far_value` is the prescribed limit of v, `w_far` the
    corresponding limit of w.
    """

    base_factor: object
    far_value: float
    w_far: float
    surface_radius: float | None = None
    alpha: float | None = None
    beta: float | None = None
    w_grid: np.ndarray | None = None
    inside_mask: np.ndarray | None = None
    box_halfwidth: float | None = None
    stats: dict = field(default_factory=dict)

    @property
    def is_radial(self) -> bool:
        return self.w_grid is None

    # -- w -------------------------------------------------------------------
    def w_radial(self, r):
        r = np.asarray(r, dtype=float)
        out = self.alpha + self.beta / np.maximum(r, 1e-300)
        return np.where(r >= self.surface_radius, out, 0.0)

    def w_value(self, points):
        if self.is_radial:
            pts = np.asarray(points, dtype=float)
            r = np.linalg.norm(np.atleast_2d(pts), axis=-1)
            out = self.w_radial(r)
            return out[0] if pts.ndim == 1 else out
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = gridops.trilinear(self.w_grid, self.box_halfwidth, pts)
        return out[0] if np.asarray(points).ndim == 1 else out

    # -- v = w / U -----------------------------------------------------------
    def v_radial(self, r):
        prof = self.base_factor if isinstance(self.base_factor, RadialProfile) \
            else self.base_factor.as_radial_profile()
        return self.w_radial(r) / prof.radial_value(r)

    def v_value(self, points):
        w = self.w_value(points)
        u = self.base_factor.value(points)
        return w / u

    def solver_stats_json(self) -> dict:
        return dict(self.stats, far_value=self.far_value, w_far=self.w_far,
                    backend="radial" if self.is_radial else "grid")


def _far_a(factor) -> float:
    a, _ = factor.far_coefficients
    return float(a)


# ---------------------------------------------------------------------------
# radial backend
# ---------------------------------------------------------------------------


def _solve_radial(factor, surface: Sphere, far_value: float) -> HarmonicSolution:
    r0 = surface.radius
    a = _far_a(factor)
    w_far = a * far_value
    # unique decaying solution with w(r0) = 0: w = w_far * (1 - r0/r)
    return HarmonicSolution(base_factor=factor, far_value=far_value, w_far=w_far,
                            surface_radius=r0, alpha=w_far, beta=-w_far * r0,
                            stats={"method": "radial-closed-form", "residual": 0.0})


# ---------------------------------------------------------------------------
# grid backend
# ---------------------------------------------------------------------------


class GridExteriorSolver:
    """Reusable flat exterior-Laplace solver on a fixed cubic lattice.

    The sparse operator depends only on which voxels are interior (Dirichlet)
    — not on the conformal factor — so the flow reuses one instance per chart
    and rebuilds the AMG hierarchy only when the surface has moved enough to
    degrade it as a preconditioner.
    """

    def __init__(self, box_halfwidth: float, resolution: int,
                 rtol: float = 1e-9, maxiter: int = 2000,
                 rebuild_threshold: int = 4000):
        self.box_halfwidth = float(box_halfwidth)
        self.n = int(resolution)
        self.rtol = rtol
        self.maxiter = maxiter
        self.rebuild_threshold = rebuild_threshold
        self._ml = None
        self._ml_mask = None
        self._struct_mask = None
        self._matrix = None
        self._last_w = None

    # -- assembly ------------------------------------------------------------
    def _assemble(self, inside: np.ndarray):
        import scipy.sparse as sp

        n = self.n
        L = self.box_halfwidth
        h = 2.0 * L / (n - 1)
        unk = ~inside
        n_unk = int(unk.sum())
        idx = np.full((n, n, n), -1, dtype=np.int64)
        idx[unk] = np.arange(n_unk)

        rows, cols = [], []
        dirichlet_count = np.zeros(n_unk, dtype=np.int64)
        for axis in range(3):
            for sgn in (1, -1):
                sl_c = [slice(None)] * 3
                sl_n = [slice(None)] * 3
                if sgn > 0:
                    sl_c[axis] = slice(None, -1)
                    sl_n[axis] = slice(1, None)
                else:
                    sl_c[axis] = slice(1, None)
                    sl_n[axis] = slice(None, -1)
                c_id = idx[tuple(sl_c)]
                nbr = idx[tuple(sl_n)]
                both = (c_id >= 0) & (nbr >= 0)
                rows.append(c_id[both])
                cols.append(nbr[both])
                dir_nb = (c_id >= 0) & (nbr < 0)
                np.add.at(dirichlet_count, c_id[dir_nb], 1)

        # Robin ghost folding on the cube faces: for the decaying tail
        # phi = q/r the ghost value is phi_c * r_c / r_ghost exactly
        ax = np.linspace(-L, L, n)
        X, Y, Z = np.meshgrid(ax, ax, ax, indexing="ij")
        R = np.sqrt(X**2 + Y**2 + Z**2)
        diag = np.full(n_unk, 6.0)
        coords = (X, Y, Z)
        for axis in range(3):
            for side in (0, -1):
                sl = [slice(None)] * 3
                sl[axis] = side
                face_idx = idx[tuple(sl)]
                m = face_idx >= 0
                rc = R[tuple(sl)][m]
                xk = coords[axis][tuple(sl)][m]
                sgn = 1.0 if side == -1 else -1.0
                rg = np.sqrt(rc**2 + 2.0 * h * sgn * xk + h**2)
                diag[face_idx[m]] -= rc / rg

        rows = np.concatenate(rows) if rows else np.zeros(0, np.int64)
        cols = np.concatenate(cols) if cols else np.zeros(0, np.int64)
        vals = np.full(rows.shape, -1.0)
        A = sp.csr_matrix(
            (np.concatenate([vals, diag]),
             (np.concatenate([rows, np.arange(n_unk)]),
              np.concatenate([cols, np.arange(n_unk)]))),
            shape=(n_unk, n_unk))
        return A, idx, dirichlet_count

    # -- preconditioning -------------------------------------------------------
    def _preconditioner(self, A, inside: np.ndarray):
        """AMG hierarchy, reused across surface growth.

        The hierarchy is rebuilt only when the surface has moved enough to
        degrade it; between rebuilds the old one is restricted to the current
        (smaller) unknown set, which stays symmetric positive definite.
        """
        import pyamg
        import scipy.sparse.linalg as spla

        hierarchy_stale = (
            self._ml is None
            or self._ml_mask.shape != inside.shape
            or int((self._ml_mask != inside).sum()) > self.rebuild_threshold
            or bool((self._ml_mask & ~inside).any()))   # unknowns may only shrink
        self._last_rebuild = hierarchy_stale
        if hierarchy_stale:
            self._ml = pyamg.smoothed_aggregation_solver(A, max_coarse=400)
            self._ml_mask = inside.copy()
            return self._ml.aspreconditioner()
        if not (self._ml_mask != inside).any():
            return self._ml.aspreconditioner()

        # map current unknowns into the snapshot's (superset) unknown space
        old_unk = ~self._ml_mask
        new_unk = ~inside
        sel = new_unk[old_unk]           # positions of current unknowns there
        M_old = self._ml.aspreconditioner()
        n_old = int(old_unk.sum())
        n_new = int(new_unk.sum())

        def apply(v):
            y = np.zeros(n_old)
            y[sel] = v
            return (M_old @ y)[sel]

        return spla.LinearOperator((n_new, n_new), matvec=apply)

    # -- solve ---------------------------------------------------------------
    def solve(self, inside: np.ndarray, w_far: float,
              warm_start: bool = True, rtol: float | None = None) -> tuple[np.ndarray, dict]:
        """Solve for w given the interior region; returns (lattice w, stats)."""
        import scipy.sparse.linalg as spla
        import pyamg

        if inside[0].any() or inside[-1].any() or inside[:, 0].any() \
                or inside[:, -1].any() or inside[:, :, 0].any() or inside[:, :, -1].any():
            raise ValueError("surface touches the domain boundary; enlarge the box")
        rtol = self.rtol if rtol is None else rtol

        structural_change = (self._struct_mask is None
                             or self._struct_mask.shape != inside.shape
                             or int((self._struct_mask != inside).sum()) > 0)
        if structural_change:
            self._matrix = self._assemble(inside)
            self._struct_mask = inside.copy()
        A, idx, dirichlet_count = self._matrix

        # phi = w - w_far: Dirichlet value on the inside set is -w_far
        b = dirichlet_count * (-w_far)
        n_unk = A.shape[0]
        M = self._preconditioner(A, inside)

        x0 = None
        if warm_start and self._last_w is not None and self._last_w.shape == inside.shape:
            x0 = (self._last_w - w_far)[~inside]

        iters = [0]

        def _cb(_):
            iters[0] += 1

        bnorm = float(np.linalg.norm(b))
        if bnorm == 0.0:
            phi = np.zeros(n_unk)
            info = 0
        else:
            phi, info = spla.cg(A, b, x0=x0, rtol=rtol, maxiter=self.maxiter,
                                M=M, callback=_cb)
        res = float(np.linalg.norm(A @ phi - b)) / max(bnorm, 1e-300)
        if info != 0:
            raise SolverError(
                f"conjugate gradients did not converge (info={info}, "
                f"relative residual {res:.3e} after {iters[0]} iterations)")

        w = np.zeros(inside.shape)
        w[~inside] = phi + w_far
        self._last_w = w
        stats = {"method": "amg-pcg", "iterations": iters[0],
                 "relative_residual": res, "unknowns": int(n_unk),
                 "hierarchy_rebuilt": bool(self._last_rebuild)}
        return w, stats

    def forget(self):
        self._ml = None
        self._ml_mask = None
        self._struct_mask = None
        self._matrix = None
        self._last_w = None


def _inside_mask_for(factor: GridField, surface) -> np.ndarray:
    if isinstance(surface, VoxelRegion):
        if surface.mask.shape != factor.values.shape:
            raise ValueError("voxel surface lattice does not match the grid field")
        return surface.mask
    if isinstance(surface, Sphere):
        return gridops.ball_mask(factor.box_halfwidth, factor.resolution,
                                 surface.radius, surface.center)
    raise TypeError(f"unsupported surface type {type(surface)!r}")


def _check_encloses_punctures(factor, surface) -> None:
    punctures = getattr(factor, "punctures", ())
    if not punctures:
        return
    if isinstance(surface, Sphere):
        for c, _ in punctures:
            if np.linalg.norm(np.asarray(c) - surface.center) >= surface.radius:
                raise ValueError("surface must enclose all punctures")
    elif isinstance(surface, VoxelRegion):
        h = surface.spacing
        for c, _ in punctures:
            i, j, k = (int(round((ci + surface.box_halfwidth) / h)) for ci in c)
            if not surface.mask[i, j, k]:
                raise ValueError("surface must enclose all punctures")


def solve_exterior_dirichlet(factor, surface, far_value: float,
                             solver: Optional[GridExteriorSolver] = None,
                             rtol: float | None = None) -> HarmonicSolution:
    """Solve the flat exterior problem for w = U*v outside the surface.

    `factor` is the conformal factor defining the base metric; its far-field
    value a scales the boundary condition (w -> a*far_value).  The returned
    solution exposes both w and v = w/factor.
    """
    _check_encloses_punctures(factor, surface)

    radial = (isinstance(surface, Sphere) and surface.is_centered()
              and getattr(factor, "is_radial", lambda: False)()
              and not isinstance(factor, GridField))
    if radial:
        return _solve_radial(factor, surface, far_value)

    if not isinstance(factor, GridField):
        raise TypeError("non-radial solves need a GridField conformal factor")
    inside = _inside_mask_for(factor, surface)
    own_solver = solver or GridExteriorSolver(factor.box_halfwidth, factor.resolution)
    a = _far_a(factor)
    w_far = a * far_value
    w, stats = own_solver.solve(inside, w_far, rtol=rtol)

    # maximum principle: w must lie strictly between w_far and 0 outside
    ext = ~inside
    lo, hi = sorted((w_far, 0.0))
    wmin, wmax = float(w[ext].min()), float(w[ext].max())
    slack = 1e-8 * abs(w_far)
    if wmin < lo - slack or wmax > hi + slack:
        raise SolverError(
            f"maximum principle violated: w range [{wmin:.3e}, {wmax:.3e}] "
            f"outside [{lo:.3e}, {hi:.3e}]")
    stats = dict(stats, w_min=wmin, w_max=wmax)
    return HarmonicSolution(base_factor=factor, far_value=far_value, w_far=w_far,
                            w_grid=w, inside_mask=inside,
                            box_halfwidth=factor.box_halfwidth, stats=stats)


# ---------------------------------------------------------------------------
# monopole extraction
# ---------------------------------------------------------------------------


def extract_monopole(sol: HarmonicSolution,
                     shell_fractions=(0.45, 0.55, 0.67, 0.8)) -> float:
    """Monopole coefficient c of v = far_value + c/r + O(1/r^2).

    With w = U v and U = a + b/r + ..., the expansions are tied together by
        c = (beta_w - w_far b / a) / a,
    where beta_w is the 1/r coefficient of w.  The flat field w is the pure
    monopole of the problem (the 1/r^3 tails of v come from dividing by U),
    so fitting w and converting is the well-conditioned form of the v-fit;
    the quadratic term is still eliminated alongside.
    """
    factor = sol.base_factor
    a, b = (float(x) for x in factor.far_coefficients)
    if sol.is_radial:
        beta = sol.beta
    else:
        L = sol.box_halfwidth
        radii = np.array(shell_fractions) * L
        nodes, wq = _shell_nodes()
        means = np.array([
            float(np.sum(gridops.trilinear(sol.w_grid, L, r * nodes) * wq))
            for r in radii])
        A = np.stack([np.ones_like(radii), 1.0 / radii, 1.0 / radii**2], axis=1)
        coef, *_ = np.linalg.lstsq(A, means, rcond=None)
        beta = float(coef[1])
    c = (beta - sol.w_far * b / a) / a
    if sol.far_value < 0 and c <= 0:
        raise SolverError(
            f"monopole coefficient {c:.3e} not positive; solution violates "
            "the maximum principle or the fit failed")
    return float(c)


_SHELL_CACHE = {}


def _shell_nodes(n_theta: int = 32, n_phi: int = 64):
    key = (n_theta, n_phi)
    if key not in _SHELL_CACHE:
        from .geometry import sphere_quadrature

        _SHELL_CACHE[key] = sphere_quadrature(n_theta, n_phi)
    return _SHELL_CACHE[key]
