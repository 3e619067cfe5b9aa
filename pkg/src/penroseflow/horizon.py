"""Outermost minimal surfaces and minimal-area enclosures.

Two backends:

  * radial: for spherically symmetric factors, enclosures are sought among
    centered spheres.  The area of the sphere of radius r is 4 pi (r W^2)^2,
    so minimal spheres are roots of g(r) = W + 2 r W' and enclosures are
    minimizers of F(r) = r W(r)^2 over [r0, inf).  This symmetrization is an
    assumption of the radial backend, documented here once.
  * grid: discrete minimal-area enclosures as minimum cuts of the lattice
    graph whose capacities are the calibrated 26-neighborhood cut metric
    weighted by W^4.  The outermost minimizer is the sink-side extreme cut,
    found by residual reachability from the sink.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import (GridField, PointMassSum, RadialProfile, Sphere,
                       VoxelRegion, area_of_surface)
from . import gridops

__all__ = [
    "EnclosureResult",
    "outermost_minimal_area_enclosure",
    "find_outermost_minimal_surface",
    "is_outer_minimizing",
    "mincut_enclosure",
    "radial_minimal_spheres",
]

AREA_TIE_REL = 1e-9          # outermost tie-break window on the radial backend
DETACH_SPACINGS = 2.0        # voxel separation declaring a surface detached


@dataclass(frozen=True)
class EnclosureResult:
    """A minimal-area enclosure (or minimal surface) with its bookkeeping."""

    surface: object               # Sphere or VoxelRegion; None if no horizon
    area: float
    component_count: int
    certificate: dict = field(default_factory=dict)

    @property
    def found(self) -> bool:
        return self.surface is not None

    def surface_json(self) -> dict:
        if self.surface is None:
            return {"kind": "none"}
        if isinstance(self.surface, Sphere):
            return {"kind": "sphere", "radius": self.surface.radius,
                    "center": list(map(float, self.surface.center))}
        return {"kind": "voxel", "resolution": self.surface.resolution,
                "box_halfwidth": self.surface.box_halfwidth,
                "volume_voxels": self.surface.volume_voxels()}


# ---------------------------------------------------------------------------
# radial backend
# ---------------------------------------------------------------------------


def _as_profile(factor) -> RadialProfile:
    return factor if isinstance(factor, RadialProfile) else factor.as_radial_profile()


def _radial_g(prof: RadialProfile, r):
    """g(r) = W + 2 r W': zero exactly at minimal spheres (H = 0)."""
    r = np.asarray(r, dtype=float)
    return prof.radial_value(r) + 2.0 * r * prof.radial_deriv(r)


def _piece_roots(prof: RadialProfile, lo: float, hi: float, samples: int = 256):
    """Roots of g on a smooth piece (lo, hi), found by scan + bisection."""
    from scipy.optimize import brentq

    if hi <= lo * (1 + 1e-14):
        return []
    rs = np.geomspace(lo, hi, samples)
    gs = _radial_g(prof, rs)
    roots = []
    sign_change = np.where(np.diff(np.signbit(gs)))[0]
    for i in sign_change:
        roots.append(brentq(lambda r: float(_radial_g(prof, r)), rs[i], rs[i + 1],
                            xtol=1e-14, rtol=1e-15))
    for i in np.where(gs == 0.0)[0]:
        roots.append(float(rs[i]))
    return roots


def radial_minimal_spheres(prof: RadialProfile, r_lo: float, r_hi: float | None = None):
    """All critical radii of the area function in [r_lo, r_hi].

    Includes kink radii (matter shells) where g jumps through zero; beyond the
    profile's support the only candidate is the monopole root b/a.
    """
    support = max(prof.support_radius, r_lo)
    if r_hi is None:
        r_hi = support
    pieces = [r_lo] + [float(s) for s in prof.breakpoints
                       if r_lo < s < r_hi * (1 + 1e-12)] + [max(r_hi, r_lo)]
    roots = []
    eps = 1e-12
    for lo, hi in zip(pieces[:-1], pieces[1:]):
        roots += _piece_roots(prof, lo * (1 + eps) if lo > 0 else 1e-12, hi * (1 - eps))
    # kinks where g changes sign across the breakpoint are pinned horizons
    for s in prof.breakpoints:
        if r_lo <= s <= r_hi:
            g_in = float(_radial_g(prof, s * (1 - 1e-9)))
            g_out = float(_radial_g(prof, s * (1 + 1e-9)))
            if g_in == 0.0 or g_out == 0.0 or (g_in < 0) != (g_out < 0):
                roots.append(float(s))
    a, b = prof.far_coefficients
    if b > 0 and a > 0 and b / a >= support * (1 - 1e-12) and b / a >= r_lo:
        roots.append(b / a)
    return sorted(set(roots))


def _radial_enclosure(prof: RadialProfile, r0: float,
                      tie_rel: float = AREA_TIE_REL) -> EnclosureResult:
    """Outermost minimizer of F(r) = r W^2 over centered spheres r >= r0."""
    candidates = [r0] + [r for r in radial_minimal_spheres(prof, r0) if r >= r0]
    F = np.array([float(r * prof.radial_value(r)**2) for r in candidates])
    fmin = F.min()
    best = max(r for r, f in zip(candidates, F) if f <= fmin * (1 + tie_rel))
    area = 4.0 * math.pi * float(best * prof.radial_value(best)**2)**2
    return EnclosureResult(
        Sphere(best), area, 1,
        certificate={"backend": "radial", "tie_rel": tie_rel,
                     "candidates": [float(c) for c in candidates],
                     "touches_input": math.isclose(best, r0, rel_tol=1e-12)})


def outermost_minimal_area_enclosure(factor, surface,
                                     tie_rel: float = AREA_TIE_REL) -> EnclosureResult:
    """Least W^4-area surface enclosing the given one; outermost among ties."""
    if isinstance(surface, Sphere) and surface.is_centered() \
            and getattr(factor, "is_radial", lambda: False)() \
            and not isinstance(factor, GridField):
        return _radial_enclosure(_as_profile(factor), surface.radius, tie_rel)
    if isinstance(factor, GridField):
        if isinstance(surface, Sphere):
            seeds = VoxelRegion(
                gridops.ball_mask(factor.box_halfwidth, factor.resolution,
                                  surface.radius, surface.center),
                factor.box_halfwidth)
        else:
            seeds = surface
        return mincut_enclosure(factor, seeds)
    raise TypeError("no backend for this factor/surface combination")


def find_outermost_minimal_surface(factor) -> EnclosureResult:
    """Outermost zero-mean-curvature surface enclosing all punctures.

    Returns an explicit no-horizon result (surface None) when the factor has
    no minimal surfaces, as for flat-like data.
    """
    if getattr(factor, "is_radial", lambda: False)() and not isinstance(factor, GridField):
        prof = _as_profile(factor)
        scale = max(prof.support_radius, sum(t.far_b for t in prof.terms), 1e-6)
        roots = radial_minimal_spheres(prof, 1e-9 * scale)
        if not roots:
            return EnclosureResult(None, 0.0, 0,
                                   certificate={"backend": "radial", "reason": "no horizon"})
        best = roots[-1]
        area = 4.0 * math.pi * float(best * prof.radial_value(best)**2)**2
        return EnclosureResult(Sphere(best), area, 1, certificate={"backend": "radial"})
    if isinstance(factor, PointMassSum):
        raise TypeError("non-radial point-mass data must be sampled to a grid first")
    if isinstance(factor, GridField):
        if not factor.punctures:
            return EnclosureResult(None, 0.0, 0,
                                   certificate={"backend": "grid", "reason": "no punctures"})
        seeds = factor.excision_mask()
        # widen degenerate (empty) excisions to one voxel around each puncture
        if not seeds.any():
            seeds = np.zeros(factor.values.shape, dtype=bool)
            h = factor.spacing
            for c, _ in factor.punctures:
                i, j, k = (int(round((ci + factor.box_halfwidth) / h)) for ci in c)
                seeds[i, j, k] = True
        return mincut_enclosure(factor, VoxelRegion(seeds, factor.box_halfwidth))
    raise TypeError(f"unsupported conformal factor type {type(factor)!r}")


def is_outer_minimizing(factor, surface, area_rel_tol: float = 1e-6):
    """Whether every enclosing surface has at least this surface's area.

    Returns (flag, witness): witness is a strictly smaller enclosure when the
    flag is false.
    """
    enc = outermost_minimal_area_enclosure(factor, surface)
    area_in = area_of_surface(factor, surface)
    if enc.area >= area_in * (1.0 - area_rel_tol):
        return True, None
    return False, enc


# ---------------------------------------------------------------------------
# grid backend: minimum cuts
# ---------------------------------------------------------------------------

_INT_CAP_MAX = 2**31 - 1     # scipy's max-flow silently overflows beyond int32
_TARGET_FLOW = 2**30


def _quantize_scale(rough_area: float) -> float:
    return _TARGET_FLOW / max(rough_area, 1e-12)


def mincut_enclosure(factor: GridField, seeds: VoxelRegion,
                     band: tuple | None = None) -> EnclosureResult:
    """Minimum-weight cut separating the seed region from the far boundary.

    Capacities are the calibrated 26-neighborhood face areas weighted by W^4.
    Among all minimum cuts the sink-side extreme one is returned (outermost).
    `band` optionally restricts the computation to a shell around a previous
    region: (previous_mask, inner_margin_voxels, outer_margin_voxels); if the
    cut presses against the band the caller must rerun unrestricted.
    """
    from scipy import ndimage
    from scipy.sparse import csr_matrix
    from scipy.sparse.csgraph import breadth_first_order, maximum_flow

    if seeds.mask.shape != factor.values.shape:
        raise ValueError("seed lattice does not match the grid field")
    if seeds.touches_boundary():
        raise ValueError("seed region touches the domain boundary")
    n = factor.resolution
    h = factor.spacing
    w4 = factor.values**4

    outer = gridops.boundary_shell_mask(n, 1)
    if band is not None:
        prev_mask, m_in, m_out = band
        dist_in = ndimage.distance_transform_edt(prev_mask)
        dist_out = ndimage.distance_transform_edt(~prev_mask)
        source_merge = (dist_in > m_in) | seeds.mask
        sink_merge = (dist_out > m_out) | outer
        sink_merge &= ~source_merge
    else:
        source_merge = seeds.mask
        sink_merge = outer & ~seeds.mask

    free = ~(source_merge | sink_merge)
    n_free = int(free.sum())
    if n_free == 0:
        raise ValueError("cut region is empty; seeds touch the boundary shell")
    node_id = np.full((n, n, n), -1, dtype=np.int64)
    node_id[free] = np.arange(n_free)
    SRC, SNK = n_free, n_free + 1

    rough = gridops.voxel_boundary_area(source_merge, w4, h)
    scale = _quantize_scale(rough)

    rows, cols, caps = [], [], []
    src_cap = np.zeros(n_free, dtype=np.int64)
    snk_cap = np.zeros(n_free, dtype=np.int64)
    for direction, lam in zip(gridops.CUT_DIRECTIONS, gridops.CUT_WEIGHTS):
        src_sl, dst_sl = gridops._offset_slices(direction)
        a_id = node_id[src_sl]
        b_id = node_id[dst_sl]
        wmid = 0.5 * (w4[src_sl] + w4[dst_sl])
        cap = np.minimum(np.rint(scale * lam * h * h * wmid), _INT_CAP_MAX).astype(np.int64)
        a_src = source_merge[src_sl]
        b_src = source_merge[dst_sl]
        a_snk = sink_merge[src_sl]
        b_snk = sink_merge[dst_sl]

        both = (a_id >= 0) & (b_id >= 0)
        rows.append(a_id[both]); cols.append(b_id[both]); caps.append(cap[both])
        rows.append(b_id[both]); cols.append(a_id[both]); caps.append(cap[both])

        m = (a_id >= 0) & b_src
        np.add.at(src_cap, a_id[m], cap[m])
        m = (b_id >= 0) & a_src
        np.add.at(src_cap, b_id[m], cap[m])
        m = (a_id >= 0) & b_snk
        np.add.at(snk_cap, a_id[m], cap[m])
        m = (b_id >= 0) & a_snk
        np.add.at(snk_cap, b_id[m], cap[m])

    free_ids = np.arange(n_free)
    has_src = src_cap > 0
    has_snk = snk_cap > 0
    src_cap = np.minimum(src_cap, _INT_CAP_MAX)
    snk_cap = np.minimum(snk_cap, _INT_CAP_MAX)
    rows.append(np.full(int(has_src.sum()), SRC)); cols.append(free_ids[has_src])
    caps.append(src_cap[has_src])
    rows.append(free_ids[has_src]); cols.append(np.full(int(has_src.sum()), SRC))
    caps.append(src_cap[has_src])
    rows.append(free_ids[has_snk]); cols.append(np.full(int(has_snk.sum()), SNK))
    caps.append(snk_cap[has_snk])
    rows.append(np.full(int(has_snk.sum()), SNK)); cols.append(free_ids[has_snk])
    caps.append(snk_cap[has_snk])

    graph = csr_matrix((np.concatenate(caps),
                        (np.concatenate(rows), np.concatenate(cols))),
                       shape=(n_free + 2, n_free + 2))
    result = maximum_flow(graph, SRC, SNK)

    # sink-side reachability in the residual graph: nodes that can still reach
    # the sink belong to the sink side of every minimum cut; their complement
    # is the outermost (largest) source side
    residual = graph - result.flow
    residual.data = (residual.data > 0).astype(np.int8)
    residual.eliminate_zeros()
    reach = breadth_first_order(residual.T, SNK, directed=True, return_predecessors=False)
    sink_side = np.zeros(n_free + 2, dtype=bool)
    sink_side[reach] = True

    region = source_merge.copy()
    free_sink = np.ones(n_free, dtype=bool)
    free_sink[:] = sink_side[:n_free]
    region[free] = ~free_sink[node_id[free]]

    if bool((region & gridops.boundary_shell_mask(n, 2)).any()):
        raise ValueError("minimum cut touches the domain boundary; enlarge the box")
    escaped = False
    if band is not None:
        dist_out = ndimage.distance_transform_edt(~prev_mask)
        escaped = bool((region & (dist_out >= m_out - 1.0)).any())

    area = gridops.voxel_boundary_area(region, w4, h)
    _, comp = ndimage.label(region)
    return EnclosureResult(
        VoxelRegion(region, factor.box_halfwidth), float(area), int(comp),
        certificate={"backend": "mincut", "flow_value": int(result.flow_value),
                     "quantization_scale": scale,
                     "flow_area": result.flow_value / scale,
                     "banded": band is not None, "band_escaped": escaped,
                     "tie_break": "sink-side extreme cut"})
