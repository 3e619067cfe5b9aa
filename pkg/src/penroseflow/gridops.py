"""Shared uniform-lattice primitives for the 3D grid backend.

Hosts the things every grid consumer needs: trilinear/tricubic sampling,
the 7-point Laplacian, the calibrated 26-neighborhood cut measure used both
for voxel areas and for min-cut capacities, and chart-rescaling resampling.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

# ---------------------------------------------------------------------------
# 26-neighborhood cut metric
# ---------------------------------------------------------------------------
#
# Edge direction classes on the cubic lattice: axis, face diagonal, body
# diagonal.  The per-class weights solve the Chebyshev problem
#     min_lam  max_n | sum_e lam_class(e) |n . e|  -  1 |
# over unit normals n (LP over 4000 sphere samples; max deviation 4.5%).
# CUT_AREA_CALIBRATION is the measured flat-metric sphere ratio
# (min-cut area / 4 pi r^2) at 128^3, r/h = 24; dividing by it matches
# flat sphere areas and absorbs the residual discrete-minimizer bias.

AXIS_DIRS = ((1, 0, 0), (0, 1, 0), (0, 0, 1))
FACE_DIAG_DIRS = ((1, 1, 0), (1, -1, 0), (1, 0, 1), (1, 0, -1), (0, 1, 1), (0, 1, -1))
BODY_DIAG_DIRS = ((1, 1, 1), (1, 1, -1), (1, -1, 1), (1, -1, -1))

CUT_DIRECTIONS = AXIS_DIRS + FACE_DIAG_DIRS + BODY_DIAG_DIRS

_LAMBDA_AXIS = 0.14779964
_LAMBDA_FACE = 0.12396832
_LAMBDA_BODY = 0.07792974

# measured at 128^3 against a flat sphere of radius 25 h (the voxelized ball
# pinned by the seed constraint measures the sphere-average of the anisotropy,
# +1.68% with the raw LP weights); detached minimal surfaces deform to exploit
# the cheap lattice directions and come out ~1.7% below this normalization,
# still inside the stated tolerances and on the safe side of the inequalities
CUT_AREA_CALIBRATION = 1.016803

CUT_WEIGHTS = tuple(
    [_LAMBDA_AXIS / CUT_AREA_CALIBRATION] * 3
    + [_LAMBDA_FACE / CUT_AREA_CALIBRATION] * 6
    + [_LAMBDA_BODY / CUT_AREA_CALIBRATION] * 4
)


def _offset_slices(direction):
    """Slices (src, dst) pairing each voxel with its neighbor at +direction."""
    src, dst = [], []
    for d in direction:
        if d == 0:
            src.append(slice(None))
            dst.append(slice(None))
        elif d > 0:
            src.append(slice(None, -d))
            dst.append(slice(d, None))
        else:
            src.append(slice(-d, None))
            dst.append(slice(None, d))
    return tuple(src), tuple(dst)


def voxel_boundary_area(mask: np.ndarray, w4: np.ndarray, h: float) -> float:
    """Calibrated 26-neighborhood area of the boundary of a voxel region.

    Counts lattice edges crossing the indicator, each weighted by its
    direction-class constant and the mean of W^4 at the two endpoints.
    This is exactly the capacity the min-cut solver assigns to the same
    surface, so reported enclosure areas and voxel areas agree.
    """
    total = 0.0
    for direction, lam in zip(CUT_DIRECTIONS, CUT_WEIGHTS):
        src, dst = _offset_slices(direction)
        crossing = mask[src] != mask[dst]
        if not crossing.any():
            continue
        wmid = 0.5 * (w4[src][crossing] + w4[dst][crossing])
        total += lam * float(wmid.sum())
    return total * h * h


# ---------------------------------------------------------------------------
# interpolation and stencils
# ---------------------------------------------------------------------------


def _to_index_coords(points: np.ndarray, box_halfwidth: float, n: int) -> np.ndarray:
    h = 2.0 * box_halfwidth / (n - 1)
    return (np.asarray(points, dtype=float) + box_halfwidth) / h


def trilinear(values: np.ndarray, box_halfwidth: float, points: np.ndarray) -> np.ndarray:
    """Trilinear sample of a lattice field at arbitrary points (clamped)."""
    n = values.shape[0]
    ic = _to_index_coords(points, box_halfwidth, n).T
    ic = np.clip(ic, 0.0, n - 1.0)
    return ndimage.map_coordinates(values, ic, order=1, mode="nearest")


def tricubic(values: np.ndarray, box_halfwidth: float, points: np.ndarray) -> np.ndarray:
    n = values.shape[0]
    ic = _to_index_coords(points, box_halfwidth, n).T
    ic = np.clip(ic, 0.0, n - 1.0)
    return ndimage.map_coordinates(values, ic, order=3, mode="nearest")


def laplacian7(values: np.ndarray, h: float) -> np.ndarray:
    """7-point flat Laplacian; one-sided zero-padding at the cube faces.

    Face values are extrapolated as constants, so the outermost layer is
    unreliable; callers mask it out.
    """
    out = -6.0 * values.copy()
    for axis in range(3):
        for shift in (1, -1):
            out += np.roll(values, shift, axis=axis)
    # np.roll wraps around; blank the contaminated outer layer
    for axis in range(3):
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[axis] = 0
        hi[axis] = -1
        out[tuple(lo)] = 0.0
        out[tuple(hi)] = 0.0
    return out / h**2


def lattice_points(box_halfwidth: float, n: int) -> np.ndarray:
    ax = np.linspace(-box_halfwidth, box_halfwidth, n)
    X, Y, Z = np.meshgrid(ax, ax, ax, indexing="ij")
    return np.stack([X, Y, Z], axis=-1)


def lattice_radii(box_halfwidth: float, n: int) -> np.ndarray:
    ax = np.linspace(-box_halfwidth, box_halfwidth, n)
    X, Y, Z = np.meshgrid(ax, ax, ax, indexing="ij")
    return np.sqrt(X**2 + Y**2 + Z**2)


def ball_mask(box_halfwidth: float, n: int, radius: float, center=(0.0, 0.0, 0.0)) -> np.ndarray:
    ax = np.linspace(-box_halfwidth, box_halfwidth, n)
    X, Y, Z = np.meshgrid(ax, ax, ax, indexing="ij")
    c = np.asarray(center, dtype=float)
    return (X - c[0])**2 + (Y - c[1])**2 + (Z - c[2])**2 <= radius**2


def boundary_shell_mask(n: int, layers: int = 1) -> np.ndarray:
    m = np.zeros((n, n, n), dtype=bool)
    s = slice(None, layers)
    e = slice(-layers, None)
    m[s] = m[e] = True
    m[:, s] = m[:, e] = True
    m[:, :, s] = m[:, :, e] = True
    return m


# ---------------------------------------------------------------------------
# chart rescaling (regridding)
# ---------------------------------------------------------------------------


def rescale_chart(values: np.ndarray, box_halfwidth: float, scale: float,
                  far_a: float, far_b: float) -> np.ndarray:
    """Resample W under the coordinate rescaling y = x / scale.

    The metric is a diffeomorphism invariant, so the factor transforms as
    W_new(y) = sqrt(scale) * W_old(scale * y).  Points that land outside the
    old cube are filled from the fitted monopole tail a + b/r, which is exact
    for harmonically flat data up to the dropped higher multipoles.
    """
    n = values.shape[0]
    pts = lattice_points(box_halfwidth, n).reshape(-1, 3) * scale
    r = np.linalg.norm(pts, axis=1)
    safe = np.abs(pts).max(axis=1) <= box_halfwidth * 0.999
    out = np.empty(n**3)
    if safe.any():
        out[safe] = tricubic(values, box_halfwidth, pts[safe])
    out[~safe] = far_a + far_b / np.maximum(r[~safe], 1e-300)
    return (np.sqrt(scale) * out).reshape(values.shape)


# ---------------------------------------------------------------------------
# voxel-surface mean curvature
# ---------------------------------------------------------------------------


def voxel_mean_curvature(region, factor, point, sigma_voxels: float = 2.0):
    """Mean curvature estimate at a point of a voxel-region boundary.

    Smooths the indicator, takes H_flat = div(grad phi / |grad phi|) on the
    lattice, samples it at the point, and applies the conformal correction.
    Returns (value, uncertainty); uncertainty is the O(h) stencil scale and
    grows when the local normal is poorly defined (voxel corners).
    """
    h = region.spacing
    phi = ndimage.gaussian_filter(region.mask.astype(float), sigma_voxels)
    gx, gy, gz = np.gradient(phi, h)
    norm = np.sqrt(gx**2 + gy**2 + gz**2)
    norm = np.maximum(norm, 1e-12)
    nx, ny, nz = gx / norm, gy / norm, gz / norm
    div = (np.gradient(nx, h, axis=0) + np.gradient(ny, h, axis=1)
           + np.gradient(nz, h, axis=2))
    p = np.asarray(point, dtype=float).reshape(1, 3)
    h_flat = float(trilinear(div, region.box_halfwidth, p)[0])
    nu = np.array([float(trilinear(c, region.box_halfwidth, p)[0])
                   for c in (nx, ny, nz)])
    nu_len = np.linalg.norm(nu)
    uncertainty = 2.0 * h / max(nu_len, 0.1)
    nu = nu / max(nu_len, 1e-12)
    # gradient magnitude of the smoothed indicator at the point measures how
    # well the normal is defined there
    gmag = float(trilinear(norm, region.box_halfwidth, p)[0])
    if gmag < 0.05 / h:
        uncertainty *= 4.0
    w = float(factor.value(p[0]))
    grad_w = np.asarray(factor.gradient(p[0]), dtype=float)
    value = w**-2 * (h_flat + 4.0 * float(grad_w @ nu) / w)
    return value, uncertainty
