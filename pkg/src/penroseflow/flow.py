"""The conformal flow: horizon tracking, integration, diagnostics, checks.

State is the full flat-chart factor W_t (metric g_t = W_t^4 delta).  One step:

    1. the horizon is the outermost minimal-area enclosure of the previous
       one under the current W_t (recomputed every step; jumps emerge here);
    2. the velocity field w_t solves the flat exterior problem with w = 0 on
       the horizon and far value -a_t, where a_t is the current far-field
       coefficient of W_t;
    3. W_{t+dt} = W_t + dt * w_t, with w_t identically zero inside.

Using -a_t rather than a clock-driven -e^{-t} is the rebased form of the same
flow: the rate of change depends only on the current metric and surface (the
flow is naturally defined), and a_t integrates to e^{-t} up to integrator
error, which the far-field invariant tracks.  This also keeps every solve
well-posed across the coordinate rescalings the grid backend performs as the
horizon sweeps outward.

Integrators: explicit Euler (default for the radial backend) and Heun with
the surface re-searched at the predictor (default for the grid backend: the
surface-lag term dominates the Euler error and only the two-stage step
removes it, which is what makes 96^3 runs affordable).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import gridops
from .geometry import (AccumulatedStepsTerm, GridField, RadialProfile, Sphere,
                       VoxelRegion, asymptotic_expansion, SCHWARZSCHILD_QUOTIENT)
from .horizon import (EnclosureResult, _radial_enclosure,
                      find_outermost_minimal_surface, mincut_enclosure)
from .laplace import (GridExteriorSolver, SolverError, extract_monopole,
                      solve_exterior_dirichlet)

__all__ = [
    "FlowParams",
    "FlowState",
    "FlowTrace",
    "JumpEvent",
    "flow_step",
    "run_flow",
    "penrose_quotient",
    "mass_derivative_check",
    "MassDerivativeReport",
    "detect_jump",
    "rebase_check",
]


# ---------------------------------------------------------------------------
# parameters, state, trace
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FlowParams:
    dt0: float = 5e-3
    t_max: float = 5.0
    quotient_tol: float | None = None     # stop when |P - P_schw| below this
    integrator: str | None = None         # None: euler (radial) / heun (grid)
    dt_cap_rel: float = 1e-2              # max |dt w| / W
    jump_rel_motion: float = 0.25         # radial jump threshold
    jump_voxel_motion: float = 3.0        # grid jump threshold (voxels)
    record_snapshots_at: tuple = ()       # times at which to keep full states
    # grid knobs
    band_margins: tuple = (4.0, 7.0)
    regrid_ratio_hi: float = 0.30         # regrid when r_horizon/L exceeds this
    regrid_ratio_lo: float = 0.20         # ... back down to this
    solver_rtol: float = 1e-9
    full_cut_every: int = 25
    detach_spacings: float = 2.0          # voxel separation declaring detachment
    mass_slack_rel: float = 1e-3          # per-step slack for monotonicity flag


@dataclass(frozen=True)
class FlowState:
    t: float
    factor: object
    surface: object
    area: float
    mass: float
    monopole: float
    chart_scale: float = 1.0

    @property
    def quotient(self) -> float:
        return penrose_quotient(self)


@dataclass(frozen=True)
class JumpEvent:
    t: float
    old_count: int
    new_count: int
    old_surface: dict
    new_surface: dict
    motion: float

    def to_json(self) -> dict:
        return {"t": self.t, "old_count": self.old_count,
                "new_count": self.new_count, "old_surface": self.old_surface,
                "new_surface": self.new_surface, "motion": self.motion}


@dataclass
class FlowTrace:
    times: np.ndarray
    areas: np.ndarray
    masses: np.ndarray
    quotients: np.ndarray
    monopoles: np.ndarray
    component_counts: np.ndarray
    motions: np.ndarray                 # per-step surface motion (see detect_jump)
    far_deviations: np.ndarray          # |a_t (original chart) - e^{-t}|
    termination: str = ""
    events: list = field(default_factory=list)
    flags: dict = field(default_factory=dict)
    snapshots: dict = field(default_factory=dict)   # requested t -> FlowState
    final_state: FlowState | None = None

    @property
    def n_records(self) -> int:
        return len(self.times)

    def area_drift(self) -> float:
        a = self.areas[self.areas > 0]
        if len(a) == 0:
            return 0.0
        return float((a.max() - a.min()) / a[0])

    def max_mass_increase(self) -> float:
        if len(self.masses) < 2:
            return 0.0
        return float(np.max(np.diff(self.masses), initial=0.0))

    def write_csv(self, path) -> None:
        with open(path, "w") as f:
            f.write("t,A,m,P,c,components\n")
            for i in range(self.n_records):
                f.write(
                    f"{self.times[i]:.11e},{self.areas[i]:.11e},"
                    f"{self.masses[i]:.11e},{self.quotients[i]:.11e},"
                    f"{self.monopoles[i]:.11e},{int(self.component_counts[i])}\n")


def penrose_quotient(state_or_mass, area: float | None = None) -> float:
    """P = m / sqrt(A); equals (16 pi)^{-1/2} exactly for Schwarzschild."""
    if area is None:
        m, a = state_or_mass.mass, state_or_mass.area
    else:
        m, a = float(state_or_mass), float(area)
    if a <= 0:
        raise ValueError("Penrose quotient needs positive horizon area")
    return m / math.sqrt(a)


class _NoHorizon(Exception):
    pass


# ---------------------------------------------------------------------------
# radial engine
# ---------------------------------------------------------------------------


class _ExteriorView:
    """Duck-typed radial profile view valid for r >= the last step cutoff.

    All accumulated increments are active there, so the evolved factor is
    base(r) + s1 - s2/r with two scalars; this keeps each step O(1).
    """

    def __init__(self, base: RadialProfile, s1: float, s2: float):
        self.base = base
        self.s1 = s1
        self.s2 = s2

    def radial_value(self, r):
        r = np.asarray(r, dtype=float)
        return self.base.radial_value(r) + self.s1 - self.s2 / np.maximum(r, 1e-300)

    def radial_deriv(self, r):
        r = np.asarray(r, dtype=float)
        return self.base.radial_deriv(r) + self.s2 / np.maximum(r, 1e-300)**2

    @property
    def far_coefficients(self):
        a, b = self.base.far_coefficients
        return a + self.s1, b - self.s2

    @property
    def support_radius(self):
        return self.base.support_radius

    @property
    def breakpoints(self):
        return self.base.breakpoints


class _RadialEngine:
    def __init__(self, base: RadialProfile, params: FlowParams, t0: float = 0.0,
                 surface: Sphere | None = None):
        self.base = base
        self.params = params
        self.t = t0
        self.s1 = 0.0
        self.s2 = 0.0
        a, b = base.far_coefficients
        self.a = float(a)
        self.b = float(b)
        self.cutoffs: list[float] = []
        self.coeffs: list[float] = []
        if surface is None:
            enc = find_outermost_minimal_surface(base)
            if not enc.found:
                raise _NoHorizon()
            surface = enc.surface
        self.r_h = float(surface.radius)
        self.last_motion = 0.0
        self._stale = False

    def exterior_view(self) -> _ExteriorView:
        return _ExteriorView(self.base, self.s1, self.s2)

    def snapshot_profile(self) -> RadialProfile:
        terms = self.base.terms
        if self.cutoffs:
            terms = terms + (AccumulatedStepsTerm(np.array(self.cutoffs),
                                                  np.array(self.coeffs)),)
        return RadialProfile(constant=self.base.constant, terms=terms)

    # -- one step: analyze then advance ---------------------------------------
    def analyze(self) -> dict:
        view = self.exterior_view()
        enc = _radial_enclosure(view, self.r_h)
        r_new = enc.surface.radius
        self.last_motion = (r_new - self.r_h) / max(self.r_h, 1e-300)
        touched = bool(enc.certificate.get("touches_input")) and \
            abs(_g_of(view, self.r_h)) > 1e-9 * abs(self.a)
        self.r_h = r_new
        self._stale = False
        mass = 2.0 * self.a * self.b
        # rebased solve (far value -1 against the current factor) expands as
        # v = -1 + (r_h + b/a)/r + ..., giving the monopole below
        monopole = self.r_h + self.b / self.a
        wmin = float(view.radial_value(self.r_h))
        if wmin <= 0:
            raise SolverError("conformal factor lost positivity at the horizon")
        return {"area": enc.area, "mass": mass, "monopole": monopole,
                "components": 1, "motion": self.last_motion, "touched": touched,
                "min_w": wmin, "super_violation": 0.0}

    def advance(self, dt: float, integrator: str) -> float:
        if self._stale:
            self.analyze()
        w_far1 = -self.a
        r1 = self.r_h
        if integrator == "euler":
            self._append(dt * w_far1, r1)
        elif integrator == "heun":
            pv = _ExteriorView(self.base, self.s1 + dt * w_far1,
                               self.s2 + dt * w_far1 * r1)
            r2 = _radial_enclosure(pv, r1).surface.radius
            w_far2 = -(self.a + dt * w_far1)
            self._append(0.5 * dt * w_far1, r1)
            self._append(0.5 * dt * w_far2, max(r2, r1))
        else:
            raise ValueError(f"unknown integrator {integrator!r}")
        self.t += dt
        self._stale = True
        return dt

    def _append(self, coeff: float, cutoff: float):
        # the exterior view needs nondecreasing cutoffs; integrator noise can
        # undershoot the last predictor cutoff by O(dt^2 r), clamp it away
        if self.cutoffs and cutoff < self.cutoffs[-1]:
            cutoff = self.cutoffs[-1]
        self.cutoffs.append(cutoff)
        self.coeffs.append(coeff)
        self.s1 += coeff
        self.s2 += coeff * cutoff
        self.a += coeff
        self.b -= coeff * cutoff
        if self.a <= 0:
            raise SolverError("far-field coefficient became nonpositive")
        self.r_h = max(self.r_h, cutoff)

    def state(self) -> FlowState:
        if self._stale:
            self.analyze()
        view = self.exterior_view()
        wh = float(view.radial_value(self.r_h))
        area = 4.0 * math.pi * (self.r_h * wh**2)**2
        return FlowState(t=self.t, factor=self.snapshot_profile(),
                         surface=Sphere(self.r_h), area=area,
                         mass=2.0 * self.a * self.b,
                         monopole=self.r_h + self.b / self.a)

    @property
    def chart_scale(self) -> float:
        return 1.0

    def far_coefficient(self) -> float:
        return self.a


def _g_of(view, r: float) -> float:
    return float(view.radial_value(r) + 2.0 * r * view.radial_deriv(r))


# ---------------------------------------------------------------------------
# grid engine
# ---------------------------------------------------------------------------


class _GridEngine:
    def __init__(self, factor: GridField, params: FlowParams, t0: float = 0.0,
                 region: np.ndarray | None = None, chart_scale: float = 1.0):
        self.params = params
        self.t = t0
        self.L = factor.box_halfwidth
        self.n = factor.resolution
        self.values = factor.values.copy()
        self.punctures = list(factor.punctures)
        self.excision_spacings = factor.excision_spacings
        self.chart_scale = chart_scale
        self.solver = GridExteriorSolver(self.L, self.n, rtol=params.solver_rtol)
        self.steps_since_full_cut = 0
        self.regrids = 0
        self._refit()
        if region is None:
            enc = find_outermost_minimal_surface(self.field())
            if not enc.found:
                raise _NoHorizon()
            region = enc.surface.mask
        self.region = region.copy()
        self.initial_region = region.copy()
        self.seed_region = self._make_seeds(region)
        self.detached = False
        self._analysis = None
        self.last_motion = 0.0
        self.super_violation0 = self._superharmonic_violation()

    # -- helpers ---------------------------------------------------------------
    @property
    def spacing(self) -> float:
        return 2.0 * self.L / (self.n - 1)

    def field(self, values: np.ndarray | None = None) -> GridField:
        return GridField(self.L, self.values if values is None else values,
                         punctures=tuple(self.punctures),
                         excision_spacings=self.excision_spacings)

    def _make_seeds(self, region: np.ndarray) -> np.ndarray:
        from scipy import ndimage

        seeds = ndimage.binary_erosion(region, iterations=2)
        return seeds if seeds.any() else region.copy()

    def _refit(self):
        exp = asymptotic_expansion(self.field())
        self.a = exp.a
        self.b = exp.b

    def far_coefficient(self) -> float:
        return self.a

    def _superharmonic_violation(self) -> float:
        lap = gridops.laplacian7(self.values, self.spacing)
        keep = ~gridops.boundary_shell_mask(self.n, 2)
        if self.punctures:
            keep &= ~self._excision_dilated()
        keep &= ~self.region
        if not keep.any():
            return 0.0
        return float(np.max(lap[keep], initial=0.0))

    def _excision_dilated(self) -> np.ndarray:
        mask = np.zeros(self.values.shape, dtype=bool)
        ax = np.linspace(-self.L, self.L, self.n)
        X, Y, Z = np.meshgrid(ax, ax, ax, indexing="ij")
        r_ex = (self.excision_spacings + 2.0) * self.spacing
        for c, _ in self.punctures:
            mask |= (X - c[0])**2 + (Y - c[1])**2 + (Z - c[2])**2 <= r_ex**2
        return mask

    def _enclosure(self, values: np.ndarray, prev: np.ndarray,
                   force_full: bool = False) -> EnclosureResult:
        fld = self.field(values)
        seeds = VoxelRegion(self.seed_region, self.L)
        if not force_full:
            m_in, m_out = self.params.band_margins
            enc = mincut_enclosure(fld, seeds, band=(prev, m_in, m_out))
            if not enc.certificate.get("band_escaped"):
                return enc
        return mincut_enclosure(fld, seeds)

    def effective_radius(self, region: np.ndarray) -> float:
        vol = float(region.sum()) * self.spacing**3
        return (3.0 * vol / (4.0 * math.pi))**(1.0 / 3.0)

    # -- one step ----------------------------------------------------------------
    def analyze(self) -> dict:
        from scipy import ndimage

        force_full = self.steps_since_full_cut + 1 >= self.params.full_cut_every
        enc = self._enclosure(self.values, self.region, force_full=force_full)
        self.steps_since_full_cut = 0 if not enc.certificate.get("banded") else \
            self.steps_since_full_cut + 1
        region = enc.surface.mask

        # detachment from the original horizon: keep the original surface until
        # the new one has cleanly separated (two voxel layers)
        touched = False
        if not self.detached:
            grown = region & ~self.initial_region
            if grown.any():
                dist = ndimage.distance_transform_edt(~self.initial_region)
                if float(dist[grown].max()) >= self.params.detach_spacings:
                    self.detached = True
                else:
                    region = self.initial_region
                    touched = True
            else:
                touched = True

        dist_prev = ndimage.distance_transform_edt(~self.region)
        grew = region & ~self.region
        self.last_motion = float(dist_prev[grew].max()) if grew.any() else 0.0

        sol = solve_exterior_dirichlet(self.field(), VoxelRegion(region, self.L),
                                       far_value=-1.0, solver=self.solver)
        monopole = extract_monopole(sol)

        if touched and self.region is not self.initial_region:
            area = gridops.voxel_boundary_area(region, self.values**4, self.spacing)
            comps = int(ndimage.label(region)[1])
        else:
            area, comps = enc.area, enc.component_count
        self.region = region
        ext = ~region
        min_w = float(self.values[ext].min())
        if min_w <= 0:
            raise SolverError(f"conformal factor lost positivity (min W = {min_w:.3e})")
        self._analysis = {"w": sol.w_grid, "region": region}
        return {"area": area, "mass": 2.0 * self.a * self.b, "monopole": monopole,
                "components": comps, "motion": self.last_motion, "touched": touched,
                "min_w": min_w, "super_violation": self._superharmonic_violation()}

    def advance(self, dt: float, integrator: str) -> float:
        if self._analysis is None:
            self.analyze()
        w1 = self._analysis["w"]
        region1 = self._analysis["region"]
        ext = ~region1
        cap = self.params.dt_cap_rel / max(
            float(np.max(np.abs(w1[ext]) / self.values[ext])), 1e-300)
        dt = min(dt, cap)

        if integrator == "euler":
            self.values = self.values + dt * w1
        elif integrator == "heun":
            pred = self.values + dt * w1
            enc2 = self._enclosure(pred, region1)
            region2 = enc2.surface.mask
            sol2 = solve_exterior_dirichlet(self.field(pred),
                                            VoxelRegion(region2, self.L),
                                            far_value=-1.0, solver=self.solver)
            self.values = self.values + 0.5 * dt * (w1 + sol2.w_grid)
        else:
            raise ValueError(f"unknown integrator {integrator!r}")
        self.t += dt
        self._analysis = None
        self._refit()
        self._maybe_regrid()
        return dt

    def _maybe_regrid(self):
        from scipy import ndimage

        r_eff = self.effective_radius(self.region)
        if r_eff <= self.params.regrid_ratio_hi * self.L:
            return
        scale = r_eff / (self.params.regrid_ratio_lo * self.L)
        self.values = gridops.rescale_chart(self.values, self.L, scale, self.a, self.b)
        self.punctures = [(np.asarray(c) / scale, b) for c, b in self.punctures]
        self.chart_scale *= scale
        pts = gridops.lattice_points(self.L, self.n).reshape(-1, 3) * scale
        ic = ((pts + self.L) / self.spacing).T
        ic = np.clip(ic, 0, self.n - 1)
        for name in ("region", "initial_region"):
            mapped = ndimage.map_coordinates(
                getattr(self, name).astype(np.int8), ic, order=0,
                mode="nearest").reshape(self.values.shape).astype(bool)
            setattr(self, name, mapped)
        self.seed_region = self._make_seeds(self.region)
        self.solver.forget()
        self.regrids += 1
        self._refit()

    def state(self) -> FlowState:
        if self._analysis is None:
            info = self.analyze()
        else:
            info = None
        w4 = self.values**4
        area = gridops.voxel_boundary_area(self.region, w4, self.spacing)
        from scipy import ndimage

        return FlowState(t=self.t, factor=self.field(),
                         surface=VoxelRegion(self.region.copy(), self.L),
                         area=area, mass=2.0 * self.a * self.b,
                         monopole=info["monopole"] if info else 0.0,
                         chart_scale=self.chart_scale)


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------


def _is_radial_factor(factor) -> bool:
    return (not isinstance(factor, GridField)
            and getattr(factor, "is_radial", lambda: False)())


def _default_integrator(factor) -> str:
    return "euler" if _is_radial_factor(factor) else "heun"


def _make_engine(factor, params: FlowParams, t0: float = 0.0,
                 surface=None, chart_scale: float = 1.0):
    if _is_radial_factor(factor):
        prof = factor if isinstance(factor, RadialProfile) \
            else factor.as_radial_profile()
        return _RadialEngine(prof, params, t0=t0, surface=surface)
    if not isinstance(factor, GridField):
        raise TypeError("grid flow needs a GridField conformal factor")
    region = surface.mask if isinstance(surface, VoxelRegion) else None
    return _GridEngine(factor, params, t0=t0, region=region,
                       chart_scale=chart_scale)


def flow_step(state: FlowState, dt: float,
              params: FlowParams | None = None,
              integrator: str | None = None) -> FlowState:
    """Advance one accepted step from the given state; pure function."""
    params = params or FlowParams()
    if dt <= 0:
        raise ValueError("dt must be positive")
    if dt > params.dt_cap_rel + 1e-15:
        raise ValueError(f"dt {dt} exceeds the stability cap {params.dt_cap_rel}")
    integrator = integrator or params.integrator or _default_integrator(state.factor)
    engine = _make_engine(state.factor, params, t0=state.t, surface=state.surface,
                          chart_scale=state.chart_scale)
    engine.analyze()
    engine.advance(dt, integrator)
    return engine.state()


def run_flow(factor, params: FlowParams | None = None) -> FlowTrace:
    """Run the conformal flow from initial data until t_max or convergence."""
    params = params or FlowParams()
    integrator = params.integrator or _default_integrator(factor)
    radial = _is_radial_factor(factor)

    try:
        engine = _make_engine(factor, params)
    except _NoHorizon:
        empty = np.zeros(0)
        return FlowTrace(times=empty, areas=empty, masses=empty, quotients=empty,
                         monopoles=empty, component_counts=np.zeros(0, int),
                         motions=empty, far_deviations=empty,
                         termination="no horizon")

    cols = {k: [] for k in ("t", "A", "m", "P", "c", "comp", "motion", "far")}
    flags = {"touched_steps": 0, "min_w": math.inf, "super_violation": 0.0}
    snapshots = {}
    snap_times = sorted(params.record_snapshots_at)
    termination = "t_max"

    def record(info):
        cols["t"].append(engine.t)
        cols["A"].append(info["area"])
        cols["m"].append(info["mass"])
        cols["P"].append(info["mass"] / math.sqrt(info["area"]))
        cols["c"].append(info["monopole"])
        cols["comp"].append(info["components"])
        cols["motion"].append(info["motion"])
        a_orig = engine.far_coefficient() / math.sqrt(engine.chart_scale)
        cols["far"].append(abs(a_orig - math.exp(-engine.t)))
        flags["min_w"] = min(flags["min_w"], info["min_w"])
        flags["super_violation"] = max(flags["super_violation"],
                                       info["super_violation"])
        if info["touched"]:
            flags["touched_steps"] += 1

    try:
        while True:
            info = engine.analyze()
            record(info)
            while snap_times and engine.t >= snap_times[0] - 1e-12:
                snapshots[snap_times.pop(0)] = engine.state()
            quotient = cols["P"][-1]
            if params.quotient_tol is not None and \
                    abs(quotient - SCHWARZSCHILD_QUOTIENT) < params.quotient_tol:
                termination = "quotient converged"
                break
            if engine.t >= params.t_max - 1e-12:
                break
            dt = min(params.dt0, params.dt_cap_rel, params.t_max - engine.t)
            engine.advance(dt, integrator)
    except SolverError as exc:
        termination = f"solver failure: {exc}"

    if not radial:
        flags["initial_super_violation"] = engine.super_violation0
        flags["regrids"] = engine.regrids
    trace = FlowTrace(
        times=np.array(cols["t"]), areas=np.array(cols["A"]),
        masses=np.array(cols["m"]), quotients=np.array(cols["P"]),
        monopoles=np.array(cols["c"]),
        component_counts=np.array(cols["comp"], dtype=int),
        motions=np.array(cols["motion"]), far_deviations=np.array(cols["far"]),
        termination=termination, flags=flags, snapshots=snapshots,
        final_state=engine.state() if termination != "no horizon" else None)
    trace.events = detect_jump(trace, radial=radial,
                               rel_threshold=params.jump_rel_motion,
                               voxel_threshold=params.jump_voxel_motion)
    return trace


def detect_jump(trace: FlowTrace, radial: bool | None = None,
                rel_threshold: float = 0.25,
                voxel_threshold: float = 3.0) -> list[JumpEvent]:
    """Jump events: component count drops or the surface moves discontinuously.

    Radial surfaces move a relative O(dt) amount per step under the continuous
    flow, so per-step relative motion beyond `rel_threshold` is a jump; on the
    grid the criterion is a motion of more than `voxel_threshold` voxels in
    one step.
    """
    if trace.n_records < 2:
        return []
    if radial is None:
        radial = bool(np.all(trace.component_counts <= 1)) and \
            bool(np.all(trace.motions < 10.0))
    events = []
    for i in range(1, trace.n_records):
        oldc = int(trace.component_counts[i - 1])
        newc = int(trace.component_counts[i])
        motion = float(trace.motions[i])
        jumped = newc < oldc
        if radial:
            jumped = jumped or motion > rel_threshold
        else:
            jumped = jumped or motion > voxel_threshold
        if jumped:
            events.append(JumpEvent(
                t=float(trace.times[i]), old_count=oldc, new_count=newc,
                old_surface={"record": i - 1,
                             "components": oldc},
                new_surface={"record": i, "components": newc},
                motion=motion))
    return events


# ---------------------------------------------------------------------------
# derivative and rebase checks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MassDerivativeReport:
    predicted: float
    measured: float
    monopole: float
    initial_mass: float

    @property
    def difference(self) -> float:
        return self.measured - self.predicted

    def to_json(self) -> dict:
        return {"predicted": self.predicted, "measured": self.measured,
                "difference": self.difference, "c": self.monopole,
                "m0": self.initial_mass}


def mass_derivative_check(factor, surface: Sphere | None = None,
                          dt: float = 1e-6,
                          richardson: bool = True) -> MassDerivativeReport:
    """Compare 2(c - m(0)) against the finite-difference mass derivative.

    The measured derivative uses single Euler steps whose error is linear in
    dt, so the two-step Richardson value is exact up to fit accuracy.
    """
    from .geometry import adm_mass_expansion

    if not _is_radial_factor(factor):
        raise TypeError("mass_derivative_check runs on the radial backend")
    prof = factor if isinstance(factor, RadialProfile) else factor.as_radial_profile()
    m0 = adm_mass_expansion(prof)
    if surface is None:
        enc = find_outermost_minimal_surface(prof)
        if not enc.found:
            raise ValueError("no horizon: pass an explicit surface for toy checks")
        surface = enc.surface
    sol = solve_exterior_dirichlet(prof, surface, far_value=-1.0)
    c = extract_monopole(sol)
    predicted = 2.0 * (c - m0)

    def euler_mass(step):
        a, b = prof.far_coefficients
        w_far = -a
        a1 = a + step * w_far
        b1 = b - step * w_far * surface.radius
        return 2.0 * a1 * b1

    # difference against the same coefficient path: mixing in the fitted m0
    # would inject its roundoff amplified by 1/dt
    m_base = euler_mass(0.0)
    d1 = (euler_mass(dt) - m_base) / dt
    if richardson:
        d2 = (euler_mass(dt / 2) - m_base) / (dt / 2)
        measured = 2.0 * d2 - d1
    else:
        measured = d1
    return MassDerivativeReport(predicted=predicted, measured=measured,
                                monopole=c, initial_mass=m0)


def rebase_check(factor, params: FlowParams, s: float,
                 compare_times: int = 5) -> dict:
    """Restart invariance of the flow (its rate depends only on the state).

    Runs the flow to t_max, restarts it from the state recorded at time s,
    and reports the maximum relative deviation of W over matched times and
    sample points.  Deviations beyond integrator noise mean the implementation
    smuggles in hidden dependence on the original base or clock.
    """
    if not 0.0 <= s < params.t_max:
        raise ValueError("rebase time must lie inside the run")
    taus = np.round(np.linspace(s, params.t_max, compare_times + 1), 12)
    p1 = replace(params, record_snapshots_at=tuple(taus))
    trace1 = run_flow(factor, p1)
    if not trace1.snapshots:
        return {"max_rel_deviation": math.nan,
                "reason": f"run terminated early: {trace1.termination}"}
    s_key = min(trace1.snapshots, key=lambda t: abs(t - s))
    base_state = trace1.snapshots[s_key]

    integrator = params.integrator or _default_integrator(factor)
    engine = _make_engine(base_state.factor, params, t0=base_state.t,
                          surface=base_state.surface,
                          chart_scale=base_state.chart_scale)
    snap2 = {}
    snap_times = sorted(t for t in taus if t > base_state.t + 1e-12)
    while True:
        engine.analyze()
        while snap_times and engine.t >= snap_times[0] - 1e-12:
            snap2[snap_times.pop(0)] = engine.state()
        if engine.t >= params.t_max - 1e-12:
            break
        dt = min(params.dt0, params.dt_cap_rel, params.t_max - engine.t)
        engine.advance(dt, integrator)

    devs = {}
    for tau, st2 in snap2.items():
        st1 = trace1.snapshots.get(tau)
        if st1 is not None:
            devs[tau] = _state_deviation(st1, st2)
    return {"max_rel_deviation": max(devs.values()) if devs else math.nan,
            "rebase_time": float(base_state.t),
            "deviations": {float(k): v for k, v in devs.items()}}


def _state_deviation(st1: FlowState, st2: FlowState) -> float:
    if isinstance(st1.factor, GridField):
        v1, v2 = st1.factor.values, st2.factor.values
        if v1.shape != v2.shape or not math.isclose(
                st1.chart_scale, st2.chart_scale, rel_tol=1e-9):
            return _shell_deviation(st1, st2)
        keep = ~st1.surface.mask & ~gridops.boundary_shell_mask(v1.shape[0], 2)
        return float(np.max(np.abs(v1[keep] - v2[keep]) / np.abs(v1[keep])))
    r_h = max(st1.surface.radius, st2.surface.radius)
    rs = np.geomspace(r_h * 1.01, r_h * 100.0, 200)
    w1 = st1.factor.radial_value(rs)
    w2 = st2.factor.radial_value(rs)
    return float(np.max(np.abs(w1 - w2) / np.abs(w1)))


def _shell_deviation(st1: FlowState, st2: FlowState) -> float:
    """Compare two grid states on matched physical shells across charts."""
    from .geometry import sphere_quadrature

    nodes, _ = sphere_quadrature(16, 32)
    f1, f2 = st1.factor, st2.factor
    s1, s2 = st1.chart_scale, st2.chart_scale
    r_lo = 1.2 * math.sqrt(max(st1.area, st2.area) / (4.0 * math.pi))
    r_hi = 0.8 * min(f1.box_halfwidth * s1, f2.box_halfwidth * s2)
    devs = []
    for r_phys in np.geomspace(max(r_lo, 1e-3), r_hi, 8):
        w1 = np.asarray(f1.value((r_phys / s1) * nodes)) / math.sqrt(s1)
        w2 = np.asarray(f2.value((r_phys / s2) * nodes)) / math.sqrt(s2)
        devs.append(float(np.max(np.abs(w1 - w2) / np.abs(w1))))
    return max(devs)
