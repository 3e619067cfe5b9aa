"""Conformal flow: stepping, traces, invariants, jumps, rebase, derivatives."""

import math

import numpy as np
import pytest

from penroseflow.flow import (FlowParams, FlowState, FlowTrace, detect_jump,
                              flow_step, mass_derivative_check,
                              penrose_quotient, rebase_check, run_flow)
from penroseflow.geometry import (GridField, RadialProfile, Sphere,
                                  make_brill_lindquist, make_flat,
                                  make_schwarzschild)
from penroseflow.profiles import bundled_radial_profiles

P_SCHW = 1.0 / math.sqrt(16 * math.pi)


# ---------------------------------------------------------------------------
# single steps
# ---------------------------------------------------------------------------


def test_schwarzschild_step_preserves_mass_to_second_order():
    W = make_schwarzschild(1.0)
    state0 = _initial_state(W)
    state1 = flow_step(state0, 1e-3, integrator="euler")
    # equality case: c = m, so m(dt) - m(0) = O(dt^2)
    assert abs(state1.mass - state0.mass) < 1e-5
    assert state1.t == pytest.approx(1e-3)
    assert state1.surface.radius >= state0.surface.radius


def _initial_state(W):
    from penroseflow.horizon import find_outermost_minimal_surface
    from penroseflow.geometry import area_of_surface, adm_mass_expansion

    enc = find_outermost_minimal_surface(W)
    return FlowState(t=0.0, factor=W.as_radial_profile(), surface=enc.surface,
                     area=enc.area, mass=adm_mass_expansion(W), monopole=0.0)


def test_flat_exterior_sanity_step():
    # flat data with a pinned surface: one Euler step lowers W outside by
    # dt*|w| and leaves the inside untouched
    flat = RadialProfile()
    state = FlowState(t=0.0, factor=flat, surface=Sphere(2.0),
                      area=16 * math.pi, mass=0.0, monopole=0.0)
    dt = 5e-3
    new = flow_step(state, dt, integrator="euler")
    rs_in = np.array([0.5, 1.0, 1.9])
    rs_out = np.array([2.5, 4.0, 10.0, 100.0])
    np.testing.assert_allclose(new.factor.radial_value(rs_in), 1.0, rtol=1e-14)
    expected = 1.0 - dt * (1.0 - 2.0 / rs_out)
    np.testing.assert_allclose(new.factor.radial_value(rs_out), expected, rtol=1e-12)


def test_flow_step_rejects_bad_dt():
    state = _initial_state(make_schwarzschild(1.0))
    with pytest.raises(ValueError):
        flow_step(state, -1e-3)
    with pytest.raises(ValueError):
        flow_step(state, 0.5)     # above the stability cap


# ---------------------------------------------------------------------------
# radial runs
# ---------------------------------------------------------------------------


def test_schwarzschild_flow_equality_case():
    tr = run_flow(make_schwarzschild(1.0),
                  FlowParams(dt0=1e-3, t_max=1.0, quotient_tol=None))
    assert tr.termination == "t_max"
    # quotient is pinned at the Schwarzschild value along the whole run
    assert np.max(np.abs(tr.quotients - P_SCHW)) < 1e-10
    assert abs(tr.masses - 1.0).max() < 1e-3 * 1.0
    assert tr.max_mass_increase() <= 1e-12
    assert len(tr.events) == 0
    assert np.all(np.diff(tr.times) > 0)


def test_flow_records_complete_and_monotone():
    prof = bundled_radial_profiles()["shell-far"]
    tr = run_flow(prof, FlowParams(dt0=2e-3, t_max=2.0))
    assert tr.n_records == int(2.0 / 2e-3) + 1
    assert np.all(np.diff(tr.times) > 0)
    # mass non-increasing within solver slack
    assert tr.max_mass_increase() <= 1e-6
    # horizon moves outward monotonically (enclosure property)
    radii = np.sqrt(tr.areas / (4 * math.pi))  # only monotone as g-area here
    assert tr.flags["min_w"] > 0


def test_flat_space_run_terminates_no_horizon():
    tr = run_flow(make_flat(), FlowParams(dt0=1e-3, t_max=1.0))
    assert tr.termination == "no horizon"
    assert tr.n_records == 0


def test_quotient_termination():
    # Schwarzschild starts at the quotient limit, so any positive tolerance
    # terminates immediately
    tr = run_flow(make_schwarzschild(1.0),
                  FlowParams(dt0=1e-3, t_max=4.0, quotient_tol=1e-3))
    assert tr.termination == "quotient converged"
    assert tr.n_records == 1


def test_far_field_tracks_exponential():
    prof = bundled_radial_profiles()["ball-dense"]
    tr = run_flow(prof, FlowParams(dt0=5e-4, t_max=1.5))
    assert tr.far_deviations.max() < 5e-4


def test_euler_convergence_under_dt_halving():
    # first-order integrator: the final-mass change at least halves when dt
    # is halved
    prof = bundled_radial_profiles()["shell-near"]
    finals = []
    for dt in (4e-3, 2e-3, 1e-3):
        tr = run_flow(prof, FlowParams(dt0=dt, t_max=1.0, integrator="euler"))
        finals.append(tr.masses[-1])
    change1 = abs(finals[1] - finals[0])
    change2 = abs(finals[2] - finals[1])
    assert change2 <= 0.6 * change1


def test_heun_reduces_mass_drift_for_equality_case():
    euler = run_flow(make_schwarzschild(1.0),
                     FlowParams(dt0=5e-3, t_max=1.0, integrator="euler"))
    heun = run_flow(make_schwarzschild(1.0),
                    FlowParams(dt0=5e-3, t_max=1.0, integrator="heun"))
    drift_e = abs(euler.masses - 1.0).max()
    drift_h = abs(heun.masses - 1.0).max()
    assert drift_h < 0.05 * drift_e


# ---------------------------------------------------------------------------
# derivative identity
# ---------------------------------------------------------------------------


def test_mass_derivative_schwarzschild_zero():
    rep = mass_derivative_check(make_schwarzschild(1.0))
    assert rep.predicted == pytest.approx(0.0, abs=1e-9)
    assert rep.measured == pytest.approx(0.0, abs=1e-9)
    assert rep.monopole == pytest.approx(1.0, rel=1e-10)


def test_mass_derivative_flat_exterior_toy():
    # formal plug-in: c = r0 and m(0) = 0, so the prediction is 2 r0
    rep = mass_derivative_check(make_flat(), surface=Sphere(1.5))
    assert rep.predicted == pytest.approx(3.0, rel=1e-10)
    assert rep.measured == pytest.approx(3.0, rel=1e-9)


def test_mass_derivative_profiles_negative_and_consistent():
    for name, prof in bundled_radial_profiles().items():
        rep = mass_derivative_check(prof)
        assert rep.measured <= 1e-9, name
        rel = abs(rep.difference) / max(abs(rep.predicted), 1e-6)
        assert rel < 1e-3, name


# ---------------------------------------------------------------------------
# jumps
# ---------------------------------------------------------------------------


def _synthetic_trace(comps, motions):
    n = len(comps)
    return FlowTrace(
        times=np.linspace(0, 1, n), areas=np.ones(n), masses=np.ones(n),
        quotients=np.ones(n), monopoles=np.ones(n),
        component_counts=np.array(comps), motions=np.array(motions),
        far_deviations=np.zeros(n))


def test_detect_jump_component_drop():
    tr = _synthetic_trace([2, 2, 1, 1], [0, 1.0, 5.0, 1.0])
    events = detect_jump(tr, radial=False)
    assert len(events) == 1
    assert events[0].old_count == 2 and events[0].new_count == 1


def test_detect_jump_motion_threshold():
    tr = _synthetic_trace([1, 1, 1], [0.0, 0.01, 0.5])
    events = detect_jump(tr, radial=True, rel_threshold=0.25)
    assert len(events) == 1
    tr2 = _synthetic_trace([1, 1, 1], [0.0, 4.0, 1.0])
    assert len(detect_jump(tr2, radial=False, voxel_threshold=3.0)) == 1


def test_radial_schwarzschild_has_no_jumps():
    tr = run_flow(make_schwarzschild(1.0), FlowParams(dt0=5e-3, t_max=2.0))
    assert detect_jump(tr, radial=True) == []


def test_outermost_horizon_vs_least_area_enclosure():
    # puncture inside a heavy shell: two minimal spheres, the inner one of
    # *smaller* area; the outermost minimal surface is still the outer one
    # (and is outer minimizing), while the least-area enclosure of a small
    # sphere picks the inner minimum
    from penroseflow.geometry import PunctureTerm, ShellTerm
    from penroseflow.horizon import (find_outermost_minimal_surface,
                                     is_outer_minimizing,
                                     outermost_minimal_area_enclosure)

    prof = RadialProfile(terms=(PunctureTerm(1 / 1.1), ShellTerm(1.0, 1.0)))
    enc = find_outermost_minimal_surface(prof)
    assert enc.surface.radius == pytest.approx(1 / 1.1 + 1.0, rel=1e-9)
    ok, _ = is_outer_minimizing(prof, enc.surface)
    assert ok
    inner = outermost_minimal_area_enclosure(prof, Sphere(0.4))
    assert inner.surface.radius == pytest.approx(0.5 / 1.1 * 1.1 / 1.1, rel=1e-6) \
        or inner.surface.radius == pytest.approx(1 / 1.1 / 2, rel=1e-6)
    assert inner.area < enc.area


def test_radial_flow_jumps_across_matter_shell():
    # the horizon pins at a matter shell while the exterior area minimum
    # deepens; when the two equalize the horizon jumps outward in one step
    # with the area preserved through the jump (single-component jump)
    from penroseflow.geometry import PunctureTerm, ShellTerm

    prof = RadialProfile(terms=(PunctureTerm(0.5), ShellTerm(0.3, 1.0)))
    tr = run_flow(prof, FlowParams(dt0=1e-3, t_max=1.2))
    assert len(tr.events) == 1
    assert tr.events[0].motion > 0.25
    assert tr.area_drift() < 5e-3         # area continuous through the jump
    assert tr.max_mass_increase() <= 1e-9


# ---------------------------------------------------------------------------
# rebase and quotient
# ---------------------------------------------------------------------------


def test_rebase_radial_machine_precision():
    out = rebase_check(make_schwarzschild(1.0),
                       FlowParams(dt0=1e-3, t_max=1.0), s=0.5)
    assert out["max_rel_deviation"] < 1e-6


def test_rebase_trivial_restart_at_zero():
    out = rebase_check(bundled_radial_profiles()["shell-far"],
                       FlowParams(dt0=2e-3, t_max=0.6), s=0.0)
    assert out["max_rel_deviation"] < 1e-9


def test_penrose_quotient_values():
    assert penrose_quotient(1.0, 16 * math.pi) == pytest.approx(P_SCHW, rel=1e-12)
    assert penrose_quotient(2.0, 64 * math.pi) == pytest.approx(P_SCHW, rel=1e-12)
    with pytest.raises(ValueError):
        penrose_quotient(1.0, 0.0)


# ---------------------------------------------------------------------------
# grid smoke run (small): one merged two-hole flow segment
# ---------------------------------------------------------------------------


@pytest.mark.grid
def test_grid_flow_smoke():
    W = make_brill_lindquist([((-0.5, 0, 0), 1.0), ((0.5, 0, 0), 1.0)])
    g = GridField.from_factor(W, box_halfwidth=8.0, resolution=48)
    params = FlowParams(dt0=0.02, t_max=0.1, quotient_tol=None,
                        full_cut_every=100)
    tr = run_flow(g, params)
    assert tr.termination == "t_max"
    assert tr.n_records >= 5
    # area constant within a per-step percent at this resolution
    steps = np.abs(np.diff(tr.areas)) / tr.areas[0]
    assert steps.max() < 0.01
    assert tr.flags["min_w"] > 0
    assert tr.component_counts[0] == 1          # merged at separation 1
    assert tr.max_mass_increase() <= 1e-3 * tr.masses[0]
