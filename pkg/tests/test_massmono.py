"""Doubling construction and the mass-derivative identity chain."""

import math

import numpy as np
import pytest

from penroseflow.geometry import PunctureTerm, RadialProfile, ShellTerm
from penroseflow.massmono import (compactified_mass, doubled_harmonic,
                                  reflect_double, verify_derivative_identity)
from penroseflow.profiles import bundled_radial_profiles


def schwarzschild_profile(m=1.0):
    return RadialProfile(terms=(PunctureTerm(m / 2),))


# ---------------------------------------------------------------------------
# reflection
# ---------------------------------------------------------------------------


def test_schwarzschild_double_is_inversion_symmetric():
    # the Kelvin transform of 1 + b/r across its horizon returns itself:
    # the double is the full two-ended slice
    prof = schwarzschild_profile(1.0)
    dm = reflect_double(prof, 0.5)
    rp = np.geomspace(0.01, 0.5, 40)
    np.testing.assert_allclose(dm.reflected_value(rp), prof.radial_value(rp),
                               rtol=1e-13)


def test_flat_artificial_neck_rejected():
    flat = RadialProfile()
    with pytest.raises(ValueError, match="not minimal"):
        reflect_double(flat, 1.0)    # mean curvature 2/r != 0


def test_generic_double_roundtrip():
    prof = bundled_radial_profiles()["shell-far"]
    from penroseflow.horizon import find_outermost_minimal_surface

    r_h = find_outermost_minimal_surface(prof).surface.radius
    dm = reflect_double(prof, r_h, minimality_tol=1e-6)
    # Kelvin transform round trip: W(r) = W_refl(r_h^2/r) * (r_h / r)
    rs = np.geomspace(r_h, 50.0, 60)
    np.testing.assert_allclose(dm.reflected_value(dm.invert(rs)) * dm.neck_radius / rs,
                               prof.radial_value(rs), rtol=1e-12)


# ---------------------------------------------------------------------------
# doubled harmonic field
# ---------------------------------------------------------------------------


def test_doubled_harmonic_schwarzschild_closed_form():
    prof = schwarzschild_profile(1.0)
    dm = reflect_double(prof, 0.5)
    vh = doubled_harmonic(dm)
    rs = np.geomspace(0.5, 100.0, 50)
    expect = (-1 + 0.5 / rs) / (1 + 0.5 / rs)
    np.testing.assert_allclose(vh.original_end(rs), expect, rtol=1e-13)
    # odd under the inversion
    np.testing.assert_allclose(vh.reflected_end(dm.invert(rs)),
                               -vh.original_end(rs), rtol=1e-13)


def test_doubled_harmonic_neck_and_bounds():
    for name, prof in bundled_radial_profiles().items():
        from penroseflow.horizon import find_outermost_minimal_surface

        r_h = find_outermost_minimal_surface(prof).surface.radius
        dm = reflect_double(prof, r_h, minimality_tol=1e-6)
        vh = doubled_harmonic(dm)
        assert vh.neck_value() == pytest.approx(0.0, abs=1e-12), name
        rs = np.geomspace(r_h * 1.0001, 500.0, 200)
        v = vh.original_end(rs)
        assert np.all(np.abs(v) < 1.0), name
        # antisymmetry across the neck
        v_ref = vh.reflected_end(dm.invert(rs))
        assert np.all(v * v_ref <= 0.0), name


# ---------------------------------------------------------------------------
# compactified mass and the identity chain
# ---------------------------------------------------------------------------


def test_compactified_mass_schwarzschild_zero():
    prof = schwarzschild_profile(1.0)
    dm = reflect_double(prof, 0.5)
    assert compactified_mass(dm) == pytest.approx(0.0, abs=1e-9)


def test_compactified_mass_frozen_values():
    # closed forms: m_tilde = -4(c - m0) with c = r_h + b
    prof = bundled_radial_profiles()["shell-far"]
    dm = reflect_double(prof, _horizon(prof), minimality_tol=1e-6)
    assert compactified_mass(dm) == pytest.approx(1.313208, abs=1e-5)
    prof = bundled_radial_profiles()["shell-near"]
    dm = reflect_double(prof, _horizon(prof), minimality_tol=1e-6)
    assert compactified_mass(dm) == pytest.approx(2.4, abs=1e-9)


def _horizon(prof):
    from penroseflow.horizon import find_outermost_minimal_surface

    return find_outermost_minimal_surface(prof).surface.radius


def test_identity_closure_all_profiles():
    for name, prof in bundled_radial_profiles().items():
        rep = verify_derivative_identity(prof)
        assert rep["closure_defect"] <= 1e-6, name
        assert rep["m_tilde"] >= -1e-6, name
        assert rep["pass_flags"]["monopole_bound"], name
        assert all(rep["pass_flags"].values()), name


def test_identity_closure_perturbed_schwarzschild():
    # Schwarzschild plus a weak superharmonic bump outside the horizon: the
    # three derivative routes agree within a percent and are negative
    prof = RadialProfile(terms=(PunctureTerm(0.5), ShellTerm(0.05, 3.0)))
    rep = verify_derivative_identity(prof)
    assert rep["m_prime_formula"] < 0
    assert abs(rep["m_prime_fd"] - rep["m_prime_formula"]) <= 0.01 * abs(
        rep["m_prime_formula"])
    assert abs(2 * (rep["c"] - rep["m0"]) + 0.5 * rep["m_tilde"]) < 1e-6


def test_report_is_json_ready():
    import json

    rep = verify_derivative_identity(bundled_radial_profiles()["ball-dense"])
    text = json.dumps(rep)
    assert "pass_flags" in json.loads(text)
