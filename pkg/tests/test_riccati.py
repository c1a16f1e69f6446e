import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from affinekit.errors import FlowDivergenceError, StructuralError
from affinekit.model import JumpMeasure
from affinekit.riccati import (
    SolverSettings,
    h_fields,
    psi_J_closed,
    scaled_FG,
    solve_flow,
    solve_flow_batch,
    vector_field,
)

from conftest import cir_phi, cir_psi, make_cir, make_mixed, make_ou, ou_phi

TIGHT = SolverSettings(rel_tol=1e-12, abs_tol=1e-14)


def test_vector_field_zero(cir):
    F, R = vector_field(cir, np.zeros(1))
    assert F == 0.0
    assert R[0] == 0.0


def test_vector_field_cir(cir):
    F, R = vector_field(cir, np.array([-1.0]))
    assert F == pytest.approx(-2.0, abs=1e-14)
    assert R[0] == pytest.approx(2.0, abs=1e-14)


def test_vector_field_ou(ou):
    F, R = vector_field(ou, np.array([1j]))
    assert F == pytest.approx(-0.5, abs=1e-14)
    assert R.size == 0


def test_vector_field_rejects_positive_real_part(cir):
    with pytest.raises(StructuralError):
        vector_field(cir, np.array([0.5]))


def test_solve_flow_fixed_point(cir):
    path = solve_flow(cir, np.zeros(1, dtype=complex), 1.0)
    assert np.abs(path.psi).max() == 0.0
    assert np.abs(path.phi).max() == 0.0


def test_solve_flow_cir_closed_form(cir):
    path = solve_flow(cir, np.array([-1.0 + 0j]), 1.0)
    assert path.psi[0, 0] == -1.0
    assert path.phi[0] == 0.0
    assert path.psi[-1, 0] == pytest.approx(cir_psi(1.0, -1.0), abs=1e-10)
    assert path.psi[-1, 0].real == pytest.approx(-0.225399, abs=1e-6)
    assert path.phi[-1] == pytest.approx(cir_phi(1.0, -1.0), abs=1e-10)


def test_solve_flow_ou_closed_form(ou):
    path = solve_flow(ou, np.array([2j]), 1.0)
    assert path.phi[-1] == pytest.approx(ou_phi(1.0, 2.0), abs=1e-10)
    assert path.phi[-1].real == pytest.approx(-0.864665, abs=1e-6)
    assert path.psi[-1, 0] == pytest.approx(2j * np.exp(-1.0), abs=1e-10)


def test_real_part_stays_in_domain(mixed):
    us = np.array([[3.0, -2.0], [50.0, 10.0], [0.5, 0.0]])
    psi, _ = solve_flow_batch(mixed, 1j * us, [0.1, 0.5, 1.0, 3.0])
    assert psi[:, :, 0].real.max() <= 0.0


def test_psi_J_closed_examples(ou):
    np.testing.assert_allclose(psi_J_closed(ou, 0.0, [1.5j]), [1.5j])
    from affinekit.model import AffineModel
    model2 = AffineModel(
        m=0, n=2, a=0.5 * np.eye(2), alpha=np.zeros((0, 2, 2)), b=[0, 0],
        beta=-np.eye(2), nu=JumpMeasure.zero(2), mu=(),
    )
    out = psi_J_closed(model2, 1.0, np.array([1j, 2j]))
    np.testing.assert_allclose(out, [1j * np.exp(-1), 2j * np.exp(-1)], atol=1e-14)
    np.testing.assert_allclose(psi_J_closed(model2, 1.0, np.zeros(2)), np.zeros(2), atol=0)


def test_psi_J_closed_requires_J_block(cir):
    with pytest.raises(StructuralError):
        psi_J_closed(cir, 1.0, np.array([1j]))


def test_flow_property_quick(mixed):
    rng = np.random.default_rng(3)
    for _ in range(10):
        s, t = rng.uniform(0.05, 1.5, size=2)
        u = 1j * rng.normal(scale=2.0, size=2)
        psi_s, phi_s = solve_flow_batch(mixed, u[None, :], [s], TIGHT)
        psi_st, phi_st = solve_flow_batch(mixed, u[None, :], [s + t], TIGHT)
        psi_2, phi_2 = solve_flow_batch(mixed, psi_s[0], [t], TIGHT)
        np.testing.assert_allclose(psi_st[0, 0], psi_2[0, 0], atol=1e-8)
        assert phi_st[0, 0] == pytest.approx(phi_s[0, 0] + phi_2[0, 0], abs=1e-8)


@given(u=st.floats(-4.0, 4.0), t=st.floats(0.05, 3.0))
@settings(max_examples=25, deadline=None)
def test_conjugate_symmetry_cir(u, t):
    model = make_cir()
    psi, phi = solve_flow_batch(model, np.array([[1j * u], [-1j * u]]), [t])
    assert psi[0, 0, 0] == pytest.approx(np.conj(psi[0, 1, 0]), abs=1e-10)
    assert phi[0, 0] == pytest.approx(np.conj(phi[0, 1]), abs=1e-10)


def test_vector_field_matches_flow_derivative(mixed):
    u0 = 1j * np.array([1.3, -0.7])
    F, R = vector_field(mixed, u0)
    h = 1e-6
    psi, phi = solve_flow_batch(mixed, u0[None, :], [h], TIGHT)
    dpsi = (psi[0, 0, 0] - u0[0]) / h
    dphi = phi[0, 0] / h
    assert dpsi == pytest.approx(R[0], rel=1e-5)
    assert dphi == pytest.approx(F, rel=1e-5)


def test_h_fields_cir_examples(cir):
    h1, h2 = h_fields(cir, 0, [-0.5], [0.0], [2.0])
    assert h1 == pytest.approx(0.5, abs=1e-14)
    assert h2 == 0.0
    # quadratic term linearity: <y, alpha y> = 1 lowers H1 by exactly 1
    h1b, _ = h_fields(cir, 0, [-0.5], [1.0], [2.0])
    assert h1 - h1b == pytest.approx(1.0, abs=1e-14)


def test_h_fields_zero_point(mixed):
    h1, h2 = h_fields(mixed, 0, [0.0, 0.0], [0.0, 0.0], [1.0, 1.0])
    assert h1 == 0.0 and h2 == 0.0


def test_h_fields_rejects_zero_u(cir):
    with pytest.raises(StructuralError):
        h_fields(cir, 0, [-0.5], [0.0], [0.0])


def test_h_fields_atomic_integral():
    model = make_cir(mu_atoms=[(0.8, [0.6])])
    x, y, r = -0.4, 0.3, 2.5
    h1, h2 = h_fields(model, 0, [x], [y], [r])
    base1 = x * x - y * y + (-1.0) * x / r
    jump1 = 0.8 * (np.exp(r * 0.6 * x) * np.cos(r * 0.6 * y) - 1.0 - r * 0.6 * x) / r**2
    assert h1 == pytest.approx(base1 + jump1, abs=1e-14)
    base2 = 2 * x * y + (-1.0) * y / r
    jump2 = 0.8 * (np.exp(r * 0.6 * x) * np.sin(r * 0.6 * y) - r * 0.6 * y) / r**2
    assert h2 == pytest.approx(base2 + jump2, abs=1e-14)


def test_scaled_FG_initial_data(cir):
    F, G = scaled_FG(cir, 0.0, np.array([2.0]))
    np.testing.assert_allclose(F, [0.0])
    np.testing.assert_allclose(G, [1.0])


def test_scaled_FG_J_component_vanishes(mixed):
    for t in (0.5, 2.0, 8.0):
        F, G = scaled_FG(mixed, t, np.array([1.0, 3.0]))
        assert abs(F[1]) <= 1e-12


def test_scaled_FG_sign(cir):
    for t in (0.5, 1.0, 4.0):
        for u in (0.5, 2.0, 30.0):
            F, _ = scaled_FG(cir, t, np.array([u]))
            assert F[0] <= 1e-12


def test_path_interpolation_accuracy(cir):
    path = solve_flow(cir, np.array([-2.0 + 0j]), 2.0)
    for t in (0.37, 1.11, 1.93):
        psi_i, phi_i = path.at(t)
        assert psi_i[0] == pytest.approx(cir_psi(t, -2.0), abs=1e-7)
        assert phi_i == pytest.approx(cir_phi(t, -2.0), abs=1e-7)


def test_path_csv_layout(mixed):
    path = solve_flow(mixed, 1j * np.array([1.0, -0.5]), 1.0)
    buf = io.StringIO()
    path.write_csv(buf)
    lines = buf.getvalue().strip().splitlines()
    header = lines[0].split(",")
    assert header == [
        "t", "re_psi_1", "re_psi_2", "im_psi_1", "im_psi_2", "re_phi", "im_phi",
    ]
    first = [float(v) for v in lines[1].split(",")]
    assert first[0] == 0.0
    assert first[3] == pytest.approx(1.0)       # Im psi_1(0) = 1
    assert first[5] == 0.0 and first[6] == 0.0  # phi(0) = 0


def test_max_steps_exhaustion_raises(cir):
    tiny = SolverSettings(rel_tol=1e-12, abs_tol=1e-14, max_step=1e-7, max_steps=50)
    with pytest.raises(FlowDivergenceError):
        solve_flow(cir, np.array([-1.0 + 0j]), 1.0, tiny)


def test_solver_settings_validation():
    with pytest.raises(StructuralError):
        SolverSettings(rel_tol=-1.0)
