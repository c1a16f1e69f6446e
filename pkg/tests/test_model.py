import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from affinekit.errors import StructuralError
from affinekit.model import AffineModel, JumpMeasure, levy_f_term, levy_r_term, validate

from conftest import make_cir, make_mixed, make_ou


def test_validate_cir_ok(cir):
    rep = validate(cir)
    assert rep.ok
    assert rep.violations == ()


def test_validate_all_test_models():
    for model in (make_cir(), make_ou(), make_mixed()):
        assert validate(model).ok


def test_validate_beta_IJ_nonzero():
    model = AffineModel(
        m=1, n=1,
        a=[[0, 0], [0, 1.0]],
        alpha=[[[1.0, 0], [0, 0]]],
        b=[1.0, 0.0],
        beta=[[-1.0, 0.5], [0.0, -1.0]],
        nu=JumpMeasure.zero(2),
        mu=(JumpMeasure.zero(2),),
    )
    rep = validate(model)
    assert not rep.ok
    assert "vi" in rep.conditions()


def test_validate_compensated_offdiagonal():
    # mu_1 has an atom of mass 1 at xi = (0, 3); beta_21 = 2 gives 2 - 3 < 0
    model = AffineModel(
        m=2, n=0,
        a=np.zeros((2, 2)),
        alpha=[np.diag([1.0, 0.0]), np.diag([0.0, 1.0])],
        b=[1.0, 1.0],
        beta=[[-1.0, 0.0], [2.0, -1.0]],
        nu=JumpMeasure.zero(2),
        mu=(JumpMeasure.from_atoms([(1.0, [0.0, 3.0])]), JumpMeasure.zero(2)),
    )
    rep = validate(model)
    assert not rep.ok
    offender = [v for v in rep.violations if v.condition == "vi"]
    assert offender and offender[0].indices == (1, 0)


def test_validate_collects_all_violations():
    model = AffineModel(
        m=1, n=1,
        a=[[0.3, 0], [0, 1.0]],          # (i): II entry nonzero
        alpha=[[[1.0, 0], [0, 0]]],
        b=[-0.5, 0.0],                   # (v): negative I drift
        beta=[[-1.0, 0.7], [0.0, -1.0]], # (vi): IJ block nonzero
        nu=JumpMeasure.zero(2),
        mu=(JumpMeasure.zero(2),),
    )
    rep = validate(model)
    assert set(rep.conditions()) == {"i", "v", "vi"}


def test_dimension_mismatch_is_structural():
    with pytest.raises(StructuralError):
        AffineModel(
            m=1, n=1,
            a=np.zeros((2, 2)),
            alpha=[np.eye(3)],           # wrong shape
            b=[1.0, 0.0],
            beta=-np.eye(2),
            nu=JumpMeasure.zero(2),
            mu=(JumpMeasure.zero(2),),
        )


def test_levy_f_term_examples():
    nu = JumpMeasure.from_atoms([(1.0, [0.0, 2.0])])
    # ||xi|| = 2 > 1, no compensation: e^{2i} - 1
    val = levy_f_term(nu, np.array([0.0, 1j]), m=1)
    assert val == pytest.approx(np.exp(2j) - 1.0, abs=1e-14)
    assert val == pytest.approx(-1.416147 + 0.909297j, abs=1e-6)
    assert levy_f_term(nu, np.zeros(2), m=1) == 0.0
    assert levy_f_term(JumpMeasure.zero(2), np.array([1j, 1j]), m=1) == 0.0


def test_levy_f_small_jump_compensation():
    # ||xi|| <= 1: J part of the linear term is removed
    nu = JumpMeasure.from_atoms([(2.0, [0.25, 0.5])])
    u = np.array([-0.3, 0.7j])
    expected = 2.0 * (np.exp(u @ [0.25, 0.5]) - 1.0 - 0.7j * 0.5)
    assert levy_f_term(nu, u, m=1) == pytest.approx(expected, abs=1e-14)


def test_levy_r_term_examples():
    mu = JumpMeasure.from_atoms([(2.0, [1.0])])
    val = levy_r_term(mu, np.array([-1.0]))
    assert val == pytest.approx(2.0 * np.exp(-1.0), abs=1e-14)
    assert val == pytest.approx(0.735759, abs=1e-6)
    assert levy_r_term(mu, np.zeros(1)) == 0.0
    assert levy_r_term(JumpMeasure.zero(1), np.array([-1.0])) == 0.0


@given(
    masses=st.lists(st.floats(0.01, 5.0), min_size=1, max_size=6),
    split=st.integers(0, 6),
    seed=st.integers(0, 2**32 - 1),
)
@settings(max_examples=50, deadline=None)
def test_levy_terms_additive_in_measure(masses, split, seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(len(masses), 2))
    pts[:, 0] = np.abs(pts[:, 0]) + 0.01
    atoms = [(w, p) for w, p in zip(masses, pts)]
    k = min(split, len(atoms))
    u = np.array([-0.4 + 0.3j, 1.1j])
    whole = JumpMeasure.from_atoms(atoms, dim=2)
    left = JumpMeasure.from_atoms(atoms[:k], dim=2)
    right = JumpMeasure.from_atoms(atoms[k:], dim=2)
    for fn in (lambda jm: levy_f_term(jm, u, m=1), lambda jm: levy_r_term(jm, u)):
        assert fn(whole) == pytest.approx(fn(left) + fn(right), rel=1e-12, abs=1e-12)


def test_levy_r_real_and_nonnegative_for_real_domain_points():
    # real u with u_I <= 0, u_J = 0: each summand e^s - 1 - s >= 0 for s <= 0
    mu = JumpMeasure.from_atoms([(0.5, [0.2, 0.0]), (1.5, [1.3, 0.0])])
    u = np.array([-0.8, 0.0])
    val = levy_r_term(mu, u)
    assert abs(val.imag) == 0.0
    assert val.real >= 0.0


def test_json_round_trip(mixed):
    text = mixed.to_json()
    back = AffineModel.from_json(text)
    assert back.m == mixed.m and back.n == mixed.n
    np.testing.assert_allclose(back.a, mixed.a)
    np.testing.assert_allclose(back.alpha, mixed.alpha)
    np.testing.assert_allclose(back.beta, mixed.beta)
    np.testing.assert_allclose(back.nu.points, mixed.nu.points)
    np.testing.assert_allclose(back.mu[0].masses, mixed.mu[0].masses)
    assert validate(back).ok


def test_from_dict_rejects_unknown_and_missing_keys(cir):
    data = cir.to_dict()
    data["extra"] = 1
    with pytest.raises(StructuralError, match="unknown"):
        AffineModel.from_dict(data)
    del data["extra"]
    del data["beta"]
    with pytest.raises(StructuralError, match="missing"):
        AffineModel.from_dict(data)


def test_from_dict_omitted_atoms_mean_zero():
    data = {
        "m": 1, "n": 0, "a": [[0.0]], "alpha": [[[1.0]]], "b": [2.0],
        "beta": [[-1.0]], "nu": {}, "mu": [{}],
    }
    model = AffineModel.from_dict(data)
    assert model.nu.is_zero and model.mu[0].is_zero


def test_malformed_json_is_structural():
    with pytest.raises(StructuralError, match="JSON"):
        AffineModel.from_json("{not json")


def test_validate_deterministic_and_pure(mixed):
    r1, r2 = validate(mixed), validate(mixed)
    assert r1.ok == r2.ok and r1.violations == r2.violations


def test_jump_measure_moments():
    jm = JumpMeasure.from_atoms([(1.0, [0.5, -0.2]), (2.0, [2.0, 1.0])])
    np.testing.assert_allclose(jm.moment("all"), [4.5, 1.8])
    np.testing.assert_allclose(jm.moment("small"), [0.5, -0.2])
    np.testing.assert_allclose(jm.moment("large"), [4.0, 2.0])
    assert jm.second_moment_below(1.0) == pytest.approx(0.29)
    np.testing.assert_allclose(jm.coord_moment_above(1.0), [4.0, 2.0])
    assert jm.total_mass == 3.0
