import json

import numpy as np
import pytest

from kam_gkdv.frequency import SingularTwistError
from kam_gkdv.model import Coefficients
from kam_gkdv.spectral import QuasiPeriodicField, SiteSet
from kam_gkdv.torus import (NewtonError, TorusEmbedding, build_approximate_torus, build_vbar,
                            check_diophantine, fit_slope, integer_vectors, lattice,
                            refine_torus_newton, residual_functional, torus_from_dict,
                            torus_to_dict, truncated_residual)

from conftest import GENERIC, S12, XI

LADDER = (0.05, 0.02, 0.01)


def airy_torus(eps=0.01):
    """eps * vbar with the unperturbed frequencies and no nonlinearity."""
    vbar = build_vbar(S12, XI)
    field = QuasiPeriodicField(2, {k: eps * v for k, v in vbar.coeffs.items()})
    return TorusEmbedding(S12, Coefficients(), field, S12.omega_bar.astype(float), eps, XI,
                          np.zeros(2))


def test_vbar_single_site_is_twice_cosine():
    s1 = SiteSet((1,))
    v = build_vbar(s1, [1.0])
    assert v.coeffs == {((1,), 1): 1.0, ((-1,), -1): 1.0}
    phi = 0.4
    x = 2 * np.pi * np.arange(8) / 8
    assert np.allclose(v.at_angle([phi]).on_grid(8), 2 * np.cos(phi + x))


def test_vbar_has_constant_l2_mass():
    v = build_vbar(S12, XI)
    assert len(v.coeffs) == 4
    for phi in np.random.default_rng(0).uniform(0, 2 * np.pi, (5, 2)):
        u = v.at_angle(phi)
        mass = sum(abs(a) ** 2 for j, a in u.coeffs.items() if j > 0)
        assert mass == pytest.approx(1 * 1.3 + 2 * 1.6)
    with pytest.raises(ValueError):
        build_vbar(S12, [1.0, -1.0])


def test_vbar_is_in_the_airy_kernel():
    for (l, j), v in build_vbar(S12, XI).coeffs.items():
        assert abs(1j * np.dot(S12.omega_bar, l) + (1j * j) ** 3) == 0


def test_airy_torus_has_zero_residual():
    assert residual_functional(airy_torus())["l2"] < 1e-12


def test_newton_leaves_exact_solution_unchanged():
    t = airy_torus()
    r = refine_torus_newton(t, L=4, J=8)
    assert len(r.history) == 1
    assert r.field.coeffs == pytest.approx(t.field.coeffs)


def test_zero_amplitude_gives_zero_torus():
    t = build_approximate_torus(GENERIC, S12, XI, 0.0)
    assert not t.field.coeffs
    assert np.array_equal(t.omega, S12.omega_bar)


def test_singular_twist_rejected():
    with pytest.raises(SingularTwistError):
        build_approximate_torus(Coefficients(), S12, XI, 0.01)
    with pytest.raises(ValueError):
        build_approximate_torus(GENERIC, S12, XI, 0.01, level="exact")


def test_frequency_follows_twist(generic_nf):
    t = build_approximate_torus(GENERIC, S12, XI, 0.02, nf=generic_nf)
    from kam_gkdv.frequency import twist_matrices
    M = twist_matrices(generic_nf.quartic, S12, GENERIC).M
    assert np.allclose(t.omega, S12.omega_bar + 0.02**2 * M @ XI)


@pytest.mark.parametrize("level", ["naive", "bnf"])
def test_built_tori_are_real_and_momentum_symmetric(level, generic_nf):
    t = build_approximate_torus(GENERIC, S12, XI, 0.02, level, nf=generic_nf)
    assert t.is_momentum_symmetric()
    for (l, j), v in t.field.coeffs.items():
        mirror = (tuple(-a for a in l), -j)
        assert t.field.coeffs[mirror] == pytest.approx(np.conj(v))


@pytest.fixture(scope="module")
def ladder(generic_nf):
    out = {}
    for level in ("naive", "bnf"):
        out[level] = [residual_functional(build_approximate_torus(
            GENERIC, S12, XI, e, level, nf=generic_nf))["l2"] for e in LADDER]
    return out


def test_naive_residual_is_second_order(ladder):
    assert 1.7 <= fit_slope(LADDER, ladder["naive"]) <= 2.3


def test_bnf_residual_is_high_order(ladder):
    assert fit_slope(LADDER, ladder["bnf"]) >= 3.5


def test_bnf_beats_naive_everywhere(ladder):
    assert all(b < n for b, n in zip(ladder["bnf"], ladder["naive"]))


def test_residual_regression_values(ladder):
    # first measured values (l2, RMS over the torus)
    assert ladder["naive"] == pytest.approx([0.8385, 0.12816, 0.031819], rel=2e-3)
    assert ladder["bnf"] == pytest.approx([0.80002, 0.0076294, 0.00023698], rel=2e-3)


def test_fit_slope_exact_power():
    eps = np.array([0.1, 0.05, 0.02])
    assert fit_slope(eps, 3 * eps**2.5) == pytest.approx(2.5)


def test_newton_regression(refined_torus):
    h = refined_torus.history
    assert len(h) - 1 == 4
    assert h[-1] < 1e-9
    assert h[0] == pytest.approx(2.37e-4, rel=0.02)
    assert np.max(np.abs(refined_torus.zeta)) <= 10 * max(h[-1], 1e-18)
    assert refined_torus.level == "bnf+newton"
    assert all(b <= a for a, b in zip(h, h[1:]))


def test_newton_truncated_residual_spectral_convergence(refined_torus):
    # full residual (all harmonics) shrinks as the Galerkin space grows
    assert truncated_residual(refined_torus, 8, 24) < 1e-9
    coarse = residual_functional(refined_torus)["l2"]
    finer = refine_torus_newton(refined_torus, L=10, J=30)
    assert residual_functional(finer)["l2"] < 0.1 * coarse


def test_newton_reports_nonconvergence(generic_nf):
    t = build_approximate_torus(GENERIC, S12, XI, 0.01, "bnf", nf=generic_nf)
    with pytest.raises(NewtonError):
        refine_torus_newton(t, L=8, J=24, max_iter=1)


def test_lattice_is_symmetric_and_bounded():
    lat = lattice(S12, 3, 5)
    rows = {tuple(r) for r in lat}
    for r in rows:
        assert tuple(-a for a in r) in rows
        assert sum(abs(a) for a in r) <= 3
        assert abs(np.dot(r, S12.positive_sites)) <= 5


def test_integer_vectors_count():
    # nonzero l in Z^2 with |l|_1 <= 2: 4 + 8
    assert len(list(integer_vectors(2, 2))) == 12


def test_diophantine_examples():
    bad = check_diophantine([1.0, 8.0], 1e-8, 4.0, 12)
    assert not bad["holds"]
    assert bad["worst_l"] in ((8, -1), (-8, 1))
    assert check_diophantine([1.0, 8.0], 0.0, 4.0, 12)["holds"]
    golden = check_diophantine([1.0, (1 + 5**0.5) / 2], 1e-3, 2.0, 20)
    assert golden["holds"]
    with pytest.raises(ValueError):
        check_diophantine([1.0, 2.0], 0.1, 2.0, 0)


def test_torus_json_roundtrip(refined_torus, tmp_path):
    path = tmp_path / "t.json"
    path.write_text(json.dumps(torus_to_dict(refined_torus)))
    back = torus_from_dict(json.loads(path.read_text()))
    assert back.field.coeffs == pytest.approx(refined_torus.field.coeffs)
    assert np.array_equal(back.omega, refined_torus.omega)
    assert back.history == refined_torus.history
    assert back.coeffs == refined_torus.coeffs
