import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kam_gkdv.model import build_gkdv
from kam_gkdv.spectral import (CompiledVectorField, InvalidDegreeError, PolyHamiltonian,
                               QuasiPeriodicField, SiteSet, SpatialState, canonical, orderings,
                               poisson_bracket, time_one_flow, vector_field_apply)

from conftest import GENERIC, random_poly, random_state


def test_orderings_counts_distinct_permutations():
    assert orderings((1, 1, -2)) == 3
    assert orderings((-3, 1, 2)) == 6
    assert orderings((2, 2, -2, -2)) == 6


def test_degree_and_zero_mode_are_rejected():
    with pytest.raises(InvalidDegreeError):
        PolyHamiltonian(0)
    with pytest.raises(ValueError):
        PolyHamiltonian(2, {(0, 1): 1.0})
    with pytest.raises(ValueError):
        PolyHamiltonian(3, {(1, -1): 1.0})


def test_symmetric_and_monomial_forms_agree():
    H = PolyHamiltonian(3, {(-3, 1, 2): 2.0})
    assert H.monomials[(-3, 1, 2)] == 12.0
    assert H.terms[(-3, 1, 2)] == pytest.approx(2.0)


def test_bracket_of_degree_one_pair_is_rejected():
    a = PolyHamiltonian.from_monomials(1, {(1,): 1.0}, False)
    with pytest.raises(InvalidDegreeError):
        poisson_bracket(a, a)


def test_h2_bracket_multiplies_by_cube_sum():
    # {H2, u_1 u_2 u_-3} = -i (1 + 8 - 27) u_1 u_2 u_-3 = 18i u_1 u_2 u_-3
    H2 = build_gkdv(GENERIC, 3).H2
    m = PolyHamiltonian.from_monomials(3, {(-3, 1, 2): 1.0})
    out = poisson_bracket(H2, m)
    assert out.monomials[(-3, 1, 2)] == pytest.approx(18j, abs=1e-13)
    assert len(out) == 1


@given(st.lists(st.integers(-6, 6).filter(lambda j: j != 0), min_size=2, max_size=4))
def test_h2_bracket_is_diagonal(head):
    last = -sum(head)
    if last == 0 or abs(last) > 6:
        return
    key = canonical(head + [last])
    H2 = build_gkdv(GENERIC, 6).H2
    out = poisson_bracket(H2, PolyHamiltonian.from_monomials(len(key), {key: 1.0}))
    cubes = sum(j**3 for j in key)
    expected = -1j * cubes
    assert out.monomials.get(key, 0.0) == pytest.approx(expected, abs=1e-12)


def test_bracket_is_antisymmetric():
    rng = np.random.default_rng(1)
    F, G = random_poly(rng, 3, 4), random_poly(rng, 4, 4)
    assert poisson_bracket(F, G).distance(poisson_bracket(G, F).scaled(-1)) < 1e-13


@pytest.mark.parametrize("seed", range(20))
def test_jacobi_identity(seed):
    rng = np.random.default_rng(seed)
    F, G, K = (random_poly(rng, d, 4) for d in (3, 3, 4))
    total = (poisson_bracket(F, poisson_bracket(G, K))
             + poisson_bracket(G, poisson_bracket(K, F))
             + poisson_bracket(K, poisson_bracket(F, G)))
    assert total.max_abs() < 1e-12


def test_airy_flow_from_h2():
    u = SpatialState({1: 0.3, 2: 0.1j, 5: -0.2})
    X = vector_field_apply(build_gkdv(GENERIC, 5).H2, u)
    for j, v in u.coeffs.items():
        assert X.coeffs[j] == pytest.approx(-(1j * j) ** 3 * v)


def test_compiled_field_matches_sparse_field():
    rng = np.random.default_rng(3)
    H = build_gkdv(GENERIC, 6)
    u = random_state(rng, 3)
    for part in (H.H3, H.H4):
        sparse = vector_field_apply(part, u).dense(6)
        compiled = CompiledVectorField(part, 6)(u.dense(6))
        assert np.max(np.abs(sparse - compiled)) < 1e-14


def test_time_one_flow_is_fourth_order():
    rng = np.random.default_rng(4)
    field = [CompiledVectorField(random_poly(rng, 3, 4), 8)]
    u = random_state(rng, 2, 0.5).dense(8)
    ref = time_one_flow(field, u, dt=1 / 400)
    e1 = np.max(np.abs(time_one_flow(field, u, dt=1 / 10) - ref))
    e2 = np.max(np.abs(time_one_flow(field, u, dt=1 / 20) - ref))
    assert 12 < e1 / e2 < 20


def test_state_enforces_reality():
    u = SpatialState({2: 1 + 1j})
    assert u.coeffs[-2] == 1 - 1j
    with pytest.raises(ValueError):
        SpatialState({2: 1.0, -2: 3.0})
    with pytest.raises(ValueError):
        SpatialState({0: 1.0})


def test_state_grid_values_are_real_fourier_sum():
    u = SpatialState({1: 0.5, 3: 0.25j})
    x = 2 * math.pi * np.arange(16) / 16
    expected = np.cos(x) - 0.5 * np.sin(3 * x)
    assert np.allclose(u.on_grid(16), expected, atol=1e-14)


def test_dense_roundtrip_and_window_check():
    u = SpatialState({1: 0.5, 4: 0.1 - 0.2j})
    assert SpatialState.from_dense(u.dense(6)).coeffs == u.coeffs
    with pytest.raises(ValueError):
        u.dense(3)


def test_sites_validation_and_frequencies():
    s = SiteSet((3, 1))
    assert s.positive_sites == (1, 3)
    assert np.array_equal(s.omega_bar, [1, 27])
    assert 3 in s and -1 in s and 2 not in s
    for bad in ((), (0, 1), (1, 1)):
        with pytest.raises(ValueError):
            SiteSet(bad)


def test_quasi_periodic_field_evaluation():
    q = QuasiPeriodicField(2, {((1, 0), 1): 0.5, ((0, 1), 2): 0.25})
    u = q.at_angle(np.array([0.3, -0.7]))
    assert u.coeffs[1] == pytest.approx(0.5 * np.exp(0.3j))
    assert u.coeffs[2] == pytest.approx(0.25 * np.exp(-0.7j))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_evaluate_is_real_for_real_hamiltonian(seed):
    H = build_gkdv(GENERIC, 4).H4
    u = random_state(np.random.default_rng(seed), 4)
    assert abs(H.evaluate(u).imag) < 1e-12 * max(1.0, abs(H.evaluate(u)))
