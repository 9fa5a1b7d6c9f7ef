import json

import numpy as np
import pytest

from kam_gkdv.frequency import spectral_constants
from kam_gkdv.measure import (FrequencyModel, audit_pruned, brexit_constant, bracket,
                              estimate_cantor_fraction, gamma_of, membership_G0,
                              membership_second_melnikov, sample_cantor, write_measure_csv,
                              write_violations)
from kam_gkdv.torus import integer_vectors

from conftest import MILD, S12

A, TAU, L, J = 0.1, 4.0, 12, 20


@pytest.fixture(scope="module")
def model():
    return FrequencyModel(MILD, S12, 0.1)


@pytest.fixture(scope="module")
def sample(model):
    return sample_cantor(model, A, TAU, L, J, 400, seed=0)


def brute_force_accepts(omega, xi, eps, gamma):
    """No pruning: every l with |l|_1 <= L and every j != k outside S plus 0."""
    sc = spectral_constants(MILD, S12, xi)
    m3, m1 = 1 + eps**2 * sc.d_xi, eps**2 * sc.c_xi
    idx = np.array([0] + [j for j in range(-J, J + 1) if j and abs(j) not in (1, 2)])
    mu = np.where(idx == 0, 0.0, -m3 * idx.astype(float) ** 3 + m1 * idx)
    ls = np.array([(0, 0)] + list(integer_vectors(2, L)))
    br = np.maximum(1, np.abs(ls).sum(axis=1)).astype(float) ** (-TAU)
    wl = ls @ omega
    g0 = np.abs(wl[1:]) >= 2 * gamma * br[1:]
    if not g0.all():
        return False
    jj, kk = np.meshgrid(np.arange(len(idx)), np.arange(len(idx)), indexing="ij")
    off = jj != kk
    dmu = (mu[jj] - mu[kk])[off]
    gap = np.abs(idx[jj].astype(float) ** 3 - idx[kk].astype(float) ** 3)[off]
    lhs = np.abs(wl[:, None] + dmu[None, :])
    return bool(np.all(lhs >= 4 * gamma * gap[None, :] * br[:, None]))


def test_gamma_and_bracket():
    assert gamma_of(0.1, 0.1) == pytest.approx(0.1**2.1)
    assert bracket((0, 0)) == 1 and bracket((2, -3)) == 5


def test_brexit_constant():
    assert brexit_constant(4.0, 0.1, 1.0) == pytest.approx(0.2)
    assert brexit_constant(4.0, 1.0, 1.0) == 0.0


def test_G0_examples():
    assert not membership_G0([1.0, 8.0], 1e-8, 4.0, 12)
    assert membership_G0([1.0, (1 + 5**0.5) / 2], 1e-3, 2.0, 20)


def test_model_frequency_roundtrip(model):
    xi = np.array([[1.2, 1.7], [1.9, 1.0]])
    assert np.allclose(model.xi_of(model.omega(xi)), xi)
    sc = spectral_constants(MILD, S12, xi[0])
    assert model.d_vec @ xi[0] == pytest.approx(sc.d_xi)
    assert model.c_vec @ xi[0] == pytest.approx(sc.c_xi)


def checked_indices(sample, stride):
    rejected = np.flatnonzero(~sample.accepted)
    assert len(rejected) > 0
    return sorted(set(range(0, len(sample.xi), stride)) | set(rejected.tolist()))


def test_sample_matches_brute_force(model, sample):
    for i in checked_indices(sample, 10):
        expect = brute_force_accepts(sample.omega[i], sample.xi[i], 0.1, sample.gamma)
        assert bool(sample.accepted[i]) == expect, i


def test_sample_matches_direct_membership(model, sample):
    for i in checked_indices(sample, 40):
        om = sample.omega[i]
        direct = (membership_G0(om, sample.gamma, TAU, L)
                  and membership_second_melnikov(om, model, sample.gamma, TAU, L, J)["accepted"])
        assert bool(sample.accepted[i]) == direct


def test_sample_has_rejections_and_acceptances(sample):
    assert 0 < sample.fraction < 1
    kinds = {v[0] for v in sample.first_violation if v is not None}
    assert kinds <= {"G0", "second"} and kinds


def test_sampling_is_deterministic(model):
    a = sample_cantor(model, A, TAU, L, J, 300, seed=5)
    b = sample_cantor(model, A, TAU, L, J, 300, seed=5)
    assert np.array_equal(a.xi, b.xi) and np.array_equal(a.accepted, b.accepted)
    c = sample_cantor(model, A, TAU, L, J, 300, seed=6)
    assert not np.array_equal(a.xi, c.xi)


def test_audit_finds_no_pruned_violations(model, sample):
    out = audit_pruned(model, sample, fraction=0.05)
    assert out["checked"] > 0 and out["violations"] == 0


def test_smaller_gamma_excludes_less(model):
    g = gamma_of(0.1, A)
    big = sample_cantor(model, A, TAU, L, J, 2000, seed=1, gamma=g)
    small = sample_cantor(model, A, TAU, L, J, 2000, seed=1, gamma=g / 2)
    assert np.all(small.accepted >= big.accepted)
    assert 1 - small.fraction < 1 - big.fraction


def test_zero_gamma_accepts_everything(model):
    assert sample_cantor(model, A, TAU, L, J, 500, seed=0, gamma=0.0).fraction == 1.0


def test_singular_model_rejected():
    from kam_gkdv.model import Coefficients
    with pytest.raises(ValueError):
        FrequencyModel(Coefficients(), S12, 0.1)


def test_estimate_and_outputs(tmp_path):
    res = estimate_cantor_fraction(MILD, S12, [0.1, 0.05], A, L=L, J=J, n_samples=1000, seed=0)
    assert len(res["rows"]) == 2 and np.isfinite(res["fitted_exponent"])
    for r in res["rows"]:
        assert r["excluded"] == pytest.approx(1 - r["fraction"])
        assert r["sigma"] == pytest.approx(np.sqrt(r["excluded"] * r["fraction"] / 1000))
    csv_path, viol = tmp_path / "m.csv", tmp_path / "v.jsonl"
    write_measure_csv(csv_path, res["rows"])
    lines = csv_path.read_text().splitlines()
    assert lines[0] == "eps,gamma,n_samples,accepted,fraction,fitted_exponent"
    assert len(lines) == 3
    s = res["samples"][0.1]
    write_violations(viol, s)
    recs = [json.loads(x) for x in viol.read_text().splitlines()]
    assert len(recs) == int(np.sum(~s.accepted))
    assert all(not s.accepted[r["sample"]] for r in recs)
