import csv

import numpy as np
import pytest

from kam_gkdv.model import Coefficients, ResolutionError
from kam_gkdv.simulation import (SimConfig, StepSizeError, shadow_torus, simulate,
                                 step_size_hint, truncate_state)
from kam_gkdv.spectral import SpatialState

from conftest import GENERIC

U0 = SpatialState({1: 0.05, 2: 0.03j, 3: 0.01})


def final_state(dt, integrator="etdrk4", T=1.0, c=GENERIC, u0=U0, M=32):
    cfg = SimConfig(M=M, dt=dt, T=T, integrator=integrator, save_every=10**6)
    return simulate(u0, c, cfg).states[-1]


@pytest.mark.parametrize("integrator", ["etdrk4", "ifrk4"])
def test_airy_flow_is_exact(integrator):
    # u_t + u_xxx = 0: u_j(t) = u_j(0) exp(i j^3 t)
    u0 = SpatialState({1: 0.3, 4: 0.1 - 0.2j, 9: 0.05j})
    T = 2.0
    out = SpatialState.from_dense(final_state(1e-2, integrator, T, Coefficients(), u0))
    for j, v in u0.coeffs.items():
        assert out.coeffs[j] == pytest.approx(v * np.exp(1j * j**3 * T), abs=1e-13)


@pytest.mark.parametrize("integrator", ["etdrk4", "ifrk4"])
def test_fourth_order_in_time(integrator):
    ref = final_state(1.25e-4, integrator)
    errs = [np.max(np.abs(final_state(dt, integrator) - ref)) for dt in (2e-3, 1e-3)]
    assert 12 < errs[0] / errs[1] < 20


def test_integrators_agree():
    a = final_state(1e-3, "etdrk4", T=2.0)
    b = final_state(1e-3, "ifrk4", T=2.0)
    assert np.max(np.abs(a - b)) < 2e-6


def test_invariants_conserved():
    traj = simulate(U0, GENERIC, SimConfig(M=32, dt=1e-3, T=2.0, save_every=50))
    assert traj.energy_drift < 1e-6
    assert traj.momentum_drift < 1e-7
    assert len(traj.times) == 41 and traj.times[-1] == pytest.approx(2.0)


def test_real_field_stays_real():
    traj = simulate(U0, GENERIC, SimConfig(M=32, dt=1e-3, T=0.5, save_every=100))
    n = traj.window
    s = traj.states[-1]
    assert np.allclose(s[n + 1:], np.conj(s[n - 1::-1]), atol=1e-15)
    assert s[n] == 0


@pytest.mark.parametrize("kwargs", [{"M": 48}, {"M": 4}, {"dt": 0.0}, {"T": -1.0},
                                    {"integrator": "euler"}, {"save_every": 0}])
def test_sim_config_validation(kwargs):
    with pytest.raises(ValueError):
        SimConfig(**kwargs)


def test_underresolved_initial_state_rejected():
    with pytest.raises(ResolutionError):
        simulate(SpatialState({11: 0.1}), GENERIC, SimConfig(M=32))


def test_large_step_is_reported():
    with pytest.raises(StepSizeError):
        final_state(0.05)


def test_step_size_hint():
    assert step_size_hint(U0, Coefficients(), SimConfig(M=32)) == np.inf
    assert 0 < step_size_hint(U0, GENERIC, SimConfig(M=32)) < 0.05


def test_csv_is_deterministic(tmp_path):
    cfg = SimConfig(M=16, dt=1e-3, T=0.1, save_every=20)
    paths = [tmp_path / "a.csv", tmp_path / "b.csv"]
    for p in paths:
        simulate(U0, GENERIC, cfg).write_csv(p, sites=[1, 2])
    assert paths[0].read_bytes() == paths[1].read_bytes()
    rows = list(csv.reader(paths[0].open()))
    assert rows[0] == ["t", "energy", "momentum", "re_1", "re_2", "im_1", "im_2"]
    assert len(rows) == 1 + 6


def test_truncate_state():
    u = SpatialState({1: 1.0, 5: 2.0, 9: 3.0})
    assert truncate_state(u, 5).coeffs == {1: 1.0, 5: 2.0, -1: 1.0, -5: 2.0}


def test_refined_torus_is_shadowed_short_time(refined_torus):
    # first measured: 2.3e-10 at T = 5
    _, dev = shadow_torus(refined_torus, SimConfig(M=64, dt=5e-4, T=5.0, save_every=200))
    assert dev < 1e-8


@pytest.mark.slow
def test_refined_torus_is_shadowed_over_one_over_eps(refined_torus):
    # first measured: 2.58e-9 at T = 100, energy drift 2.4e-11
    traj, dev = shadow_torus(refined_torus, SimConfig(M=64, dt=2.5e-4, T=100.0, save_every=400))
    assert dev < 1e-6
    assert traj.energy_drift < 1e-9
