"""Pseudospectral time integration of u_t + u_xxx + N2(u) = 0.

The state holds modes |j| <= M // 3; nonlinear products are formed on a
grid of 2M points, which is alias-free for the cubic flux.  The dispersive
part is integrated exactly (integrating factor or exponential time
differencing), the nonlinear part with fourth-order Runge-Kutta stages.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .model import (Coefficients, ResolutionError, SpectralGrid, energy_dense,
                    nonlinearity_dense, padded_grid_size)
from .spectral import TWO_PI, SpatialState


class StepSizeError(FloatingPointError):
    """The explicit nonlinear stages became unstable."""


@dataclass(frozen=True)
class SimConfig:
    M: int = 64
    dt: float = 1e-3
    T: float = 1.0
    integrator: str = "etdrk4"
    save_every: int = 100

    def __post_init__(self):
        if self.M < 8 or self.M & (self.M - 1):
            raise ValueError("M must be a power of two, at least 8")
        if not (self.dt > 0 and self.T > 0):
            raise ValueError("dt and T must be positive")
        if self.integrator not in ("etdrk4", "ifrk4"):
            raise ValueError("integrator must be 'etdrk4' or 'ifrk4'")
        if self.save_every < 1:
            raise ValueError("save_every must be positive")

    @property
    def window(self) -> int:
        return self.M // 3

    @property
    def steps(self) -> int:
        return int(round(self.T / self.dt))


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray          # (samples, 2N+1) dense Fourier arrays
    energy: np.ndarray
    momentum: np.ndarray
    window: int

    def state(self, k: int) -> SpatialState:
        return SpatialState.from_dense(self.states[k])

    @property
    def energy_drift(self) -> float:
        return float(np.max(np.abs(self.energy - self.energy[0])) / max(abs(self.energy[0]), 1e-300))

    @property
    def momentum_drift(self) -> float:
        return float(np.max(np.abs(self.momentum - self.momentum[0]))
                     / max(abs(self.momentum[0]), 1e-300))

    def actions(self, sites) -> np.ndarray:
        idx = [self.window + j for j in sites]
        return np.abs(self.states[:, idx]) ** 2

    def action_drift(self, sites) -> float:
        a = self.actions(sites)
        return float(np.max(np.abs(a - a[0]) / np.maximum(a[0], 1e-300)))

    def write_csv(self, path, sites=None) -> None:
        modes = range(1, self.window + 1) if sites is None else sites
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "energy", "momentum"] + [f"re_{j}" for j in modes]
                       + [f"im_{j}" for j in modes])
            for k, t in enumerate(self.times):
                row = self.states[k, [self.window + j for j in modes]]
                w.writerow([repr(float(t)), repr(float(self.energy[k])),
                            repr(float(self.momentum[k]))]
                           + [repr(float(v)) for v in row.real] + [repr(float(v)) for v in row.imag])


def _etd_coefficients(Lh: np.ndarray, points: int = 32):
    """phi-function weights of ETDRK4.

    Direct formulas where |hL| > 1/2; contour averaging on a unit circle
    around hL elsewhere, which keeps the contour away from the origin.
    """
    z = np.asarray(Lh, dtype=complex)
    small = np.abs(z) <= 0.5
    r = np.exp(2j * np.pi * (np.arange(1, points + 1) - 0.5) / points)

    def weights(LR, reduce):
        e, e2 = np.exp(LR), np.exp(LR / 2)
        return (reduce((e2 - 1) / LR),
                reduce((-4 - LR + e * (4 - 3 * LR + LR**2)) / LR**3),
                reduce((2 + LR + e * (-2 + LR)) / LR**3),
                reduce((-4 - 3 * LR - LR**2 + e * (4 - LR)) / LR**3))

    out = [np.empty_like(z) for _ in range(4)]
    if np.any(small):
        vals = weights(z[small][:, None] + r[None, :], lambda a: np.mean(a, axis=1))
        for o, v in zip(out, vals):
            o[small] = v
    if np.any(~small):
        vals = weights(z[~small], lambda a: a)
        for o, v in zip(out, vals):
            o[~small] = v
    return tuple(out)


class Stepper:
    def __init__(self, c: Coefficients, cfg: SimConfig):
        self.c, self.cfg = c, cfg
        n = cfg.window
        self.grid = SpectralGrid(n, 2 * cfg.M)
        self.energy_grid = SpectralGrid(n, max(2 * cfg.M, padded_grid_size(n, 4)))
        k = np.arange(-n, n + 1)
        self.L = 1j * k.astype(float) ** 3
        h = cfg.dt
        self.E = np.exp(h * self.L)
        self.E2 = np.exp(h * self.L / 2)
        if cfg.integrator == "etdrk4":
            Q, f1, f2, f3 = _etd_coefficients(h * self.L)
            self.Q, self.f1, self.f2, self.f3 = h * Q, h * f1, h * f2, h * f3

    def nonlinear(self, u: np.ndarray) -> np.ndarray:
        return -nonlinearity_dense(u, self.c, self.grid)

    def step(self, u: np.ndarray) -> np.ndarray:
        h, N = self.cfg.dt, self.nonlinear
        if self.cfg.integrator == "ifrk4":
            k1 = N(u)
            k2 = N(self.E2 * (u + h / 2 * k1))
            k3 = N(self.E2 * u + h / 2 * k2)
            k4 = N(self.E * u + h * self.E2 * k3)
            return self.E * u + h / 6 * (self.E * k1 + 2 * self.E2 * (k2 + k3) + k4)
        Nu = N(u)
        a = self.E2 * u + self.Q * Nu
        Na = N(a)
        b = self.E2 * u + self.Q * Na
        Nb = N(b)
        cc = self.E2 * a + self.Q * (2 * Nb - Nu)
        Nc = N(cc)
        return self.E * u + Nu * self.f1 + 2 * (Na + Nb) * self.f2 + Nc * self.f3

    def energy(self, u: np.ndarray) -> float:
        return float(energy_dense(u, self.c, self.energy_grid))

    @staticmethod
    def momentum(u: np.ndarray) -> float:
        return float(TWO_PI * np.sum(np.abs(u) ** 2))


def simulate(u0: SpatialState, c: Coefficients, cfg: SimConfig) -> Trajectory:
    """Integrate from u0 to time T, sampling every ``save_every`` steps."""
    n = cfg.window
    if u0.support > n:
        raise ResolutionError(f"initial support {u0.support} exceeds M/3 = {n}")
    stepper = Stepper(c, cfg)
    u = u0.dense(n)
    times, states, energy, momentum = [0.0], [u.copy()], [stepper.energy(u)], [stepper.momentum(u)]
    bound = 1e3 * max(1.0, float(np.max(np.abs(u))))
    for k in range(1, cfg.steps + 1):
        u = stepper.step(u)
        u[n] = 0.0
        if not np.all(np.isfinite(u)) or np.max(np.abs(u)) > bound:
            raise StepSizeError(f"solution blew up at t = {k * cfg.dt:.6g}; reduce dt")
        if k % cfg.save_every == 0 or k == cfg.steps:
            times.append(k * cfg.dt)
            states.append(u.copy())
            energy.append(stepper.energy(u))
            momentum.append(stepper.momentum(u))
            if abs(energy[-1] - energy[0]) > 1e-3 * max(abs(energy[0]), 1e-300):
                raise StepSizeError(f"energy drift above 1e-3 at t = {k * cfg.dt:.6g}; reduce dt")
    return Trajectory(np.array(times), np.array(states), np.array(energy), np.array(momentum), n)


def step_size_hint(u0: SpatialState, c: Coefficients, cfg: SimConfig) -> float:
    """Rough explicit stability limit from the quasi-linear coefficient."""
    n = cfg.window
    grid = SpectralGrid(n, 2 * cfg.M)
    d = u0.dense(n)
    u = grid.to_grid(d)
    p = grid.to_grid(grid.derivative(d))
    f_pp = 6 * c.c1 * p + 2 * c.c2 * u + 12 * c.c4 * p**2 + 6 * c.c5 * p * u + 2 * c.c6 * u**2
    scale = float(np.max(np.abs(f_pp))) * n**3
    return math.inf if scale == 0 else 2.8 / scale


def truncate_state(u: SpatialState, window: int) -> SpatialState:
    return SpatialState({j: v for j, v in u.coeffs.items() if 0 < j <= window})


def shadow_torus(torus, cfg: SimConfig) -> tuple[Trajectory, float]:
    """Start on the torus at phi = 0 and follow it; returns the trajectory and
    the sup over saved times and a 4x refined grid of |u(t) - U(omega t)|.

    ``torus`` needs ``coeffs``, ``omega``, ``nu`` and ``at_angle``.
    """
    n = cfg.window
    traj = simulate(truncate_state(torus.at_angle(np.zeros(torus.nu)), n), torus.coeffs, cfg)
    points = 4 * n
    dev = 0.0
    for k, t in enumerate(traj.times):
        ref = truncate_state(torus.at_angle(torus.omega * t), n).on_grid(points)
        dev = max(dev, float(np.max(np.abs(traj.state(k).on_grid(points) - ref))))
    return traj, dev
