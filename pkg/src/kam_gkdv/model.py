"""Quasi-linear generalized KdV: u_t + u_xxx + N2(u) = 0 on the circle.

The Hamiltonian density is u_x^2/2 + f(u, u_x) with

    f = c1 p^3 + c2 p^2 u + c3 u^3 + c4 p^4 + c5 p^3 u + c6 p^2 u^2 + c7 u^4,

p = u_x, and N2 = -d/dx [f_u - d/dx f_p].
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .spectral import TWO_PI, PolyHamiltonian, SpatialState, orderings


class ResolutionError(ValueError):
    """Raised when a state does not fit the working grid."""


@dataclass(frozen=True)
class Coefficients:
    c1: float = 0.0
    c2: float = 0.0
    c3: float = 0.0
    c4: float = 0.0
    c5: float = 0.0
    c6: float = 0.0
    c7: float = 0.0
    # Optional quintic-and-higher tables: callable(max_mode) -> list of PolyHamiltonian.
    f_ge5: Optional[Callable[[int], list]] = field(default=None, compare=False)

    def __post_init__(self):
        for name in ("c1", "c2", "c3", "c4", "c5", "c6", "c7"):
            value = getattr(self, name)
            if not math.isfinite(float(value)):
                raise ValueError(f"{name} must be finite, got {value}")

    @classmethod
    def from_sequence(cls, values) -> "Coefficients":
        values = list(values)
        if len(values) != 7:
            raise ValueError("expected seven coefficients c1..c7")
        return cls(*values)

    def as_tuple(self) -> tuple:
        return (self.c1, self.c2, self.c3, self.c4, self.c5, self.c6, self.c7)

    def is_zero(self) -> bool:
        return all(v == 0 for v in self.as_tuple())


@dataclass(frozen=True)
class GkdvHamiltonian:
    H2: PolyHamiltonian
    H3: PolyHamiltonian
    H4: PolyHamiltonian
    coeffs: Coefficients
    max_mode: int
    higher: tuple = ()

    @property
    def parts(self) -> list[PolyHamiltonian]:
        return [self.H2, self.H3, self.H4, *self.higher]


def _zero_sum_tuples(degree: int, max_mode: int):
    """Sorted tuples of nonzero integers in [-N, N] summing to zero."""
    values = [j for j in range(-max_mode, max_mode + 1) if j != 0]
    for head in itertools.combinations_with_replacement(values, degree - 1):
        last = -sum(head)
        if last == 0 or abs(last) > max_mode or last < head[-1]:
            continue
        yield head + (last,)


def _elementary(key, r):
    return sum(math.prod(c) for c in itertools.combinations(key, r))


def build_gkdv(c: Coefficients, max_mode: int) -> GkdvHamiltonian:
    """Coefficient tables of H2, H3, H4 for modes |j| <= max_mode."""
    if max_mode < 1:
        raise ValueError("max_mode must be at least 1")
    h2 = {(-j, j): TWO_PI * j * j for j in range(1, max_mode + 1)}
    H2 = PolyHamiltonian.from_monomials(2, h2, True)

    h3 = {}
    if any((c.c1, c.c2, c.c3)):
        for key in _zero_sum_tuples(3, max_mode):
            sym = -1j * c.c1 * math.prod(key) - c.c2 * _elementary(key, 2) / 3.0 + c.c3
            if sym != 0:
                h3[key] = TWO_PI * sym * orderings(key)
    H3 = PolyHamiltonian.from_monomials(3, h3, True)

    h4 = {}
    if any((c.c4, c.c5, c.c6, c.c7)):
        for key in _zero_sum_tuples(4, max_mode):
            sym = (c.c4 * math.prod(key) - 1j * c.c5 * _elementary(key, 3) / 4.0
                   - c.c6 * _elementary(key, 2) / 6.0 + c.c7)
            if sym != 0:
                h4[key] = TWO_PI * sym * orderings(key)
    H4 = PolyHamiltonian.from_monomials(4, h4, True)

    higher = tuple(c.f_ge5(max_mode)) if c.f_ge5 is not None else ()
    return GkdvHamiltonian(H2, H3, H4, c, max_mode, higher)


def padded_grid_size(window: int, degree: int = 3) -> int:
    """Power-of-two grid on which degree-fold products of window-limited
    functions are represented without aliasing."""
    need = 2 * degree * window + 2
    return 1 << max(3, math.ceil(math.log2(need)))


class SpectralGrid:
    """Transforms between dense Fourier arrays (index j + N) and grid values."""

    def __init__(self, window: int, points: int):
        if points < 2 * window + 2:
            raise ResolutionError(f"grid of {points} points cannot hold modes up to {window}")
        self.window = window
        self.points = points
        self.wavenumbers = np.arange(-window, window + 1)

    def to_grid(self, states: np.ndarray) -> np.ndarray:
        n = self.window
        half = np.zeros(states.shape[:-1] + (self.points // 2 + 1,), dtype=complex)
        half[..., : n + 1] = states[..., n:]
        return np.fft.irfft(half, n=self.points, axis=-1) * self.points

    def from_grid(self, values: np.ndarray) -> np.ndarray:
        n = self.window
        half = np.fft.rfft(values, axis=-1) / self.points
        out = np.zeros(values.shape[:-1] + (2 * n + 1,), dtype=complex)
        out[..., n:] = half[..., : n + 1]
        out[..., :n] = np.conj(half[..., n:0:-1])
        out[..., n] = 0.0
        return out

    def derivative(self, states: np.ndarray, order: int = 1) -> np.ndarray:
        return states * (1j * self.wavenumbers) ** order


def density_partials(u: np.ndarray, p: np.ndarray, c: Coefficients):
    """Pointwise f_u and f_p of the polynomial density."""
    f_u = c.c2 * p**2 + 3 * c.c3 * u**2 + c.c5 * p**3 + 2 * c.c6 * p**2 * u + 4 * c.c7 * u**3
    f_p = (3 * c.c1 * p**2 + 2 * c.c2 * p * u + 4 * c.c4 * p**3 + 3 * c.c5 * p**2 * u
           + 2 * c.c6 * p * u**2)
    return f_u, f_p


def density(u: np.ndarray, p: np.ndarray, c: Coefficients) -> np.ndarray:
    return (c.c1 * p**3 + c.c2 * p**2 * u + c.c3 * u**3 + c.c4 * p**4 + c.c5 * p**3 * u
            + c.c6 * p**2 * u**2 + c.c7 * u**4)


def nonlinearity_dense(states: np.ndarray, c: Coefficients, grid: SpectralGrid,
                       out_window: int | None = None) -> np.ndarray:
    """N2 on dense arrays (..., 2N+1).  The grid must be padded so that the
    cubic products are alias-free on the returned modes."""
    if out_window is None:
        out_window = grid.window
    u = grid.to_grid(states)
    p = grid.to_grid(grid.derivative(states))
    f_u, f_p = density_partials(u, p, c)
    inner = grid.from_grid(f_u) - grid.derivative(grid.from_grid(f_p))
    result = -grid.derivative(inner)
    n = grid.window
    if out_window < n:
        result[..., : n - out_window] = 0.0
        result[..., n + out_window + 1:] = 0.0
    return result


def nonlinearity_N2(u: SpatialState, c: Coefficients, grid: int | None = None) -> SpatialState:
    """Pseudospectral N2(u) = -d/dx [f_u - d/dx f_p].

    With an explicit ``grid`` the support of u must stay within grid/3; the
    products are then formed on a doubled grid so no aliasing reaches the
    output.  The returned state keeps all modes of the exact product.
    """
    support = max(u.support, 1)
    if grid is not None and support > grid // 3:
        raise ResolutionError(f"support {support} exceeds grid/3 = {grid // 3}")
    if c.is_zero() or not u.coeffs:
        return SpatialState({})
    window = 3 * support
    points = max(padded_grid_size(support, 3), 2 * grid if grid else 0)
    sg = SpectralGrid(window, points)
    dense = nonlinearity_dense(u.dense(window), c, sg)
    return SpatialState.from_dense(dense)


def hamiltonian_energy(u: SpatialState, H: GkdvHamiltonian | Coefficients) -> float:
    """H(u) = int u_x^2/2 + f dx by alias-free quadrature."""
    c = H.coeffs if isinstance(H, GkdvHamiltonian) else H
    if not u.coeffs:
        return 0.0
    window = u.support
    sg = SpectralGrid(window, padded_grid_size(window, 4))
    dense = u.dense(window)
    uu = sg.to_grid(dense)
    p = sg.to_grid(sg.derivative(dense))
    values = 0.5 * p**2 + density(uu, p, c)
    energy = TWO_PI * float(np.mean(values))
    if isinstance(H, GkdvHamiltonian) and H.higher:
        energy += sum(h.evaluate(u).real for h in H.higher)
    return energy


def energy_dense(states: np.ndarray, c: Coefficients, grid: SpectralGrid) -> np.ndarray:
    uu = grid.to_grid(states)
    p = grid.to_grid(grid.derivative(states))
    return TWO_PI * np.mean(0.5 * p**2 + density(uu, p, c), axis=-1)


def gradient(u: SpatialState, c: Coefficients) -> SpatialState:
    """L^2 gradient -u_xx + f_u - d/dx f_p."""
    window = 3 * max(u.support, 1)
    sg = SpectralGrid(window, padded_grid_size(max(u.support, 1), 3))
    dense = u.dense(window)
    uu = sg.to_grid(dense)
    p = sg.to_grid(sg.derivative(dense))
    f_u, f_p = density_partials(uu, p, c)
    out = -sg.derivative(dense, 2) + sg.from_grid(f_u) - sg.derivative(sg.from_grid(f_p))
    return SpatialState.from_dense(out)


def pairing(g: SpatialState, h: SpatialState) -> float:
    """int g h dx for real states."""
    return float(TWO_PI * sum((v * h.coeffs.get(-j, 0.0)).real for j, v in g.coeffs.items()))
