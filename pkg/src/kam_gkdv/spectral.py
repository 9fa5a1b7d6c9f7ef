"""Fourier representation of zero-average states and homogeneous Hamiltonians.

A state is u(x) = sum_{j != 0} u_j e^{ijx} with u_{-j} = conj(u_j).  A
homogeneous Hamiltonian of degree n is stored as a symmetric table

    H(u) = sum over ordered (j_1, ..., j_n) of H_{j_1...j_n} u_{j_1} ... u_{j_n}

keyed by the sorted multi-index.  Tables carry the 2*pi from integrating
over the circle, so the symplectic calculus below carries a matching
1/(2*pi):

    [X_H(u)]_j = (i j / 2pi) dH/du_{-j}
    {F, G}     = -(1/2pi) sum_j i j (dF/du_{-j}) (dG/du_j)

With these, d/dt G(u(t)) = {G, F}(u(t)) along the flow of X_F and the flow
of H2 = (1/2) int u_x^2 is the Airy flow u_t = -u_xxx.
"""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np
import scipy.sparse as sp

TWO_PI = 2.0 * math.pi

MultiIndex = tuple[int, ...]


class InvalidDegreeError(ValueError):
    """Raised when a bracket would produce a Hamiltonian of degree < 2."""


def canonical(indices: Iterable[int]) -> MultiIndex:
    return tuple(sorted(indices))


def orderings(key: MultiIndex) -> int:
    """Number of distinct orderings of a multi-index."""
    count = math.factorial(len(key))
    for m in Counter(key).values():
        count //= math.factorial(m)
    return count


@dataclass(frozen=True)
class SiteSet:
    """Tangential sites S = S+ u (-S+), given by the positive half."""

    positive_sites: tuple[int, ...]

    def __post_init__(self):
        sites = tuple(int(s) for s in self.positive_sites)
        if not sites:
            raise ValueError("at least one tangential site is required")
        if any(s < 1 for s in sites):
            raise ValueError(f"sites must be positive integers, got {sites}")
        if len(set(sites)) != len(sites):
            raise ValueError(f"sites must be distinct, got {sites}")
        object.__setattr__(self, "positive_sites", tuple(sorted(sites)))

    @property
    def nu(self) -> int:
        return len(self.positive_sites)

    @property
    def full(self) -> tuple[int, ...]:
        return tuple(sorted(self.positive_sites + tuple(-s for s in self.positive_sites)))

    @property
    def max_site(self) -> int:
        return self.positive_sites[-1]

    @property
    def omega_bar(self) -> np.ndarray:
        """Unperturbed tangential frequencies j^3."""
        return np.array([s**3 for s in self.positive_sites], dtype=float)

    def __contains__(self, j: int) -> bool:
        return abs(j) in self.positive_sites

    def outside(self, key: Iterable[int]) -> int:
        """How many entries of a multi-index lie outside S."""
        return sum(1 for j in key if abs(j) not in self.positive_sites)

    def lattice_label(self, j: int) -> np.ndarray:
        """Odd injective map S -> Z^nu sending +-site_i to +-e_i."""
        out = np.zeros(self.nu, dtype=int)
        out[self.positive_sites.index(abs(j))] = 1 if j > 0 else -1
        return out


@dataclass(frozen=True)
class SpatialState:
    """Real zero-average function on the circle, as sparse Fourier amplitudes."""

    coeffs: Mapping[int, complex] = field(default_factory=dict)

    def __post_init__(self):
        clean: dict[int, complex] = {}
        for j, v in self.coeffs.items():
            j = int(j)
            if j == 0:
                raise ValueError("zero mode is not part of the phase space")
            clean[j] = complex(v)
        for j, v in list(clean.items()):
            partner = clean.get(-j)
            if partner is None:
                clean[-j] = v.conjugate()
            elif abs(partner - v.conjugate()) > 1e-12 * max(1.0, abs(v)):
                raise ValueError(f"reality violated at mode {j}")
        object.__setattr__(self, "coeffs", clean)

    @classmethod
    def from_positive(cls, amplitudes: Mapping[int, complex]) -> "SpatialState":
        return cls({j: v for j, v in amplitudes.items() if j > 0})

    @classmethod
    def from_dense(cls, values: np.ndarray, tol: float = 0.0) -> "SpatialState":
        """Build from a dense array indexed by j + N for j in [-N, N]."""
        n = (len(values) - 1) // 2
        out = {}
        for j in range(1, n + 1):
            v = complex(values[n + j])
            if abs(v) > tol:
                out[j] = v
        return cls(out)

    @property
    def support(self) -> int:
        return max((abs(j) for j in self.coeffs), default=0)

    def dense(self, n: int) -> np.ndarray:
        out = np.zeros(2 * n + 1, dtype=complex)
        for j, v in self.coeffs.items():
            if abs(j) > n:
                raise ValueError(f"mode {j} outside the dense window {n}")
            out[n + j] = v
        return out

    def on_grid(self, points: int) -> np.ndarray:
        x = TWO_PI * np.arange(points) / points
        values = np.zeros(points, dtype=complex)
        for j, v in self.coeffs.items():
            values += v * np.exp(1j * j * x)
        return values.real

    def derivative(self, order: int = 1) -> "SpatialState":
        return SpatialState({j: (1j * j) ** order * v for j, v in self.coeffs.items()})

    def __add__(self, other: "SpatialState") -> "SpatialState":
        out = dict(self.coeffs)
        for j, v in other.coeffs.items():
            out[j] = out.get(j, 0.0) + v
        return SpatialState(out)

    def scaled(self, factor: float) -> "SpatialState":
        return SpatialState({j: factor * v for j, v in self.coeffs.items()})

    def max_abs(self) -> float:
        return max((abs(v) for v in self.coeffs.values()), default=0.0)


@dataclass(frozen=True)
class QuasiPeriodicField:
    """Real function on T^nu x T as sparse amplitudes over (l, j), j != 0."""

    nu: int
    coeffs: Mapping[tuple[tuple[int, ...], int], complex] = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for (l, j), v in self.coeffs.items():
            l = tuple(int(a) for a in l)
            if len(l) != self.nu:
                raise ValueError(f"angle index {l} has wrong length for nu={self.nu}")
            if j == 0:
                raise ValueError("zero spatial mode is not allowed")
            clean[(l, int(j))] = complex(v)
        for (l, j), v in list(clean.items()):
            mirror = (tuple(-a for a in l), -j)
            if mirror not in clean:
                clean[mirror] = v.conjugate()
            elif abs(clean[mirror] - v.conjugate()) > 1e-10 * max(1.0, abs(v)):
                raise ValueError(f"reality violated at {(l, j)}")
        object.__setattr__(self, "coeffs", clean)

    def at_angle(self, phi: np.ndarray) -> SpatialState:
        out: dict[int, complex] = defaultdict(complex)
        phi = np.asarray(phi, dtype=float)
        for (l, j), v in self.coeffs.items():
            if j > 0:
                out[j] += v * np.exp(1j * float(np.dot(l, phi)))
        return SpatialState(dict(out))

    def max_abs(self) -> float:
        return max((abs(v) for v in self.coeffs.values()), default=0.0)


def project(u, which: str, sites: SiteSet):
    """Keep spatial modes inside S ('S') or outside S ('S_perp')."""
    if which not in ("S", "S_perp"):
        raise ValueError("which must be 'S' or 'S_perp'")
    keep_inside = which == "S"
    if isinstance(u, SpatialState):
        return SpatialState({j: v for j, v in u.coeffs.items() if (j in sites) == keep_inside})
    if isinstance(u, QuasiPeriodicField):
        return QuasiPeriodicField(
            u.nu, {k: v for k, v in u.coeffs.items() if (k[1] in sites) == keep_inside}
        )
    raise TypeError(f"cannot project {type(u).__name__}")


def dx_inverse(u: SpatialState) -> SpatialState:
    """Zero-average periodic primitive."""
    return SpatialState({j: v / (1j * j) for j, v in u.coeffs.items()})


class PolyHamiltonian:
    """Homogeneous polynomial Hamiltonian with symmetric sparse coefficients.

    ``terms`` maps sorted multi-indices to the symmetric coefficient, i.e. the
    value shared by every ordering.  ``monomials`` gives the same data as
    coefficients of the distinct monomials (symmetric value times the number
    of orderings), which is what the algebra works with.
    """

    __slots__ = ("degree", "_mono", "momentum_preserving")

    def __init__(self, degree: int, terms: Mapping[MultiIndex, complex] | None = None,
                 momentum_preserving: bool | None = None, *, _monomial: bool = False):
        if degree < 1:
            raise InvalidDegreeError(f"degree must be positive, got {degree}")
        self.degree = int(degree)
        mono: dict[MultiIndex, complex] = {}
        for key, value in (terms or {}).items():
            if len(key) != degree:
                raise ValueError(f"multi-index {key} does not have length {degree}")
            if 0 in key:
                raise ValueError(f"multi-index {key} contains the zero mode")
            k = canonical(key)
            v = complex(value) if _monomial else complex(value) * orderings(k)
            if v != 0:
                mono[k] = mono.get(k, 0.0) + v
        self._mono = mono
        if momentum_preserving is None:
            momentum_preserving = all(sum(k) == 0 for k in mono)
        self.momentum_preserving = bool(momentum_preserving)

    @classmethod
    def from_monomials(cls, degree: int, monomials: Mapping[MultiIndex, complex],
                       momentum_preserving: bool | None = None) -> "PolyHamiltonian":
        return cls(degree, monomials, momentum_preserving, _monomial=True)

    @classmethod
    def zero(cls, degree: int) -> "PolyHamiltonian":
        return cls(degree, {}, True)

    @property
    def monomials(self) -> dict[MultiIndex, complex]:
        return self._mono

    @property
    def terms(self) -> dict[MultiIndex, complex]:
        return {k: v / orderings(k) for k, v in self._mono.items()}

    def coefficient(self, key: Iterable[int]) -> complex:
        """Symmetric coefficient at any ordering of ``key``."""
        k = canonical(key)
        return self._mono.get(k, 0.0) / orderings(k)

    def __len__(self) -> int:
        return len(self._mono)

    def __repr__(self) -> str:
        return f"PolyHamiltonian(degree={self.degree}, terms={len(self._mono)})"

    def max_abs(self) -> float:
        return max((abs(v) for v in self.terms.values()), default=0.0)

    def max_mode(self) -> int:
        return max((max(abs(j) for j in k) for k in self._mono), default=0)

    def is_real(self, tol: float = 1e-12) -> bool:
        for k, v in self._mono.items():
            mirror = canonical(-j for j in k)
            if abs(self._mono.get(mirror, 0.0) - v.conjugate()) > tol * max(1.0, abs(v)):
                return False
        return True

    def momentum_check(self) -> bool:
        """Exhaustive check that every stored multi-index sums to zero."""
        return all(sum(k) == 0 for k in self._mono)

    def filtered(self, keep: Callable[[MultiIndex], bool]) -> "PolyHamiltonian":
        return PolyHamiltonian.from_monomials(
            self.degree, {k: v for k, v in self._mono.items() if keep(k)}, self.momentum_preserving
        )

    def chop(self, tol: float) -> "PolyHamiltonian":
        return self.filtered(lambda k: abs(self._mono[k]) > tol)

    def scaled(self, factor: complex) -> "PolyHamiltonian":
        return PolyHamiltonian.from_monomials(
            self.degree, {k: factor * v for k, v in self._mono.items()}, self.momentum_preserving
        )

    def __add__(self, other: "PolyHamiltonian") -> "PolyHamiltonian":
        if other.degree != self.degree:
            raise InvalidDegreeError(f"cannot add degree {self.degree} and {other.degree}")
        out = dict(self._mono)
        for k, v in other._mono.items():
            out[k] = out.get(k, 0.0) + v
        return PolyHamiltonian.from_monomials(
            self.degree, out, self.momentum_preserving and other.momentum_preserving
        )

    def __sub__(self, other: "PolyHamiltonian") -> "PolyHamiltonian":
        return self + other.scaled(-1.0)

    def distance(self, other: "PolyHamiltonian") -> float:
        """Largest coefficient-wise difference (symmetric convention)."""
        return (self - other).max_abs()

    def evaluate(self, u: SpatialState) -> complex:
        total = 0.0 + 0.0j
        c = u.coeffs
        for k, v in self._mono.items():
            prod = v
            for j in k:
                prod *= c.get(j, 0.0)
                if prod == 0:
                    break
            total += prod
        return total

    def partial(self, j: int) -> dict[MultiIndex, complex]:
        """Monomial coefficients of dH/du_j (degree n-1)."""
        out: dict[MultiIndex, complex] = {}
        for k, v in self._mono.items():
            m = k.count(j)
            if m:
                rest = list(k)
                rest.remove(j)
                rk = tuple(rest)
                out[rk] = out.get(rk, 0.0) + m * v
        return out


def poisson_bracket(F: PolyHamiltonian, G: PolyHamiltonian,
                    keep: Callable[[MultiIndex], bool] | None = None,
                    max_mode: int | None = None) -> PolyHamiltonian:
    """{F, G}, optionally pruned to monomials accepted by ``keep``.

    ``max_mode`` drops output monomials with an index beyond the bound.
    """
    degree = F.degree + G.degree - 2
    if degree < 2:
        raise InvalidDegreeError(
            f"bracket of degrees {F.degree} and {G.degree} has degree {degree} < 2"
        )
    by_index: dict[int, list[tuple[MultiIndex, complex, int]]] = defaultdict(list)
    for k, v in G.monomials.items():
        for a, m in Counter(k).items():
            by_index[a].append((k, v, m))
    out: dict[MultiIndex, complex] = defaultdict(complex)
    for k, f in F.monomials.items():
        for a, mk in Counter(k).items():
            partners = by_index.get(-a)
            if not partners:
                continue
            rest_f = list(k)
            rest_f.remove(a)
            factor = 1j * a * mk * f / TWO_PI
            for kg, g, mg in partners:
                rest_g = list(kg)
                rest_g.remove(-a)
                key = tuple(sorted(rest_f + rest_g))
                if max_mode is not None and (key and max(abs(key[0]), abs(key[-1])) > max_mode):
                    continue
                if keep is not None and not keep(key):
                    continue
                out[key] += factor * mg * g
    return PolyHamiltonian.from_monomials(
        degree, {k: v for k, v in out.items() if v != 0},
        F.momentum_preserving and G.momentum_preserving,
    )


def vector_field_apply(H: PolyHamiltonian, u: SpatialState) -> SpatialState:
    """X_H(u) with [X_H(u)]_j = (i j / 2pi) dH/du_{-j}."""
    c = u.coeffs
    out: dict[int, complex] = defaultdict(complex)
    for k, v in H.monomials.items():
        for a, m in Counter(k).items():
            rest = list(k)
            rest.remove(a)
            prod = v * m
            for b in rest:
                prod *= c.get(b, 0.0)
                if prod == 0:
                    break
            if prod != 0:
                out[-a] += (1j * (-a) / TWO_PI) * prod
    return SpatialState({j: v for j, v in out.items() if j > 0 and v != 0})


class CompiledVectorField:
    """X_H evaluated on batches of dense states.

    States are arrays of shape (..., 2N+1) indexed by j + N.  Evaluation cost
    is linear in the number of (monomial, distinct index) pairs.
    """

    def __init__(self, H: PolyHamiltonian, window: int):
        self.window = window
        n = H.degree
        out_rows, coefs, factors = [], [], []
        for k, v in H.monomials.items():
            if max(abs(j) for j in k) > window:
                raise ValueError(f"monomial {k} outside window {window}")
            for a, m in Counter(k).items():
                rest = list(k)
                rest.remove(a)
                out_rows.append(-a + window)
                coefs.append((1j * (-a) / TWO_PI) * m * v)
                factors.append([b + window for b in rest])
        self.empty = not coefs
        width = 2 * window + 1
        if self.empty:
            return
        self.coefs = np.array(coefs, dtype=complex)
        self.factors = np.array(factors, dtype=int).reshape(len(coefs), n - 1)
        self.scatter = sp.csr_matrix(
            (np.ones(len(coefs)), (np.arange(len(coefs)), np.array(out_rows))),
            shape=(len(coefs), width),
        )

    def __call__(self, states: np.ndarray) -> np.ndarray:
        if self.empty:
            return np.zeros_like(states)
        batch = states.reshape(-1, states.shape[-1])
        terms = np.prod(batch[:, self.factors], axis=-1) * self.coefs
        result = (self.scatter.T @ terms.T).T
        return np.asarray(result).reshape(states.shape)


def time_one_flow(fields: list[CompiledVectorField], states: np.ndarray,
                  dt: float = 1e-3) -> np.ndarray:
    """Time-1 map of the summed vector fields, classical RK4."""
    steps = int(round(1.0 / dt))
    h = 1.0 / steps

    def rhs(y):
        total = np.zeros_like(y)
        for f in fields:
            total = total + f(y)
        return total

    y = np.array(states, dtype=complex)
    for _ in range(steps):
        k1 = rhs(y)
        k2 = rhs(y + 0.5 * h * k1)
        k3 = rhs(y + 0.5 * h * k2)
        k4 = rhs(y + h * k3)
        y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(y)):
            raise FloatingPointError("flow integration diverged")
    return y
