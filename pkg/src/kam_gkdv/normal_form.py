"""Weak Birkhoff normal form up to degree five.

Three homological steps remove every monomial with at most one index
outside the tangential set S (degree 3 and 5), and the non-resonant such
monomials in degree 4.  Transport uses truncated Lie series

    H o Phi_F = sum_k ad_F^k H / k!,   ad_F H = {H, F},

so a generator F = h / (i sum j^3) cancels h through {H2, F} = -i sum j^3 F.
"""

from __future__ import annotations

import enum
import itertools
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .model import Coefficients, GkdvHamiltonian, build_gkdv
from .spectral import (
    TWO_PI,
    CompiledVectorField,
    PolyHamiltonian,
    SiteSet,
    poisson_bracket,
    time_one_flow,
)


class HypothesisError(ValueError):
    """Tangential sites violate a non-resonance hypothesis."""


class NormalFormError(ValueError):
    """A table expected to be in normal form carries non-action monomials."""


class Step(enum.IntEnum):
    THREE = 3
    FOUR = 4
    FIVE = 5


@dataclass(frozen=True)
class BnfGenerator:
    F: PolyHamiltonian
    step: Step
    support_bound: int


@dataclass(frozen=True)
class HypothesisReport:
    holds: bool
    witnesses: list


@dataclass(frozen=True)
class ResonantQuartic:
    """Coefficients of I_j^2 and I_j I_k, with the 2*pi of the integral removed."""

    diag: dict
    cross: dict

    def value(self, actions: dict) -> float:
        total = sum(v * actions[j] ** 2 for j, v in self.diag.items())
        total += sum(v * actions[j] * actions[k] for (j, k), v in self.cross.items())
        return total

    def hessian(self, sites: SiteSet) -> np.ndarray:
        idx = {j: i for i, j in enumerate(sites.positive_sites)}
        hess = np.zeros((sites.nu, sites.nu))
        for j, v in self.diag.items():
            hess[idx[j], idx[j]] = 2.0 * v
        for (j, k), v in self.cross.items():
            hess[idx[j], idx[k]] += v
            hess[idx[k], idx[j]] += v
        return hess


# ---------------------------------------------------------------- hypotheses

def check_hypothesis_S(sites: SiteSet) -> HypothesisReport:
    """Quadruples in S^4 with nonzero sum and sum j^3 = (sum j)^3."""
    s = np.array(sites.full, dtype=np.int64)
    grid = np.stack(np.meshgrid(s, s, s, s, indexing="ij"), axis=-1).reshape(-1, 4)
    total = grid.sum(axis=1)
    cubes = (grid**3).sum(axis=1)
    bad = (total != 0) & (cubes == total**3)
    witnesses = sorted(tuple(int(v) for v in row) for row in grid[bad])
    return HypothesisReport(not witnesses, witnesses)


def brute_force_hypothesis_S(sites: SiteSet) -> list:
    """Reference enumeration with plain integer loops."""
    out = []
    for q in itertools.product(sites.full, repeat=4):
        t = sum(q)
        if t != 0 and sum(j**3 for j in q) - t**3 == 0:
            out.append(q)
    return sorted(out)


def quintic_resonances(sites: SiteSet) -> list:
    """Five-tuples with at most one entry outside S, zero sum and zero cube sum."""
    out = []
    for q in itertools.product(sites.full, repeat=4):
        fifth = -sum(q)
        if fifth == 0:
            continue
        if sum(j**3 for j in q) + fifth**3 == 0:
            out.append(tuple(sorted(q + (fifth,))))
    return sorted(set(out))


def check_S0_S1(sites: SiteSet) -> bool:
    return not quintic_resonances(sites)


# ------------------------------------------------------------ homological steps

def _cube_sum(key) -> int:
    return sum(j**3 for j in key)


def _divide_out(H: PolyHamiltonian, keep) -> dict:
    out = {}
    for key, h in H.monomials.items():
        if not keep(key):
            continue
        d = _cube_sum(key)
        if d == 0:
            raise ZeroDivisionError(f"resonant monomial {key} selected for removal")
        out[key] = h / (1j * d)
    return out


def solve_homological_step3(H3: PolyHamiltonian, sites: SiteSet) -> BnfGenerator:
    """Remove cubic monomials with at least two indices in S."""
    if not H3.momentum_preserving:
        raise ValueError("cubic part must preserve momentum")
    terms = _divide_out(H3, lambda k: sites.outside(k) <= 1)
    F = PolyHamiltonian.from_monomials(3, terms, True)
    return BnfGenerator(F, Step.THREE, 2 * sites.max_site)


def solve_homological_step4(H4_3: PolyHamiltonian, sites: SiteSet) -> BnfGenerator:
    """Remove quartic monomials with at most one index outside S and a
    nonzero cube sum."""
    if not H4_3.momentum_preserving:
        raise ValueError("quartic part must preserve momentum")
    terms = _divide_out(H4_3, lambda k: sites.outside(k) <= 1 and _cube_sum(k) != 0)
    F = PolyHamiltonian.from_monomials(4, terms, True)
    return BnfGenerator(F, Step.FOUR, 3 * sites.max_site)


def solve_homological_step5(H5_4: PolyHamiltonian, sites: SiteSet) -> BnfGenerator:
    """Remove quintic monomials with at most one index outside S."""
    bad = quintic_resonances(sites)
    if bad:
        raise HypothesisError(f"quintic resonances among the sites: {bad[:5]}")
    terms = _divide_out(H5_4, lambda k: sites.outside(k) <= 1)
    F = PolyHamiltonian.from_monomials(5, terms, True)
    return BnfGenerator(F, Step.FIVE, 4 * sites.max_site)


# ------------------------------------------------------------------ transport

def bnf_transport(parts, F, max_degree: int = 5, *, sites: SiteSet | None = None,
                  target_outside: int | None = None, max_mode: int | None = None) -> list:
    """Lie-series transport of a sum of homogeneous parts.

    Returns the transported Hamiltonian as a list indexed by degree - 2, from
    degree 2 up to ``max_degree``.  With ``sites`` and ``target_outside``
    intermediate monomials that cannot end with at most ``target_outside``
    indices outside S are pruned (each bracket removes at most one).
    """
    gen = F.F if isinstance(F, BnfGenerator) else F
    if parts and max_degree < max(p.degree for p in parts):
        raise ValueError("max_degree below the input degree")
    out = {d: PolyHamiltonian.zero(d) for d in range(2, max_degree + 1)}
    for part in parts:
        out[part.degree] = out[part.degree] + part
    step = gen.degree - 2
    if not gen.monomials or step <= 0:
        return [out[d] for d in range(2, max_degree + 1)]
    for part in parts:
        term = part
        k = 0
        while term.degree + step <= max_degree and term.monomials:
            k += 1
            degree = term.degree + step
            keep = None
            if sites is not None and target_outside is not None:
                remaining = (max_degree - degree) // step
                limit = target_outside + remaining
                keep = lambda key, limit=limit: sites.outside(key) <= limit
            term = poisson_bracket(term, gen, keep=keep, max_mode=max_mode).scaled(1.0 / k)
            out[degree] = out[degree] + term
    return [out[d] for d in range(2, max_degree + 1)]


def extract_resonant_quartic(H4_4: PolyHamiltonian, sites: SiteSet,
                             tol: float = 1e-12) -> ResonantQuartic:
    """Read off the action-only quartic restricted to S-supported indices."""
    diag, cross = {}, {}
    scale = max(1.0, max((abs(v) for v in H4_4.monomials.values()), default=0.0))
    for key, v in H4_4.monomials.items():
        if sites.outside(key) != 0:
            continue
        counts = Counter(key)
        paired = all(counts[j] == counts[-j] for j in counts)
        if not paired:
            if abs(v) > tol * scale:
                raise NormalFormError(f"non-action monomial {key} with coefficient {v}")
            continue
        value = v / TWO_PI
        if abs(value.imag) > tol * scale:
            raise NormalFormError(f"complex action coefficient at {key}: {v}")
        positive = sorted(j for j in counts if j > 0)
        if len(positive) == 1:
            diag[positive[0]] = diag.get(positive[0], 0.0) + value.real
        else:
            pair = (positive[0], positive[1])
            cross[pair] = cross.get(pair, 0.0) + value.real
    for j in sites.positive_sites:
        diag.setdefault(j, 0.0)
    return ResonantQuartic(diag, cross)


# ------------------------------------------------------------------- pipeline

@dataclass
class WeakNormalForm:
    sites: SiteSet
    coeffs: Coefficients
    hamiltonian: GkdvHamiltonian
    F3: BnfGenerator
    F4: BnfGenerator
    F5: BnfGenerator | None
    H3_3: PolyHamiltonian
    H4_3: PolyHamiltonian
    H4_4: PolyHamiltonian
    H5_4: PolyHamiltonian
    H5_5: PolyHamiltonian | None
    quartic: ResonantQuartic
    diagnostics: dict = field(default_factory=dict)

    def generators(self) -> list[BnfGenerator]:
        return [g for g in (self.F3, self.F4, self.F5) if g is not None]


def weak_normal_form(c: Coefficients, sites: SiteSet, max_degree: int = 5,
                     max_mode: int | None = None) -> WeakNormalForm:
    """Run the three steps; the quintic step needs the quintic hypotheses."""
    if max_mode is None:
        max_mode = max_degree * sites.max_site
    H = build_gkdv(c, max_mode)
    keep1 = lambda key: sites.outside(key) <= 1

    F3 = solve_homological_step3(H.H3, sites)
    parts = [H.H2, H.H3, H.H4, *H.higher]
    after3 = bnf_transport(parts, F3, max_degree, sites=sites, target_outside=1,
                           max_mode=max_mode)
    H3_3, H4_3 = after3[1], after3[2]
    H5_3 = after3[3] if max_degree >= 5 else PolyHamiltonian.zero(5)

    F4 = solve_homological_step4(H4_3, sites)
    H4_4 = (H4_3 + poisson_bracket(H.H2, F4.F, max_mode=max_mode)).filtered(keep1)
    H5_4 = H5_3 + poisson_bracket(H3_3, F4.F, keep=keep1, max_mode=max_mode)
    H5_4 = H5_4.filtered(keep1)
    quartic = extract_resonant_quartic(H4_4, sites)

    F5, H5_5 = None, None
    if max_degree >= 5 and check_S0_S1(sites):
        F5 = solve_homological_step5(H5_4, sites)
        H5_5 = (H5_4 + poisson_bracket(H.H2, F5.F, max_mode=max_mode)).filtered(keep1)

    cubic_left = (H3_3.filtered(keep1)).max_abs()
    quartic_linear = H4_4.filtered(lambda k: sites.outside(k) == 1).max_abs()
    diagnostics = {
        "max_mode": max_mode,
        "generator_sizes": {"F3": len(F3.F), "F4": len(F4.F), "F5": len(F5.F) if F5 else None},
        "cubic_removed_residual": cubic_left,
        "quartic_linear_in_z": quartic_linear,
        "quintic_low_residual": H5_5.max_abs() if H5_5 is not None else None,
        "quintic_step": "done" if F5 is not None else "skipped: quintic resonances",
    }
    return WeakNormalForm(sites, c, H, F3, F4, F5, H3_3, H4_3, H4_4, H5_4, H5_5, quartic,
                          diagnostics)


def normal_form_map(nf: WeakNormalForm, window: int, dt: float = 1e-3):
    """Return u' -> Phi_3(Phi_4(Phi_5(u'))) acting on dense batches."""
    fields = [CompiledVectorField(g.F, window) for g in reversed(nf.generators())]

    def apply(states: np.ndarray) -> np.ndarray:
        y = states
        for f in fields:
            if not f.empty:
                y = time_one_flow([f], y, dt)
        return y

    return apply


# --------------------------------------------------------- closed-form tables

def closed_form_quartic(c: Coefficients, sites: SiteSet, ordered_cross: bool = False):
    """Closed-form action quartic, kept only for comparison with the pipeline.

    It differs from the pipeline on the c2^2 and c2 c3 diagonals.

    Diagonal: -12c1^2 j^4 - 7/3 c2^2 j^2 - 3c3^2/j^2 - 2c2c3 + 6c4 j^4 + 2c6 j^2 + 6c7.
    Cross (unordered pairs): -24c1^2 j^2k^2 - 8/3 c2^2 (j^2+k^2) - 8c2c3
    + 12c4 j^2k^2 + 2c6 (j^2+k^2) + 12c7.  ``ordered_cross`` doubles it.
    """
    c1, c2, c3, c4, _, c6, c7 = c.as_tuple()
    diag = {j: (-12 * c1**2 * j**4 - 7 * c2**2 * j**2 / 3 - 3 * c3**2 / j**2 - 2 * c2 * c3
                + 6 * c4 * j**4 + 2 * c6 * j**2 + 6 * c7)
            for j in sites.positive_sites}
    factor = 2.0 if ordered_cross else 1.0
    cross = {}
    for j, k in itertools.combinations(sites.positive_sites, 2):
        cross[(j, k)] = factor * (-24 * c1**2 * j**2 * k**2 - 8 * c2**2 * (j**2 + k**2) / 3
                                  - 8 * c2 * c3 + 12 * c4 * j**2 * k**2
                                  + 2 * c6 * (j**2 + k**2) + 12 * c7)
    return ResonantQuartic(diag, cross)


def quartic_discrepancies(pipeline: ResonantQuartic, reference: ResonantQuartic,
                          tol: float = 1e-9) -> list:
    out = []
    for j, v in pipeline.diag.items():
        r = reference.diag.get(j, 0.0)
        if abs(v - r) > tol * max(1.0, abs(v)):
            out.append({"term": f"I_{j}^2", "pipeline": v, "closed_form": r})
    for pair in sorted(set(pipeline.cross) | set(reference.cross)):
        v, r = pipeline.cross.get(pair, 0.0), reference.cross.get(pair, 0.0)
        if abs(v - r) > tol * max(1.0, abs(v)):
            out.append({"term": f"I_{pair[0]} I_{pair[1]}", "pipeline": v, "closed_form": r})
    return out
