"""Frequency-amplitude data and the non-degeneracy checks built on it.

In actions I_j = |u_j|^2 the normal form reads h(I) = sum j^2 I_j + Q(I) with
Q quadratic, and the tangential frequencies are omega_j = j dh/dI_j.  On the
torus I_j = eps^2 j xi_j this gives omega = omega_bar + eps^2 M xi with the
twist matrix M = D Hess(Q) D, D = diag(sites).

Exact (rational) versions of every matrix are provided so that statements
such as det M = 0 are decided without tolerances.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .model import Coefficients
from .normal_form import ResonantQuartic
from .spectral import SiteSet


class SingularTwistError(ValueError):
    """The twist matrix is singular where an inverse is needed."""


@dataclass(frozen=True)
class TwistData:
    A: np.ndarray
    M: np.ndarray
    det_M: float
    source: str
    condition: float = float("nan")
    exact_det: Fraction | None = None


@dataclass(frozen=True)
class SpectralConstants:
    d_xi: float
    c_xi: float
    xi: tuple
    v1_xi: float
    v3_xi: float
    # d = d_v3 * v3.xi + d_v1 * v1.xi and c = c_v3 * v3.xi + c_v1 * v1.xi
    d_weights: tuple = field(default=(0.0, 0.0))
    c_weights: tuple = field(default=(0.0, 0.0))


# ------------------------------------------------------------- exact algebra

def _frac(x) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(x)


def exact_det(matrix) -> Fraction:
    """Determinant of a small matrix of Fractions by Gaussian elimination."""
    a = [[_frac(v) for v in row] for row in matrix]
    n = len(a)
    det = Fraction(1)
    for col in range(n):
        pivot = next((r for r in range(col, n) if a[r][col] != 0), None)
        if pivot is None:
            return Fraction(0)
        if pivot != col:
            a[col], a[pivot] = a[pivot], a[col]
            det = -det
        det *= a[col][col]
        for r in range(col + 1, n):
            f = a[r][col] / a[col][col]
            if f:
                for k in range(col, n):
                    a[r][k] -= f * a[col][k]
    return det


def exact_solve(matrix, rhs) -> list:
    a = [[_frac(v) for v in row] + [_frac(b)] for row, b in zip(matrix, rhs)]
    n = len(a)
    for col in range(n):
        pivot = next((r for r in range(col, n) if a[r][col] != 0), None)
        if pivot is None:
            raise SingularTwistError("singular matrix in exact solve")
        a[col], a[pivot] = a[pivot], a[col]
        for r in range(n):
            if r != col and a[r][col]:
                f = a[r][col] / a[col][col]
                for k in range(col, n + 1):
                    a[r][k] -= f * a[col][k]
    return [a[i][n] / a[i][i] for i in range(n)]


def exact_action_quartic(c: Coefficients, sites: SiteSet):
    """Action quartic in rational arithmetic, matching the bracket pipeline.

    Returns (diag, cross) with cross over unordered pairs j < k.
    """
    c1, c2, c3, c4, _, c6, c7 = (_frac(v) for v in c.as_tuple())
    diag = {}
    for j in sites.positive_sites:
        j2 = Fraction(j * j)
        diag[j] = (-12 * c1**2 * j2**2 - 3 * c2**2 * j2 - 3 * c3**2 / j2 - 6 * c2 * c3
                   + 6 * c4 * j2**2 + 2 * c6 * j2 + 6 * c7)
    cross = {}
    for j, k in itertools.combinations(sites.positive_sites, 2):
        s2, p2 = Fraction(j * j + k * k), Fraction(j * j * k * k)
        cross[(j, k)] = 2 * (-24 * c1**2 * p2 - Fraction(8, 3) * c2**2 * s2 - 8 * c2 * c3
                             + 12 * c4 * p2 + 2 * c6 * s2 + 12 * c7)
    return diag, cross


def exact_twist_matrix(c: Coefficients, sites: SiteSet) -> list:
    """M = D Hess(Q) D with rational entries."""
    diag, cross = exact_action_quartic(c, sites)
    s = sites.positive_sites
    nu = len(s)
    M = [[Fraction(0)] * nu for _ in range(nu)]
    for a, j in enumerate(s):
        M[a][a] = 2 * diag[j] * j * j
    for (a, j), (b, k) in itertools.combinations(enumerate(s), 2):
        M[a][b] = M[b][a] = cross[(j, k)] * j * k
    return M


def closed_form_A(c: Coefficients, sites: SiteSet) -> list:
    """Compact closed-form twist matrix A, for comparison only (M = A D).

    A = (24c1^2 - 12c4) D^5 (I - 2 D^-2 U D^2) + (14/3 c2^2 - 4c6) D^3
        + (4c6 - 16/3 c2^2)(D^3 U + D U D^2) + 12(c2c3 - c7) D
        + (24c7 - 16c2c3) D U - 6 c3^2 D^-1,  U = all-ones matrix.
    """
    c1, c2, c3, c4, _, c6, c7 = (_frac(v) for v in c.as_tuple())
    s = [Fraction(v) for v in sites.positive_sites]
    nu = len(s)
    A = [[Fraction(0)] * nu for _ in range(nu)]
    for a in range(nu):
        for b in range(nu):
            ja, jb = s[a], s[b]
            delta = 1 if a == b else 0
            v = (24 * c1**2 - 12 * c4) * (ja**5 * delta - 2 * ja**3 * jb**2)
            v += (Fraction(14, 3) * c2**2 - 4 * c6) * ja**3 * delta
            v += (4 * c6 - Fraction(16, 3) * c2**2) * (ja**3 + ja * jb**2)
            v += 12 * (c2 * c3 - c7) * ja * delta
            v += (24 * c7 - 16 * c2 * c3) * ja
            v += -6 * c3**2 / ja * delta
            A[a][b] = v
    return A


def to_float(matrix) -> np.ndarray:
    return np.array([[float(v) for v in row] for row in matrix])


# ---------------------------------------------------------- floating versions

def omega_of_actions(quartic: ResonantQuartic, sites: SiteSet, I) -> np.ndarray:
    """omega_j = j^3 + j dQ/dI_j."""
    I = np.asarray(I, dtype=float)
    if np.any(I <= 0):
        raise ValueError("actions must be strictly positive")
    grad = quartic.hessian(sites) @ I
    s = np.array(sites.positive_sites, dtype=float)
    return s**3 + s * grad


def twist_matrices(quartic: ResonantQuartic, sites: SiteSet,
                   c: Coefficients | None = None) -> TwistData:
    """M = D Hess D from the pipeline quartic; A = M D^-1."""
    D = np.diag(np.array(sites.positive_sites, dtype=float))
    M = D @ quartic.hessian(sites) @ D
    A = M @ np.linalg.inv(D)
    det = float(np.linalg.det(M)) if M.size else 0.0
    cond = float(np.linalg.cond(M)) if np.any(M) else float("inf")
    exact = exact_det(exact_twist_matrix(c, sites)) if c is not None else None
    return TwistData(A, M, det, "pipeline", cond, exact)


def closed_form_twist(c: Coefficients, sites: SiteSet) -> TwistData:
    A = closed_form_A(c, sites)
    D = [[Fraction(sites.positive_sites[b]) if a == b else Fraction(0)
          for b in range(sites.nu)] for a in range(sites.nu)]
    M = [[sum(A[a][k] * D[k][b] for k in range(sites.nu)) for b in range(sites.nu)]
         for a in range(sites.nu)]
    Mf = to_float(M)
    return TwistData(to_float(A), Mf, float(np.linalg.det(Mf)), "closed_form",
                     float(np.linalg.cond(Mf)) if np.any(Mf) else float("inf"), exact_det(M))


def finite_difference_hessian(quartic: ResonantQuartic, sites: SiteSet, I,
                              step: float = 1e-4) -> np.ndarray:
    """Central-difference Hessian of h(I) = sum j^2 I_j + Q(I)."""
    I = np.asarray(I, dtype=float)
    s = np.array(sites.positive_sites, dtype=float)

    def h(x):
        return float(s**2 @ x) + quartic.value(dict(zip(sites.positive_sites, x)))

    n = len(I)
    hess = np.zeros((n, n))
    for a in range(n):
        for b in range(n):
            ea = np.eye(n)[a] * step
            eb = np.eye(n)[b] * step
            hess[a, b] = (h(I + ea + eb) - h(I + ea - eb) - h(I - ea + eb)
                          + h(I - ea - eb)) / (4 * step * step)
    return hess


# --------------------------------------------------------------- checkers

def check_resonant_coeffs(c: Coefficients, tol: float = 1e-14) -> bool:
    c1, c2, c3, c4, _, c6, c7 = c.as_tuple()
    return all(abs(v) <= tol for v in (c3, c7, 2 * c1**2 - c4, 7 * c2**2 - 6 * c6))


def check_C1_C2(c: Coefficients, nu: int, jk_range: int = 50) -> dict:
    """C1: (7 - 16 nu) c2^2 != 6 (1 - 2 nu) c6.
    C2: nu (3c6 - 4c2^2) / (9c4 - 18c1^2) avoids {j^2 + k^2 + jk, j != k}."""
    if nu < 1:
        raise ValueError("nu must be positive")
    c1, c2, c3, c4, _, c6, c7 = (_frac(v) for v in c.as_tuple())
    lhs, rhs = (7 - 16 * nu) * c2**2, 6 * (1 - 2 * nu) * c6
    scale = max(Fraction(1), abs(lhs), abs(rhs))
    margin = abs(lhs - rhs)
    C1 = float(margin) > 1e-10 * float(scale)

    num = nu * (3 * c6 - 4 * c2**2)
    den = 9 * c4 - 18 * c1**2
    if den == 0:
        if num == 0:
            C2, status, value = True, "vacuous", None
        else:
            C2, status, value = False, "C2 undefined", None
    else:
        value = num / den
        hit = None
        if value.denominator == 1 and value > 0:
            for j in range(-jk_range, jk_range + 1):
                for k in range(-jk_range, jk_range + 1):
                    if j and k and j != k and j * j + k * k + j * k == value:
                        hit = (j, k)
                        break
                if hit:
                    break
        C2, status = hit is None, ("pass" if hit is None else f"hit at {hit}")
    return {"C1": C1, "C1_margin": float(margin), "C2": C2, "C2_status": status,
            "C2_value": None if value is None else float(value), "jk_range": jk_range}


def spectral_weights(c: Coefficients):
    """Weights of d and c on (v3.xi, v1.xi)."""
    c1, c2, c3, c4, _, c6, c7 = c.as_tuple()
    d_w = (24 * c4 - 48 * c1**2, 4 * c6 - 16.0 / 3.0 * c2**2)
    c_w = (16.0 / 3.0 * c2**2 - 4 * c6, 16 * c2 * c3 - 24 * c7)
    return d_w, c_w


def spectral_constants(c: Coefficients, sites: SiteSet, xi) -> SpectralConstants:
    xi = np.asarray(xi, dtype=float)
    if np.any(xi <= 0):
        raise ValueError("xi must be positive")
    s = np.array(sites.positive_sites, dtype=float)
    v1x, v3x = float(s @ xi), float(s**3 @ xi)
    d_w, c_w = spectral_weights(c)
    return SpectralConstants(d_w[0] * v3x + d_w[1] * v1x, c_w[0] * v3x + c_w[1] * v1x,
                             tuple(xi), v1x, v3x, d_w, c_w)


def B_matrix(c: Coefficients, sites: SiteSet, j: int, k: int) -> list:
    """Rational B(j, k) built from D^3 U D^3 and D U D^3."""
    c1, c2, c3, c4, _, c6, c7 = (_frac(v) for v in c.as_tuple())
    q = Fraction(j * j + k * k + j * k)
    if q <= 0:
        raise ZeroDivisionError(f"j^2 + k^2 + jk vanishes at {(j, k)}")
    s = [Fraction(v) for v in sites.positive_sites]
    alpha = -(24 * c4 - 48 * c1**2 + (12 * c6 - 16 * c2**2) / (3 * q))
    beta = Fraction(16, 3) * c2**2 - 4 * c6 + (16 * c2 * c3 - 24 * c7) / q
    return [[alpha * a**3 * b**3 + beta * a * b**3 for b in s] for a in s]


def check_H1_H2(c: Coefficients, sites: SiteSet, jk_pairs) -> dict:
    """H1: d(M^-1 omega_bar) != 1; H2: det(M + B(j, k)) != 0 per pair."""
    M = exact_twist_matrix(c, sites)
    if exact_det(M) == 0:
        raise SingularTwistError("twist matrix is singular")
    s = sites.positive_sites
    xi = exact_solve(M, [Fraction(v**3) for v in s])
    c1, c2, c4, c6 = (_frac(v) for v in (c.c1, c.c2, c.c4, c.c6))
    v3_xi = sum(Fraction(v**3) * x for v, x in zip(s, xi))
    v1_xi = sum(Fraction(v) * x for v, x in zip(s, xi))
    d_val = (24 * c4 - 48 * c1**2) * v3_xi + (4 * c6 - Fraction(16, 3) * c2**2) * v1_xi
    H2 = {}
    for j, k in jk_pairs:
        B = B_matrix(c, sites, j, k)
        H2[(j, k)] = exact_det([[M[a][b] + B[a][b] for b in range(len(s))]
                                for a in range(len(s))]) != 0
    return {"H1": d_val != 1, "d_at_omega_bar": float(d_val), "H2": H2}


def amplitude_of_frequency(omega, twist: TwistData, sites: SiteSet, eps: float) -> np.ndarray:
    """xi = eps^-2 M^-1 (omega - omega_bar)."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    if twist.det_M == 0 or (twist.exact_det is not None and twist.exact_det == 0):
        raise SingularTwistError("twist matrix is singular")
    return np.linalg.solve(twist.M, np.asarray(omega, dtype=float) - sites.omega_bar) / eps**2


def frequency_of_amplitude(xi, twist: TwistData, sites: SiteSet, eps: float) -> np.ndarray:
    return sites.omega_bar + eps**2 * twist.M @ np.asarray(xi, dtype=float)
