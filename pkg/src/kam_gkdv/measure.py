"""Monte Carlo measure of the Cantor-like set of admissible frequencies.

Frequencies are parametrized by amplitudes, omega = omega_bar + eps^2 M xi
with xi uniform in [1, 2]^nu.  A sample is rejected if some l violates the
diophantine bound (set G0) or some (l, j, k) violates

    |omega . l + Im(mu_j - mu_k)| >= 2 gamma_0 |j^3 - k^3| <l>^-tau,

with mu_j = -i m3 j^3 + i m1 j, m3 = 1 + eps^2 d(xi), m1 = eps^2 c(xi),
mu_0 = 0 and gamma_0 = 2 gamma.  Both left-hand sides are affine in xi, so
triples whose affine range over the box stays above the threshold are
discarded exactly before sampling.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .frequency import spectral_weights, twist_matrices
from .model import Coefficients
from .normal_form import weak_normal_form
from .spectral import SiteSet
from .torus import integer_vectors


@dataclass
class CantorSample:
    eps: float
    gamma: float
    tau: float
    a: float
    L: int
    J: int
    xi: np.ndarray
    omega: np.ndarray
    accepted: np.ndarray
    first_violation: list = field(default_factory=list)

    @property
    def fraction(self) -> float:
        return float(np.mean(self.accepted))


def gamma_of(eps: float, a: float) -> float:
    return eps ** (2 + a)


def bracket(l) -> float:
    return float(max(1, int(np.sum(np.abs(l)))))


def membership_G0(omega, gamma: float, tau: float, L: int) -> bool:
    omega = np.asarray(omega, dtype=float)
    for l in integer_vectors(len(omega), L):
        if abs(float(np.dot(omega, l))) < 2 * gamma * bracket(l) ** (-tau):
            return False
    return True


def brexit_constant(omega_max: float, gamma_n: float, slope_min: float) -> float:
    """C1 with |l|_1 >= C1 |j^3 - k^3| for any violation, from
    |omega . l| <= omega_max |l|_1 and |mu_j - mu_k| >= slope_min |j^3 - k^3|.
    Returns 0 (no pruning) when the lower bound is not positive."""
    return max(slope_min - 2 * gamma_n, 0.0) / omega_max


def _index_set(sites: SiteSet, J: int) -> np.ndarray:
    return np.array([0] + [j for j in range(-J, J + 1) if j != 0 and j not in sites], dtype=int)


def candidate_triples(sites: SiteSet, J: int, L: int, C1: float):
    """(l, j, k) with j != k in S^c + {0}, |l|_1 <= L, kept by the pruning
    j^2 + k^2 <= 2 |l|_1 / C1; also returns a count of pruned triples."""
    idx = _index_set(sites, J)
    jj, kk = np.meshgrid(idx, idx, indexing="ij")
    off = jj != kk
    jj, kk = jj[off], kk[off]
    ls = [(0,) * sites.nu] + list(integer_vectors(sites.nu, L))
    out_l, out_j, out_k, pruned = [], [], [], 0
    for l in ls:
        n1 = max(1, sum(abs(a) for a in l))
        keep = np.ones(len(jj), dtype=bool) if C1 <= 0 else jj**2 + kk**2 <= 2 * n1 / C1
        pruned += int(np.sum(~keep))
        out_l.extend([l] * int(np.sum(keep)))
        out_j.append(jj[keep])
        out_k.append(kk[keep])
    return (np.array(out_l, dtype=int).reshape(-1, sites.nu), np.concatenate(out_j),
            np.concatenate(out_k), pruned)


class FrequencyModel:
    """omega(xi), d(xi), c(xi) for one coefficient set and site set."""

    def __init__(self, c: Coefficients, sites: SiteSet, eps: float):
        nf = weak_normal_form(c, sites)
        twist = twist_matrices(nf.quartic, sites, c)
        if twist.exact_det == 0:
            raise ValueError("twist matrix is singular")
        self.c, self.sites, self.eps = c, sites, eps
        self.M = twist.M
        self.omega_bar = sites.omega_bar
        dw, cw = spectral_weights(c)
        s = np.array(sites.positive_sites, dtype=float)
        # d(xi) = dw3 * sum j^3 xi_j + dw1 * sum j xi_j; likewise c(xi)
        self.d_vec = float(dw[0]) * s**3 + float(dw[1]) * s
        self.c_vec = float(cw[0]) * s**3 + float(cw[1]) * s

    def omega(self, xi: np.ndarray) -> np.ndarray:
        return self.omega_bar + self.eps**2 * xi @ self.M.T

    def xi_of(self, omega: np.ndarray) -> np.ndarray:
        return np.linalg.solve(self.M, (np.asarray(omega) - self.omega_bar).T).T / self.eps**2

    def corner_xi(self) -> np.ndarray:
        nu = self.sites.nu
        return np.array(np.meshgrid(*[[1.0, 2.0]] * nu, indexing="ij")).reshape(nu, -1).T

    def corners(self) -> np.ndarray:
        return self.omega(self.corner_xi())

    def slope_min(self, xi=None) -> float:
        """Lower bound of m3 - |m1| over the box (or at given xi)."""
        x = self.corner_xi() if xi is None else np.atleast_2d(xi)
        m3 = 1 + self.eps**2 * x @ self.d_vec
        m1 = self.eps**2 * x @ self.c_vec
        return float(np.min(m3) - np.max(np.abs(m1)))

    def brexit(self, gamma_n: float) -> float:
        return brexit_constant(float(np.max(np.abs(self.corners()))), gamma_n, self.slope_min())


def _affine(model: FrequencyModel, l, j, k):
    """Constant A and xi-gradient G of omega.l + Im(mu_j - mu_k)."""
    l = np.atleast_2d(l).astype(float)
    gap = (j.astype(float) ** 3 - k.astype(float) ** 3)
    lin = (j - k).astype(float)
    A = l @ model.omega_bar - gap
    G = model.eps**2 * (l @ model.M - gap[:, None] * model.d_vec[None, :]
                        + lin[:, None] * model.c_vec[None, :])
    return A, G, np.abs(gap)


def _box_min_abs(A, G):
    """min over xi in [1,2]^nu of |A + G.xi|."""
    lo = A + np.sum(np.where(G > 0, G, 2 * G), axis=1)
    hi = A + np.sum(np.where(G > 0, 2 * G, G), axis=1)
    return np.where((lo <= 0) & (hi >= 0), 0.0, np.minimum(np.abs(lo), np.abs(hi)))


@dataclass
class ScanPlan:
    l: np.ndarray
    j: np.ndarray
    k: np.ndarray
    A: np.ndarray
    G: np.ndarray
    threshold: np.ndarray
    g0_l: np.ndarray
    g0_A: np.ndarray
    g0_G: np.ndarray
    g0_threshold: np.ndarray
    C1: float
    pruned: int
    total_candidates: int


def plan_scan(model: FrequencyModel, gamma: float, tau: float, L: int, J: int) -> ScanPlan:
    gamma_n = 2 * gamma
    C1 = model.brexit(gamma_n)
    l, j, k, pruned = candidate_triples(model.sites, J, L, C1)
    A, G, gap = _affine(model, l, j, k)
    thr = 2 * gamma_n * gap * np.array([bracket(x) for x in l]) ** (-tau)
    live = _box_min_abs(A, G) < thr
    ls = np.array(list(integer_vectors(model.sites.nu, L)), dtype=int)
    gA = ls @ model.omega_bar
    gG = model.eps**2 * ls @ model.M
    gthr = 2 * gamma * np.array([bracket(x) for x in ls]) ** (-tau)
    glive = _box_min_abs(gA, gG) < gthr
    return ScanPlan(l[live], j[live], k[live], A[live], G[live], thr[live],
                    ls[glive], gA[glive], gG[glive], gthr[glive], C1, pruned, len(A))


def membership_second_melnikov(omega, model: FrequencyModel, gamma: float, tau: float,
                               L: int, J: int, spectrum: dict | None = None) -> dict:
    """Direct scan for one frequency vector.

    ``spectrum`` maps j to mu_j (Floquet model); without it the closed-form
    exponents at xi(omega) are used.
    """
    omega = np.asarray(omega, dtype=float)
    gamma_n = 2 * gamma
    if spectrum is None:
        xi = model.xi_of(omega)
        m3 = 1 + model.eps**2 * float(model.d_vec @ xi)
        m1 = model.eps**2 * float(model.c_vec @ xi)
        C1 = brexit_constant(float(np.max(np.abs(omega))), gamma_n, m3 - abs(m1))
        idx = _index_set(model.sites, J)
        mu = {int(j): complex(0.0, -m3 * j**3 + m1 * j) for j in idx if j != 0}
    else:
        C1 = 0.0
        mu = dict(spectrum)
        for j, v in list(mu.items()):
            mu.setdefault(-j, np.conj(v))
    mu[0] = 0.0
    l, j, k, _ = candidate_triples(model.sites, J, L, C1)
    have = np.array([(a in mu) and (b in mu) for a, b in zip(j, k)], dtype=bool)
    l, j, k = l[have], j[have], k[have]
    muj = np.array([mu[int(a)] for a in j])
    muk = np.array([mu[int(b)] for b in k])
    lhs = np.abs(1j * (l @ omega) + muj - muk)
    thr = 2 * gamma_n * np.abs(j.astype(float) ** 3 - k.astype(float) ** 3) * \
        np.array([bracket(x) for x in l]) ** (-tau)
    bad = np.flatnonzero(lhs < thr)
    if len(bad):
        b = bad[0]
        return {"accepted": False,
                "violation": (tuple(int(x) for x in l[b]), int(j[b]), int(k[b]))}
    return {"accepted": True, "violation": None}


def sample_cantor(model: FrequencyModel, a: float, tau: float, L: int, J: int,
                  n_samples: int, seed: int, gamma: float | None = None,
                  plan: ScanPlan | None = None, chunk: int = 2000) -> CantorSample:
    eps = model.eps
    gamma = gamma_of(eps, a) if gamma is None else gamma
    if plan is None:
        plan = plan_scan(model, gamma, tau, L, J)
    rng = np.random.default_rng(seed)
    xi = rng.uniform(1.0, 2.0, size=(n_samples, model.sites.nu))
    accepted = np.ones(n_samples, dtype=bool)
    first: list = [None] * n_samples
    for start in range(0, n_samples, chunk):
        x = xi[start:start + chunk]
        if len(plan.g0_A):
            val = np.abs(plan.g0_A[None, :] + x @ plan.g0_G.T)
            bad = val < plan.g0_threshold[None, :]
            for r in np.flatnonzero(bad.any(axis=1)):
                accepted[start + r] = False
                c = int(np.argmax(bad[r]))
                first[start + r] = ("G0", tuple(int(v) for v in plan.g0_l[c]))
        if len(plan.A):
            val = np.abs(plan.A[None, :] + x @ plan.G.T)
            bad = val < plan.threshold[None, :]
            for r in np.flatnonzero(bad.any(axis=1)):
                if first[start + r] is None:
                    c = int(np.argmax(bad[r]))
                    first[start + r] = ("second", (tuple(int(v) for v in plan.l[c]),
                                                   int(plan.j[c]), int(plan.k[c])))
                accepted[start + r] = False
    return CantorSample(eps, gamma, tau, a, L, J, xi, model.omega(xi), accepted, first)


def audit_pruned(model: FrequencyModel, sample: CantorSample, fraction: float = 0.01,
                 seed: int = 0, max_checks: int = 200000) -> dict:
    """Re-check a random share of the pruned triples on random samples."""
    gamma_n = 2 * sample.gamma
    C1 = model.brexit(gamma_n)
    if C1 <= 0:
        return {"checked": 0, "violations": 0}
    rng = np.random.default_rng(seed)
    idx = _index_set(model.sites, sample.J)
    ls = [(0,) * model.sites.nu] + list(integer_vectors(model.sites.nu, sample.L))
    pruned_l, pruned_j, pruned_k = [], [], []
    jj, kk = np.meshgrid(idx, idx, indexing="ij")
    off = (jj != kk)
    jj, kk = jj[off], kk[off]
    for l in ls:
        n1 = max(1, sum(abs(a) for a in l))
        drop = jj**2 + kk**2 > 2 * n1 / C1
        take = drop & (rng.random(len(jj)) < fraction)
        pruned_l.extend([l] * int(np.sum(take)))
        pruned_j.append(jj[take])
        pruned_k.append(kk[take])
    l = np.array(pruned_l, dtype=int).reshape(-1, model.sites.nu)
    j, k = np.concatenate(pruned_j), np.concatenate(pruned_k)
    if len(l) == 0:
        return {"checked": 0, "violations": 0}
    A, G, gap = _affine(model, l, j, k)
    thr = 2 * gamma_n * gap * np.array([bracket(x) for x in l]) ** (-sample.tau)
    rows = rng.choice(len(sample.xi), size=min(len(sample.xi), max(1, max_checks // len(l))),
                      replace=False)
    val = np.abs(A[None, :] + sample.xi[rows] @ G.T)
    return {"checked": int(val.size), "violations": int(np.sum(val < thr[None, :]))}


def estimate_cantor_fraction(c: Coefficients, sites: SiteSet, eps_ladder, a: float,
                             tau: float | None = None, L: int = 12, J: int = 20,
                             n_samples: int = 10000, seed: int = 0,
                             gamma_scale: float = 1.0) -> dict:
    """Accepted fraction per eps plus the fitted exponent of the excluded
    fraction against eps."""
    tau = sites.nu + 2 if tau is None else tau
    rows = []
    samples = {}
    for eps in eps_ladder:
        model = FrequencyModel(c, sites, eps)
        gamma = gamma_scale * gamma_of(eps, a)
        s = sample_cantor(model, a, tau, L, J, n_samples, seed, gamma=gamma)
        samples[eps] = s
        excl = 1 - s.fraction
        rows.append({"eps": eps, "gamma": gamma, "n_samples": n_samples,
                     "accepted": int(np.sum(s.accepted)), "fraction": s.fraction,
                     "excluded": excl, "sigma": math.sqrt(max(excl * (1 - excl), 1e-300) / n_samples)})
    ex = np.array([r["excluded"] for r in rows])
    if np.all(ex > 0) and len(rows) > 1:
        slope = float(np.polyfit(np.log(list(eps_ladder)), np.log(ex), 1)[0])
    else:
        slope = float("nan")
    for r in rows:
        r["fitted_exponent"] = slope
    return {"rows": rows, "fitted_exponent": slope, "samples": samples}


def write_measure_csv(path, rows) -> None:
    cols = ["eps", "gamma", "n_samples", "accepted", "fraction", "fitted_exponent"]
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(cols) + "\n")
        for r in rows:
            fh.write(",".join(repr(float(r[c])) if isinstance(r[c], float) else str(r[c])
                              for c in cols) + "\n")


def write_violations(path, sample: CantorSample) -> None:
    with open(path, "w", newline="\n") as fh:
        for i, v in enumerate(sample.first_violation):
            if v is not None:
                fh.write(json.dumps({"sample": i, "eps": sample.eps, "kind": v[0],
                                     "where": v[1], "omega": sample.omega[i].tolist()}) + "\n")
