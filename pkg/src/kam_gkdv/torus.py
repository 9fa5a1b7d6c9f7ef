"""Approximate quasi-periodic tori, their residual and Newton refinement.

A torus is u(phi, x) = sum u_{l,j} e^{i(l.phi + jx)} solving

    omega . d_phi u + u_xxx + N2(u) = 0.

Every torus built here is momentum-symmetric: u_{l,j} vanishes unless
j = l . sites, so u(phi, x) = W(phi + sites * x) for a function W on T^nu.
Newton refinement works on W, which keeps the Galerkin system small.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .frequency import SingularTwistError, TwistData, twist_matrices
from .model import (Coefficients, ResolutionError, SpectralGrid, density_partials,
                    nonlinearity_dense, padded_grid_size)
from .normal_form import WeakNormalForm, normal_form_map, weak_normal_form
from .spectral import QuasiPeriodicField, SiteSet, SpatialState


class NewtonError(RuntimeError):
    """Newton refinement failed (singular Jacobian or no convergence)."""


@dataclass(frozen=True)
class TorusEmbedding:
    """Embedded torus in u-variables with its frequency and counterterm."""

    sites: SiteSet
    coeffs: Coefficients
    field: QuasiPeriodicField
    omega: np.ndarray
    eps: float
    xi: np.ndarray
    zeta: np.ndarray
    level: str = "naive"
    history: tuple = ()

    @property
    def nu(self) -> int:
        return self.sites.nu

    def at_angle(self, phi) -> SpatialState:
        return self.field.at_angle(np.asarray(phi, dtype=float))

    def tangential_mode(self, i: int, phi) -> complex:
        """Amplitude of the i-th tangential site at angle phi."""
        j = self.sites.positive_sites[i]
        return self.at_angle(phi).coeffs.get(j, 0.0)

    @property
    def z(self) -> QuasiPeriodicField:
        """Normal component (spatial support outside S)."""
        return QuasiPeriodicField(self.nu, {k: v for k, v in self.field.coeffs.items()
                                            if k[1] not in self.sites})

    def theta(self, phi) -> np.ndarray:
        """Angle deviation theta(phi) - phi read from the tangential modes."""
        out = np.zeros(self.nu)
        for i in range(self.nu):
            out[i] = np.angle(self.tangential_mode(i, phi)) - phi[i]
        return (out + np.pi) % (2 * np.pi) - np.pi

    def y(self, phi) -> np.ndarray:
        """Action deviation from xi in the rescaled variables I_j = eps^2 j (xi_j + y_j)."""
        out = np.zeros(self.nu)
        for i, j in enumerate(self.sites.positive_sites):
            out[i] = abs(self.tangential_mode(i, phi)) ** 2 / (self.eps**2 * j) - self.xi[i]
        return out

    def is_momentum_symmetric(self, tol: float = 0.0) -> bool:
        s = np.array(self.sites.positive_sites)
        return all(abs(v) <= tol or int(np.dot(l, s)) == j
                   for (l, j), v in self.field.coeffs.items())


# ------------------------------------------------------------------ builders

def build_vbar(sites: SiteSet, xi) -> QuasiPeriodicField:
    """sum_{j in S} sqrt(|j| xi_j) e^{i lab(j).phi} e^{ijx}, lab(+-site_i) = +-e_i."""
    xi = np.asarray(xi, dtype=float)
    if np.any(xi <= 0):
        raise ValueError("xi must be positive")
    coeffs = {}
    for i, j in enumerate(sites.positive_sites):
        coeffs[(tuple(sites.lattice_label(j)), j)] = math.sqrt(j * xi[i])
    return QuasiPeriodicField(sites.nu, coeffs)


def _phi_grid(nu: int, n: int) -> np.ndarray:
    axes = [2 * np.pi * np.arange(n) / n] * nu
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def _field_from_grid(values: np.ndarray, nu: int, n: int, window: int,
                     sites: SiteSet | None = None, tol: float = 0.0) -> QuasiPeriodicField:
    """Fourier-analyse states sampled on an n^nu angle grid."""
    shaped = values.reshape((n,) * nu + (2 * window + 1,))
    spec = np.fft.fftn(shaped, axes=tuple(range(nu))) / n**nu
    coeffs = {}
    s = np.array(sites.positive_sites) if sites is not None else None
    for idx in itertools.product(range(n), repeat=nu):
        if n // 2 in idx:
            continue
        l = tuple(int(a) if a < n // 2 else int(a) - n for a in idx)
        for j in range(1, window + 1):
            v = spec[idx + (window + j,)]
            if abs(v) <= tol:
                continue
            if s is not None and int(np.dot(l, s)) != j:
                continue
            coeffs[(l, j)] = v
    return QuasiPeriodicField(nu, coeffs)


def build_approximate_torus(c: Coefficients, sites: SiteSet, xi, eps: float,
                            level: str = "naive", nf: WeakNormalForm | None = None,
                            n_phi: int = 16, dt: float = 1e-3) -> TorusEmbedding:
    """eps * vbar (naive) or its image under the normal-form map (bnf),
    both at omega = omega_bar + eps^2 M xi."""
    if level not in ("naive", "bnf"):
        raise ValueError("level must be 'naive' or 'bnf'")
    xi = np.asarray(xi, dtype=float)
    if nf is None:
        nf = weak_normal_form(c, sites)
    twist = twist_matrices(nf.quartic, sites, c)
    if twist.exact_det == 0:
        raise SingularTwistError("twist matrix is singular")
    omega = sites.omega_bar + eps**2 * twist.M @ xi
    zeta = np.zeros(sites.nu)
    vbar = build_vbar(sites, xi)
    if eps == 0:
        return TorusEmbedding(sites, c, QuasiPeriodicField(sites.nu, {}), omega, 0.0, xi,
                              zeta, level)
    if level == "naive":
        field_ = QuasiPeriodicField(sites.nu, {k: eps * v for k, v in vbar.coeffs.items()})
        return TorusEmbedding(sites, c, field_, omega, eps, xi, zeta, level)

    window = 4 * sites.max_site
    phis = _phi_grid(sites.nu, n_phi)
    states = np.zeros((len(phis), 2 * window + 1), dtype=complex)
    for (l, j), v in vbar.coeffs.items():
        states[:, window + j] += eps * v * np.exp(1j * phis @ np.array(l))
    mapped = normal_form_map(nf, window, dt)(states)
    if not np.all(np.isfinite(mapped)):
        raise FloatingPointError("normal-form flow diverged")
    field_ = _field_from_grid(mapped, sites.nu, n_phi, window, sites,
                              tol=1e-16 * float(np.max(np.abs(mapped))))
    return TorusEmbedding(sites, c, field_, omega, eps, xi, zeta, level)


# ------------------------------------------------------------------ residual

def counterterm_directions(torus: TorusEmbedding) -> list[QuasiPeriodicField]:
    """Unit directions along the amplitude of each tangential site."""
    out = []
    for i, j in enumerate(torus.sites.positive_sites):
        l = tuple(torus.sites.lattice_label(j))
        w = torus.field.coeffs.get((l, j), 0.0)
        phase = w / abs(w) if abs(w) > 0 else 1.0
        out.append(QuasiPeriodicField(torus.nu, {(l, j): phase / math.sqrt(2.0)}))
    return out


def residual_functional(torus: TorusEmbedding, n_phi: int | None = None,
                        directions: list | None = None) -> dict:
    """omega . d_phi u + u_xxx + N2(u) + sum zeta_i E_i on an angle grid.

    Norms: 'l2' is the root mean square over T^nu x T (Parseval),
    'sup' the largest grid value, both in u-variables.  The default angle
    grid resolves the cubic products of the stored harmonics exactly.
    """
    nu = torus.nu
    if n_phi is None:
        top = max((max(abs(a) for a in l) for (l, _) in torus.field.coeffs), default=1)
        n_phi = 1 << max(3, math.ceil(math.log2(6 * top + 2)))
    window = max((abs(j) for (_, j) in torus.field.coeffs), default=1)
    for (l, _) in torus.field.coeffs:
        if max(abs(a) for a in l) >= n_phi // 2:
            raise ResolutionError(f"angle grid of {n_phi} points cannot hold l = {l}")
    shape = (n_phi,) * nu + (2 * window + 1,)
    spec = np.zeros(shape, dtype=complex)
    drift = np.zeros(shape, dtype=complex)
    omega = np.asarray(torus.omega)
    terms = dict(torus.field.coeffs)
    if directions is None:
        directions = counterterm_directions(torus)
    extra = np.zeros(shape, dtype=complex)
    for z, d in zip(torus.zeta, directions):
        for (l, j), v in d.coeffs.items():
            extra[tuple(a % n_phi for a in l) + (window + j,)] += z * v
    for (l, j), v in terms.items():
        idx = tuple(a % n_phi for a in l) + (window + j,)
        spec[idx] += v
        drift[idx] += 1j * float(np.dot(omega, l)) * v
    axes = tuple(range(nu))
    states = np.fft.ifftn(spec, axes=axes) * n_phi**nu
    lin = np.fft.ifftn(drift + extra, axes=axes) * n_phi**nu
    flat = states.reshape(-1, 2 * window + 1)
    out_window = 3 * window
    big = np.zeros((flat.shape[0], 2 * out_window + 1), dtype=complex)
    big[:, out_window - window: out_window + window + 1] = flat
    grid = SpectralGrid(out_window, padded_grid_size(window, 3))
    res = nonlinearity_dense(big, torus.coeffs, grid)
    k = np.arange(-out_window, out_window + 1)
    res += (1j * k) ** 3 * big
    res[:, out_window - window: out_window + window + 1] += lin.reshape(-1, 2 * window + 1)
    l2 = math.sqrt(float(np.mean(np.sum(np.abs(res) ** 2, axis=-1))))
    values = grid.to_grid(res)
    sup = float(np.max(np.abs(values)))
    in_window = res[:, out_window - window: out_window + window + 1]
    l2_window = math.sqrt(float(np.mean(np.sum(np.abs(in_window) ** 2, axis=-1))))
    return {"l2": l2, "sup": sup, "l2_window": l2_window, "window": window,
            "n_phi": n_phi}


def fit_slope(eps_values, residuals) -> float:
    """Least-squares slope of log residual against log eps."""
    x = np.log(np.asarray(eps_values, dtype=float))
    y = np.log(np.asarray(residuals, dtype=float))
    return float(np.polyfit(x, y, 1)[0])


# ------------------------------------------------------- reduced Galerkin model

def lattice(sites: SiteSet, L: int, J: int) -> np.ndarray:
    """Angle indices l with |l|_1 <= L and 1 <= |l . sites| <= J."""
    s = np.array(sites.positive_sites)
    out = []
    for l in itertools.product(range(-L, L + 1), repeat=sites.nu):
        if sum(abs(a) for a in l) > L:
            continue
        j = int(np.dot(l, s))
        if 1 <= abs(j) <= J:
            out.append(l)
    return np.array(out, dtype=int).reshape(-1, sites.nu)


class ReducedTorusProblem:
    """Galerkin truncation of the torus equation on momentum-symmetric fields.

    Unknowns are W_l for l in the lattice; x-derivatives act as i (l . sites).
    """

    def __init__(self, c: Coefficients, sites: SiteSet, omega, L: int, J: int,
                 n_grid: int | None = None):
        self.c, self.sites, self.L, self.J = c, sites, L, J
        self.omega = np.asarray(omega, dtype=float)
        self.nu = sites.nu
        self.lat = lattice(sites, L, J)
        self.j = self.lat @ np.array(sites.positive_sites)
        if n_grid is None:
            n_grid = 1 << max(3, math.ceil(math.log2(4 * L + 2)))
        self.n = n_grid
        self.pos = {tuple(l): i for i, l in enumerate(self.lat)}
        self.half = np.array([i for i, jj in enumerate(self.j) if jj > 0])
        self.mirror = np.array([self.pos[tuple(-l)] for l in self.lat])
        n = self.n
        self.flat_idx = np.ravel_multi_index(tuple((self.lat % n).T), (n,) * self.nu)
        grid_l = np.stack(np.meshgrid(*[np.fft.fftfreq(n, 1.0 / n)] * self.nu,
                                      indexing="ij"), axis=-1)
        self.grid_j = grid_l @ np.array(sites.positive_sites, dtype=float)
        self.divisor = self.omega @ self.lat.T - self.j.astype(float) ** 3

    # transforms
    def to_grid(self, coeffs: np.ndarray) -> np.ndarray:
        spec = np.zeros(self.n**self.nu, dtype=complex)
        spec[self.flat_idx] = coeffs
        spec = spec.reshape((self.n,) * self.nu)
        return (np.fft.ifftn(spec) * self.n**self.nu).real

    def spectrum(self, values: np.ndarray) -> np.ndarray:
        return np.fft.fftn(values) / self.n**self.nu

    def dx(self, spec: np.ndarray) -> np.ndarray:
        return 1j * self.grid_j * spec

    def fields(self, W: np.ndarray):
        u = self.to_grid(W)
        p = self.to_grid(1j * self.j * W)
        return u, p

    def nonlinearity(self, W: np.ndarray) -> np.ndarray:
        u, p = self.fields(W)
        f_u, f_p = density_partials(u, p, self.c)
        inner = self.spectrum(f_u) - self.dx(self.spectrum(f_p))
        return (-self.dx(inner)).ravel()[self.flat_idx]

    def residual(self, W: np.ndarray, zeta=None, E=None) -> np.ndarray:
        r = 1j * self.divisor * W + self.nonlinearity(W)
        if zeta is not None and E is not None:
            r = r + E.T @ zeta
        return r

    def coefficient_spectra(self, W: np.ndarray):
        """Fourier tables of f_pp and a0 = d_x f_pu - f_uu."""
        c = self.c
        u, p = self.fields(W)
        f_pp = 6 * c.c1 * p + 2 * c.c2 * u + 12 * c.c4 * p**2 + 6 * c.c5 * p * u + 2 * c.c6 * u**2
        f_pu = 2 * c.c2 * p + 3 * c.c5 * p**2 + 4 * c.c6 * p * u
        f_uu = 6 * c.c3 * u + 2 * c.c6 * p**2 + 12 * c.c7 * u**2
        a0 = self.dx(self.spectrum(f_pu)) - self.spectrum(f_uu)
        return self.spectrum(f_pp), a0

    def jacobian(self, W: np.ndarray) -> np.ndarray:
        """Complex derivative dF_l / dW_l' over the full lattice."""
        fpp, a0 = self.coefficient_spectra(W)
        diff = (self.lat[:, None, :] - self.lat[None, :, :]) % self.n
        flat = np.ravel_multi_index(tuple(np.moveaxis(diff, -1, 0)), (self.n,) * self.nu)
        jr = self.j[:, None].astype(float)
        jc = self.j[None, :].astype(float)
        mat = (1j * jr) ** 2 * fpp.ravel()[flat] * (1j * jc) + (1j * jr) * a0.ravel()[flat]
        mat[np.diag_indices_from(mat)] += 1j * self.divisor
        return mat

    # conversions
    def from_field(self, f: QuasiPeriodicField) -> np.ndarray:
        W = np.zeros(len(self.lat), dtype=complex)
        s = np.array(self.sites.positive_sites)
        for (l, j), v in f.coeffs.items():
            if int(np.dot(l, s)) != j:
                if abs(v) > 1e-13:
                    raise ValueError(f"torus is not momentum-symmetric at {(l, j)}")
                continue
            i = self.pos.get(tuple(l))
            if i is not None:
                W[i] = v
        return W

    def to_field(self, W: np.ndarray) -> QuasiPeriodicField:
        return QuasiPeriodicField(self.nu, {(tuple(int(a) for a in self.lat[i]), int(self.j[i])):
                                            W[i] for i in self.half})

    def norm(self, r: np.ndarray) -> float:
        return float(np.sqrt(np.sum(np.abs(r) ** 2)))


def refine_torus_newton(torus: TorusEmbedding, L: int = 8, J: int = 24, tol: float = 1e-12,
                        max_iter: int = 10, n_grid: int | None = None) -> TorusEmbedding:
    """Newton iteration on the truncated functional with counterterm zeta.

    Unknowns: W_l (reality-reduced) and zeta; extra equations fix the phase
    of the update orthogonally to d_phi W.  Each step solves the bordered
    system by dense least squares; a step is halved until the residual does
    not grow.
    """
    prob = ReducedTorusProblem(torus.coeffs, torus.sites, torus.omega, L, J, n_grid)
    W = prob.from_field(torus.field)
    nu, half = prob.nu, prob.half
    m = len(half)
    dirs = counterterm_directions(torus)
    E = np.zeros((nu, len(prob.lat)), dtype=complex)
    for i, d in enumerate(dirs):
        for (l, j), v in d.coeffs.items():
            E[i, prob.pos[tuple(l)]] = v
    zeta = np.array(torus.zeta, dtype=float)

    def full_residual(W, zeta):
        return prob.residual(W, zeta, E)

    r = full_residual(W, zeta)
    history = [prob.norm(r)]
    smallest_sv = float("nan")
    it = 0
    while history[-1] >= tol and it < max_iter:
        it += 1
        Jc = prob.jacobian(W)
        A = Jc[np.ix_(half, half)]
        B = Jc[np.ix_(half, prob.mirror[half])]
        top = np.block([[(A + B).real, -(A - B).imag], [(A + B).imag, (A - B).real]])
        zcols = np.concatenate([E[:, half].real.T, E[:, half].imag.T], axis=0)
        tangent = 1j * prob.lat[half].T * W[half]
        phase_rows = np.concatenate([tangent.real, tangent.imag], axis=1)
        system = np.block([[top, zcols], [phase_rows, np.zeros((nu, nu))]])
        rhs = -np.concatenate([r[half].real, r[half].imag, np.zeros(nu)])
        sol, _, rank, sv = np.linalg.lstsq(system, rhs, rcond=None)
        smallest_sv = float(sv[-1])
        if rank < system.shape[1] or smallest_sv < 1e-14 * sv[0]:
            raise NewtonError(f"singular truncated Jacobian, smallest singular value {smallest_sv:.3e}")
        dW = np.zeros_like(W)
        dW[half] = sol[:m] + 1j * sol[m:2 * m]
        dW[prob.mirror[half]] = np.conj(dW[half])
        dz = sol[2 * m:]
        step = 1.0
        while True:
            W_new, z_new = W + step * dW, zeta + step * dz
            r_new = full_residual(W_new, z_new)
            if prob.norm(r_new) <= history[-1] or step < 1e-3:
                break
            step *= 0.5
        if prob.norm(r_new) > history[-1]:
            raise NewtonError("no descent along the Newton direction")
        W, zeta, r = W_new, z_new, r_new
        history.append(prob.norm(r))
    if history[-1] >= tol:
        raise NewtonError(f"no convergence after {max_iter} iterations: {history}")
    if it == 0:
        return replace(torus, level=f"{torus.level}+newton", history=tuple(history))
    return replace(torus, field=prob.to_field(W), zeta=zeta, level=f"{torus.level}+newton",
                   history=tuple(history))


def truncated_residual(torus: TorusEmbedding, L: int, J: int) -> float:
    prob = ReducedTorusProblem(torus.coeffs, torus.sites, torus.omega, L, J)
    W = prob.from_field(torus.field)
    E = np.zeros((torus.nu, len(prob.lat)), dtype=complex)
    for i, d in enumerate(counterterm_directions(torus)):
        for (l, j), v in d.coeffs.items():
            E[i, prob.pos[tuple(l)]] = v
    return prob.norm(prob.residual(W, torus.zeta, E))


# ---------------------------------------------------------------- diophantine

def integer_vectors(nu: int, L: int):
    for l in itertools.product(range(-L, L + 1), repeat=nu):
        n1 = sum(abs(a) for a in l)
        if 0 < n1 <= L:
            yield l


def check_diophantine(omega, gamma: float, tau: float, L: int) -> dict:
    """Scan 0 < |l|_1 <= L for |omega . l| >= gamma <l>^-tau."""
    if L < 1:
        raise ValueError("L must be at least 1")
    omega = np.asarray(omega, dtype=float)
    ls = np.array(list(integer_vectors(len(omega), L)))
    bracket = np.maximum(1, np.abs(ls).sum(axis=1)).astype(float)
    margin = np.abs(ls @ omega) - gamma * bracket ** (-tau)
    worst = int(np.argmin(margin))
    return {"holds": bool(margin[worst] >= 0), "worst_l": tuple(int(a) for a in ls[worst]),
            "worst_margin": float(margin[worst])}


def second_order_correction(v: SpatialState, c: Coefficients) -> SpatialState:
    """Quadratic term of the normal-form map at v supported on S:
    -c1 (v^2)_x - (c2/3) ((d^-1 v)^2)_xx + (c2/3) P0[v^2] + c3 P0[(d^-1 v)^2],
    with P0 removing the mean."""
    if not v.coeffs:
        return SpatialState({})
    n = v.support
    window = 2 * n
    grid = SpectralGrid(window, padded_grid_size(n, 2))
    dense = v.dense(window)
    k = grid.wavenumbers
    inv = np.zeros_like(dense)
    nz = k != 0
    inv[nz] = dense[nz] / (1j * k[nz])
    vv = grid.from_grid(grid.to_grid(dense) ** 2)
    ww = grid.from_grid(grid.to_grid(inv) ** 2)
    out = (-c.c1 * grid.derivative(vv) - c.c2 / 3.0 * grid.derivative(ww, 2)
           + c.c2 / 3.0 * vv + c.c3 * ww)
    out[window] = 0.0
    return SpatialState.from_dense(out)


# ---------------------------------------------------------------- persistence

def torus_to_dict(torus: TorusEmbedding) -> dict:
    entries = [[*map(int, l), int(j), float(np.real(v)), float(np.imag(v))]
               for (l, j), v in sorted(torus.field.coeffs.items()) if j > 0]
    return {"sites": list(torus.sites.positive_sites), "coefficients": list(torus.coeffs.as_tuple()),
            "eps": torus.eps, "xi": list(map(float, torus.xi)),
            "omega": list(map(float, torus.omega)), "zeta": list(map(float, torus.zeta)),
            "level": torus.level, "history": list(torus.history), "entries": entries}


def torus_from_dict(data: dict) -> TorusEmbedding:
    sites = SiteSet(tuple(data["sites"]))
    nu = sites.nu
    coeffs = {(tuple(e[:nu]), int(e[nu])): complex(e[nu + 1], e[nu + 2]) for e in data["entries"]}
    return TorusEmbedding(sites, Coefficients.from_sequence(data["coefficients"]),
                          QuasiPeriodicField(nu, coeffs), np.array(data["omega"]),
                          float(data["eps"]), np.array(data["xi"]), np.array(data["zeta"]),
                          data.get("level", "naive"), tuple(data.get("history", ())))
