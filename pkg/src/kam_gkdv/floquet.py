"""Linearized operator along a torus and its Floquet exponents.

Along u(phi, x) the linearized flow in the rotating frame is

    L h = omega . d_phi h + d_xx(a1 h_x) + d_x(a0 h),
    a1 = 1 + f_pp,  a0 = d_x f_pu - f_uu,

restricted to spatial modes outside S.  For a momentum-symmetric torus the
coefficients depend on phi + sites * x only, so L commutes with the shift
(l, j) -> (l + m, j + m . sites) and splits into sectors p = j - l . sites.
Each sector is a small dense block, diagonalized directly.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .frequency import spectral_constants
from .model import Coefficients, ResolutionError, SpectralGrid, nonlinearity_dense, padded_grid_size
from .spectral import SiteSet
from .torus import ReducedTorusProblem, TorusEmbedding, integer_vectors


class DegeneracyError(ValueError):
    """a1 is not positive everywhere."""


# ------------------------------------------------------------ coefficients

def _torus_problem(torus: TorusEmbedding, L_op: int = 0):
    if not torus.is_momentum_symmetric(tol=1e-13):
        raise ValueError("torus must be momentum-symmetric")
    Lt = max((sum(abs(a) for a in l) for (l, _) in torus.field.coeffs), default=1)
    Jt = max((abs(j) for (_, j) in torus.field.coeffs), default=1)
    n = 1 << max(3, math.ceil(math.log2(4 * max(Lt, L_op) + 2)))
    prob = ReducedTorusProblem(torus.coeffs, torus.sites, torus.omega, Lt, Jt, n_grid=n)
    return prob, prob.from_field(torus.field)


def coefficients_a1_a0(torus: TorusEmbedding, n_phi: int = 32, n_x: int | None = None):
    """a1 and a0 sampled on an (n_phi^nu, n_x) grid over T^nu x T."""
    c = torus.coeffs
    nu = torus.nu
    window = max((abs(j) for (_, j) in torus.field.coeffs), default=1)
    if n_x is None:
        n_x = padded_grid_size(window, 3)
    grid = SpectralGrid(window, n_x)
    axes = [2 * np.pi * np.arange(n_phi) / n_phi] * nu
    phis = np.stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")], axis=-1)
    states = np.zeros((len(phis), 2 * window + 1), dtype=complex)
    for (l, j), v in torus.field.coeffs.items():
        states[:, window + j] += v * np.exp(1j * phis @ np.array(l))
    u = grid.to_grid(states)
    p = grid.to_grid(grid.derivative(states))
    f_pp = 6 * c.c1 * p + 2 * c.c2 * u + 12 * c.c4 * p**2 + 6 * c.c5 * p * u + 2 * c.c6 * u**2
    f_pu = 2 * c.c2 * p + 3 * c.c5 * p**2 + 4 * c.c6 * p * u
    f_uu = 6 * c.c3 * u + 2 * c.c6 * p**2 + 12 * c.c7 * u**2
    k = np.fft.fftfreq(n_x, 1.0 / n_x)
    dfpu = np.fft.ifft(1j * k * np.fft.fft(f_pu, axis=-1), axis=-1).real
    shape = (n_phi,) * nu + (n_x,)
    return (1.0 + f_pp).reshape(shape), (dfpu - f_uu).reshape(shape)


@dataclass
class ReducedConstants:
    b3: np.ndarray           # function of phi
    m3: float
    beta: np.ndarray         # function of (phi, x)
    m1: float
    predicted_m3: float
    predicted_m1: float


def _dx_inverse(f: np.ndarray) -> np.ndarray:
    n = f.shape[-1]
    k = np.fft.fftfreq(n, 1.0 / n)
    spec = np.fft.fft(f, axis=-1)
    spec[..., 0] = 0.0
    spec[..., 1:] /= 1j * k[1:]
    return np.fft.ifft(spec, axis=-1).real


def _omega_dphi(f: np.ndarray, omega) -> np.ndarray:
    nu = len(omega)
    axes = tuple(range(nu))
    spec = np.fft.fftn(f, axes=axes)
    n = f.shape[0]
    freq = np.meshgrid(*[np.fft.fftfreq(n, 1.0 / n)] * nu, indexing="ij")
    sym = sum(w * fr for w, fr in zip(omega, freq))
    return np.fft.ifftn(1j * sym[..., None] * spec, axes=axes).real


def reduced_constants(torus: TorusEmbedding, n_phi: int = 32, n_x: int | None = None
                      ) -> ReducedConstants:
    """b3, m3, beta and m1 of the reduction to constant coefficients.

    With q = 1 + beta_x = b3^(1/3) a1^(-1/3), the symplectic change of
    variable (1 + beta_x) h(x + beta) turns L into
    omega . d_phi + b3 d_yyy + d_y (V .),  V = [(a1 q_x)_x + a0 q + omega . d_phi beta]
    composed with the inverse diffeomorphism.  After the time
    reparametrization m3 = <b3>_phi, and m1 is the space-time average of V.
    """
    a1, a0 = coefficients_a1_a0(torus, n_phi, n_x)
    if np.any(a1 <= 0):
        raise DegeneracyError("a1 must be positive")
    b3 = np.mean(a1 ** (-1.0 / 3.0), axis=-1) ** (-3.0)
    m3 = float(np.mean(b3))
    q = b3[..., None] ** (1.0 / 3.0) * a1 ** (-1.0 / 3.0)
    beta = _dx_inverse(q - 1.0)
    nx = a1.shape[-1]
    k = np.fft.fftfreq(nx, 1.0 / nx)

    def dx(f):
        return np.fft.ifft(1j * k * np.fft.fft(f, axis=-1), axis=-1).real

    V = dx(a1 * dx(q)) + a0 * q + _omega_dphi(beta, torus.omega)
    V_y = compose_inverse(V, beta)
    m1 = float(np.mean(V_y))
    if torus.eps > 0:
        sc = spectral_constants(torus.coeffs, torus.sites, torus.xi)
        p3, p1 = 1 + torus.eps**2 * sc.d_xi, torus.eps**2 * sc.c_xi
    else:
        p3, p1 = 1.0, 0.0
    return ReducedConstants(b3, m3, beta, m1, float(p3), float(p1))


def compose_inverse(f: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """g(phi, y) = f(phi, x(y)) where y = x + beta(phi, x), by periodic
    linear interpolation on a four-times refined spectral resample."""
    nx = f.shape[-1]
    fine = 4 * nx
    flat_f = f.reshape(-1, nx)
    flat_b = beta.reshape(-1, nx)
    out = np.empty_like(flat_f)
    xs = 2 * np.pi * np.arange(fine) / fine
    target = 2 * np.pi * np.arange(nx) / nx
    for r in range(flat_f.shape[0]):
        ff = _resample(flat_f[r], fine)
        yb = xs + _resample(flat_b[r], fine)
        # y(x) is increasing; sample x(y) then f(x(y))
        x_of_y = np.interp(target, np.concatenate([yb - 2 * np.pi, yb, yb + 2 * np.pi]),
                           np.concatenate([xs - 2 * np.pi, xs, xs + 2 * np.pi]))
        out[r] = np.interp(x_of_y % (2 * np.pi), np.append(xs, 2 * np.pi), np.append(ff, ff[0]))
    return out.reshape(f.shape)


def _resample(values: np.ndarray, n: int) -> np.ndarray:
    m = len(values)
    spec = np.fft.rfft(values) / m
    big = np.zeros(n // 2 + 1, dtype=complex)
    big[: len(spec)] = spec
    if m % 2 == 0:
        big[m // 2] *= 0.5
    return np.fft.irfft(big * n, n)


# --------------------------------------------------------------- assembly

@dataclass
class QuasiPeriodicOperator:
    """Sector blocks of L over labels (l, j), j outside S, |l|_1 <= L, |j| <= J."""

    sites: SiteSet
    omega: np.ndarray
    L: int
    J: int
    blocks: dict                      # p -> (labels (k, nu+1) int array, matrix)
    hamiltonian_flag: bool = True

    @property
    def dimension(self) -> int:
        return sum(len(lab) for lab, _ in self.blocks.values())

    def labels(self) -> np.ndarray:
        return np.concatenate([lab for lab, _ in self.blocks.values()])

    def dense(self) -> tuple[np.ndarray, np.ndarray]:
        labs = self.labels()
        mat = np.zeros((len(labs), len(labs)), dtype=complex)
        start = 0
        for lab, block in self.blocks.values():
            k = len(lab)
            mat[start:start + k, start:start + k] = block
            start += k
        return labs, mat

    def entry(self, row, col) -> complex:
        row, col = tuple(row), tuple(col)
        s = np.array(self.sites.positive_sites)
        p = row[-1] - int(np.dot(row[:-1], s))
        if p != col[-1] - int(np.dot(col[:-1], s)) or p not in self.blocks:
            return 0.0
        lab, block = self.blocks[p]
        index = {tuple(x): i for i, x in enumerate(lab)}
        if row not in index or col not in index:
            return 0.0
        return block[index[row], index[col]]


def operator_labels(sites: SiteSet, L: int, J: int) -> dict:
    """Labels grouped by sector p = j - l . sites."""
    s = np.array(sites.positive_sites)
    groups: dict[int, list] = {}
    for l in itertools.product(range(-L, L + 1), repeat=sites.nu):
        if sum(abs(a) for a in l) > L:
            continue
        ls = int(np.dot(l, s))
        for j in range(-J, J + 1):
            if j == 0 or j in sites:
                continue
            groups.setdefault(j - ls, []).append(l + (j,))
    return {p: np.array(v, dtype=int) for p, v in sorted(groups.items())}


def assemble_linearized(torus: TorusEmbedding, L: int, J: int) -> QuasiPeriodicOperator:
    """Entries i omega.l delta + (ij)^2 a1^_{l-l'} (ij') + (ij) a0^_{l-l'}."""
    if L < 0 or J < 1:
        raise ResolutionError("truncation must have L >= 0 and J >= 1")
    omega = np.asarray(torus.omega, dtype=float)
    if torus.field.coeffs:
        prob, W = _torus_problem(torus, L)
        fpp, a0 = prob.coefficient_spectra(W)
        n = prob.n
        fpp, a0 = fpp.ravel(), a0.ravel()
    else:
        n, fpp, a0 = 1, np.zeros(1, complex), np.zeros(1, complex)
    nu = torus.nu
    blocks = {}
    for p, lab in operator_labels(torus.sites, L, J).items():
        ls, js = lab[:, :nu], lab[:, nu].astype(float)
        diff = (ls[:, None, :] - ls[None, :, :]) % n
        flat = np.ravel_multi_index(tuple(np.moveaxis(diff, -1, 0)), (n,) * nu)
        mat = ((1j * js[:, None]) ** 2 * fpp[flat] * (1j * js[None, :])
               + (1j * js[:, None]) * a0[flat])
        mat[np.diag_indices_from(mat)] += 1j * (ls @ omega) - 1j * js**3
        blocks[p] = (lab, mat)
    return QuasiPeriodicOperator(torus.sites, omega, L, J, blocks)


def finite_difference_column(torus: TorusEmbedding, j0: int, L: int, J: int,
                             step: float = 1e-6, n_phi: int = 32) -> dict:
    """Column of mode (0, j0) from central differences of the vector field."""
    nu = torus.nu
    window = max(max((abs(j) for (_, j) in torus.field.coeffs), default=1), abs(j0))
    out_window = 3 * window
    grid = SpectralGrid(out_window, padded_grid_size(window, 3))
    axes = [2 * np.pi * np.arange(n_phi) / n_phi] * nu
    phis = np.stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")], axis=-1)
    base = np.zeros((len(phis), 2 * out_window + 1), dtype=complex)
    for (l, j), v in torus.field.coeffs.items():
        base[:, out_window + j] += v * np.exp(1j * phis @ np.array(l))
    k = np.arange(-out_window, out_window + 1)

    def field_(states):
        return nonlinearity_dense(states, torus.coeffs, grid) + (1j * k) ** 3 * states

    cols = []
    for phase in (1.0, -1j):
        d = np.zeros(2 * out_window + 1, dtype=complex)
        d[out_window + j0] += 0.5 * phase
        d[out_window - j0] += 0.5 * np.conj(phase)
        cols.append((field_(base + step * d) - field_(base - step * d)) / (2 * step))
    col = cols[0] + 1j * cols[1]
    spec = np.fft.fftn(col.reshape((n_phi,) * nu + (-1,)), axes=tuple(range(nu))) / n_phi**nu
    result = {}
    for l in itertools.product(range(-L, L + 1), repeat=nu):
        if sum(abs(a) for a in l) > L:
            continue
        for j in range(-J, J + 1):
            if j == 0 or j in torus.sites or abs(j) > out_window:
                continue
            result[l + (j,)] = spec[tuple(a % n_phi for a in l) + (out_window + j,)]
    return result


def hamiltonian_defect(op: QuasiPeriodicOperator) -> float:
    """Max |K - K^*| for K = d_x^-1 (L - i omega.l) on each block."""
    worst = 0.0
    nu = op.sites.nu
    for lab, block in op.blocks.values():
        K = block.copy()
        K[np.diag_indices_from(K)] -= 1j * (lab[:, :nu] @ op.omega)
        K = K / (1j * lab[:, nu])[:, None]
        worst = max(worst, float(np.max(np.abs(K - K.conj().T))) if K.size else 0.0)
    return worst


def reality_defect(op: QuasiPeriodicOperator) -> float:
    worst = 0.0
    for p, (lab, block) in op.blocks.items():
        if -p not in op.blocks:
            continue
        mlab, mblock = op.blocks[-p]
        index = {tuple(x): i for i, x in enumerate(mlab)}
        perm = np.array([index[tuple(-x)] for x in lab])
        worst = max(worst, float(np.max(np.abs(mblock[np.ix_(perm, perm)] - block.conj()))))
    return worst


# ----------------------------------------------------------------- spectrum

@dataclass
class FloquetSpectrum:
    mu: dict                                  # j -> complex
    localization: dict                        # j -> float
    representative: dict                      # j -> l tuple
    unreliable: set = field(default_factory=set)
    fit: dict = field(default_factory=dict)
    eigen: dict = field(default_factory=dict, repr=False)   # p -> (labels, values, vectors)

    def interior(self, J: int, margin: int, low: int = 0) -> list[int]:
        return sorted(j for j in self.mu if low < j <= J - margin and j not in self.unreliable)


def floquet_exponents(op: QuasiPeriodicOperator, threshold: float = 0.5,
                      ambiguity: float = 0.1) -> FloquetSpectrum:
    """Dense eigendecomposition per sector; mu_j from the eigenvector whose
    dominant coefficient sits at (0, j)."""
    nu = op.sites.nu
    mu, loc, rep, bad, eigen = {}, {}, {}, set(), {}
    for p, (lab, block) in op.blocks.items():
        vals, vecs = np.linalg.eig(block)
        eigen[p] = (lab, vals, vecs)
        weights = np.abs(vecs) ** 2
        weights /= weights.sum(axis=0, keepdims=True)
        zero = [i for i, x in enumerate(lab) if not np.any(x[:nu]) and x[nu] == p]
        if not zero:
            continue
        row = zero[0]
        col = int(np.argmax(weights[row]))
        top = np.sort(weights[:, col])[::-1]
        score = float(weights[row, col])
        mu[p] = complex(vals[col])
        loc[p] = score
        rep[p] = (0,) * nu
        if score < threshold or int(np.argmax(weights[:, col])) != row or \
                (len(top) > 1 and top[0] - top[1] < ambiguity):
            bad.add(p)
    return FloquetSpectrum(mu, loc, rep, bad, eigen=eigen)


def fit_bands(sites: SiteSet, J: int) -> tuple[int, int]:
    """Default (edge margin, low cut) for fits: the top third of the
    truncation is polluted by the missing modes beyond J, and modes up to
    twice the largest site carry large couplings to pairs of sites."""
    return max(sites.max_site, J // 3), 2 * sites.max_site


def fit_exponents(spec: FloquetSpectrum, J: int, margin: int, low: int = 0) -> dict:
    """Least squares Im mu_j = -m3 j^3 + m1 j over low < j <= J - margin."""
    js = np.array(spec.interior(J, margin, low), dtype=float)
    if len(js) < 3:
        raise ResolutionError("too few interior exponents to fit")
    y = np.array([spec.mu[int(j)].imag for j in js])
    A = np.stack([-js**3, js], axis=1)
    # scale columns so both unknowns are resolved
    scale = np.linalg.norm(A, axis=0)
    coef, *_ = np.linalg.lstsq(A / scale, y, rcond=None)
    m3, m1 = coef / scale
    r = y - A @ np.array([m3, m1])
    fit = {"m3": float(m3), "m1": float(m1), "j": [int(j) for j in js],
           "residuals": [float(v) for v in r],
           "max_real": float(max(abs(spec.mu[int(j)].real) for j in js))}
    spec.fit = fit
    return fit


def class_spread(spec: FloquetSpectrum, op: QuasiPeriodicOperator, js) -> float:
    """Spread of eigenvalue - i omega.l over shifted representatives (l, j), |l|_1 = 1."""
    nu = op.sites.nu
    s = np.array(op.sites.positive_sites)
    worst = 0.0
    for j in js:
        for i in range(nu):
            for sign in (1, -1):
                l = np.zeros(nu, dtype=int)
                l[i] = sign
                p = j - int(l @ s)
                if p not in spec.eigen:
                    continue
                lab, vals, vecs = spec.eigen[p]
                target = tuple(l) + (j,)
                rows = [r for r, x in enumerate(lab) if tuple(x) == target]
                if not rows:
                    continue
                col = int(np.argmax(np.abs(vecs[rows[0]])))
                val = vals[col] - 1j * float(l @ op.omega)
                worst = max(worst, abs(val - spec.mu[j]))
    return worst


def closed_form_exponents(m3: float, m1: float, js) -> dict:
    return {int(j): complex(0.0, -m3 * j**3 + m1 * j) for j in js}


def second_melnikov_margins(mu: dict, omega, gamma: float, tau: float, L: int) -> dict:
    """Worst of |i omega.l + mu_j - mu_k| / (2 gamma |j^3 - k^3| <l>^-tau) - 1
    over j != k in the given index set plus 0 (mu_0 = 0), 0 < |l|_1 <= L or l = 0."""
    table = dict(mu)
    table[0] = 0.0
    for j, v in list(table.items()):
        table.setdefault(-j, np.conj(v))
    js = np.array(sorted(table), dtype=int)
    vals = np.array([table[j] for j in js])
    J1, K1 = np.meshgrid(js, js, indexing="ij")
    D = vals[:, None] - vals[None, :]
    gap = np.abs(J1.astype(float) ** 3 - K1.astype(float) ** 3)
    off = J1 != K1
    omega = np.asarray(omega, dtype=float)
    worst = (math.inf, None)
    ls = [(0,) * len(omega)] + list(integer_vectors(len(omega), L))
    for l in ls:
        b = max(1, sum(abs(a) for a in l))
        bound = 2 * gamma * gap * b ** (-tau)
        lhs = np.abs(1j * float(np.dot(omega, l)) + D)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(off & (bound > 0), lhs / bound - 1.0, np.inf)
        idx = np.unravel_index(int(np.argmin(ratio)), ratio.shape)
        if ratio[idx] < worst[0]:
            worst = (float(ratio[idx]), (tuple(int(a) for a in l), int(js[idx[0]]), int(js[idx[1]])))
    return {"holds": worst[0] >= 0, "worst_margin": worst[0], "worst_triple": worst[1]}


# ---------------------------------------------------------------- stability

def _h1(w: dict) -> float:
    return math.sqrt(sum((1 + j * j) * abs(v) ** 2 for j, v in w.items()))


def linear_stability_run(op: QuasiPeriodicOperator, w0: dict, T: float,
                         samples: int = 4000, seed: int = 0) -> dict:
    """Exact solution of the truncated lifted system W' = -L W.

    w0 maps j (outside S) to amplitudes; the physical field at time t is
    w_j(t) = sum_l W_{l,j}(t) e^{i l . omega t}.  Returns the H^1 norm ratio
    history at uniformly spaced and random times in [0, T].
    """
    nu = op.sites.nu
    full = dict(w0)
    for j, v in w0.items():
        full.setdefault(-j, np.conj(v))
    rng = np.random.default_rng(seed)
    times = np.sort(np.concatenate([np.linspace(0, T, samples), rng.uniform(0, T, samples // 4)]))
    acc = {}
    for j, v in full.items():
        if j in op.sites or j == 0:
            raise ValueError("w0 must be supported outside S")
        if j not in op.blocks:
            raise ResolutionError(f"mode {j} is outside the truncation")
        lab, block = op.blocks[j]
        vals, vecs = np.linalg.eig(block)
        start = np.zeros(len(lab), dtype=complex)
        row = [i for i, x in enumerate(lab) if not np.any(x[:nu]) and x[nu] == j][0]
        start[row] = v
        coef = np.linalg.solve(vecs, start)
        W = vecs @ (np.exp(-np.outer(vals, times)) * coef[:, None])
        phase = np.exp(1j * np.outer(lab[:, :nu] @ op.omega, times))
        contrib = W * phase
        for r, x in enumerate(lab):
            acc.setdefault(int(x[nu]), np.zeros(len(times), dtype=complex))
            acc[int(x[nu])] += contrib[r]
    js = np.array(sorted(acc))
    amps = np.array([acc[j] for j in js])
    norms = np.sqrt(np.sum((1 + js[:, None] ** 2) * np.abs(amps) ** 2, axis=0))
    n0 = _h1(full)
    ratio = norms / n0
    return {"times": times, "ratio": ratio, "sup_ratio": float(np.max(ratio)),
            "max_imag_leak": float(max(np.max(np.abs(acc[j] - np.conj(acc[-j])))
                                       for j in js if -j in acc))}


def linear_time_step(torus: TorusEmbedding, w0: dict, T: float, dt: float,
                     window: int) -> dict:
    """Integrate h_t = -[d_xx(a1 h_x) + d_x(a0 h)] projected outside S, with an
    integrating factor for the Airy part and RK4 for the rest."""
    nu = torus.nu
    s = np.array(torus.sites.positive_sites)
    prob, W = _torus_problem(torus)
    fpp, a0 = prob.coefficient_spectra(W)
    n = prob.n
    half = n // 2
    ls = np.array([l for l in itertools.product(range(-half + 1, half), repeat=nu)])
    idx = np.ravel_multi_index(tuple((ls % n).T), (n,) * nu)
    jl = ls @ s
    keep = np.abs(jl) <= 2 * window
    ls, jl = ls[keep], jl[keep]
    c_fpp, c_a0 = fpp.ravel()[idx[keep]], a0.ravel()[idx[keep]]
    out_window = 3 * window
    grid = SpectralGrid(out_window, padded_grid_size(out_window, 2))
    k = np.arange(-out_window, out_window + 1)
    mask = np.array([(j != 0) and (j not in torus.sites) and abs(j) <= window for j in k])

    def coeff_states(t):
        ph = np.exp(1j * (ls @ torus.omega) * t)
        A1 = np.zeros(2 * out_window + 1, dtype=complex)
        A0 = np.zeros(2 * out_window + 1, dtype=complex)
        np.add.at(A1, out_window + jl, c_fpp * ph)
        np.add.at(A0, out_window + jl, c_a0 * ph)
        return grid.to_grid(A1), grid.to_grid(A0)

    def rhs(t, h):
        g1, g0 = coeff_states(t)
        hx = grid.to_grid(grid.derivative(h))
        hv = grid.to_grid(h)
        flux = grid.derivative(grid.from_grid(g1 * hx), 1) + grid.from_grid(g0 * hv)
        return -grid.derivative(flux) * mask

    Lin = 1j * k.astype(float) ** 3
    h = np.zeros(2 * out_window + 1, dtype=complex)
    for j, v in w0.items():
        h[out_window + j] = v
        h[out_window - j] = np.conj(v)
    steps = int(round(T / dt))
    E, E2 = np.exp(dt * Lin), np.exp(dt * Lin / 2)
    ratios = [1.0]
    n0 = math.sqrt(float(np.sum((1 + k**2) * np.abs(h) ** 2)))
    t = 0.0
    for _ in range(steps):
        k1 = rhs(t, h)
        k2 = rhs(t + dt / 2, E2 * (h + dt / 2 * k1))
        k3 = rhs(t + dt / 2, E2 * h + dt / 2 * k2)
        k4 = rhs(t + dt, E * h + dt * E2 * k3)
        h = E * h + dt / 6 * (E * k1 + 2 * E2 * (k2 + k3) + k4)
        t += dt
        if not np.all(np.isfinite(h)):
            raise FloatingPointError("linearized integration diverged")
        ratios.append(math.sqrt(float(np.sum((1 + k**2) * np.abs(h) ** 2))) / n0)
    state = {int(j): h[out_window + j] for j in k if j > 0 and mask[out_window + j]}
    return {"ratio": np.array(ratios), "state": state, "sup_ratio": float(max(ratios))}
