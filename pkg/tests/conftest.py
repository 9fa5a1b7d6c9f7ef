import numpy as np
import pytest

from kam_gkdv.model import Coefficients
from kam_gkdv.spectral import SiteSet

# Generic coefficient set: every term present, d(xi) and c(xi) nonzero.
GENERIC = Coefficients(0.3, 0.5, 0.4, 0.2, 0.1, 0.3, 0.2)
# Mild set whose resonance planes cross the amplitude box; used for the
# Cantor-set and stability checks.
MILD = Coefficients(0.0, 0.0, 0.0, 1.0 / 240.0, 0.0, -0.075, 0.05)
S12 = SiteSet((1, 2))
XI = np.array([1.3, 1.6])


@pytest.fixture(scope="session")
def generic_nf():
    from kam_gkdv.normal_form import weak_normal_form
    return weak_normal_form(GENERIC, S12)


@pytest.fixture(scope="session")
def refined_torus(generic_nf):
    from kam_gkdv.torus import build_approximate_torus, refine_torus_newton
    t = build_approximate_torus(GENERIC, S12, XI, 0.01, "bnf", nf=generic_nf)
    return refine_torus_newton(t, L=8, J=24)


@pytest.fixture(scope="session")
def generic_operator(refined_torus):
    from kam_gkdv.floquet import assemble_linearized
    return assemble_linearized(refined_torus, 6, 24)


@pytest.fixture(scope="session")
def generic_spectrum(generic_operator):
    from kam_gkdv.floquet import floquet_exponents
    return floquet_exponents(generic_operator)


def random_state(rng, support, scale=0.1):
    from kam_gkdv.spectral import SpatialState
    amps = {j: scale * (rng.normal() + 1j * rng.normal()) / j for j in range(1, support + 1)}
    return SpatialState(amps)


def random_poly(rng, degree, max_mode, n_terms=6):
    """Random momentum-preserving polynomial; needs enough distinct keys."""
    from kam_gkdv.spectral import PolyHamiltonian, canonical
    terms = {}
    while len(terms) < n_terms:
        head = list(rng.integers(-max_mode, max_mode + 1, size=degree - 1))
        last = -sum(head)
        key = tuple(head) + (last,)
        if 0 in key or abs(last) > max_mode:
            continue
        terms[canonical(key)] = rng.normal() + 1j * rng.normal()
    return PolyHamiltonian.from_monomials(degree, terms)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
