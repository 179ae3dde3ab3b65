import numpy as np
import scipy.linalg
from hypothesis import settings

from plhr.operators import Pencil, matrix_operator, IdentityOperator

settings.register_profile("default", deadline=None, max_examples=25)
settings.load_profile("default")


def random_hermitian(n, rng, complex_=False):
    X = rng.standard_normal((n, n))
    if complex_:
        X = X + 1j * rng.standard_normal((n, n))
    return 0.5 * (X + X.conj().T)


def random_hpd(n, rng, complex_=False, shift=None):
    X = rng.standard_normal((n, n))
    if complex_:
        X = X + 1j * rng.standard_normal((n, n))
    H = X @ X.conj().T / n
    return H + (1.0 if shift is None else shift) * np.eye(n)


def dense_pencil(n, seed, complex_=False, standard=False):
    """Random dense Hermitian pencil (A, B) with B HPD, plus the matrices."""
    rng = np.random.default_rng(seed)
    A = random_hermitian(n, rng, complex_)
    B = np.eye(n) if standard else random_hpd(n, rng, complex_)
    Bop = IdentityOperator(n) if standard else matrix_operator(B, hermitian=True, definite=True)
    return Pencil(matrix_operator(A, hermitian=True), Bop), A, B


def generalized_eigh(A, B):
    return scipy.linalg.eigh(A, B)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
        terminalreporter.write_line(line)
