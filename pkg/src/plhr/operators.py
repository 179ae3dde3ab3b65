"""Matrix-free operators, model pencils and dense oracle preconditioners."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg
import scipy.sparse as sp

DENSE_LIMIT = 4000
# Largest omega whose matrix-free FD operator we agree to build (~16M unknowns).
FD_MAX_OMEGA = 12


class Operator:
    """Linear map on C^n (or R^n) applied to vectors or column blocks.

    ``apply`` receives a 2-D array of shape (n, m) and must return an array of
    the same shape. 1-D inputs are promoted transparently.
    """

    is_identity = False

    def __init__(self, n: int, apply: Callable[[np.ndarray], np.ndarray], *,
                 dtype=np.float64, hermitian: bool = False,
                 definite: bool = False, name: str = "op",
                 matrix=None):
        self.n = int(n)
        self._apply = apply
        self.dtype = np.dtype(dtype)
        self.hermitian = hermitian
        self.definite = definite
        self.name = name
        # explicit sparse/dense matrix when one exists (oracles, I/O)
        self.matrix = matrix

    @property
    def shape(self):
        return (self.n, self.n)

    @property
    def is_complex(self) -> bool:
        return np.issubdtype(self.dtype, np.complexfloating)

    def __call__(self, x):
        x = np.asarray(x)
        if x.shape[0] != self.n:
            raise ValueError(f"{self.name}: expected leading dimension {self.n}, got {x.shape}")
        if x.ndim == 1:
            return self._apply(x[:, None])[:, 0]
        if x.shape[1] == 0:
            return np.zeros(x.shape, dtype=np.result_type(x.dtype, self.dtype))
        return self._apply(x)

    __matmul__ = __call__

    def to_dense(self) -> np.ndarray:
        if self.matrix is not None:
            m = self.matrix
            return m.toarray() if sp.issparse(m) else np.array(m)
        if self.n > DENSE_LIMIT:
            raise MemoryError(f"{self.name}: n={self.n} too large for a dense oracle")
        return self(np.eye(self.n, dtype=self.dtype))

    def __repr__(self):
        return f"<Operator {self.name} n={self.n} dtype={self.dtype}>"


class IdentityOperator(Operator):
    """Identity marker; solvers skip B products when they see it."""

    is_identity = True

    def __init__(self, n: int):
        super().__init__(n, lambda x: x.copy(), hermitian=True, definite=True,
                         name="I", matrix=sp.identity(n, format="csr"))


def matrix_operator(M, *, hermitian=False, definite=False, name="matrix") -> Operator:
    """Wrap a dense array or scipy sparse matrix."""
    if sp.issparse(M):
        M = M.tocsr()
    else:
        M = np.asarray(M)
    return Operator(M.shape[0], lambda x: M @ x, dtype=M.dtype, hermitian=hermitian,
                    definite=definite, name=name, matrix=M)


@dataclass
class Pencil:
    """Hermitian pencil ``A v = lambda B v`` with B Hermitian positive definite."""

    A: Operator
    B: Operator
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.A.n != self.B.n:
            raise ValueError(f"dimension mismatch: A is {self.A.n}, B is {self.B.n}")
        if not self.B.definite:
            raise ValueError("B must be flagged positive definite")

    @property
    def n(self) -> int:
        return self.A.n

    @property
    def is_standard(self) -> bool:
        return self.B.is_identity

    @property
    def is_real(self) -> bool:
        return not (self.A.is_complex or self.B.is_complex)

    def shifted_dense(self, sigma: float) -> np.ndarray:
        return self.A.to_dense() - sigma * self.B.to_dense()


@dataclass
class SpectrumOracle:
    eigenvalues: np.ndarray
    source: str

    def nearest(self, sigma: float, count: int) -> np.ndarray:
        """The ``count`` eigenvalues closest to ``sigma``, ordered by distance."""
        lam = self.eigenvalues
        idx = np.argsort(np.abs(lam - sigma), kind="stable")[:count]
        return lam[idx]


def hermitian_probe(op: Operator, nprobe: int = 10, seed: int = 0) -> float:
    """Largest |(x, Ay) - (Ax, y)| / (|x||y| |A|_est) over random probes."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((op.n, nprobe))
    y = rng.standard_normal((op.n, nprobe))
    if op.is_complex:
        x = x + 1j * rng.standard_normal((op.n, nprobe))
        y = y + 1j * rng.standard_normal((op.n, nprobe))
    Ax, Ay = op(x), op(y)
    scale = max(np.linalg.norm(Ax, axis=0).max() / np.linalg.norm(x, axis=0).max(),
                np.finfo(float).tiny)
    lhs = np.einsum("ij,ij->j", x.conj(), Ay)
    rhs = np.einsum("ij,ij->j", Ax.conj(), y)
    denom = np.linalg.norm(x, axis=0) * np.linalg.norm(y, axis=0) * scale
    return float(np.max(np.abs(lhs - rhs) / denom))


# ---------------------------------------------------------------------------
# finite-difference Laplacian
# ---------------------------------------------------------------------------

def fd_grid(omega: int) -> tuple[int, float]:
    """Interior points per side and mesh width for level ``omega``."""
    if omega < 1:
        raise ValueError("omega must be >= 1")
    return 2 ** omega - 1, 2.0 ** (-omega)


def laplace_stencil(U: np.ndarray, h: float) -> np.ndarray:
    """5-point Dirichlet Laplacian on a stack of grids of shape (N, N, m)."""
    out = 4.0 * U
    out[1:] -= U[:-1]
    out[:-1] -= U[1:]
    out[:, 1:] -= U[:, :-1]
    out[:, :-1] -= U[:, 1:]
    out *= 1.0 / (h * h)
    return out


def fd_laplacian_2d(omega: int) -> Pencil:
    """Matrix-free 5-point Laplacian on the unit square, h = 2**-omega."""
    if omega > FD_MAX_OMEGA:
        raise MemoryError(f"omega={omega} exceeds the supported size (max {FD_MAX_OMEGA})")
    N, h = fd_grid(omega)
    n = N * N

    def apply(x):
        m = x.shape[1]
        return laplace_stencil(x.reshape(N, N, m), h).reshape(n, m)

    A = Operator(n, apply, hermitian=True, definite=True, name=f"fd{omega}")
    return Pencil(A, IdentityOperator(n), meta={"problem": "fd", "omega": omega, "h": h, "N": N})


def fd_laplacian_matrix(omega: int) -> sp.csr_matrix:
    """Explicit sparse form of the FD Laplacian (tests and I/O only)."""
    N, h = fd_grid(omega)
    T = sp.diags([-np.ones(N - 1), 2 * np.ones(N), -np.ones(N - 1)], [-1, 0, 1])
    I = sp.identity(N)
    return ((sp.kron(T, I) + sp.kron(I, T)) / h ** 2).tocsr()


def fd_laplacian_spectrum(omega: int) -> SpectrumOracle:
    N, h = fd_grid(omega)
    s = np.sin(np.arange(1, N + 1) * np.pi * h / 2) ** 2
    lam = (4.0 / h ** 2) * (s[:, None] + s[None, :])
    return SpectrumOracle(np.sort(lam.ravel()), "analytic")


# ---------------------------------------------------------------------------
# bilinear finite elements
# ---------------------------------------------------------------------------

def q1_element_matrices(h: float) -> tuple[np.ndarray, np.ndarray]:
    """Q1 stiffness and mass on a square element of side h (2x2 Gauss rule).

    Local node order is counter-clockwise from the lower-left corner.
    """
    g = np.array([-1.0, 1.0]) / np.sqrt(3.0)
    K = np.zeros((4, 4))
    M = np.zeros((4, 4))
    for a in g:
        for b in g:
            s, t = (a + 1) / 2, (b + 1) / 2
            N = np.array([(1 - s) * (1 - t), s * (1 - t), s * t, (1 - s) * t])
            # derivatives w.r.t. the unit reference coordinates
            ds = np.array([-(1 - t), 1 - t, t, -t])
            dt = np.array([-(1 - s), -s, s, 1 - s])
            # weight 1 on [-1,1] maps to 1/4 on [0,1]^2; dx = h ds cancels in K
            K += 0.25 * (np.outer(ds, ds) + np.outer(dt, dt))
            M += 0.25 * h * h * np.outer(N, N)
    return K, M


def fe_matrices(ne: int) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Assembled interior stiffness and mass matrices on an ne x ne mesh."""
    if ne < 2:
        raise ValueError("ne must be >= 2")
    h = 1.0 / ne
    Ke, Me = q1_element_matrices(h)
    nn = ne + 1
    ii, jj = np.meshgrid(np.arange(ne), np.arange(ne), indexing="ij")
    n0 = (ii * nn + jj).ravel()
    conn = np.stack([n0, n0 + nn, n0 + nn + 1, n0 + 1], axis=1)
    rows = np.repeat(conn, 4, axis=1).ravel()
    cols = np.tile(conn, (1, 4)).ravel()
    shape = (nn * nn, nn * nn)
    K = sp.coo_matrix((np.tile(Ke.ravel(), ne * ne), (rows, cols)), shape=shape).tocsr()
    M = sp.coo_matrix((np.tile(Me.ravel(), ne * ne), (rows, cols)), shape=shape).tocsr()
    I, J = np.meshgrid(np.arange(nn), np.arange(nn), indexing="ij")
    inner = np.flatnonzero(((I > 0) & (I < ne) & (J > 0) & (J < ne)).ravel())
    return K[inner][:, inner].tocsr(), M[inner][:, inner].tocsr()


def fe_laplacian_q1(ne: int) -> Pencil:
    K, M = fe_matrices(ne)
    A = matrix_operator(K, hermitian=True, definite=True, name=f"fe{ne}-stiffness")
    B = matrix_operator(M, hermitian=True, definite=True, name=f"fe{ne}-mass")
    return Pencil(A, B, meta={"problem": "fe", "ne": ne})


def dense_spectrum(pencil: Pencil) -> SpectrumOracle:
    """All eigenvalues of the pencil by dense generalized eigendecomposition."""
    A = pencil.A.to_dense()
    B = None if pencil.is_standard else pencil.B.to_dense()
    return SpectrumOracle(scipy.linalg.eigh(A, B, eigvals_only=True), "dense")


# ---------------------------------------------------------------------------
# dense absolute-value preconditioners
# ---------------------------------------------------------------------------

def _shifted_eigh(pencil: Pencil, sigma: float):
    if pencil.n > DENSE_LIMIT:
        raise MemoryError(f"n={pencil.n} too large for a dense absolute-value inverse")
    return scipy.linalg.eigh(pencil.shifted_dense(sigma))


def _spectral_inverse(lam: np.ndarray, mode: str) -> np.ndarray:
    if mode not in ("abs", "plain"):
        raise ValueError(f"mode must be 'abs' or 'plain', got {mode!r}")
    cut = 1e-12 * np.max(np.abs(lam))
    small = np.abs(lam) <= cut
    if small.any():
        warnings.warn("shift is numerically an eigenvalue; using the pseudo-inverse",
                      RuntimeWarning, stacklevel=3)
    d = np.abs(lam) if mode == "abs" else lam.copy()
    inv = np.zeros_like(d)
    inv[~small] = 1.0 / d[~small]
    return inv


def dense_av_inverse(pencil: Pencil, sigma: float, mode: str = "abs") -> Operator:
    """|A - sigma B|^+ (mode ``abs``) or (A - sigma B)^+ (mode ``plain``)."""
    lam, Q = _shifted_eigh(pencil, sigma)
    d = _spectral_inverse(lam, mode)
    T = (Q * d) @ Q.conj().T
    T = 0.5 * (T + T.conj().T)
    return matrix_operator(T, hermitian=True, definite=(mode == "abs"),
                           name=f"dense-{mode}({sigma:g})")


def perturbed_preconditioner(pencil: Pencil, sigma: float, epsilon: float,
                             seed: int, flavor: str = "abs", *, _eig=None) -> Operator:
    """Inverse (absolute value) of A - sigma B plus a seeded SPD perturbation.

    The perturbation is E = eps * |(A - sigma B)^-1| * G'G / |G'G| with G a
    standard Gaussian matrix, so |E| equals the admissible bound exactly.
    The same E is produced for both flavors at equal seed.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    lam, Q = _eig if _eig is not None else _shifted_eigh(pencil, sigma)
    d = _spectral_inverse(lam, flavor)
    T = (Q * d) @ Q.conj().T
    if epsilon > 0:
        n = pencil.n
        G = np.random.default_rng(seed).standard_normal((n, n))
        E = G.T @ G
        top = scipy.linalg.eigh(E, eigvals_only=True, subset_by_index=[n - 1, n - 1])[0]
        inv_norm = 1.0 / np.min(np.abs(lam))
        T = T + (epsilon * inv_norm / top) * E
    T = 0.5 * (T + T.conj().T)
    return matrix_operator(T, hermitian=True, definite=(flavor == "abs"),
                           name=f"perturbed-{flavor}({sigma:g},{epsilon:g})")
