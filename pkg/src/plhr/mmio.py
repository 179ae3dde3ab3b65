"""Matrix Market input and output for Hermitian pencils."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import scipy.io
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .operators import IdentityOperator, Pencil, matrix_operator

SYMMETRY_TOL = 1e-10
HERMITIAN_STORAGE = ("symmetric", "hermitian")


class MatrixMarketError(ValueError):
    """A Matrix Market file could not be used as part of a Hermitian pencil."""


def _read(path):
    path = Path(path)
    try:
        info = scipy.io.mminfo(str(path))
        M = scipy.io.mmread(str(path))
    except (OSError, ValueError, TypeError, IndexError) as exc:
        raise MatrixMarketError(f"cannot parse {path}: {exc}") from exc
    rows, cols, _, _, field, symmetry = info
    if rows != cols:
        raise MatrixMarketError(f"{path} is {rows}x{cols}, not square")
    if field not in ("real", "complex", "integer"):
        raise MatrixMarketError(f"{path}: unsupported field {field!r}")
    if symmetry not in HERMITIAN_STORAGE:
        raise MatrixMarketError(f"{path}: storage {symmetry!r} is not symmetric/hermitian")
    M = sp.csr_matrix(M)
    if field == "integer":
        M = M.astype(float)
    return M


def check_hermitian(M, tol=SYMMETRY_TOL, name="matrix"):
    """Raise if ||M - M*|| exceeds tol * ||M|| (Frobenius norms)."""
    scale = spla.norm(M) if sp.issparse(M) else np.linalg.norm(M)
    diff = M - M.conj().T
    err = spla.norm(diff) if sp.issparse(diff) else np.linalg.norm(diff)
    if err > tol * max(scale, np.finfo(float).tiny):
        raise MatrixMarketError(f"{name} is not Hermitian (relative asymmetry {err / scale:.2e})")


def _check_definite(B, name):
    n = B.shape[0]
    try:
        if n <= 2000:
            lo = float(np.linalg.eigvalsh(B.toarray())[0])
        else:
            lo = float(spla.eigsh(B, k=1, which="SA", return_eigenvectors=False)[0])
    except (np.linalg.LinAlgError, spla.ArpackNoConvergence) as exc:
        raise MatrixMarketError(f"could not verify definiteness of {name}: {exc}") from exc
    if lo <= 0:
        raise MatrixMarketError(f"{name} is not positive definite (smallest eigenvalue {lo:.3e})")


def load_matrix_market(path_a, path_b=None) -> Pencil:
    """Read A (and optionally B) into a Pencil; B omitted means the identity."""
    A = _read(path_a)
    check_hermitian(A, name=str(path_a))
    n = A.shape[0]
    Aop = matrix_operator(A, hermitian=True, name=Path(path_a).name)
    if path_b is None:
        return Pencil(Aop, IdentityOperator(n), meta={"source": str(path_a)})
    B = _read(path_b)
    if B.shape != A.shape:
        raise MatrixMarketError(f"dimension mismatch: A is {A.shape}, B is {B.shape}")
    check_hermitian(B, name=str(path_b))
    _check_definite(B, str(path_b))
    Bop = matrix_operator(B, hermitian=True, definite=True, name=Path(path_b).name)
    return Pencil(Aop, Bop, meta={"source": (str(path_a), str(path_b))})


def write_matrix_market(path, M, comment=""):
    """Write a Hermitian sparse or dense matrix with symmetric/hermitian storage."""
    M = sp.coo_matrix(M)
    check_hermitian(M.tocsr())
    symmetry = "hermitian" if np.iscomplexobj(M.data) else "symmetric"
    scipy.io.mmwrite(str(path), M, comment=comment, symmetry=symmetry, precision=17)
