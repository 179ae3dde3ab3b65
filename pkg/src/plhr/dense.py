"""Small dense kernels: B-orthonormalization, projected pencils, Rayleigh quotients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

DROP_TOL = 1e-8
COND_LIMIT = 1e12
CONJ_TOL = 1e-12
CLUSTER_TOL = 1e-3


class DegenerateProjection(np.linalg.LinAlgError):
    """The right-hand matrix of a projected pencil is numerically singular."""


@dataclass
class SmallEigenSolution:
    values: np.ndarray   # complex, ascending |xi|, conjugates adjacent
    vectors: np.ndarray  # columns with unit Euclidean norm
    matrix: np.ndarray | None = None  # M^-1 L, kept for cluster handling

    def __len__(self):
        return len(self.values)


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise ValueError("non-finite entries in input")


def _apply_B(B, X):
    if B is None or getattr(B, "is_identity", False):
        return X.copy()
    return B(X)


def _col_dot(X, Y):
    return np.einsum("ij,ij->j", X.conj(), Y)


def b_normalize(X, BX=None, B=None):
    """Scale columns of X to unit B-norm. Returns (X, BX, norms)."""
    if BX is None:
        BX = _apply_B(B, X)
    nrm = np.sqrt(np.abs(_col_dot(X, BX).real))
    if np.any(nrm == 0):
        raise ValueError("zero B-norm column")
    return X / nrm, BX / nrm, nrm


def b_orthonormalize(Z, B=None, drop_tol=DROP_TOL, return_BQ=False, against=None):
    """B-orthonormalize the columns of Z left to right (CGS, two passes).

    A column whose B-norm after projection falls below ``drop_tol`` times its
    original B-norm is dropped. Returns ``(Q, rank, kept)`` where ``kept`` lists
    the indices of the surviving input columns; with ``return_BQ`` the product
    B Q is appended. ``against=(Q0, BQ0)`` supplies an existing B-orthonormal
    basis that the new columns are also made orthogonal to (it is not returned).
    """
    Z = np.asarray(Z)
    if Z.ndim != 2:
        raise ValueError("Z must be a 2-D block")
    if not 0 <= drop_tol < 1:
        raise ValueError("drop_tol must lie in [0, 1)")
    _check_finite(Z)
    n, m = Z.shape
    ident = B is None or getattr(B, "is_identity", False)
    BZ = Z if ident else B(Z)
    _check_finite(BZ)
    norm0 = np.sqrt(np.abs(_col_dot(Z, BZ).real))

    r0 = 0 if against is None else against[0].shape[1]
    dtype = Z.dtype if against is None else np.result_type(Z.dtype, against[0].dtype)
    Q = np.empty((n, r0 + m), dtype=dtype)
    BQ = Q if ident else np.empty((n, r0 + m), dtype=dtype)
    if r0:
        Q[:, :r0] = against[0]
        if not ident:
            BQ[:, :r0] = against[1]
    kept = []
    r = r0
    for j in range(m):
        if norm0[j] == 0:
            continue
        z = Z[:, j].astype(dtype, copy=True)
        if r:
            for _ in range(2):
                z -= Q[:, :r] @ (BQ[:, :r].conj().T @ z)
        bz = z if ident else B(z)
        nrm = np.sqrt(abs(np.vdot(z, bz).real))
        if nrm <= drop_tol * norm0[j]:
            continue
        Q[:, r] = z / nrm
        if not ident:
            BQ[:, r] = bz / nrm
        kept.append(j)
        r += 1
    Qn = Q[:, r0:r]
    out = (Qn, r - r0, np.array(kept, dtype=int))
    if return_BQ:
        out += (Qn if ident else BQ[:, r0:r],)
    return out


def _pair_conjugates(values, order):
    """Reorder ``order`` so each complex value is followed by its conjugate."""
    placed = np.zeros(len(values), dtype=bool)
    out = []
    for pos, i in enumerate(order):
        if placed[i]:
            continue
        out.append(i)
        placed[i] = True
        xi = values[i]
        if abs(xi.imag) <= CONJ_TOL * (1 + abs(xi)):
            continue
        best, dist = None, np.inf
        for j in order[pos + 1:]:
            if placed[j]:
                continue
            d = abs(values[j] - np.conj(xi))
            if d < dist:
                best, dist = j, d
        if best is not None and dist <= CONJ_TOL * (1 + abs(xi)):
            out.append(best)
            placed[best] = True
    return np.array(out, dtype=int)


def sort_eigenpairs(values, vectors):
    """Ascending |xi| (ties by Re xi), conjugate pairs adjacent."""
    values = np.asarray(values)
    order = np.lexsort((values.real, np.abs(values)))
    if np.iscomplexobj(values):
        order = _pair_conjugates(values, order)
    return values[order], vectors[:, order]


def solve_projected_pencil(L, M, cond_limit=COND_LIMIT) -> SmallEigenSolution:
    """All eigenpairs of L y = xi M y via LU of M and a dense eigensolve."""
    L = np.asarray(L)
    M = np.asarray(M)
    if L.shape != M.shape or L.shape[0] != L.shape[1]:
        raise ValueError("L and M must be square and of equal size")
    _check_finite(L, M)
    if L.shape[0] == 0:
        return SmallEigenSolution(np.zeros(0, complex), np.zeros((0, 0)))
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > cond_limit:
        raise DegenerateProjection(f"projected right-hand matrix has cond {cond:.3e}")
    lu = scipy.linalg.lu_factor(M)
    H = scipy.linalg.lu_solve(lu, L)
    try:
        w, Y = scipy.linalg.eig(H)
    except scipy.linalg.LinAlgError as exc:
        raise DegenerateProjection("dense eigenvalue iteration did not converge") from exc
    if np.isrealobj(H) and np.all(w.imag == 0):
        w = w.real.astype(complex)
        Y = Y.real
    Y = Y / np.linalg.norm(Y, axis=0)
    w, Y = sort_eigenpairs(w, Y)
    return SmallEigenSolution(w.astype(complex), Y, H)


def find_clusters(values, k, rtol=CLUSTER_TOL):
    """Runs of consecutive sorted values that touch the first k.

    Neighbours belong to one cluster when |xi_i - xi_j| <= rtol * max(|xi_i|, |xi_j|).
    Returns a list of (start, stop) slices with stop - start >= 2.
    """
    out = []
    n = len(values)
    i = 0
    while i < min(k, n):
        j = i + 1
        while j < n and abs(values[j] - values[j - 1]) <= rtol * max(abs(values[j]), abs(values[j - 1])):
            j += 1
        if j - i >= 2:
            out.append((i, j))
        i = j
    return out


def stabilize_clusters(sol, k, HA, sigma, rtol=CLUSTER_TOL):
    """Replace eigenvectors inside clusters of close projected eigenvalues.

    Eigenvectors of a non-normal matrix belonging to nearly equal eigenvalues
    can be almost parallel. For every cluster touching the first k values the
    invariant subspace is taken from an ordered Schur form of ``sol.matrix``
    and rotated by a Hermitian Rayleigh-Ritz step with ``HA`` (the projection of
    A on the B-orthonormal basis). Cluster values become theta - sigma, where
    theta are the Ritz values, ordered by |theta - sigma|. Returns
    ``(sol, n_clusters)``; clusters whose Schur selection does not match, or that
    are not closed under conjugation for real data, are left untouched.
    """
    H = sol.matrix
    if H is None:
        raise ValueError("solution does not carry its projected matrix")
    values = sol.values.copy()
    vectors = sol.vectors.astype(np.result_type(sol.vectors, HA), copy=True)
    real_data = np.isrealobj(H) and np.isrealobj(HA)
    done = 0
    for i, j in find_clusters(values, k, rtol):
        vals = values[i:j]
        if real_data and not np.allclose(np.sort_complex(vals), np.sort_complex(vals.conj()),
                                         rtol=0, atol=CONJ_TOL * (1 + np.max(np.abs(vals)))):
            continue
        center = vals.mean()
        radius = np.max(np.abs(vals - center))
        tol = radius + 10 * rtol * np.max(np.abs(vals))
        if real_data:
            center = center.real
            _, U, sdim = scipy.linalg.schur(
                H, output="real", sort=lambda x, y: abs(complex(x, y) - center) <= tol)
        else:
            _, U, sdim = scipy.linalg.schur(
                H.astype(complex), output="complex", sort=lambda x: abs(x - center) <= tol)
        if sdim != j - i:
            continue
        U = U[:, :sdim]
        Hc = U.conj().T @ HA @ U
        theta, C = scipy.linalg.eigh(0.5 * (Hc + Hc.conj().T))
        order = np.argsort(np.abs(theta - sigma), kind="stable")
        values[i:j] = theta[order] - sigma
        vectors[:, i:j] = U @ C[:, order]
        done += 1
    if done and np.iscomplexobj(vectors) and np.all(vectors.imag == 0):
        vectors = vectors.real
    return SmallEigenSolution(values, vectors, H), done


def rayleigh_ritz_hermitian(V, A, B=None, sigma=None, drop_tol=DROP_TOL):
    """Standard Rayleigh-Ritz on span(V).

    Returns ``(values, vectors)`` with B-orthonormal Ritz vectors, ordered by
    distance to ``sigma`` (ascending values when sigma is None).
    """
    Q, r, _, BQ = b_orthonormalize(V, B, drop_tol, return_BQ=True)
    if r == 0:
        raise np.linalg.LinAlgError("rank collapse in Rayleigh-Ritz basis")
    AQ = A(Q)
    H = Q.conj().T @ AQ
    H = 0.5 * (H + H.conj().T)
    theta, C = scipy.linalg.eigh(H)
    if sigma is not None:
        order = np.argsort(np.abs(theta - sigma), kind="stable")
        theta, C = theta[order], C[:, order]
    return theta, Q @ C


def rayleigh_quotients(AV, BV, V):
    return (_col_dot(V, AV).real / _col_dot(V, BV).real)


def rayleigh_quotient_block(V, A, B=None, pairing=(), AV=None, BV=None):
    """Rayleigh quotients with conjugate pairs sharing the combined quotient.

    ``pairing`` is a sequence of (iR, iI) column index pairs. Both columns of a
    pair receive (vR*A vR + vI*A vI) / (vR*B vR + vI*B vI).
    """
    if AV is None:
        AV = A(V)
    if BV is None:
        BV = _apply_B(B, V)
    num = _col_dot(V, AV).real
    den = _col_dot(V, BV).real
    if np.any(den == 0):
        raise ValueError("zero B-norm column")
    lam = num / den
    for iR, iI in pairing:
        lam[iR] = lam[iI] = (num[iR] + num[iI]) / (den[iR] + den[iI])
    return lam


@dataclass
class RealSplit:
    Yprime: np.ndarray
    pairing: list          # (iR, iI) column pairs inside Yprime
    tail_flag: bool
    n_pairs: int


def split_conjugate_basis(Y, k, values=None) -> RealSplit:
    """Replace conjugate eigenvector pairs by their real and imaginary parts.

    Column layout is [Y0, YR, y_tail_R, YI]. A complex column whose conjugate
    falls outside the first ``k`` keeps only its real part (``tail_flag``).
    """
    Y = np.asarray(Y)[:, :k]
    if values is not None:
        values = np.asarray(values)[:k]
        is_real = np.abs(values.imag) <= CONJ_TOL * (1 + np.abs(values))
    else:
        is_real = np.all(np.abs(Y.imag) == 0, axis=0) if np.iscomplexobj(Y) else np.ones(k, bool)
    if np.isrealobj(Y):
        return RealSplit(Y.copy(), [], False, 0)
    real_cols, pairs, tail = [], [], None
    j = 0
    while j < k:
        if is_real[j]:
            real_cols.append(j)
            j += 1
            continue
        if j + 1 < k and not is_real[j + 1] and _is_conj(Y[:, j], Y[:, j + 1], values, j):
            pairs.append(j)
            j += 2
            continue
        if j == k - 1:
            tail = j
            j += 1
            continue
        raise ValueError(f"column {j} is complex without an adjacent conjugate")
    cols = [Y[:, real_cols].real]
    cols.append(np.column_stack([Y[:, p].real for p in pairs]) if pairs else Y[:, :0].real)
    if tail is not None:
        cols.append(Y[:, [tail]].real)
    cols.append(np.column_stack([Y[:, p].imag for p in pairs]) if pairs else Y[:, :0].real)
    Yp = np.hstack(cols)
    n0, npair = len(real_cols), len(pairs)
    off = n0 + npair + (tail is not None)
    pairing = [(n0 + i, off + i) for i in range(npair)]
    return RealSplit(Yp, pairing, tail is not None, npair)


def _is_conj(y1, y2, values, j):
    if values is not None:
        a, b = values[j], values[j + 1]
        return abs(a - np.conj(b)) <= CONJ_TOL * (1 + abs(a))
    return np.allclose(y1, np.conj(y2))
