"""PLHR, block PLHR (complex and real arithmetic) and the block generalized Davidson baseline."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from .dense import (CLUSTER_TOL, DROP_TOL, DegenerateProjection, stabilize_clusters, b_normalize, b_orthonormalize,
                    rayleigh_quotient_block, rayleigh_ritz_hermitian,
                    solve_projected_pencil, split_conjugate_basis)
from .extraction import harmonic_matrices

log = logging.getLogger(__name__)

EXTRACTIONS = ("t_harmonic", "harmonic", "refined")
S_SHIFTS = ("rayleigh", "harmonic_value", "sigma")


@dataclass
class SolverConfig:
    sigma: float
    k: int = 1
    tol: float = 1e-6
    maxit: int = 1000
    seed: int = 0
    extraction: str = "t_harmonic"
    locking: bool = False
    record_history: bool = True
    k_track: int | None = None      # pairs that must converge; defaults to k
    s_vectors: bool = True          # False drops S from the trial subspace
    s_shift: str = "rayleigh"
    relative_tol: bool = False
    drop_tol: float = DROP_TOL
    m_max: int | None = None        # BGD restart size; defaults to 6k
    cluster_tol: float | None = CLUSTER_TOL  # None keeps raw projected eigenvectors

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.maxit < 0:
            raise ValueError("maxit must be >= 0")
        if self.extraction not in EXTRACTIONS:
            raise ValueError(f"unknown extraction {self.extraction!r}")
        if self.s_shift not in S_SHIFTS:
            raise ValueError(f"unknown s_shift {self.s_shift!r}")
        if self.s_shift != "rayleigh":
            # only the Rayleigh-quotient shift is implemented; the others are
            # named so configs can refer to them
            raise NotImplementedError(f"s_shift={self.s_shift!r} is not implemented")
        if self.k_track is None:
            self.k_track = self.k
        if not 1 <= self.k_track <= self.k:
            raise ValueError("k_track must lie in [1, k]")

    @property
    def restart_size(self) -> int:
        return 6 * self.k if self.m_max is None else self.m_max


@dataclass
class SolverState:
    V: np.ndarray
    AV: np.ndarray
    BV: np.ndarray
    lam: np.ndarray
    P: np.ndarray | None = None
    pairing: list = field(default_factory=list)
    residuals: np.ndarray | None = None
    R: np.ndarray | None = None
    locked: np.ndarray | None = None
    iteration: int = 0

    @property
    def k(self) -> int:
        return self.V.shape[1]


@dataclass
class EigenResult:
    values: np.ndarray
    vectors: np.ndarray
    residual_norms: np.ndarray
    iterations: int
    converged: bool
    history: list           # per iteration: (rayleigh quotients, residual norms), sorted by |lam - sigma|
    initial: tuple | None
    sigma: float
    seed: int
    k_track: int
    diagnostics: dict = field(default_factory=dict)

    @property
    def max_residual_history(self) -> np.ndarray:
        return np.array([res[:self.k_track].max() for _, res in self.history])

    def tracked(self):
        """Values and residuals of the k_track pairs nearest sigma."""
        return self.values[:self.k_track], self.residual_norms[:self.k_track]


def _B(pencil, X):
    return X.copy() if pencil.is_standard else pencil.B(X)


def initial_block(pencil, k, seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((pencil.n, k))
    if not pencil.is_real:
        X = X + 1j * rng.standard_normal((pencil.n, k))
    return X


def _residual_norms(R, lam, cfg):
    res = np.linalg.norm(R, axis=0)
    if cfg.relative_tol:
        res = res / np.maximum(np.abs(lam), np.finfo(float).tiny)
    return res


def soft_lock_update(state: SolverState, tol: float, cfg: SolverConfig | None = None,
                     locking: bool = False) -> SolverState:
    """Recompute residuals and flag columns at or below ``tol`` as locked.

    Locked columns stay in V and in the extraction but generate no W, S or P
    columns at the next iteration.
    """
    R = state.AV - state.BV * state.lam
    res = np.linalg.norm(R, axis=0)
    if cfg is not None and cfg.relative_tol:
        res = res / np.maximum(np.abs(state.lam), np.finfo(float).tiny)
    locked = res <= tol if locking else np.zeros(len(res), dtype=bool)
    return replace(state, R=R, residuals=res, locked=locked)


def _select(sol, k, real_arith):
    """Pick k projected eigenvectors. Returns (Y, pairing, n_pairs, tail)."""
    if real_arith:
        split = split_conjugate_basis(sol.vectors, k, sol.values)
        return split.Yprime, split.pairing, split.n_pairs, split.tail_flag
    Y = sol.vectors[:, :k]
    complex_cols = False
    if np.iscomplexobj(Y):
        complex_cols = bool(np.any(Y.imag != 0))
        if not complex_cols:
            Y = Y.real.copy()
    return Y, [], int(complex_cols), False


def _solve_with_retry(L, M, labels, diag):
    """Solve the projected problem; on degeneracy drop P, then S."""
    keep = np.ones(len(labels), dtype=bool)
    for drop in (None, "P", "S"):
        if drop is not None:
            if not np.any(labels[keep] == drop):
                continue
            keep &= labels != drop
            diag["basis_shrinks"] = diag.get("basis_shrinks", 0) + 1
        idx = np.flatnonzero(keep)
        try:
            return solve_projected_pencil(L[np.ix_(idx, idx)], M[np.ix_(idx, idx)]), idx
        except DegenerateProjection as exc:
            log.debug("degenerate projected problem (%s); shrinking basis", exc)
    raise DegenerateProjection("projected problem degenerate after dropping P and S")


def _record(cfg, state, history):
    if not cfg.record_history:
        return
    order = np.argsort(np.abs(state.lam - cfg.sigma), kind="stable")
    history.append((state.lam[order].copy(), state.residuals[order].copy()))


def _tracked_converged(cfg, state):
    order = np.argsort(np.abs(state.lam - cfg.sigma), kind="stable")
    return bool(np.all(state.residuals[order[:cfg.k_track]] <= cfg.tol))


def _finish(pencil, cfg, state, it, converged, history, initial, diag, seed):
    V = state.V
    try:
        vals, vecs = rayleigh_ritz_hermitian(V, pencil.A, None if pencil.is_standard else pencil.B,
                                             sigma=cfg.sigma, drop_tol=cfg.drop_tol)
    except np.linalg.LinAlgError:
        diag["final_rr_failed"] = True
        order = np.argsort(np.abs(state.lam - cfg.sigma), kind="stable")
        vals, vecs = state.lam[order], V[:, order]
    R = pencil.A(vecs) - _B(pencil, vecs) * vals
    res = np.linalg.norm(R, axis=0)
    if cfg.relative_tol:
        res = res / np.maximum(np.abs(vals), np.finfo(float).tiny)
    return EigenResult(vals, vecs, res, it, converged, history, initial, cfg.sigma, seed,
                       min(cfg.k_track, len(vals)), diag)


def _block_plhr(pencil, T, cfg: SolverConfig, real_arith: bool, X0=None, callback=None):
    if cfg.extraction == "refined" and cfg.k != 1:
        raise ValueError("refined extraction is only available for k = 1")
    if real_arith and not pencil.is_real:
        raise ValueError("real arithmetic requires a real pencil")
    k, sigma = cfg.k, cfg.sigma
    A = pencil.A
    Bop = None if pencil.is_standard else pencil.B
    X = initial_block(pencil, k, cfg.seed) if X0 is None else np.array(X0, copy=True)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape != (pencil.n, k):
        raise ValueError(f"initial block must have shape {(pencil.n, k)}")
    V, BV, _ = b_normalize(X, B=Bop)
    AV = A(V)
    state = SolverState(V, AV, BV, rayleigh_quotient_block(V, A, AV=AV, BV=BV))
    history, diag = [], {"complex_pair_steps": 0, "tail_cuts": 0, "basis_shrinks": 0,
                         "cluster_steps": 0,
                         "arithmetic": "real" if real_arith else "complex"}
    state = soft_lock_update(state, cfg.tol, cfg, cfg.locking)
    initial = (state.lam.copy(), state.residuals.copy())
    it = 0
    converged = _tracked_converged(cfg, state)
    while not converged and it < cfg.maxit:
        active = ~state.locked
        lam_a = state.lam[active]
        W = T(state.R[:, active])
        blocks = [state.V, W]
        labels = ["V"] * k + ["W"] * W.shape[1]
        if cfg.s_vectors:
            S = T(A(W) - _B(pencil, W) * lam_a)
            blocks.append(S)
            labels += ["S"] * S.shape[1]
        if state.P is not None:
            Pa = state.P[:, active]
            blocks.append(Pa)
            labels += ["P"] * Pa.shape[1]
        Z = np.hstack(blocks)
        Zh, _, kept, BZ = b_orthonormalize(Z, Bop, cfg.drop_tol, return_BQ=True)
        labels = np.array(labels)[kept]
        AZ = A(Zh)

        if cfg.extraction == "refined":
            # minimal T-norm residual for the current Rayleigh quotient
            lt = state.lam[0]
            F = AZ - lt * BZ
            G = T(F)
            Lr = G.conj().T @ F
            Lr = 0.5 * (Lr + Lr.conj().T)
            w, Yr = scipy.linalg.eigh(Lr)
            Y, pairing, idx = Yr[:, :1], [], np.arange(len(labels))
            if real_arith:
                Y = Y.real
        else:
            Tproj = T if cfg.extraction == "t_harmonic" else None
            L, M, F, G = harmonic_matrices(AZ, BZ, sigma, Tproj)
            try:
                sol, idx = _solve_with_retry(L, M, labels, diag)
            except DegenerateProjection as exc:
                diag["breakdown"] = str(exc)
                log.warning("iteration %d: %s", it, exc)
                break
            raw = sol
            if cfg.cluster_tol is not None:
                HA = Zh[:, idx].conj().T @ AZ[:, idx]
                sol, nc = stabilize_clusters(sol, k, HA, sigma, cfg.cluster_tol)
                diag["cluster_steps"] += int(nc > 0)
            Y, pairing, npairs, tail = _select(sol, k, real_arith)
            diag["complex_pair_steps"] += int(npairs > 0)
            diag["tail_cuts"] += int(tail)
            if callback is not None:
                callback({"iteration": it + 1, "Zhat": Zh[:, idx], "AZ": AZ[:, idx],
                          "BZ": BZ[:, idx], "sol": raw, "selected": sol, "k": k, "extraction": cfg.extraction,
                          "sigma": sigma})
        lab = labels[idx]
        Zs, AZs, BZs = Zh[:, idx], AZ[:, idx], BZ[:, idx]
        notv = lab != "V"
        Vn = Zs @ Y
        P = Zs[:, notv] @ Y[notv]
        AVn = AZs @ Y
        BVn = BZs @ Y
        lam = rayleigh_quotient_block(Vn, A, AV=AVn, BV=BVn, pairing=pairing)
        Vn, BVn, nrm = b_normalize(Vn, BVn)
        AVn = AVn / nrm
        it += 1
        state = SolverState(Vn, AVn, BVn, lam, P=P, pairing=pairing, iteration=it)
        state = soft_lock_update(state, cfg.tol, cfg, cfg.locking)
        _record(cfg, state, history)
        converged = _tracked_converged(cfg, state)
    diag["final_lambda"] = state.lam.copy()
    return _finish(pencil, cfg, state, it, converged, history, initial, diag, cfg.seed)


def bplhr_solve(pencil, T, cfg: SolverConfig, X0=None, callback=None) -> EigenResult:
    """Block PLHR with complex projected eigenvectors kept as they are.

    Real data stays real as long as every selected projected eigenvector is
    real; the first complex selection switches the iteration to complex
    arithmetic.
    """
    return _block_plhr(pencil, T, cfg, real_arith=False, X0=X0, callback=callback)


def bplhr_real_solve(pencil, T, cfg: SolverConfig, X0=None, callback=None) -> EigenResult:
    """Block PLHR in real arithmetic; conjugate pairs enter as real and imaginary parts."""
    return _block_plhr(pencil, T, cfg, real_arith=True, X0=X0, callback=callback)


def plhr_solve(pencil, T, cfg: SolverConfig, v0=None, real_arithmetic=False,
               callback=None) -> EigenResult:
    """Single-vector PLHR (block size one)."""
    if cfg.k != 1:
        cfg = replace(cfg, k=1, k_track=1)
    return _block_plhr(pencil, T, cfg, real_arith=real_arithmetic, X0=v0, callback=callback)


def bgd_solve(pencil, T, cfg: SolverConfig, X0=None) -> EigenResult:
    """Block generalized Davidson with harmonic extraction and thick-less restart.

    Each iteration appends the preconditioned residuals of the unconverged
    approximations. When the basis would exceed ``cfg.restart_size`` it is
    collapsed to the current k approximations before expanding. For real
    pencils conjugate harmonic pairs are split into real and imaginary parts.
    """
    k, sigma = cfg.k, cfg.sigma
    m_max = cfg.restart_size
    if m_max < 2 * k:
        raise ValueError("m_max must be at least 2k")
    A = pencil.A
    Bop = None if pencil.is_standard else pencil.B
    real_arith = pencil.is_real
    X = initial_block(pencil, k, cfg.seed) if X0 is None else np.array(X0, copy=True)
    Z, _, _, BZ = b_orthonormalize(X, Bop, cfg.drop_tol, return_BQ=True)
    AZ = A(Z)
    history, diag = [], {"subspace_dims": [], "restarts": 0, "complex_pair_steps": 0,
                         "cluster_steps": 0}
    initial = None
    it = 0
    converged = False
    while True:
        L, M, _, _ = harmonic_matrices(AZ, BZ, sigma)
        diag["subspace_dims"].append(Z.shape[1])
        try:
            sol = solve_projected_pencil(L, M)
        except DegenerateProjection as exc:
            diag["breakdown"] = str(exc)
            break
        kk = min(k, Z.shape[1])
        if cfg.cluster_tol is not None:
            sol, nc = stabilize_clusters(sol, kk, Z.conj().T @ AZ, sigma, cfg.cluster_tol)
            diag["cluster_steps"] += int(nc > 0)
        Y, pairing, npairs, _ = _select(sol, kk, real_arith)
        diag["complex_pair_steps"] += int(npairs > 0)
        V, AV, BV = Z @ Y, AZ @ Y, BZ @ Y
        lam = rayleigh_quotient_block(V, A, AV=AV, BV=BV, pairing=pairing)
        V, BV, nrm = b_normalize(V, BV)
        AV = AV / nrm
        state = soft_lock_update(SolverState(V, AV, BV, lam, pairing=pairing, iteration=it),
                                 cfg.tol, cfg, cfg.locking)
        if it == 0:
            initial = (state.lam.copy(), state.residuals.copy())
        else:
            _record(cfg, state, history)
        converged = _tracked_converged(cfg, state)
        if converged or it >= cfg.maxit:
            break
        active = ~state.locked
        if Z.shape[1] + int(active.sum()) > m_max:
            Z, _, _, BZ = b_orthonormalize(V, Bop, cfg.drop_tol, return_BQ=True)
            AZ = A(Z)
            diag["restarts"] += 1
        Wn = T(state.R[:, active])
        Q, r, _, BQ = b_orthonormalize(Wn, Bop, cfg.drop_tol, return_BQ=True, against=(Z, BZ))
        if r:
            Z = np.hstack([Z, Q])
            BZ = np.hstack([BZ, BQ])
            AZ = np.hstack([AZ, A(Q)])
        it += 1
    diag["final_lambda"] = state.lam.copy()
    return _finish(pencil, cfg, state, it, converged, history, initial, diag, cfg.seed)
