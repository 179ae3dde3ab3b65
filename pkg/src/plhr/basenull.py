"""Idealized residual-minimizing null-space iterations with a known eigenvalue."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MODES = ("two_term", "three_term")


@dataclass
class BaseNullResult:
    v: np.ndarray
    iterations: int
    converged: bool
    t_norms: np.ndarray          # ||r||_T per iterate, starting with the initial one
    eig_residuals: np.ndarray    # ||A v - rho B v|| / ||v||_B with rho the Rayleigh quotient
    rayleigh_quotients: np.ndarray
    stagnated: bool = False
    reason: str = ""
    diagnostics: dict = field(default_factory=dict)

    @property
    def ratios(self) -> np.ndarray:
        """Per-step reduction factors ||r+||_T / ||r||_T."""
        t = self.t_norms
        with np.errstate(divide="ignore", invalid="ignore"):
            return t[1:] / t[:-1]


def _t_norm(T, r):
    return float(np.sqrt(abs(np.vdot(r, T(r)).real)))


def _eig_residual(pencil, v):
    Av = pencil.A(v)
    Bv = v if pencil.is_standard else pencil.B(v)
    vb = np.vdot(v, Bv).real
    if vb <= 0:
        return np.inf, np.nan
    rho = np.vdot(v, Av).real / vb
    return float(np.linalg.norm(Av - rho * Bv) / np.sqrt(vb)), float(rho)


def base_null_solve(pencil, T, lambda_q, v0, mode="three_term", tol=1e-8, maxit=500,
                    vanish_tol=1e-10, stall_steps=20) -> BaseNullResult:
    """Residual-minimizing iteration for (A - lambda_q B) v = 0.

    Each step sets v <- v + u with u in span{T r, T M T r} (two-term) or
    span{T r, T M T r, v - v_prev} (three-term), M = A - lambda_q B and
    r = -M v, choosing u to minimize ||r - M u||_T. Convergence is declared
    when the eigenresidual against the Rayleigh quotient drops to ``tol``.

    An initial guess with no component in the null space drives v to zero;
    this and a long run of non-decreasing T-norms are reported as stagnation.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    v = np.array(v0, copy=True)
    if v.ndim != 1 or v.shape[0] != pencil.n:
        raise ValueError("v0 must be a vector of the pencil dimension")
    dtype = np.result_type(v, float) if pencil.is_real else np.result_type(v, complex)
    v = v.astype(dtype)

    def apply_M(x):
        Bx = x if pencil.is_standard else pencil.B(x)
        return pencil.A(x) - lambda_q * Bx

    r = -apply_M(v)
    vb0 = np.sqrt(abs(np.vdot(v, v if pencil.is_standard else pencil.B(v)).real))
    t_norms = [_t_norm(T, r)]
    res0, rho0 = _eig_residual(pencil, v)
    eig_res, rqs = [res0], [rho0]
    v_prev = None
    stalled = 0
    it = 0
    converged = eig_res[0] <= tol
    stagnated, reason = False, ""
    while not converged and it < maxit:
        Tr = T(r)
        cols = [Tr, T(apply_M(Tr))]
        if mode == "three_term" and v_prev is not None:
            cols.append(v - v_prev)
        K = np.column_stack(cols)
        MK = np.column_stack([apply_M(K[:, j]) for j in range(K.shape[1])])
        TMK = T(MK)
        G = MK.conj().T @ TMK
        rhs = TMK.conj().T @ r
        coef = np.linalg.lstsq(0.5 * (G + G.conj().T), rhs, rcond=None)[0]
        v_prev = v
        v = v + K @ coef
        r = r - MK @ coef
        it += 1
        t_norms.append(_t_norm(T, r))
        res, rho = _eig_residual(pencil, v)
        eig_res.append(res)
        rqs.append(rho)
        converged = eig_res[-1] <= tol
        vb = np.sqrt(abs(np.vdot(v, v if pencil.is_standard else pencil.B(v)).real))
        if not converged and vb <= vanish_tol * vb0:
            stagnated, reason = True, "iterate vanished: no component in the null space"
            break
        stalled = stalled + 1 if t_norms[-1] >= t_norms[-2] * (1 - 1e-14) else 0
        if stalled >= stall_steps:
            stagnated, reason = True, "T-norm of the residual stopped decreasing"
            break
    return BaseNullResult(v, it, converged, np.array(t_norms), np.array(eig_res),
                          np.array(rqs), stagnated, reason)


def convergence_bound(mu, q=None):
    """Residual reduction bound for the two-term iteration.

    ``mu`` holds the sorted eigenvalues of T(A - lambda_q B) with a single zero
    at 1-based position ``q`` (located automatically when omitted). Returns
    ``(kappa, bound)`` with bound = (kappa - 1) / (kappa + 1).
    """
    mu = np.asarray(mu, dtype=float)
    if mu.ndim != 1 or len(mu) < 3:
        raise ValueError("need at least three values")
    if np.any(np.diff(mu) < 0):
        raise ValueError("mu must be sorted ascending")
    if q is None:
        zeros = np.flatnonzero(mu == 0)
        if len(zeros) != 1:
            raise ValueError("mu must contain exactly one zero when q is not given")
        q = int(zeros[0]) + 1
    if not 1 < q < len(mu):
        raise ValueError("q must leave negative and positive values on both sides")
    i = q - 1
    if mu[i] != 0 or not mu[i - 1] < 0 < mu[i + 1]:
        raise ValueError("require mu[q-1] < mu[q] = 0 < mu[q+1]")
    m1, mqm, mqp, mn = mu[0], mu[i - 1], mu[i + 1], mu[-1]
    if abs(m1) - abs(mqm) <= mn - mqp:
        kappa = (mn / mqp) * (1 + (mn - mqp) / abs(mqm))
    else:
        kappa = (m1 / mqm) * (1 + (abs(m1) - abs(mqm)) / mqp)
    return float(kappa), float((kappa - 1) / (kappa + 1))


def optimal_null_step(A, B, lambda_q, v, rcond=1e-10):
    """v - T M T M v with M = A - lambda_q B and T = |M|^+ (dense inputs).

    With this preconditioner the step maps v to its Euclidean projection onto
    the null space of M.
    """
    A = np.asarray(A)
    B = np.asarray(B)
    M = A - lambda_q * B
    M = 0.5 * (M + M.conj().T)
    w, U = np.linalg.eigh(M)
    cut = rcond * np.max(np.abs(w))
    inv = np.zeros_like(w)
    big = np.abs(w) > cut
    inv[big] = 1.0 / np.abs(w[big])
    T = (U * inv) @ U.conj().T
    return v - T @ (M @ (T @ (M @ v)))


def null_space_projection(A, B, lambda_q, v, rcond=1e-10):
    """Orthogonal projection of v onto the null space of A - lambda_q B."""
    M = np.asarray(A) - lambda_q * np.asarray(B)
    w, U = np.linalg.eigh(0.5 * (M + M.conj().T))
    N = U[:, np.abs(w) <= rcond * np.max(np.abs(w))]
    return N @ (N.conj().T @ v)
