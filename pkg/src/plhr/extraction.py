"""Eigenvector extraction from a trial subspace: T-harmonic, harmonic and refined."""

from __future__ import annotations

import numpy as np
import scipy.linalg

from .dense import SmallEigenSolution, solve_projected_pencil


def _products(Zhat, pencil, AZ=None, BZ=None):
    if AZ is None:
        AZ = pencil.A(Zhat)
    if BZ is None:
        BZ = Zhat if pencil.is_standard else pencil.B(Zhat)
    return AZ, BZ


def harmonic_matrices(AZ, BZ, sigma, T=None, G=None):
    """Projected pair (L, M) of the (T-)harmonic problem.

    With F = (A - sigma B) Z and G = T F, L = G* F and M = G* B Z, i.e.
    Z*(A - sigma B) T (A - sigma B) Z y = xi Z*(A - sigma B) T B Z y.
    T = None gives the standard harmonic Rayleigh-Ritz matrices.
    """
    F = AZ - sigma * BZ
    if G is None:
        G = F if T is None else T(F)
    L = G.conj().T @ F
    M = G.conj().T @ BZ
    return L, M, F, G


def t_harmonic_extract(Zhat, pencil, T, sigma, k=None, AZ=None, BZ=None):
    """T-harmonic Ritz pairs of span(Zhat); T=None is the standard harmonic case.

    Returns ``(theta, sol)`` with theta = xi + sigma for every projected
    eigenpair, ordered by |xi| with conjugates adjacent. When ``k`` is given only
    the leading k pairs are returned. Ritz vectors are ``Zhat @ sol.vectors``
    and still need B-normalization.
    """
    AZ, BZ = _products(Zhat, pencil, AZ, BZ)
    L, M, _, _ = harmonic_matrices(AZ, BZ, sigma, T)
    sol = solve_projected_pencil(L, M)
    if k is not None:
        sol = SmallEigenSolution(sol.values[:k], sol.vectors[:, :k])
    return sol.values + sigma, sol


def refined_extract(Zhat, pencil, T, lambda_tilde, AZ=None, BZ=None):
    """Minimize |A v - lambda_tilde B v|_T over B-unit v in span(Zhat).

    Returns ``(theta_sq, v, y)``; theta_sq is the minimal squared T-norm and
    v = Zhat y has unit B-norm.
    """
    AZ, BZ = _products(Zhat, pencil, AZ, BZ)
    F = AZ - lambda_tilde * BZ
    G = F if T is None else T(F)
    L = G.conj().T @ F
    L = 0.5 * (L + L.conj().T)
    Mz = Zhat.conj().T @ BZ
    Mz = 0.5 * (Mz + Mz.conj().T)
    try:
        w, Y = scipy.linalg.eigh(L, Mz)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("rank collapse in refined extraction basis") from exc
    y = Y[:, 0]
    v = Zhat @ y
    bv = BZ @ y
    nrm = np.sqrt(abs(np.vdot(v, bv).real))
    return float(w[0]), v / nrm, y / nrm
