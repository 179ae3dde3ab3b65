"""Geometric multigrid V-cycles for |L - sigma I|^-1 (AV-MG) and (L - sigma I)^-1 (INV-MG).

L is the 5-point Dirichlet Laplacian on the unit square. Level ``omega`` has
(2**omega - 1)**2 unknowns and mesh width 2**-omega. Grids are stored as
arrays of shape (N, N, m) so that blocks of m vectors go through one cycle.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from numpy.polynomial import Chebyshev

from .operators import Operator, fd_grid, fd_laplacian_matrix, laplace_stencil

COARSE_CUT = 1e-12
POLY_SAMPLES = 1000
SMOOTHING_WEIGHT = 1.6   # tau = weight / rho; 1.6 / (8 / h^2) is Jacobi damping 4/5 for the 5-point stencil


# ---------------------------------------------------------------------------
# polynomial approximation of |x|
# ---------------------------------------------------------------------------

@dataclass
class AbsPolynomial:
    """Chebyshev series for |x| on [a, b] plus a constant positivity shift."""

    series: Chebyshev
    a: float
    b: float
    shift: float = 0.0

    @property
    def degree(self) -> int:
        return self.series.degree()

    @property
    def coef(self) -> np.ndarray:
        return self.series.coef

    def __call__(self, x):
        return self.series(x) + self.shift

    def raw(self, x):
        return self.series(x)

    def apply(self, op, U):
        """p(X) U with X applied by ``op``, via the Clenshaw recurrence."""
        c = self.series.coef
        alpha = 2.0 / (self.b - self.a)
        beta = -(self.a + self.b) / (self.b - self.a)

        def xmap(Y):  # affine map of op onto [-1, 1]
            return alpha * op(Y) + beta * Y

        b1 = np.zeros_like(U)
        b2 = np.zeros_like(U)
        for ck in c[:0:-1]:
            b1, b2 = ck * U + 2.0 * xmap(b1) - b2, b1
        out = c[0] * U + xmap(b1) - b2
        if self.shift:
            out += self.shift * U
        return out

    def max_on_interval(self, samples=POLY_SAMPLES) -> float:
        return float(np.max(self(np.linspace(self.a, self.b, samples))))


def chebyshev_abs_poly(m: int, a: float, b: float, margin: float = 1e-2) -> AbsPolynomial:
    """Degree-m Chebyshev interpolant of |x| on [a, b], shifted to stay positive.

    The shift is max(0, -min p) + margin * (near-best error of the raw series),
    with the minimum taken over a dense sample of [a, b].
    """
    if m < 1:
        raise ValueError("degree must be >= 1")
    if not (np.isfinite(a) and np.isfinite(b)) or not a < b:
        raise ValueError(f"degenerate interval [{a}, {b}]")
    series = Chebyshev.interpolate(np.abs, m, domain=[a, b])
    x = np.linspace(a, b, 20 * POLY_SAMPLES + 1)
    vals = series(x)
    pmin = float(vals.min())
    shift = 0.0
    if a < 0 < b:
        err = float(np.max(np.abs(vals - np.abs(x))))
        if pmin < margin * err:
            shift = margin * err - pmin
    elif pmin <= 0:
        shift = -pmin + margin * max(abs(a), abs(b))
    return AbsPolynomial(series, float(a), float(b), shift)


# ---------------------------------------------------------------------------
# grid transfer and smoothing
# ---------------------------------------------------------------------------

def _as_grid(x, N):
    x = np.asarray(x)
    if x.ndim == 1:
        return x.reshape(N, N, 1)
    if x.ndim == 2:
        return x.reshape(N, N, x.shape[1])
    return x


def prolong_bilinear(C: np.ndarray) -> np.ndarray:
    """Bilinear interpolation from an (Nc, Nc, m) grid to (2Nc+1, 2Nc+1, m)."""
    if C.ndim == 2:
        return prolong_bilinear(C[:, :, None])[:, :, 0]
    Nc, _, m = C.shape
    Nf = 2 * Nc + 1
    Cp = np.zeros((Nc + 2, Nc + 2, m), dtype=C.dtype)
    Cp[1:-1, 1:-1] = C
    F = np.empty((Nf, Nf, m), dtype=C.dtype)
    F[1::2, 1::2] = C
    F[0::2, 1::2] = 0.5 * (Cp[:-1, 1:-1] + Cp[1:, 1:-1])
    F[1::2, 0::2] = 0.5 * (Cp[1:-1, :-1] + Cp[1:-1, 1:])
    F[0::2, 0::2] = 0.25 * (Cp[:-1, :-1] + Cp[1:, :-1] + Cp[:-1, 1:] + Cp[1:, 1:])
    return F


def restrict_full_weighting(F: np.ndarray) -> np.ndarray:
    """Full weighting (1/4 of the transpose of bilinear prolongation)."""
    if F.ndim == 2:
        return restrict_full_weighting(F[:, :, None])[:, :, 0]
    Nf = F.shape[0]
    if Nf % 2 == 0 or Nf < 3:
        raise ValueError(f"fine grid of size {Nf} cannot be coarsened")
    c = 4.0 * F[1::2, 1::2]
    c += 2.0 * (F[0:-1:2, 1::2] + F[2::2, 1::2] + F[1::2, 0:-1:2] + F[1::2, 2::2])
    c += F[0:-1:2, 0:-1:2] + F[2::2, 0:-1:2] + F[0:-1:2, 2::2] + F[2::2, 2::2]
    return c * (1.0 / 16.0)


def richardson_smooth(apply_B, r, w0, tau, nu):
    """nu steps of w <- w + tau (r - B w)."""
    w = np.array(w0, copy=True)
    for _ in range(nu):
        w += tau * (r - apply_B(w))
    return w


# ---------------------------------------------------------------------------
# hierarchy
# ---------------------------------------------------------------------------

@dataclass
class LevelData:
    omega: int
    N: int
    h: float
    sigma: float
    poly: AbsPolynomial | None
    tau: float          # Richardson step for the AV operator B_l
    tau_inv: float      # Richardson step for L_l - sigma I_l

    def laplace(self, U):
        return laplace_stencil(U, self.h)

    def shifted(self, U):
        return laplace_stencil(U, self.h) - self.sigma * U

    def apply_B(self, U):
        if self.poly is None:
            return self.laplace(U)
        return self.poly.apply(self.shifted, U)


@dataclass
class GridHierarchy:
    levels: list          # coarsest first; levels[0] is the dense coarse level
    sigma: float
    nu: int
    m: int
    delta: float
    coarse_Q: np.ndarray = field(repr=False)
    coarse_abs_inv: np.ndarray = field(repr=False)
    coarse_inv: np.ndarray = field(repr=False)

    @property
    def finest(self) -> LevelData:
        return self.levels[-1]

    @property
    def n(self) -> int:
        return self.finest.N ** 2


def build_hierarchy(omega_fine: int, omega_coarse: int = 4, sigma: float = 0.0,
                    m: int = 6, nu: int = 1, delta: float = 0.5,
                    weight: float = SMOOTHING_WEIGHT, coarse_limit: int = 4096) -> GridHierarchy:
    """Levels omega_coarse..omega_fine for the AV-MG and INV-MG cycles.

    Level l smooths with B_l = L_l when sqrt(sigma) h_l < delta and with the
    degree-m polynomial approximation of |L_l - sigma I_l| otherwise. The
    Richardson step is weight / rho with rho an upper bound on the spectral
    radius of the smoothed operator; weight must lie in (0, 2).
    """
    if omega_coarse > omega_fine:
        raise ValueError("omega_coarse must not exceed omega_fine")
    if omega_coarse < 1:
        raise ValueError("omega_coarse must be >= 1")
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    if nu < 1:
        raise ValueError("nu must be >= 1")
    if not 0 < weight < 2:
        raise ValueError("weight must lie in (0, 2)")
    Nc, _ = fd_grid(omega_coarse)
    if Nc * Nc > coarse_limit:
        raise MemoryError(f"coarse problem of size {Nc * Nc} exceeds the dense budget")

    levels = []
    for omega in range(omega_coarse, omega_fine + 1):
        N, h = fd_grid(omega)
        top = 8.0 / h ** 2  # Gershgorin bound on the Laplacian spectrum
        poly = None
        if np.sqrt(sigma) * h >= delta:
            poly = chebyshev_abs_poly(m, -sigma, top - sigma)
            rho = poly.max_on_interval()
        else:
            rho = top
        rho_inv = max(sigma, top - sigma)
        levels.append(LevelData(omega, N, h, sigma, poly, weight / rho, weight / rho_inv))

    lam, Q = scipy.linalg.eigh(fd_laplacian_matrix(omega_coarse).toarray())
    shifted = lam - sigma
    cut = COARSE_CUT * np.max(np.abs(shifted))
    small = np.abs(shifted) <= cut
    abs_inv = np.zeros_like(shifted)
    inv = np.zeros_like(shifted)
    abs_inv[~small] = 1.0 / np.abs(shifted[~small])
    inv[~small] = 1.0 / shifted[~small]
    if small.any():
        warnings.warn("shift coincides with a coarse-grid eigenvalue; pseudo-inverting",
                      RuntimeWarning, stacklevel=2)
    return GridHierarchy(levels, float(sigma), nu, m, delta, Q, abs_inv, inv)


def _coarse_solve(hier: GridHierarchy, R: np.ndarray, mode: str) -> np.ndarray:
    N = hier.levels[0].N
    m = R.shape[2]
    x = R.reshape(N * N, m)
    d = hier.coarse_abs_inv if mode == "av" else hier.coarse_inv
    Q = hier.coarse_Q
    return (Q @ (d[:, None] * (Q.T @ x))).reshape(N, N, m)


def _vcycle(hier: GridHierarchy, R: np.ndarray, li: int, mode: str) -> np.ndarray:
    if li == 0:
        return _coarse_solve(hier, R, mode)
    lev = hier.levels[li]
    if mode == "av":
        op, tau = lev.apply_B, lev.tau
    else:
        op, tau = lev.shifted, lev.tau_inv
    # presmoothing from a zero initial guess
    w = tau * R
    if hier.nu > 1:
        w = richardson_smooth(op, R, w, tau, hier.nu - 1)
    # coarse grid correction
    rc = restrict_full_weighting(R - op(w))
    w += prolong_bilinear(_vcycle(hier, rc, li - 1, mode))
    # postsmoothing; the scalar smoother is its own adjoint
    return richardson_smooth(op, R, w, tau, hier.nu)


def _level_index(hier: GridHierarchy, level):
    if level is None:
        return len(hier.levels) - 1
    idx = level - hier.levels[0].omega
    if not 0 <= idx < len(hier.levels):
        raise ValueError(f"level {level} outside hierarchy "
                         f"[{hier.levels[0].omega}, {hier.finest.omega}]")
    return idx


def _apply(hier, r, level, mode):
    li = _level_index(hier, level)
    N = hier.levels[li].N
    r = np.asarray(r)
    if r.shape[0] != N * N:
        raise ValueError(f"vector of length {r.shape[0]} does not match level grid {N}x{N}")
    R = _as_grid(r, N)
    if np.iscomplexobj(R):
        out = (_vcycle(hier, np.ascontiguousarray(R.real), li, mode)
               + 1j * _vcycle(hier, np.ascontiguousarray(R.imag), li, mode))
    else:
        out = _vcycle(hier, R.astype(float, copy=False), li, mode)
    return out.reshape(r.shape)


def av_mg_apply(hier: GridHierarchy, r, level=None):
    """One AV-MG V-cycle approximating |L - sigma I|^-1 r on ``level`` (finest by default)."""
    return _apply(hier, r, level, "av")


def inv_mg_apply(hier: GridHierarchy, r, level=None):
    """One INV-MG V-cycle approximating (L - sigma I)^-1 r."""
    return _apply(hier, r, level, "inv")


def av_mg_operator(hier: GridHierarchy) -> Operator:
    return Operator(hier.n, lambda x: av_mg_apply(hier, x), hermitian=True, definite=True,
                    name=f"av-mg({hier.sigma:g})")


def inv_mg_operator(hier: GridHierarchy) -> Operator:
    return Operator(hier.n, lambda x: inv_mg_apply(hier, x), hermitian=True, definite=False,
                    name=f"inv-mg({hier.sigma:g})")
