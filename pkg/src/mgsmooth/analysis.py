"""Dense spectral analysis of smoothers and multigrid cycles.

Everything here materializes grid operators into matrices over the active
points and runs the from-scratch dense eigenvalue machinery, so it is
restricted to analysis scale (matrix dimension at most 4096, i.e. grids up
to 64 on a side).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import dense
from .errors import ContractError, NumericError, SingularMatrixError, \
    UnsupportedOperationError
from .grid import DenseMatrix, GridSpec, StencilField, from_active, \
    materialize, materialize_stencil, to_active
from .hierarchy import MultigridHierarchy
from .transfer import TransferPair, prolong, restrict

MAX_DENSE_DIM = 4096


def _check_dim(n: int):
    if n > MAX_DENSE_DIM:
        raise ContractError(
            f"dense analysis limited to dimension {MAX_DENSE_DIM}, got {n}")


def _as_dense(A) -> DenseMatrix:
    if isinstance(A, StencilField):
        return materialize_stencil(A)
    return np.asarray(A, dtype=float)


def verify_linear(action, spec: GridSpec, trials: int = 10,
                  tol: float = 1e-10, seed: int = 0):
    """Superposition probe; nonlinear actions have no iteration matrix and
    belong on the FGMRES path instead."""
    rng = np.random.default_rng(seed)
    for _ in range(trials):
        u = from_active(spec, rng.standard_normal(spec.n_active))
        v = from_active(spec, rng.standard_normal(spec.n_active))
        a, b = rng.standard_normal(2)
        lhs = action(a * u + b * v)
        rhs = a * action(u).values + b * action(v).values
        scale = max(float(np.abs(rhs).max()), 1.0)
        if np.abs(lhs.values - rhs).max() > tol * scale:
            raise UnsupportedOperationError(
                "action failed the linearity probe; use the FGMRES path "
                "for nonlinear smoothers")


def iteration_matrix(action, A: StencilField) -> DenseMatrix:
    """I - B A for the materialized action B; works for single smoothers
    and for whole linear solvers (one cycle from zero initial guess)."""
    _check_dim(A.spec.n_active)
    verify_linear(action, A.spec)
    B = materialize(action, A.spec)
    return np.eye(A.spec.n_active) - B @ materialize_stencil(A)


def spectral_radius(G: DenseMatrix) -> float:
    G = np.asarray(G, dtype=float)
    _check_dim(G.shape[0])
    if G.shape[0] == 0:
        return 0.0
    eigs = dense.eig_spectrum(G)
    mags = np.abs(eigs)
    order = np.argsort(mags)[::-1]
    rho = float(mags[order[0]])
    if rho == 0.0:
        return 0.0
    lead = eigs[order[0]]
    gap = (rho - float(mags[order[1]])) / rho if len(eigs) > 1 else 1.0
    if abs(lead.imag) <= 1e-12 * rho and gap > 1e-3:
        est = dense.power_iteration(lambda v: G @ v, G.shape[0], iters=1000)
        if abs(est - rho) > 0.05 * rho:
            raise NumericError(
                f"power iteration {est:.6e} disagrees with eig {rho:.6e}")
    return rho


@dataclass
class SpectralReport:
    tag: str
    rho: float
    a_norm: float | None
    dim: int


def spectral_report(G: DenseMatrix, A: DenseMatrix | None = None,
                    tag: str = "") -> SpectralReport:
    rho = spectral_radius(G)
    an = energy_norm(G, A) if A is not None else None
    return SpectralReport(tag, rho, an, int(np.asarray(G).shape[0]))


def _whiten(B: DenseMatrix, A: DenseMatrix) -> DenseMatrix:
    """L^-1 B L^-T for A = L L^T; symmetric input gives symmetric output."""
    L = dense.cholesky(A)
    Y = dense.tri_solve(L, B, lower=True)
    X = dense.tri_solve(L, Y.T, lower=True).T
    return 0.5 * (X + X.T)


def energy_norm(G: DenseMatrix, A) -> float:
    """||G||_A = sqrt(lambda_max(L^-1 G^T A G L^-T)), A SPD."""
    Ad = _as_dense(A)
    G = np.asarray(G, dtype=float)
    _check_dim(G.shape[0])
    X = _whiten(G.T @ Ad @ G, Ad)
    lam = dense.eig_symmetric(X)
    return math.sqrt(max(0.0, float(lam[-1])))


def two_grid_operator(A, tp: TransferPair, minv_action,
                      post: bool = False) -> DenseMatrix:
    """Smoothing composed with exact Galerkin coarse-grid correction; the
    post flag appends a second smoothing factor for cycle parity."""
    if not isinstance(A, StencilField):
        raise ContractError("two_grid_operator expects a stencil operator")
    _check_dim(A.spec.n_active)
    verify_linear(minv_action, A.spec)
    Ad = materialize_stencil(A)
    n = Ad.shape[0]
    B = materialize(minv_action, A.spec)
    S = np.eye(n) - B @ Ad
    R = materialize(lambda u: restrict(tp, u), tp.fine, tp.coarse)
    P = materialize(lambda u: prolong(tp, u), tp.coarse, tp.fine)
    Ac = R @ Ad @ P
    corr = np.eye(n) - P @ dense.solve(Ac, R @ Ad)
    E = S @ corr
    return E @ S if post else E


def cycle_matrix(hier: MultigridHierarchy, pre: bool = True,
                 post: bool = True) -> DenseMatrix:
    """Error-propagation matrix of the V-cycle with the smoothing pattern
    made explicit.  pre and post both True reproduces v_cycle exactly."""
    _check_dim(hier.finest.spec.n_active)

    def level_matrix(l: int) -> DenseMatrix:
        lev = hier.levels[l]
        n = lev.spec.n_active
        if l == hier.depth - 1:
            return np.zeros((n, n))
        if lev.smoother is None:
            raise ContractError(f"level {l} has no smoother installed")
        Ad = materialize_stencil(lev.operator)
        verify_linear(lev.smoother.apply, lev.spec)
        B = materialize(lev.smoother.apply, lev.spec)
        S = np.eye(n) - B @ Ad
        tp = lev.transfer
        R = materialize(lambda u: restrict(tp, u), tp.fine, tp.coarse)
        P = materialize(lambda u: prolong(tp, u), tp.coarse, tp.fine)
        Ac = R @ Ad @ P
        Ec = level_matrix(l + 1)
        corr = np.eye(n) - P @ ((np.eye(Ac.shape[0]) - Ec)
                                @ dense.solve(Ac, R @ Ad))
        E = corr
        if pre:
            E = E @ S
        if post:
            E = S @ E
        return E

    return level_matrix(0)


def symmetrized_smoother(M: DenseMatrix, A) -> DenseMatrix:
    """M^T (M^T + M - A)^-1 M, defined only for convergent smoothers."""
    Ad = _as_dense(A)
    M = np.asarray(M, dtype=float)
    _check_dim(M.shape[0])
    W = M.T + M - Ad
    lam = dense.eig_symmetric(0.5 * (W + W.T))
    if lam[0] <= 0.0:
        raise NumericError(
            f"M^T + M - A not SPD (smallest eigenvalue {lam[0]:.6e}); "
            "the smoother is not convergent in the energy norm")
    Mt = M.T @ dense.solve(0.5 * (W + W.T), M)
    return 0.5 * (Mt + Mt.T)


def smoother_matrix(action, A: StencilField) -> DenseMatrix:
    """Recover M from a correction action H: M = (materialized H)^-1."""
    _check_dim(A.spec.n_active)
    verify_linear(action, A.spec)
    B = materialize(action, A.spec)
    try:
        return dense.inverse(B)
    except SingularMatrixError as exc:
        raise NumericError(
            "smoother action is singular; only spectral-radius analysis "
            "applies") from exc


@dataclass
class FCSplitting:
    """Active points split into coarse anchors (C) and the rest (F), with
    injection scaled so that restriction after prolongation is exactly the
    identity on the coarse space."""
    f_idx: np.ndarray
    c_idx: np.ndarray
    n: int
    injection_scale: float = 1.0

    @property
    def n_f(self) -> int:
        return self.f_idx.size

    @property
    def n_c(self) -> int:
        return self.c_idx.size


def fc_splitting(tp: TransferPair) -> FCSplitting:
    fine, coarse = tp.fine, tp.coarse
    fine_rank = -np.ones((fine.rows, fine.cols), dtype=np.int64)
    fine_rank[fine.mask] = np.arange(fine.n_active)
    c_idx = []
    for ci in range(coarse.rows):
        for cj in range(coarse.cols):
            if coarse.mask[ci, cj]:
                fi = tp.stride * ci + tp.offset
                fj = tp.stride * cj + tp.offset
                rank = fine_rank[fi, fj]
                if rank < 0:
                    raise ContractError(
                        "coarse anchor lands on an inactive fine point")
                c_idx.append(rank)
    c_idx = np.array(sorted(c_idx), dtype=np.int64)
    in_c = np.zeros(fine.n_active, dtype=bool)
    in_c[c_idx] = True
    f_idx = np.flatnonzero(~in_c)
    r = tp.prolongation.size // 2
    center = tp.prolongation.weights[r, r]
    return FCSplitting(f_idx, c_idx, fine.n_active, 1.0 / center)


def empty_splitting(spec: GridSpec) -> FCSplitting:
    """All points fine: the degenerate splitting under which the ideal
    bound reduces to 1 - lambda_min of the symmetrized-preconditioned
    operator."""
    return FCSplitting(np.arange(spec.n_active, dtype=np.int64),
                       np.zeros(0, dtype=np.int64), spec.n_active)


def injection_matrix(split: FCSplitting) -> DenseMatrix:
    R = np.zeros((split.n_c, split.n))
    R[np.arange(split.n_c), split.c_idx] = split.injection_scale
    return R


def ideal_bound(A, M: DenseMatrix, split: FCSplitting) -> float:
    """beta* = sqrt(1 - lambda_min((S^T Mtilde S)^-1 (S^T A S))), the best
    two-grid rate any interpolation could reach for this smoother and
    splitting."""
    Ad = _as_dense(A)
    Mt = symmetrized_smoother(M, Ad)
    F = split.f_idx
    if F.size == 0:
        raise ContractError("ideal bound needs at least one fine point")
    X = _whiten(Ad[np.ix_(F, F)], Mt[np.ix_(F, F)])
    lam_min = float(dense.eig_symmetric(X)[0])
    b2 = 1.0 - lam_min
    if b2 < 0.0:
        b2 = 0.0
    if b2 >= 1.0:
        raise NumericError(f"ideal bound out of range: beta*^2 = {b2:.6e}")
    return math.sqrt(b2)


def weak_approximation(A, M: DenseMatrix, tp: TransferPair,
                       split: FCSplitting) -> float:
    """The constant K of the two-grid bound, evaluated at scaled C-point
    injection (which satisfies R P = I for the standard transfers)."""
    Ad = _as_dense(A)
    Mt = symmetrized_smoother(M, Ad)
    P = materialize(lambda u: prolong(tp, u), tp.coarse, tp.fine)
    R = injection_matrix(split)
    T = np.eye(split.n) - P @ R
    K = dense.eig_symmetric(_whiten(T.T @ Mt @ T, Ad))[-1]
    return float(K)


def convergence_certificate(M: DenseMatrix, A) -> tuple[bool, float, float]:
    """Both sides of the energy-norm convergence equivalence: returns
    (convergent, smallest eigenvalue of M^T+M-A, ||I - M^-1 A||_A)."""
    Ad = _as_dense(A)
    M = np.asarray(M, dtype=float)
    W = M.T + M - Ad
    lam = float(dense.eig_symmetric(0.5 * (W + W.T))[0])
    G = np.eye(Ad.shape[0]) - dense.solve(M, Ad)
    an = energy_norm(G, Ad)
    return lam > 0.0, lam, an


@dataclass
class SmoothingProfile:
    eigenvalues: np.ndarray      # descending
    factors: np.ndarray          # ||v - H(A v)|| per unit eigenvector


def smoothing_profile(A: StencilField, h_action) -> SmoothingProfile:
    Ad = materialize_stencil(A)
    _check_dim(Ad.shape[0])
    if np.abs(Ad - Ad.T).max() > 1e-12 * max(np.abs(Ad).max(), 1.0):
        raise ContractError("smoothing profile needs a symmetric operator")
    lam, vecs = dense.eig_symmetric(0.5 * (Ad + Ad.T), vectors=True)
    order = np.argsort(lam)[::-1]
    lam = lam[order]
    vecs = vecs[:, order]
    factors = np.empty(lam.size)
    for i in range(lam.size):
        v = vecs[:, i]
        w = from_active(A.spec, Ad @ v)
        factors[i] = float(np.linalg.norm(v - to_active(h_action(w))))
    return SmoothingProfile(lam, factors)


def frobenius_probe(x_action, n: int, trials: int,
                    seed: int = 0) -> tuple[float, float, float]:
    """Monte-Carlo estimate of the squared Frobenius norm from unit-sphere
    probes against the exact value."""
    if callable(x_action):
        X = np.column_stack([x_action(e) for e in np.eye(n)])
    else:
        X = np.asarray(x_action, dtype=float)
    rng = np.random.default_rng(seed)
    Z = rng.standard_normal((trials, n))
    Z /= np.linalg.norm(Z, axis=1, keepdims=True)
    W = Z @ X.T
    vals = n * np.einsum("ij,ij->i", W, W)
    mean = float(vals.mean())
    exact = float(np.sum(X * X))
    ratio = mean / exact if exact > 0.0 else (1.0 if mean == 0.0 else math.inf)
    return mean, exact, ratio
