"""Flexible GMRES with the multigrid hierarchy as a right preconditioner.

Arnoldi runs on flat vectors; grid problems are flattened by the caller
(inactive points carry zeros and stay zero under both the operator action
and the preconditioner, so they never perturb the Krylov basis).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, NumericError
from .grid import GridFunction, apply_stencil, zeros
from .hierarchy import v_cycle

_REORTH_TOL = 1e-8
_BREAKDOWN_TOL = 1e-14


@dataclass
class FgmresConfig:
    """Stopping rule and subspace budget shared by fgmres and gmres.

    ``restart=None`` means one unrestarted cycle of up to ``max_iter``
    Arnoldi steps.
    """

    tol: float = 1e-6
    max_iter: int = 200
    restart: Optional[int] = None

    def __post_init__(self):
        if self.tol <= 0:
            raise ConfigError(f"tol must be positive, got {self.tol}")
        if self.max_iter < 1:
            raise ConfigError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.restart is not None and self.restart < 1:
            raise ConfigError(f"restart must be >= 1, got {self.restart}")


@dataclass
class KrylovReport:
    iterations: int
    history: list
    converged: bool
    preconditioner: str


def _givens(a: float, b: float):
    r = math.hypot(a, b)
    if r == 0.0:
        return 1.0, 0.0
    return a / r, b / r


def _fgmres_cycle(apply_a, f, precond, u0, steps, tol_abs, history):
    """One unrestarted flexible-GMRES cycle; returns (u, done, n_steps)."""
    r = f - apply_a(u0)
    beta = float(np.linalg.norm(r))
    if not history:
        history.append(beta)
    if beta <= tol_abs:
        return u0, True, 0
    n = r.size
    steps = min(steps, n)
    V = [r / beta]
    Z = []
    H = np.zeros((steps + 1, steps))
    cs = np.zeros(steps)
    sn = np.zeros(steps)
    g = np.zeros(steps + 1)
    g[0] = beta
    j = 0
    while j < steps:
        z = V[j] if precond is None else precond(V[j])
        w = apply_a(z)
        Z.append(z)
        wnorm0 = float(np.linalg.norm(w))
        for i in range(j + 1):
            hij = float(V[i] @ w)
            H[i, j] = hij
            w = w - hij * V[i]
        # one extra Gram-Schmidt sweep when cancellation has eaten the
        # orthogonality of the first
        wnorm = float(np.linalg.norm(w))
        if wnorm < _REORTH_TOL * wnorm0 or any(
                abs(float(V[i] @ w)) > _REORTH_TOL * max(wnorm, 1e-300)
                for i in range(j + 1)):
            for i in range(j + 1):
                c = float(V[i] @ w)
                H[i, j] += c
                w = w - c * V[i]
        hsub = float(np.linalg.norm(w))
        H[j + 1, j] = hsub
        # rotate the new column into triangular form
        for i in range(j):
            t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
            H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
            H[i, j] = t
        cs[j], sn[j] = _givens(H[j, j], H[j + 1, j])
        H[j, j] = cs[j] * H[j, j] + sn[j] * H[j + 1, j]
        H[j + 1, j] = 0.0
        g[j + 1] = -sn[j] * g[j]
        g[j] = cs[j] * g[j]
        res = abs(g[j + 1])
        history.append(res)
        j += 1
        if res <= tol_abs:
            break
        if hsub <= _BREAKDOWN_TOL * max(wnorm0, 1.0):
            raise NumericError(
                f"Arnoldi breakdown at step {j} with residual {res:.3e} "
                "above tolerance")
        V.append(w / hsub)
    # back substitution on the rotated Hessenberg
    y = np.zeros(j)
    for i in range(j - 1, -1, -1):
        y[i] = (g[i] - H[i, i + 1:j] @ y[i + 1:j]) / H[i, i]
    u = u0.copy()
    for i in range(j):
        u = u + y[i] * Z[i]
    return u, abs(g[j]) <= tol_abs, j


def fgmres(apply_a: Callable, f: np.ndarray,
           precond: Optional[Callable] = None,
           cfg: Optional[FgmresConfig] = None,
           tag: Optional[str] = None):
    """Right-preconditioned flexible GMRES.

    ``precond`` maps a residual to a correction and may change between
    iterations (each preconditioned direction is stored, which is what
    makes the method tolerate e.g. a nonlinear multigrid cycle).  ``None``
    reduces to plain GMRES.

    Returns ``(u, KrylovReport)``; running out of iterations yields a
    non-converged report, not an error.
    """
    cfg = cfg or FgmresConfig()
    if tag is None:
        tag = "none" if precond is None else "preconditioned"
    f = np.asarray(f, dtype=float)
    beta0 = float(np.linalg.norm(f))
    if beta0 == 0.0:
        return np.zeros_like(f), KrylovReport(0, [0.0], True, tag)
    tol_abs = cfg.tol * beta0
    history: list = []
    u = np.zeros_like(f)
    done = False
    total = 0
    while total < cfg.max_iter and not done:
        steps = cfg.max_iter - total
        if cfg.restart is not None:
            steps = min(steps, cfg.restart)
        u, done, took = _fgmres_cycle(apply_a, f, precond, u, steps,
                                      tol_abs, history)
        total += took
        if took == 0:
            break
    return u, KrylovReport(total, history, done, tag)


def gmres(apply_a: Callable, f: np.ndarray,
          cfg: Optional[FgmresConfig] = None):
    """Plain unpreconditioned GMRES baseline, same stopping rule.

    Written as its own loop rather than fgmres-with-identity so the two
    can cross-check each other.
    """
    cfg = cfg or FgmresConfig()
    f = np.asarray(f, dtype=float)
    beta0 = float(np.linalg.norm(f))
    if beta0 == 0.0:
        return np.zeros_like(f), KrylovReport(0, [0.0], True, "none")
    tol_abs = cfg.tol * beta0
    history = [beta0]
    u0 = np.zeros_like(f)
    if beta0 <= tol_abs:
        return u0, KrylovReport(0, history, True, "none")
    n = f.size
    budget = cfg.max_iter
    u = u0
    while budget > 0:
        r = f - apply_a(u)
        beta = float(np.linalg.norm(r))
        steps = min(budget, n)
        if cfg.restart is not None:
            steps = min(steps, cfg.restart)
        V = [r / beta]
        H = np.zeros((steps + 1, steps))
        cs = np.zeros(steps)
        sn = np.zeros(steps)
        g = np.zeros(steps + 1)
        g[0] = beta
        j = 0
        done = False
        while j < steps:
            w = apply_a(V[j])
            wnorm0 = float(np.linalg.norm(w))
            for i in range(j + 1):
                H[i, j] = float(V[i] @ w)
                w = w - H[i, j] * V[i]
            wnorm = float(np.linalg.norm(w))
            if wnorm < _REORTH_TOL * wnorm0 or any(
                    abs(float(V[i] @ w)) > _REORTH_TOL * max(wnorm, 1e-300)
                    for i in range(j + 1)):
                for i in range(j + 1):
                    c = float(V[i] @ w)
                    H[i, j] += c
                    w = w - c * V[i]
            hsub = float(np.linalg.norm(w))
            H[j + 1, j] = hsub
            for i in range(j):
                t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = t
            cs[j], sn[j] = _givens(H[j, j], H[j + 1, j])
            H[j, j] = cs[j] * H[j, j] + sn[j] * H[j + 1, j]
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            res = abs(g[j + 1])
            history.append(res)
            j += 1
            if res <= tol_abs:
                done = True
                break
            if hsub <= _BREAKDOWN_TOL * max(wnorm0, 1.0):
                raise NumericError(
                    f"Arnoldi breakdown at step {j} with residual "
                    f"{res:.3e} above tolerance")
            V.append(w / hsub)
        y = np.zeros(j)
        for i in range(j - 1, -1, -1):
            y[i] = (g[i] - H[i, i + 1:j] @ y[i + 1:j]) / H[i, i]
        for i in range(j):
            u = u + y[i] * V[i]
        budget -= j
        if done or j == 0:
            return u, KrylovReport(cfg.max_iter - budget, history, done,
                                   "none")
    return u, KrylovReport(cfg.max_iter, history, False, "none")


def grid_action(A) -> Callable:
    """Flat-vector view of a stencil operator for the Krylov loops."""
    spec = A.spec
    shape = (spec.rows, spec.cols)

    def action(x: np.ndarray) -> np.ndarray:
        return apply_stencil(A, GridFunction(spec, x.reshape(shape))).values \
            .ravel()

    return action


def cycle_preconditioner(hier) -> Callable:
    """One V-cycle from a zero initial guess, as a flat-vector action."""
    spec = hier.finest.spec
    shape = (spec.rows, spec.cols)

    def action(r: np.ndarray) -> np.ndarray:
        f = GridFunction(spec, r.reshape(shape) * spec.mask)
        return v_cycle(hier, 0, f, zeros(spec)).values.ravel()

    return action
