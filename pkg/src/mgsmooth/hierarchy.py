"""Multilevel hierarchies and the V-cycle.

A hierarchy owns the operator chain (Galerkin products all the way down),
the transfers between consecutive levels, one smoother per level except the
coarsest, and an LU factorization of the coarsest operator taken once at
build time.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import dense
from .errors import ConfigError, NonConvergedError
from .grid import GridFunction, GridSpec, StencilField, apply_stencil, \
    from_active, materialize_stencil, to_active, zeros
from .smoothers import ConvSmoother, InferredSmoother, KernelInferenceNet, \
    conv_smoother, gauss_seidel, infer_kernels, jacobi, representative_diagonal
from .transfer import TransferPair, coarsen_checker, coarsen_derotate, \
    coarsen_full, galerkin_product, prolong, restrict


@dataclass
class Level:
    operator: StencilField
    transfer: TransferPair | None        # to the next-coarser level
    smoother: object | None = None
    scheme: str = "full"

    @property
    def spec(self) -> GridSpec:
        return self.operator.spec


@dataclass
class MultigridHierarchy:
    levels: list[Level]
    coarse_lu: np.ndarray = field(repr=False, default=None)
    coarse_perm: np.ndarray = field(repr=False, default=None)
    scheme: str = "full"

    @property
    def depth(self) -> int:
        return len(self.levels)

    @property
    def finest(self) -> Level:
        return self.levels[0]


@dataclass
class SolveReport:
    iterations: int
    residual_history: list[float]
    converged: bool
    wall_time: float


def _step_transfer(spec: GridSpec, scheme: str, step: int) -> TransferPair:
    if scheme == "full":
        return coarsen_full(spec)
    if scheme == "redblack":
        return coarsen_checker(spec) if step % 2 == 0 else coarsen_derotate(spec)
    raise ConfigError(f"unknown coarsening scheme {scheme!r}")


def build_hierarchy(A: StencilField, levels: int,
                    scheme: str = "full") -> MultigridHierarchy:
    if levels < 2:
        raise ConfigError("a hierarchy needs at least two levels")
    out: list[Level] = []
    current = A
    for step in range(levels - 1):
        try:
            tp = _step_transfer(current.spec, scheme, step)
        except ConfigError as exc:
            raise ConfigError(f"level {step}: {exc}") from exc
        if tp.coarse.n_active >= current.spec.n_active:
            raise ConfigError(
                f"level {step}: coarsening does not shrink the active set")
        out.append(Level(current, tp, None, scheme))
        current = galerkin_product(current, tp)
    out.append(Level(current, None, None, scheme))
    lu, perm = dense.lu_factor(materialize_stencil(current))
    return MultigridHierarchy(out, lu, perm, scheme)


def coarse_solve(hier: MultigridHierarchy, f: GridFunction) -> GridFunction:
    sol = dense.lu_solve(hier.coarse_lu, hier.coarse_perm, to_active(f))
    return from_active(f.spec, sol)


def v_cycle(hier: MultigridHierarchy, level: int, f: GridFunction,
            u: GridFunction) -> GridFunction:
    lev = hier.levels[level]
    if f.spec != lev.spec or u.spec != lev.spec:
        raise ConfigError(f"v_cycle: data not on level-{level} spec")
    if level == hier.depth - 1:
        return coarse_solve(hier, f)
    if lev.smoother is None:
        raise ConfigError(f"level {level} has no smoother installed")
    A = lev.operator
    sm = lev.smoother
    u = u + sm.apply(f - apply_stencil(A, u))
    r_c = restrict(lev.transfer, f - apply_stencil(A, u))
    e_c = v_cycle(hier, level + 1, r_c, zeros(lev.transfer.coarse))
    u = u + prolong(lev.transfer, e_c)
    return u + sm.apply(f - apply_stencil(A, u))


def cycle_correction(hier: MultigridHierarchy, r: GridFunction) -> GridFunction:
    """One V-cycle from a zero initial guess: the preconditioner action."""
    return v_cycle(hier, 0, r, zeros(hier.finest.spec))


def solve(hier: MultigridHierarchy, f: GridFunction,
          u0: GridFunction | None = None, tol: float = 1e-6,
          max_iter: int = 100) -> tuple[GridFunction, SolveReport]:
    if tol <= 0.0:
        raise ConfigError("tolerance must be positive")
    A = hier.finest.operator
    u = zeros(hier.finest.spec) if u0 is None else u0.copy()
    fnorm = f.norm()
    denom = fnorm if fnorm > 0.0 else 1.0

    def rel(res: GridFunction) -> float:
        n = res.norm()
        return 0.0 if n == 0.0 else n / denom

    r0 = rel(f - apply_stencil(A, u))
    history = [r0]
    start = time.perf_counter()
    it = 0
    while history[-1] >= tol and it < max_iter:
        u = v_cycle(hier, 0, f, u)
        it += 1
        rr = rel(f - apply_stencil(A, u))
        history.append(rr)
        if not np.isfinite(rr) or rr > 1e6 * max(r0, tol):
            raise NonConvergedError(
                f"diverged at iteration {it}: relative residual {rr:.3e}")
    wall = time.perf_counter() - start
    return u, SolveReport(it, history, history[-1] < tol, wall)


# ---------------------------------------------------------------------------
# smoother installation

def equip_classical(hier: MultigridHierarchy, kind: str = "jacobi",
                    omega: float = 2.0 / 3.0) -> MultigridHierarchy:
    for lev in hier.levels[:-1]:
        if kind == "jacobi":
            lev.smoother = jacobi(lev.operator, omega)
        elif kind == "gauss-seidel":
            lev.smoother = gauss_seidel(lev.operator)
        else:
            raise ConfigError(f"unknown classical smoother {kind!r}")
    return hier


def equip_conv_init(hier: MultigridHierarchy, omega: float = 2.0 / 3.0,
                    activation: str = "linear") -> MultigridHierarchy:
    """Fresh trainable smoothers, Jacobi-equivalent before training.  Full
    coarsening gets the five-layer form everywhere; red-black levels the
    two-layer form."""
    for lev in hier.levels[:-1]:
        form = "full" if lev.scheme == "full" else "rb"
        lev.smoother = conv_smoother(lev.operator, form, omega, activation)
    return hier


def retarget(sm: ConvSmoother, source: StencilField,
             target: StencilField) -> ConvSmoother:
    """Rebind a trained smoother to an operator with the same stencil shape
    but a different scale (finer root grid): corrections scale inversely
    with the operator, captured by the ratio of representative diagonals."""
    gain = sm.gain * representative_diagonal(source) \
        / representative_diagonal(target)
    return ConvSmoother(target.spec, sm.form, list(sm.layers), sm.skip,
                        sm.activation, sm.slope, gain)


def equip_trained(target: MultigridHierarchy,
                  source: MultigridHierarchy) -> MultigridHierarchy:
    """Install another hierarchy's trained smoothers level by level.  A
    deeper target reuses the source's deepest smoother; every install is
    re-scaled against the target operator."""
    if target.scheme != source.scheme:
        raise ConfigError("schemes differ between source and target")
    for l, lev in enumerate(target.levels[:-1]):
        ls = min(l, source.depth - 2)
        src = source.levels[ls].smoother
        if src is None:
            raise ConfigError(f"source level {ls} has no trained smoother")
        if isinstance(src, ConvSmoother):
            lev.smoother = retarget(src, source.levels[ls].operator,
                                    lev.operator)
        else:
            raise ConfigError(
                "only convolutional smoothers can be transported")
    return target


def equip_inferred(hier: MultigridHierarchy,
                   net: KernelInferenceNet) -> MultigridHierarchy:
    for lev in hier.levels[:-1]:
        if lev.operator.k != 3:
            raise ConfigError(
                "kernel inference needs 3x3 stencils on every level")
        lev.smoother = infer_kernels(net, lev.operator)
    return hier
