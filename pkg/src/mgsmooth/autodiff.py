"""Reverse-mode differentiation over the grid operations.

A Var wraps a numpy array and remembers how it was produced; backward()
walks the recorded graph once in reverse topological order.  Ops accept
plain arrays wherever an argument is constant, so frozen smoothers and
assembled operators enter the graph without gradient cost.  The coarsest
dense solve participates as a constant linear operator whose adjoint is the
transposed triangular solve, not a differentiated factorization.
"""

from __future__ import annotations

import numpy as np

from . import dense
from .errors import ContractError, NumericError
from .grid import GridSpec, StencilField, shifted
from .transfer import TransferPair


class Var:
    __slots__ = ("value", "grad", "parents", "backward_fn")

    def __init__(self, value, parents=(), backward_fn=None):
        self.value = np.asarray(value, dtype=float)
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn

    def add_grad(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += g


def value_of(x) -> np.ndarray:
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=float)


def _node(value, inputs, backward_fn) -> Var:
    parents = tuple(p for p in inputs if isinstance(p, Var))
    return Var(value, parents, backward_fn)


def add(a, b) -> Var:
    av, bv = value_of(a), value_of(b)

    def back(g):
        if isinstance(a, Var):
            a.add_grad(g)
        if isinstance(b, Var):
            b.add_grad(g)
    return _node(av + bv, (a, b), back)


def sub(a, b) -> Var:
    av, bv = value_of(a), value_of(b)

    def back(g):
        if isinstance(a, Var):
            a.add_grad(g)
        if isinstance(b, Var):
            b.add_grad(-g)
    return _node(av - bv, (a, b), back)


def scale(a, s: float) -> Var:
    av = value_of(a)
    s = float(s)

    def back(g):
        if isinstance(a, Var):
            a.add_grad(s * g)
    return _node(s * av, (a,), back)


def mul_const(a, c: np.ndarray) -> Var:
    """Elementwise product with a constant array."""
    av = value_of(a)
    c = np.asarray(c, dtype=float)

    def back(g):
        if isinstance(a, Var):
            a.add_grad(c * g)
    return _node(av * c, (a,), back)


def leaky(a, slope: float) -> Var:
    av = value_of(a)
    pos = av > 0.0
    factor = np.where(pos, 1.0, slope)

    def back(g):
        if isinstance(a, Var):
            a.add_grad(factor * g)
    return _node(av * factor, (a,), back)


def reshape(a, shape) -> Var:
    av = value_of(a)

    def back(g):
        if isinstance(a, Var):
            a.add_grad(g.reshape(av.shape))
    return _node(av.reshape(shape), (a,), back)


def sum_axis(a, axis: int) -> Var:
    av = value_of(a)

    def back(g):
        if isinstance(a, Var):
            a.add_grad(np.broadcast_to(np.expand_dims(g, axis), av.shape))
    return _node(av.sum(axis=axis), (a,), back)


def slice_cols(a, j0: int, j1: int) -> Var:
    av = value_of(a)

    def back(g):
        if isinstance(a, Var):
            da = np.zeros_like(av)
            da[:, j0:j1] = g
            a.add_grad(da)
    return _node(av[:, j0:j1], (a,), back)


def matmul(a, b) -> Var:
    av, bv = value_of(a), value_of(b)

    def back(g):
        if isinstance(a, Var):
            a.add_grad(g @ bv.T)
        if isinstance(b, Var):
            b.add_grad(av.T @ g)
    return _node(av @ bv, (a, b), back)


def conv2d(kernel, u, spec: GridSpec) -> Var:
    """Shared-kernel correlation on the grid, output zeroed off the mask."""
    kv, uv = value_of(kernel), value_of(u)
    r = kv.shape[0] // 2
    mask = spec.mask
    out = np.zeros_like(uv)
    for di in range(-r, r + 1):
        for dj in range(-r, r + 1):
            w = kv[di + r, dj + r]
            if w != 0.0:
                out += w * shifted(uv, di, dj)
    out[~mask] = 0.0

    def back(g):
        gm = np.where(mask, g, 0.0)
        if isinstance(kernel, Var):
            dk = np.empty_like(kv)
            for di in range(-r, r + 1):
                for dj in range(-r, r + 1):
                    dk[di + r, dj + r] = float(
                        np.sum(gm * shifted(uv, di, dj)))
            kernel.add_grad(dk)
        if isinstance(u, Var):
            du = np.zeros_like(uv)
            for di in range(-r, r + 1):
                for dj in range(-r, r + 1):
                    w = kv[di + r, dj + r]
                    if w != 0.0:
                        du += w * shifted(gm, -di, -dj)
            u.add_grad(du)
    return _node(out, (kernel, u), back)


def stencil_apply(A: StencilField, u) -> Var:
    """Operator application; A is always constant."""
    uv = value_of(u)
    rr = A.reach
    mask = A.spec.mask
    out = np.zeros_like(uv)
    um = np.where(mask, uv, 0.0)
    for di in range(-rr, rr + 1):
        for dj in range(-rr, rr + 1):
            out += A.data[:, :, di + rr, dj + rr] * shifted(um, di, dj)
    out[~mask] = 0.0
    At = A.transpose()

    def back(g):
        if isinstance(u, Var):
            gm = np.where(mask, g, 0.0)
            du = np.zeros_like(uv)
            for di in range(-rr, rr + 1):
                for dj in range(-rr, rr + 1):
                    du += At.data[:, :, di + rr, dj + rr] * shifted(gm, di, dj)
            du[~mask] = 0.0
            u.add_grad(du)
    return _node(out, (u,), back)


def _restrict_values(tp: TransferPair, v: np.ndarray) -> np.ndarray:
    from .transfer import _gather
    r = tp.restriction.size // 2
    w = tp.restriction.weights
    out = np.zeros((tp.coarse.rows, tp.coarse.cols))
    for di in range(-r, r + 1):
        for dj in range(-r, r + 1):
            if w[di + r, dj + r] != 0.0:
                out += w[di + r, dj + r] * _gather(
                    v, out.shape, tp.stride, tp.offset + di, tp.offset + dj)
    out[~tp.coarse.mask] = 0.0
    return out


def _prolong_values(tp: TransferPair, v: np.ndarray) -> np.ndarray:
    # prolongation is exactly twice the transposed restriction
    out = np.zeros((tp.fine.rows, tp.fine.cols))
    r = tp.prolongation.size // 2
    w = tp.prolongation.weights
    vc = np.where(tp.coarse.mask, v, 0.0)
    from .transfer import _axis_window
    for di in range(-r, r + 1):
        for dj in range(-r, r + 1):
            wij = w[di + r, dj + r]
            if wij == 0.0:
                continue
            ci0, ci1 = _axis_window(tp.coarse.rows, tp.fine.rows, tp.stride,
                                    tp.offset + di)
            cj0, cj1 = _axis_window(tp.coarse.cols, tp.fine.cols, tp.stride,
                                    tp.offset + dj)
            if ci0 < ci1 and cj0 < cj1:
                out[tp.stride * ci0 + tp.offset + di:
                    tp.stride * (ci1 - 1) + tp.offset + di + 1:tp.stride,
                    tp.stride * cj0 + tp.offset + dj:
                    tp.stride * (cj1 - 1) + tp.offset + dj + 1:tp.stride] \
                    += wij * vc[ci0:ci1, cj0:cj1]
    out[~tp.fine.mask] = 0.0
    return out


def do_restrict(tp: TransferPair, u) -> Var:
    uv = value_of(u)

    def back(g):
        if isinstance(u, Var):
            u.add_grad(0.5 * _prolong_values(tp, g))
    return _node(_restrict_values(tp, uv), (u,), back)


def do_prolong(tp: TransferPair, u) -> Var:
    uv = value_of(u)

    def back(g):
        if isinstance(u, Var):
            u.add_grad(2.0 * _restrict_values(tp, g))
    return _node(_prolong_values(tp, uv), (u,), back)


def pointwise_conv(kern, u, spec: GridSpec) -> Var:
    """Unshared per-point kernels: out(p) = <kern(p), neighborhood of u>.
    kern has shape (rows, cols, 3, 3)."""
    kv, uv = value_of(kern), value_of(u)
    mask = spec.mask
    out = np.zeros_like(uv)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            out += kv[:, :, di + 1, dj + 1] * shifted(uv, di, dj)
    out[~mask] = 0.0

    def back(g):
        gm = np.where(mask, g, 0.0)
        if isinstance(kern, Var):
            dk = np.empty_like(kv)
            for di in (-1, 0, 1):
                for dj in (-1, 0, 1):
                    dk[:, :, di + 1, dj + 1] = gm * shifted(uv, di, dj)
            kern.add_grad(dk)
        if isinstance(u, Var):
            du = np.zeros_like(uv)
            for di in (-1, 0, 1):
                for dj in (-1, 0, 1):
                    du += shifted(kv[:, :, di + 1, dj + 1] * gm, -di, -dj)
            u.add_grad(du)
    return _node(out, (kern, u), back)


def conv_batch(kern, img) -> Var:
    """Batched 3x3 correlation on 3x3 images with zero padding.
    kern (c, 3, 3), img (n, 3, 3) -> (n, c, 3, 3)."""
    kv, iv = value_of(kern), value_of(img)
    n = iv.shape[0]
    out = np.zeros((n, kv.shape[0], 3, 3))
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            i0, i1 = max(0, -di), min(3, 3 - di)
            j0, j1 = max(0, -dj), min(3, 3 - dj)
            if i0 >= i1 or j0 >= j1:
                continue
            w = kv[:, di + 1, dj + 1]
            patch = iv[:, i0 + di:i1 + di, j0 + dj:j1 + dj]
            out[:, :, i0:i1, j0:j1] += w[None, :, None, None] \
                * patch[:, None, :, :]

    def back(g):
        if isinstance(kern, Var):
            dk = np.zeros_like(kv)
            for di in (-1, 0, 1):
                for dj in (-1, 0, 1):
                    i0, i1 = max(0, -di), min(3, 3 - di)
                    j0, j1 = max(0, -dj), min(3, 3 - dj)
                    if i0 >= i1 or j0 >= j1:
                        continue
                    patch = iv[:, i0 + di:i1 + di, j0 + dj:j1 + dj]
                    dk[:, di + 1, dj + 1] += np.einsum(
                        "ncij,nij->c", g[:, :, i0:i1, j0:j1], patch)
            kern.add_grad(dk)
        if isinstance(img, Var):
            di_g = np.zeros_like(iv)
            for di in (-1, 0, 1):
                for dj in (-1, 0, 1):
                    i0, i1 = max(0, -di), min(3, 3 - di)
                    j0, j1 = max(0, -dj), min(3, 3 - dj)
                    if i0 >= i1 or j0 >= j1:
                        continue
                    w = kv[:, di + 1, dj + 1]
                    di_g[:, i0 + di:i1 + di, j0 + dj:j1 + dj] += np.einsum(
                        "ncij,c->nij", g[:, :, i0:i1, j0:j1], w)
            img.add_grad(di_g)
    return _node(out, (kern, img), back)


def coarse_solve_const(lu: np.ndarray, perm: np.ndarray, spec: GridSpec,
                       f) -> Var:
    """Exact coarsest solve as a constant linear operator; the adjoint is
    the transposed solve with the same factorization."""
    fv = value_of(f)
    x = dense.lu_solve(lu, perm, fv[spec.mask])
    out = np.zeros_like(fv)
    out[spec.mask] = x

    def back(g):
        if isinstance(f, Var):
            gt = dense.lu_solve_t(lu, perm, g[spec.mask])
            df = np.zeros_like(fv)
            df[spec.mask] = gt
            f.add_grad(df)
    return _node(out, (f,), back)


def norm2(a) -> Var:
    av = value_of(a)
    n = float(np.sqrt(np.sum(av * av)))

    def back(g):
        if isinstance(a, Var):
            if n == 0.0:
                raise NumericError("2-norm not differentiable at zero")
            a.add_grad((float(g) / n) * av)
    return _node(n, (a,), back)


def mean_of(items: list[Var]) -> Var:
    if not items:
        raise ContractError("mean of an empty list")
    vals = np.array([float(value_of(x)) for x in items])
    inv = 1.0 / len(items)

    def back(g):
        for x in items:
            if isinstance(x, Var):
                x.add_grad(float(g) * inv)
    return _node(vals.mean(), tuple(items), back)


def backward(root: Var):
    """Reverse accumulation from a scalar root, each node visited once."""
    if root.value.ndim != 0:
        raise ContractError("backward needs a scalar root")
    order: list[Var] = []
    seen: set[int] = set()
    stack: list[tuple[Var, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    root.grad = np.ones_like(root.value)
    for node in reversed(order):
        if node.backward_fn is not None and node.grad is not None:
            node.backward_fn(node.grad)


def zero_grads(params: list[Var]):
    for p in params:
        p.grad = None


def grad_check(build_loss, params: list[Var], step: float = 1e-5,
               limit: int = 200, seed: int = 0) -> float:
    """Max relative error of reverse-mode gradients against central
    differences over up to `limit` randomly chosen parameter entries."""
    zero_grads(params)
    root = build_loss()
    backward(root)
    grads = [np.zeros_like(p.value) if p.grad is None else p.grad.copy()
             for p in params]
    entries = [(i, idx) for i, p in enumerate(params)
               for idx in np.ndindex(p.value.shape)]
    rng = np.random.default_rng(seed)
    if len(entries) > limit:
        chosen = [entries[j] for j in
                  rng.choice(len(entries), size=limit, replace=False)]
    else:
        chosen = entries
    worst = 0.0
    for i, idx in chosen:
        keep = params[i].value[idx]
        params[i].value[idx] = keep + step
        f_plus = float(build_loss().value)
        params[i].value[idx] = keep - step
        f_minus = float(build_loss().value)
        params[i].value[idx] = keep
        fd = (f_plus - f_minus) / (2.0 * step)
        ad = float(grads[i][idx])
        denom = max(abs(fd), abs(ad), 1.0)
        worst = max(worst, abs(fd - ad) / denom)
    return worst
