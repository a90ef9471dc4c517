"""Masked 2-D grids, stencil fields, convolution, and dense materialization.

Conventions used throughout the library:

- values live on a rows x cols lattice; index i is the row (y-like) axis,
  index j the column (x-like) axis, both increasing with the coordinate.
- a boolean mask marks active unknowns; anything inactive is held at exactly
  zero (homogeneous Dirichlet closure by zero padding).
- stencils and kernels are indexed [di + r, dj + r] for offsets di, dj in
  [-r, r], so entry [r, r] is the center.  Application is cross-correlation:
  out(p) = sum_o w[o] * u(p + o).  No kernel flip anywhere.
- "dense" matrices are plain numpy arrays over active points in row-major
  mask order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, NumericError

DenseMatrix = np.ndarray


def shifted(values: np.ndarray, di: int, dj: int) -> np.ndarray:
    """Return s with s[i, j] = values[i + di, j + dj], zero outside."""
    out = np.zeros_like(values)
    rows, cols = values.shape[:2]
    i0, i1 = max(0, -di), min(rows, rows - di)
    j0, j1 = max(0, -dj), min(cols, cols - dj)
    if i0 < i1 and j0 < j1:
        out[i0:i1, j0:j1] = values[i0 + di:i1 + di, j0 + dj:j1 + dj]
    return out


@dataclass(frozen=True)
class GridSpec:
    rows: int
    cols: int
    spacing: float
    mask: np.ndarray  # bool, shape (rows, cols)

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ContractError("grid dimensions must be positive")
        if self.spacing <= 0:
            raise ContractError("grid spacing must be positive")
        mask = np.asarray(self.mask, dtype=bool)
        if mask.shape != (self.rows, self.cols):
            raise ContractError("mask shape does not match grid dimensions")
        if not mask.any():
            raise ContractError("grid has no active points")
        object.__setattr__(self, "mask", mask)

    @property
    def n_active(self) -> int:
        return int(self.mask.sum())

    def same_lattice(self, other: "GridSpec") -> bool:
        return (self.rows == other.rows and self.cols == other.cols
                and np.array_equal(self.mask, other.mask))

    def __eq__(self, other):
        if not isinstance(other, GridSpec):
            return NotImplemented
        return self.same_lattice(other) and self.spacing == other.spacing

    def __hash__(self):
        return hash((self.rows, self.cols, self.spacing, self.mask.tobytes()))


def full_spec(n: int, spacing: float | None = None) -> GridSpec:
    """Fully active n x n grid of interior unknowns, h = 1/(n+1) by default."""
    h = 1.0 / (n + 1) if spacing is None else spacing
    return GridSpec(n, n, h, np.ones((n, n), dtype=bool))


@dataclass
class GridFunction:
    spec: GridSpec
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.spec.rows, self.spec.cols):
            raise ContractError("value array does not match grid spec")
        if not np.isfinite(v[self.spec.mask]).all():
            raise NumericError("non-finite grid values")
        # zero at inactive points is an invariant, not a convention
        self.values = np.where(self.spec.mask, v, 0.0)

    def copy(self) -> "GridFunction":
        return GridFunction(self.spec, self.values.copy())

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))

    def dot(self, other: "GridFunction") -> float:
        return float(np.vdot(self.values, other.values))

    def _binary(self, other: "GridFunction", op) -> "GridFunction":
        if other.spec != self.spec:
            raise ContractError("grid functions live on different specs")
        return GridFunction(self.spec, op(self.values, other.values))

    def __add__(self, other: "GridFunction") -> "GridFunction":
        return self._binary(other, np.add)

    def __sub__(self, other: "GridFunction") -> "GridFunction":
        return self._binary(other, np.subtract)

    def __mul__(self, scalar: float) -> "GridFunction":
        return GridFunction(self.spec, self.values * float(scalar))

    __rmul__ = __mul__

    def __neg__(self) -> "GridFunction":
        return GridFunction(self.spec, -self.values)


def zeros(spec: GridSpec) -> GridFunction:
    return GridFunction(spec, np.zeros((spec.rows, spec.cols)))


def to_active(u: GridFunction) -> np.ndarray:
    return u.values[u.spec.mask].copy()


def from_active(spec: GridSpec, vec: np.ndarray) -> GridFunction:
    vec = np.asarray(vec, dtype=float)
    if vec.shape != (spec.n_active,):
        raise ContractError("active vector has wrong length")
    values = np.zeros((spec.rows, spec.cols))
    values[spec.mask] = vec
    return GridFunction(spec, values)


@dataclass(frozen=True)
class ConvKernel:
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1] or w.shape[0] % 2 == 0:
            raise ContractError("kernel must be square with odd size")
        if not np.isfinite(w).all():
            raise NumericError("non-finite kernel weights")
        object.__setattr__(self, "weights", w)

    @property
    def size(self) -> int:
        return self.weights.shape[0]


def delta_kernel(size: int = 3, scale: float = 1.0) -> ConvKernel:
    w = np.zeros((size, size))
    w[size // 2, size // 2] = scale
    return ConvKernel(w)


@dataclass
class StencilField:
    """Per-point k x k stencil weights over a grid.

    Constant-coefficient operators repeat one stencil; Galerkin products and
    variable coefficients give genuinely per-point tables.  k is 3 for
    assembled PDE operators but grows under red-black Galerkin coarsening,
    so any odd k is supported.
    """

    spec: GridSpec
    data: np.ndarray  # (rows, cols, k, k)

    def __post_init__(self):
        d = np.asarray(self.data, dtype=float)
        if d.shape[:2] != (self.spec.rows, self.spec.cols):
            raise ContractError("stencil table does not match grid spec")
        if d.ndim != 4 or d.shape[2] != d.shape[3] or d.shape[2] % 2 == 0:
            raise ContractError("stencils must be square with odd size")
        if not np.isfinite(d).all():
            raise NumericError("non-finite stencil weights")
        self.data = d

    @property
    def k(self) -> int:
        return self.data.shape[2]

    @property
    def reach(self) -> int:
        return self.k // 2

    def center(self) -> np.ndarray:
        r = self.reach
        return self.data[:, :, r, r]

    def transpose(self) -> "StencilField":
        """Stencil table of the adjoint operator: T(p)[o] = S(p+o)[-o]."""
        r = self.reach
        out = np.zeros_like(self.data)
        for di in range(-r, r + 1):
            for dj in range(-r, r + 1):
                out[:, :, di + r, dj + r] = shifted(
                    self.data[:, :, r - di, r - dj], di, dj)
        return StencilField(self.spec, out)


def constant_stencil(spec: GridSpec, table: np.ndarray) -> StencilField:
    table = np.asarray(table, dtype=float)
    data = np.broadcast_to(
        table, (spec.rows, spec.cols) + table.shape).copy()
    return StencilField(spec, data)


def apply_stencil(field: StencilField, u: GridFunction) -> GridFunction:
    if not field.spec.same_lattice(u.spec):
        raise ContractError("stencil field and grid function live on different grids")
    r = field.reach
    out = np.zeros_like(u.values)
    for di in range(-r, r + 1):
        for dj in range(-r, r + 1):
            w = field.data[:, :, di + r, dj + r]
            out += w * shifted(u.values, di, dj)
    out[~field.spec.mask] = 0.0
    return GridFunction(u.spec, out)


def convolve(kernel: ConvKernel, u: GridFunction) -> GridFunction:
    """Centered cross-correlation with zero padding; output re-masked."""
    r = kernel.size // 2
    out = np.zeros_like(u.values)
    for di in range(-r, r + 1):
        for dj in range(-r, r + 1):
            w = kernel.weights[di + r, dj + r]
            if w != 0.0:
                out += w * shifted(u.values, di, dj)
    out[~u.spec.mask] = 0.0
    return GridFunction(u.spec, out)


def compose_kernels(outer: ConvKernel, inner: ConvKernel) -> ConvKernel:
    """Kernel of convolve(outer, convolve(inner, .)) away from boundaries.

    Offsets add under composition, so the table is the full 2-D convolution
    of the two weight tables; the size grows to k1 + k2 - 1.
    """
    k1, k2 = outer.size, inner.size
    k = k1 + k2 - 1
    out = np.zeros((k, k))
    for i in range(k1):
        for j in range(k1):
            w = outer.weights[i, j]
            if w != 0.0:
                out[i:i + k2, j:j + k2] += w * inner.weights
    return ConvKernel(out)


def pad_kernel(kernel: ConvKernel, size: int) -> ConvKernel:
    """Zero-extend a kernel to a larger odd size, keeping it centered."""
    if size < kernel.size or size % 2 == 0:
        raise ContractError("pad target must be an odd size >= kernel size")
    out = np.zeros((size, size))
    off = (size - kernel.size) // 2
    out[off:off + kernel.size, off:off + kernel.size] = kernel.weights
    return ConvKernel(out)


def materialize(op, in_spec: GridSpec, out_spec: GridSpec | None = None) -> DenseMatrix:
    """Dense matrix of a linear grid operator over active points.

    Column j is op applied to the j-th active-point unit vector.  The caller
    is responsible for linearity; see analysis.iteration_matrix for the
    guarded path.
    """
    if out_spec is None:
        out_spec = in_spec
    n_in = in_spec.n_active
    cols = np.empty((out_spec.n_active, n_in))
    basis = np.zeros(n_in)
    for j in range(n_in):
        basis[j] = 1.0
        result = op(from_active(in_spec, basis))
        cols[:, j] = to_active(result)
        basis[j] = 0.0
    if not np.isfinite(cols).all():
        raise NumericError("operator produced non-finite output during materialization")
    return cols


def materialize_stencil(field: StencilField) -> DenseMatrix:
    return materialize(lambda u: apply_stencil(field, u), field.spec)
