"""Model problems on the unit square and training-data generation.

Interior point (i, j) of an n-by-n grid sits at x = (j + 1) h, y = (i + 1) h
with h = 1/(n + 1); the boundary ring is eliminated (homogeneous Dirichlet).
Geometry masks carve holes out of the index set, which again acts as a zero
Dirichlet condition on the hole boundary: assembled stencils are constant
per family and rows at inactive points are identity, so the active block is
a principal submatrix of the full-grid operator and inherits its symmetry
and definiteness.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericError
from .grid import GridFunction, GridSpec, StencilField, apply_stencil, \
    constant_stencil, full_spec

# second difference in x (row layout: leading index is the y offset)
_SXX = np.array([[0.0, 0.0, 0.0],
                 [-1.0, 2.0, -1.0],
                 [0.0, 0.0, 0.0]])
_SYY = _SXX.T
# mixed-derivative stencil, rows ordered y-down to y-up
_SXY = np.array([[1.0, -1.0, 0.0],
                 [-1.0, 2.0, -1.0],
                 [0.0, -1.0, 1.0]])


def rotated_coefficients(angle: float, anisotropy: float):
    """Stencil weights for a (1, anisotropy) diffusion tensor rotated by
    the given angle: a and c scale the x and y second differences, b the
    diagonal coupling."""
    co, si = math.cos(angle), math.sin(angle)
    a = co * co + anisotropy * si * si
    c = si * si + anisotropy * co * co
    b = co * si * (1.0 - anisotropy)
    return a, b, c


def assemble_rotated_laplacian(spec: GridSpec, angle: float,
                               anisotropy: float) -> StencilField:
    if anisotropy <= 0.0:
        raise ConfigError(f"anisotropy must be positive, got {anisotropy}")
    a, b, c = rotated_coefficients(angle, anisotropy)
    h2 = spec.spacing * spec.spacing
    table = (a * _SXX + c * _SYY - b * _SXY) / h2
    return constant_stencil(spec, table)


def diffusion_field(kappa: float):
    """The oscillatory coefficient g(x, y) = sin(kappa pi x y) + 1.1."""
    def g(x, y):
        return np.sin(kappa * math.pi * x * y) + 1.1
    return g


def assemble_variable_diffusion(spec: GridSpec, kappa: float) -> StencilField:
    """Bilinear finite elements for -div(g grad u), g sampled once per cell
    at the cell midpoint, scaled by 1/h^2 so that g = 1 reproduces a
    discrete Laplacian.  Center 8/(3h^2), all eight neighbors -1/(3h^2)
    in that case."""
    g = diffusion_field(kappa)
    h = spec.spacing
    # cell midpoints around node (i, j): node position plus/minus h/2
    i = np.arange(spec.rows, dtype=float)[:, None]
    j = np.arange(spec.cols, dtype=float)[None, :]
    x = (j + 1.0) * h
    y = (i + 1.0) * h
    g_ne = g(x + 0.5 * h, y + 0.5 * h)
    g_nw = g(x - 0.5 * h, y + 0.5 * h)
    g_sw = g(x - 0.5 * h, y - 0.5 * h)
    g_se = g(x + 0.5 * h, y - 0.5 * h)
    lo = min(gq.min() for gq in (g_ne, g_nw, g_sw, g_se))
    if lo <= 0.0:
        raise NumericError(
            f"diffusion coefficient not elliptic, min sample {lo}")
    s = 1.0 / (3.0 * h * h)
    data = np.zeros((spec.rows, spec.cols, 3, 3))
    data[:, :, 2, 2] = -g_ne * s
    data[:, :, 2, 0] = -g_nw * s
    data[:, :, 0, 0] = -g_sw * s
    data[:, :, 0, 2] = -g_se * s
    data[:, :, 2, 1] = -(g_ne + g_nw) * 0.5 * s
    data[:, :, 0, 1] = -(g_sw + g_se) * 0.5 * s
    data[:, :, 1, 2] = -(g_ne + g_se) * 0.5 * s
    data[:, :, 1, 0] = -(g_nw + g_sw) * 0.5 * s
    data[:, :, 1, 1] = 2.0 * (g_ne + g_nw + g_sw + g_se) * s
    data[~spec.mask] = 0.0
    data[~spec.mask, 1, 1] = 1.0
    return StencilField(spec, data)


def build_geometry(kind: str, n: int, spacing: float | None = None) -> GridSpec:
    """Interior grid for one of the named domains.

    square    full n-by-n interior.
    lshape    upper-right quadrant removed (the ceil(n/2) block of largest
              row and column indices).
    cylinder  disk of radius floor(n/4) around the grid center removed.
    """
    base = full_spec(n, spacing)
    if kind == "square":
        return base
    mask = base.mask.copy()
    if kind == "lshape":
        cut = (n + 1) // 2
        mask[n - cut:, n - cut:] = False
    elif kind == "cylinder":
        c = (n - 1) / 2.0
        r = n // 4
        ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        mask[(ii - c) ** 2 + (jj - c) ** 2 <= r * r] = False
    else:
        raise ConfigError(f"unknown geometry {kind!r}")
    return GridSpec(base.rows, base.cols, base.spacing, mask)


@dataclass(frozen=True)
class ProblemSpec:
    """Everything needed to reassemble an operator, small enough to hash
    into run manifests."""
    family: str                 # "rotated" | "variable"
    n: int
    geometry: str = "square"
    angle: float = 0.0
    anisotropy: float = 100.0
    kappa: float = 1.0

    def grid(self) -> GridSpec:
        return build_geometry(self.geometry, self.n)

    def assemble(self, spec: GridSpec | None = None) -> StencilField:
        spec = self.grid() if spec is None else spec
        if self.family == "rotated":
            return assemble_rotated_laplacian(spec, self.angle,
                                              self.anisotropy)
        if self.family == "variable":
            return assemble_variable_diffusion(spec, self.kappa)
        raise ConfigError(f"unknown problem family {self.family!r}")


@dataclass
class TrainingSample:
    """One (initial guess, right-hand side, target) triple.

    manufactured samples satisfy f = A u_star exactly; probe samples from
    the injection stage carry the residual equation with u_star = 0 and the
    flag cleared.
    """
    u0: GridFunction
    f: GridFunction
    u_star: GridFunction
    manufactured: bool = True


def _unit_random(spec: GridSpec, rng: np.random.Generator) -> GridFunction:
    v = rng.standard_normal((spec.rows, spec.cols))
    v[~spec.mask] = 0.0
    nrm = float(np.linalg.norm(v))
    if nrm == 0.0:
        raise NumericError("degenerate zero sample")
    return GridFunction(spec, v / nrm)


def make_dataset(A: StencilField, count: int,
                 seed: int = 0) -> list[TrainingSample]:
    """Manufactured solutions: u_star and u0 are independent unit-norm
    Gaussian fields, f = A u_star."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        u_star = _unit_random(A.spec, rng)
        u0 = _unit_random(A.spec, rng)
        f = apply_stencil(A, u_star)
        out.append(TrainingSample(u0, f, u_star, True))
    return out
