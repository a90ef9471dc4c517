"""Grid-transfer operators and the Galerkin coarse-operator product.

Two coarsening families:

- full coarsening: every other point in both axes, coarse point c anchored
  at fine index 2c + 1, full-weighting restriction.
- red-black coarsening: alternating steps.  A checker step keeps the
  (i + j)-even points on the same lattice (the 45-degree rotated pattern,
  realized as a mask on the zero-padded regular grid); a derotation step
  keeps the (even, even) points and re-indexes them compactly.

Restriction gathers with the stencil printed below; prolongation distributes
with exactly twice those weights, so materialized restriction is 0.5 times
the transposed materialized prolongation for every scheme.  Any fixed scalar
here cancels from coarse-grid corrections because the Galerkin operator is
built from the same pair.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError
from .grid import ConvKernel, GridFunction, GridSpec, StencilField

FULL_WEIGHTING = np.array([[1.0, 2.0, 1.0],
                           [2.0, 4.0, 2.0],
                           [1.0, 2.0, 1.0]]) / 16.0
PLUS = np.array([[0.0, 1.0, 0.0],
                 [1.0, 4.0, 1.0],
                 [0.0, 1.0, 0.0]]) / 8.0
DIAGONAL = np.array([[1.0, 0.0, 1.0],
                     [0.0, 4.0, 0.0],
                     [1.0, 0.0, 1.0]]) / 8.0


@dataclass(frozen=True)
class TransferPair:
    scheme: str            # "full" | "rb-checker" | "rb-derotate"
    fine: GridSpec
    coarse: GridSpec
    restriction: ConvKernel
    prolongation: ConvKernel
    stride: int            # fine-index step per coarse index (both axes)
    offset: int            # fine index of coarse point 0


def coarsen_full(fine: GridSpec) -> TransferPair:
    rows_c, cols_c = fine.rows // 2, fine.cols // 2
    if rows_c < 1 or cols_c < 1:
        raise ConfigError(
            f"{fine.rows}x{fine.cols} grid cannot be coarsened further")
    mask_c = fine.mask[1::2, 1::2].copy()
    if not mask_c.any():
        raise ConfigError("coarsening left no active points")
    coarse = GridSpec(rows_c, cols_c, 2.0 * fine.spacing, mask_c)
    return TransferPair("full", fine, coarse,
                        ConvKernel(FULL_WEIGHTING),
                        ConvKernel(2.0 * FULL_WEIGHTING), 2, 1)


def coarsen_checker(fine: GridSpec) -> TransferPair:
    ii, jj = np.meshgrid(np.arange(fine.rows), np.arange(fine.cols),
                         indexing="ij")
    mask_c = fine.mask & ((ii + jj) % 2 == 0)
    if not mask_c.any():
        raise ConfigError("checker coarsening left no active points")
    coarse = GridSpec(fine.rows, fine.cols, fine.spacing, mask_c)
    return TransferPair("rb-checker", fine, coarse,
                        ConvKernel(PLUS), ConvKernel(2.0 * PLUS), 1, 0)


def coarsen_derotate(fine: GridSpec) -> TransferPair:
    rows_c = (fine.rows + 1) // 2
    cols_c = (fine.cols + 1) // 2
    mask_c = fine.mask[0::2, 0::2].copy()
    if not mask_c.any():
        raise ConfigError("derotation coarsening left no active points")
    coarse = GridSpec(rows_c, cols_c, 2.0 * fine.spacing, mask_c)
    return TransferPair("rb-derotate", fine, coarse,
                        ConvKernel(DIAGONAL), ConvKernel(2.0 * DIAGONAL), 2, 0)


def _axis_window(n_c: int, n_f: int, stride: int, shift: int):
    """Coarse index range [c0, c1) whose fine image stride*c + shift stays
    inside [0, n_f)."""
    c0 = max(0, -(shift // stride))
    c1 = min(n_c, (n_f - 1 - shift) // stride + 1)
    return c0, c1


def _gather(fine_values: np.ndarray, coarse_shape, stride: int, shift_i: int,
            shift_j: int) -> np.ndarray:
    """g[c] = fine_values[stride*c + shift], zero where that falls outside."""
    rows_c, cols_c = coarse_shape
    out = np.zeros((rows_c, cols_c))
    ci0, ci1 = _axis_window(rows_c, fine_values.shape[0], stride, shift_i)
    cj0, cj1 = _axis_window(cols_c, fine_values.shape[1], stride, shift_j)
    if ci0 < ci1 and cj0 < cj1:
        out[ci0:ci1, cj0:cj1] = fine_values[
            stride * ci0 + shift_i:stride * (ci1 - 1) + shift_i + 1:stride,
            stride * cj0 + shift_j:stride * (cj1 - 1) + shift_j + 1:stride]
    return out


def restrict(tp: TransferPair, u_fine: GridFunction) -> GridFunction:
    if u_fine.spec != tp.fine:
        raise ContractError("restrict: grid function not on the fine spec")
    r = tp.restriction.size // 2
    w = tp.restriction.weights
    out = np.zeros((tp.coarse.rows, tp.coarse.cols))
    for di in range(-r, r + 1):
        for dj in range(-r, r + 1):
            if w[di + r, dj + r] != 0.0:
                out += w[di + r, dj + r] * _gather(
                    u_fine.values, out.shape, tp.stride,
                    tp.offset + di, tp.offset + dj)
    out[~tp.coarse.mask] = 0.0
    return GridFunction(tp.coarse, out)


def prolong(tp: TransferPair, u_coarse: GridFunction) -> GridFunction:
    if u_coarse.spec != tp.coarse:
        raise ContractError("prolong: grid function not on the coarse spec")
    r = tp.prolongation.size // 2
    w = tp.prolongation.weights
    out = np.zeros((tp.fine.rows, tp.fine.cols))
    vc = u_coarse.values
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
    return GridFunction(tp.fine, out)


def galerkin_product(A: StencilField, tp: TransferPair) -> StencilField:
    """Coarse operator R A P as a stencil field, no dense detour.

    A coarse entry (c, dc) collects every chain coarse c -> fine anchor+u
    (restriction), fine -> fine step v (operator), fine -> coarse c + dc
    (prolongation), i.e. offsets with u + v - w = stride * dc.  Chains
    through inactive points carry no weight, matching the masked matrices.
    """
    if A.spec != tp.fine:
        raise ContractError("galerkin_product: operator not on the fine spec")
    s = tp.stride
    rR = tp.restriction.size // 2
    rA = A.reach
    rP = tp.prolongation.size // 2
    K = (rR + rA + rP) // s
    kc = 2 * K + 1
    rows_c, cols_c = tp.coarse.rows, tp.coarse.cols
    out = np.zeros((rows_c, cols_c, kc, kc))
    shape_c = (rows_c, cols_c)
    fmask = tp.fine.mask.astype(float)
    cmask = tp.coarse.mask.astype(float)
    Rw = tp.restriction.weights
    Pw = tp.prolongation.weights

    for ui in range(-rR, rR + 1):
        for uj in range(-rR, rR + 1):
            rw = Rw[ui + rR, uj + rR]
            if rw == 0.0:
                continue
            # activity of the restriction source point, on the coarse lattice
            src_active = _gather(fmask, shape_c, s, tp.offset + ui,
                                 tp.offset + uj)
            if not src_active.any():
                continue
            for vi in range(-rA, rA + 1):
                for vj in range(-rA, rA + 1):
                    entry = _gather(A.data[:, :, vi + rA, vj + rA], shape_c,
                                    s, tp.offset + ui, tp.offset + uj)
                    entry = entry * src_active
                    entry *= _gather(fmask, shape_c, s,
                                     tp.offset + ui + vi, tp.offset + uj + vj)
                    if not entry.any():
                        continue
                    for wi in range(-rP, rP + 1):
                        di, rem = divmod(ui + vi - wi, s)
                        if rem:
                            continue
                        for wj in range(-rP, rP + 1):
                            dj, rem = divmod(uj + vj - wj, s)
                            if rem:
                                continue
                            pw = Pw[wi + rP, wj + rP]
                            if pw == 0.0:
                                continue
                            # the receiving coarse point c + dc must be active
                            tgt = _gather(cmask, shape_c, 1, di, dj)
                            out[:, :, di + K, dj + K] += rw * pw * entry * tgt
    out[~tp.coarse.mask] = 0.0
    out[~tp.coarse.mask, K, K] = 1.0
    return StencilField(tp.coarse, _trim(out))


def _trim(data: np.ndarray) -> np.ndarray:
    """Drop all-zero outer rings so chained products keep minimal support."""
    while data.shape[2] >= 3:
        ring_zero = (not data[:, :, 0, :].any()
                     and not data[:, :, -1, :].any()
                     and not data[:, :, 1:-1, 0].any()
                     and not data[:, :, 1:-1, -1].any())
        if not ring_zero:
            break
        data = data[:, :, 1:-1, 1:-1]
    return np.ascontiguousarray(data)
