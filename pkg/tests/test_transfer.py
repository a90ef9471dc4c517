"""Transfer operators: adjointness, Galerkin products, coarsening ladders."""
import numpy as np
import pytest

from mgsmooth.errors import ContractError
from mgsmooth.grid import (GridFunction, full_spec, materialize,
                           materialize_stencil, to_active)
from mgsmooth.problems import assemble_rotated_laplacian
from mgsmooth.transfer import (coarsen_checker, coarsen_full,
                               galerkin_product, prolong, restrict)


def dense_pair(tp):
    P = materialize(lambda v: prolong(tp, v), tp.coarse, tp.fine)
    R = materialize(lambda v: restrict(tp, v), tp.fine, tp.coarse)
    return P, R


def masked_noise(spec, rng):
    v = rng.standard_normal(spec.mask.shape)
    v[~spec.mask] = 0.0
    return GridFunction(spec, v)


@pytest.mark.parametrize("build", [coarsen_full, coarsen_checker])
def test_restriction_is_half_prolongation_transpose(build, rng):
    tp = build(full_spec(9))
    P, R = dense_pair(tp)
    assert np.max(np.abs(R - 0.5 * P.T)) < 1e-14


def test_full_coarsening_sizes():
    tp = coarsen_full(full_spec(15))
    assert tp.coarse.mask.shape == (7, 7)
    tp = coarsen_full(full_spec(16))
    assert tp.coarse.n_active < 16 * 16
    # spacing doubles on the kept lattice
    assert tp.coarse.spacing == pytest.approx(2 * tp.fine.spacing)


def test_checker_coarsening_keeps_one_color():
    fine = full_spec(7)
    tp = coarsen_checker(fine)
    assert tp.fine.n_active == 49
    assert tp.coarse.n_active == (49 + 1) // 2  # the even color class
    ii, jj = np.nonzero(tp.coarse.mask)
    assert np.all((ii + jj) % 2 == 0)


def test_prolongation_of_constant_is_flat(rng):
    """P carries half the classic bilinear weights (P = 2 R^T with R row
    sums 1); the Galerkin product absorbs the scale, so cycles only see
    that a constant prolongs to a flat field."""
    tp = coarsen_full(full_spec(15))
    ones = GridFunction(tp.coarse, np.ones(tp.coarse.mask.shape) *
                        tp.coarse.mask)
    up = prolong(tp, ones)
    assert np.max(np.abs(up.values[2:-2, 2:-2] - 0.5)) < 1e-13


def test_galerkin_product_equals_dense_triple_product(rng):
    for th in (0.0, np.pi / 6, np.pi / 4):
        A = assemble_rotated_laplacian(full_spec(9), th, 100.0)
        tp = coarsen_full(A.spec)
        P, R = dense_pair(tp)
        Ac = galerkin_product(A, tp)
        got = materialize_stencil(Ac)
        want = R @ materialize_stencil(A) @ P
        assert np.max(np.abs(got - want)) < 1e-12


def test_galerkin_product_checker_grows_stencil():
    A = assemble_rotated_laplacian(full_spec(9), np.pi / 6, 100.0)
    tp = coarsen_checker(A.spec)
    Ac = galerkin_product(A, tp)
    assert Ac.k > 3
    P, R = dense_pair(tp)
    want = R @ materialize_stencil(A) @ P
    assert np.max(np.abs(materialize_stencil(Ac) - want)) < 1e-11


def test_galerkin_chain_spd():
    A = assemble_rotated_laplacian(full_spec(15), np.pi / 12, 100.0)
    for _ in range(2):
        tp = coarsen_full(A.spec)
        A = galerkin_product(A, tp)
        Ad = materialize_stencil(A)
        assert np.max(np.abs(Ad - Ad.T)) < 1e-9
        assert np.linalg.eigvalsh(Ad).min() > 0


def test_restriction_of_smooth_field_preserves_values(rng):
    """Full weighting reproduces a bilinear field at kept points."""
    tp = coarsen_full(full_spec(15))
    i = np.arange(15.0)[:, None]
    j = np.arange(15.0)[None, :]
    lin = GridFunction(tp.fine, 0.25 * i + 0.5 * j + 1.0)
    down = restrict(tp, lin)
    # kept lattice points are the odd fine indices
    want = 0.25 * (2 * np.arange(7.0)[:, None] + 1) \
        + 0.5 * (2 * np.arange(7.0)[None, :] + 1) + 1.0
    inner = slice(1, -1)
    assert np.max(np.abs(down.values[inner, inner] -
                         want[inner, inner])) < 1e-12


def test_transfer_rejects_wrong_grid(rng):
    tp = coarsen_full(full_spec(9))
    wrong = masked_noise(full_spec(7), rng)
    with pytest.raises(ContractError):
        restrict(tp, wrong)
