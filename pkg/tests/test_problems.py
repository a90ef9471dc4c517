"""Operator assembly: closed-form stencils, symmetry, geometries, datasets."""
import numpy as np
import pytest

from mgsmooth.errors import ConfigError
from mgsmooth.grid import apply_stencil, full_spec, materialize_stencil
from mgsmooth.problems import (ProblemSpec, assemble_rotated_laplacian,
                               assemble_variable_diffusion, build_geometry,
                               diffusion_field, make_dataset,
                               rotated_coefficients)


def reference_rotated_table(theta, xi, h):
    """Independent rebuild of the 9-point stencil from the three parts."""
    c, s = np.cos(theta), np.sin(theta)
    a = c * c + xi * s * s
    cc = s * s + xi * c * c
    b = c * s * (1.0 - xi)
    sxx = np.array([[0.0, 0, 0], [-1, 2, -1], [0, 0, 0]])
    syy = sxx.T
    sxy = np.array([[1.0, -1, 0], [-1, 2, -1], [0, -1, 1]])
    return (a * sxx + cc * syy - b * sxy) / h ** 2


def test_rotated_coefficients_closed_form():
    a, b, c = rotated_coefficients(np.pi / 6, 100.0)
    th = np.pi / 6
    assert a == pytest.approx(np.cos(th) ** 2 + 100 * np.sin(th) ** 2)
    assert c == pytest.approx(np.sin(th) ** 2 + 100 * np.cos(th) ** 2)
    assert b == pytest.approx(np.cos(th) * np.sin(th) * -99.0)


def test_rotated_stencil_matches_reference():
    for th in (0.0, np.pi / 12, np.pi / 6, np.pi / 4, 5 * np.pi / 12):
        spec = full_spec(8)
        A = assemble_rotated_laplacian(spec, th, 100.0)
        ref = reference_rotated_table(th, 100.0, spec.spacing)
        assert np.max(np.abs(A.data[3, 4] - ref)) < 1e-10


def test_axis_aligned_reduces_to_five_point():
    spec = full_spec(6)
    A = assemble_rotated_laplacian(spec, 0.0, 1.0)
    h2 = spec.spacing ** 2
    want = np.array([[0.0, -1, 0], [-1, 4, -1], [0, -1, 0]]) / h2
    assert np.max(np.abs(A.data[2, 3] - want)) < 1e-10


def test_rotated_operator_spd():
    for th in (0.0, 0.4, np.pi / 4, 2.5):
        A = assemble_rotated_laplacian(full_spec(8), th, 100.0)
        Ad = materialize_stencil(A)
        assert np.max(np.abs(Ad - Ad.T)) < 1e-9
        assert np.linalg.eigvalsh(Ad).min() > 0


def test_quarter_turn_symmetry():
    """theta and pi/2 - theta swap the grid axes, so spectra agree."""
    A1 = materialize_stencil(assemble_rotated_laplacian(
        full_spec(8), np.pi / 12, 100.0))
    A2 = materialize_stencil(assemble_rotated_laplacian(
        full_spec(8), 5 * np.pi / 12, 100.0))
    w1 = np.sort(np.linalg.eigvalsh(A1))
    w2 = np.sort(np.linalg.eigvalsh(A2))
    assert np.max(np.abs(w1 - w2)) < 1e-6 * w1.max()


def test_variable_diffusion_spd_and_kappa_dependence():
    for kappa in (0.1, 1.0, 10.0, 100.0):
        A = assemble_variable_diffusion(full_spec(8), kappa)
        Ad = materialize_stencil(A)
        assert np.max(np.abs(Ad - Ad.T)) < 1e-9
        assert np.linalg.eigvalsh(Ad).min() > 0
    lo = assemble_variable_diffusion(full_spec(8), 0.1)
    hi = assemble_variable_diffusion(full_spec(8), 100.0)
    # higher kappa oscillates the coefficient, so stencils vary in space
    assert np.std(hi.center()) > np.std(lo.center())


def test_variable_diffusion_constant_coefficient_limit():
    """kappa = 0 freezes g at 1.1, giving one repeated element stencil."""
    A = assemble_variable_diffusion(full_spec(9), 0.0)
    inner = A.data[2:-2, 2:-2]
    assert np.max(np.abs(inner - inner[0, 0])) < 1e-12
    g = diffusion_field(0.0)
    assert g(0.3, 0.7) == pytest.approx(1.1)


def test_geometry_masks():
    sq = build_geometry("square", 9)
    assert sq.n_active == 81
    ls = build_geometry("lshape", 9)
    # the (n+1)//2 block of largest row and column indices is removed
    assert ls.n_active == 81 - 25
    assert not ls.mask[8, 8]
    assert ls.mask[0, 8] and ls.mask[8, 0]
    cyl = build_geometry("cylinder", 9)
    assert cyl.n_active < 81
    assert np.array_equal(cyl.mask, cyl.mask[::-1, ::-1])
    with pytest.raises(ConfigError):
        build_geometry("torus", 9)


def test_problem_spec_assemble_round_trip():
    ps = ProblemSpec("rotated", 7, angle=0.2, anisotropy=10.0)
    A = ps.assemble()
    B = assemble_rotated_laplacian(ps.grid(), 0.2, 10.0)
    assert np.array_equal(A.data, B.data)
    pv = ProblemSpec("variable", 7, kappa=2.0)
    assert np.array_equal(pv.assemble().data,
                          assemble_variable_diffusion(pv.grid(), 2.0).data)


def test_make_dataset_consistency(a_rot7):
    ds = make_dataset(a_rot7, 4, seed=9)
    assert len(ds) == 4
    for s in ds:
        # f is the exact image of u_star, so u_star solves the sample
        r = apply_stencil(a_rot7, s.u_star) - s.f
        assert r.norm() < 1e-12
        assert s.u_star.norm() == pytest.approx(1.0)
        assert s.u0.norm() == pytest.approx(1.0)
    again = make_dataset(a_rot7, 4, seed=9)
    assert all(np.array_equal(a.f.values, b.f.values)
               for a, b in zip(ds, again))
    other = make_dataset(a_rot7, 4, seed=10)
    assert not np.array_equal(ds[0].f.values, other[0].f.values)
