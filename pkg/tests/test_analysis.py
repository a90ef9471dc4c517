"""Spectral toolkit: iteration matrices, convergence bounds, profiles."""
import numpy as np
import pytest

from mgsmooth.analysis import (MAX_DENSE_DIM, convergence_certificate,
                               cycle_matrix, empty_splitting, energy_norm,
                               fc_splitting, frobenius_probe, ideal_bound,
                               injection_matrix, iteration_matrix,
                               smoothing_profile, spectral_radius,
                               symmetrized_smoother, two_grid_operator,
                               weak_approximation)
from mgsmooth.errors import ContractError, UnsupportedOperationError
from mgsmooth.grid import full_spec, materialize_stencil
from mgsmooth.hierarchy import build_hierarchy, equip_classical
from mgsmooth.problems import ProblemSpec, assemble_rotated_laplacian
from mgsmooth.smoothers import conv_smoother, jacobi


def test_spectral_radius_matches_numpy(rng):
    M = rng.standard_normal((30, 30))
    assert spectral_radius(M) == pytest.approx(
        np.abs(np.linalg.eigvals(M)).max(), rel=1e-8)


def test_iteration_matrix_closed_form(a_rot7):
    jac = jacobi(a_rot7, 2.0 / 3.0)
    S = iteration_matrix(jac.apply, a_rot7)
    Ad = materialize_stencil(a_rot7)
    want = np.eye(Ad.shape[0]) - (2.0 / 3.0) * Ad / Ad[0, 0]
    assert np.max(np.abs(S - want)) < 1e-12


def test_iteration_matrix_rejects_nonlinear(a_rot7, rng):
    sm = conv_smoother(a_rot7, "full", activation="leaky")
    for layer in sm.layers:
        layer.weights[:] += rng.standard_normal((3, 3)) * 0.5
    with pytest.raises(UnsupportedOperationError):
        iteration_matrix(sm.apply, a_rot7)


def test_energy_norm_is_operator_norm_in_a(a_rot7, rng):
    Ad = materialize_stencil(a_rot7)
    E = rng.standard_normal(Ad.shape) * 0.1
    w, V = np.linalg.eigh(Ad)
    root = V @ np.diag(np.sqrt(w)) @ V.T
    want = np.linalg.norm(root @ E @ np.linalg.inv(root), 2)
    assert energy_norm(E, Ad) == pytest.approx(want, rel=1e-7)


def test_symmetrized_smoother_composes_sweep_and_adjoint(a_rot7):
    """I - Mbar^-1 A = (I - M^-T A)(I - M^-1 A): the symmetrized splitting
    is one sweep followed by its adjoint."""
    from mgsmooth.errors import NumericError
    Ad = materialize_stencil(a_rot7)
    M = np.tril(Ad)                            # Gauss-Seidel splitting
    Mbar = symmetrized_smoother(M, Ad)
    n = Ad.shape[0]
    lhs = np.eye(n) - np.linalg.solve(Mbar, Ad)
    rhs = (np.eye(n) - np.linalg.solve(M.T, Ad)) \
        @ (np.eye(n) - np.linalg.solve(M, Ad))
    assert np.max(np.abs(lhs - rhs)) < 1e-10
    with pytest.raises(NumericError):
        symmetrized_smoother(0.1 * np.eye(n), Ad)


def test_two_grid_operator_composition(a_rot7):
    from mgsmooth.transfer import coarsen_full
    h = build_hierarchy(a_rot7, 2)
    equip_classical(h, "jacobi")
    tp = coarsen_full(a_rot7.spec)
    jac = h.levels[0].smoother
    TG = two_grid_operator(a_rot7, tp, jac.apply, post=True)
    E = cycle_matrix(h, pre=True, post=True)
    assert np.max(np.abs(TG - E)) < 1e-12


def test_empty_splitting_bound_equals_plain_radius(a_rot16):
    """With no coarse points the ideal bound collapses to the smoother's
    own asymptotic rate; this is the identity behind the second table."""
    Ad = materialize_stencil(a_rot16)
    M = np.diag(np.diag(Ad)) * 1.5            # Jacobi with omega = 2/3
    es = empty_splitting(a_rot16.spec)
    jac = jacobi(a_rot16, 2.0 / 3.0)
    rho = spectral_radius(iteration_matrix(jac.apply, a_rot16))
    assert ideal_bound(a_rot16, M, es) == pytest.approx(rho, abs=1e-6)


def test_fc_splitting_partitions_points(a_rot16):
    h = build_hierarchy(a_rot16, 2)
    split = fc_splitting(h.levels[0].transfer)
    assert split.n_f + split.n_c == a_rot16.spec.n_active
    assert split.n_c == h.levels[0].transfer.coarse.n_active
    R = injection_matrix(split)
    assert R.shape == (split.n_c, split.n_f + split.n_c)
    # injection after prolongation recovers the coarse identity
    from mgsmooth.grid import materialize
    from mgsmooth.transfer import prolong
    tp = h.levels[0].transfer
    P = materialize(lambda v: prolong(tp, v), tp.coarse, tp.fine)
    assert np.max(np.abs(R @ P - np.eye(split.n_c))) < 1e-12


def test_weak_approximation_bounds_two_grid_rate():
    """The measure K certifies ||E_TG||_A <= sqrt(1 - 1/K) on every tested
    operator, smoother, and splitting."""
    for th in (0.0, np.pi / 6, np.pi / 4):
        A = assemble_rotated_laplacian(full_spec(16), th, 100.0)
        Ad = materialize_stencil(A)
        h = build_hierarchy(A, 2)
        equip_classical(h, "jacobi")
        tp = h.levels[0].transfer
        for omega in (0.5, 2.0 / 3.0):
            M = np.diag(np.diag(Ad)) / omega
            K = weak_approximation(A, M, tp, fc_splitting(tp))
            sm = jacobi(A, omega)
            E = two_grid_operator(A, tp, sm.apply)
            assert K >= 1.0
            assert energy_norm(E, Ad) <= np.sqrt(1.0 - 1.0 / K) + 1e-10


def test_convergence_certificate_agrees_with_energy_norm(rng):
    """Definition-style certificate (A-norm contraction) matches the
    spectral criterion on twenty randomized smoothers."""
    A = materialize_stencil(assemble_rotated_laplacian(full_spec(6), 0.3,
                                                       10.0))
    agree = 0
    for _ in range(20):
        M = np.diag(np.diag(A)) * rng.uniform(0.3, 1.8)
        M = M + rng.standard_normal(M.shape) * rng.uniform(0, 0.25) \
            * np.abs(np.diag(A)).mean()
        converges, contraction, a_norm = convergence_certificate(M, A)
        agree += int(converges == (a_norm < 1.0))
    assert agree == 20


def test_smoothing_profile_closed_form():
    """Jacobi damping factor per eigenmode is |1 - omega lambda / d|."""
    P8 = assemble_rotated_laplacian(full_spec(8), 0.0, 1.0)
    jac = jacobi(P8, 2.0 / 3.0)
    prof = smoothing_profile(P8, jac.apply)
    d = materialize_stencil(P8)[0, 0]
    want = np.abs(1.0 - (2.0 / 3.0) * prof.eigenvalues / d)
    assert np.max(np.abs(prof.factors - want)) < 1e-9
    # eigenvalues come sorted from high frequency down
    assert prof.eigenvalues[0] >= prof.eigenvalues[-1]


def test_smoothing_profile_jacobi_kills_top_modes():
    P8 = assemble_rotated_laplacian(full_spec(8), 0.0, 1.0)
    jac = jacobi(P8, 2.0 / 3.0)
    prof = smoothing_profile(P8, jac.apply)
    half = prof.factors.size // 2
    assert np.mean(prof.factors[:half]) < np.mean(prof.factors[half:])


def test_frobenius_probe_unbiased(rng):
    X = rng.standard_normal((50, 50))
    mean, exact, ratio = frobenius_probe(X, 50, 100_000, seed=7)
    assert exact == pytest.approx(np.linalg.norm(X, "fro") ** 2)
    assert abs(ratio - 1.0) < 0.05


def test_frobenius_probe_identity_exact():
    mean, exact, ratio = frobenius_probe(np.eye(5), 5, 64, seed=1)
    assert exact == pytest.approx(5.0)
    assert mean == pytest.approx(5.0)


def test_dense_dim_guard():
    big = ProblemSpec("rotated", 70).assemble()
    assert big.spec.n_active > MAX_DENSE_DIM
    with pytest.raises(ContractError):
        iteration_matrix(jacobi(big).apply, big)
