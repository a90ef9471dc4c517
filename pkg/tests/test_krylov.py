"""Flexible GMRES: exactness, monotonicity, preconditioning, restarts."""
import numpy as np
import pytest

from mgsmooth.errors import ConfigError
from mgsmooth.hierarchy import build_hierarchy, equip_classical
from mgsmooth.krylov import (FgmresConfig, cycle_preconditioner, fgmres,
                             gmres, grid_action)
from mgsmooth.problems import ProblemSpec


def test_identity_converges_in_one_step(rng):
    f = rng.standard_normal(12)
    x, rep = fgmres(lambda v: v, f)
    assert rep.iterations == 1
    assert np.allclose(x, f)


def test_small_system_exact_in_n_steps(rng):
    A = np.array([[2.0, 1.0], [1.0, 3.0]])
    b = np.array([1.0, -1.0])
    x, rep = fgmres(lambda v: A @ v, b, cfg=FgmresConfig(tol=1e-12))
    assert rep.iterations <= 2
    assert np.allclose(A @ x, b, atol=1e-10)


def test_exact_inverse_preconditioner_one_iteration(rng):
    A = rng.standard_normal((9, 9)) + 9 * np.eye(9)
    Ainv = np.linalg.inv(A)
    b = rng.standard_normal(9)
    x, rep = fgmres(lambda v: A @ v, b, precond=lambda r: Ainv @ r)
    assert rep.iterations == 1
    assert np.allclose(A @ x, b, atol=1e-8)


def test_fgmres_with_identity_preconditioner_matches_gmres(rng):
    """Flexible and plain variants coincide when Z = V."""
    for trial in range(5):
        n = 10
        A = rng.standard_normal((n, n)) + n * np.eye(n)
        b = rng.standard_normal(n)
        cfg = FgmresConfig(tol=1e-10)
        xf, rf = fgmres(lambda v: A @ v, b, precond=lambda r: r, cfg=cfg)
        xg, rg = gmres(lambda v: A @ v, b, cfg=cfg)
        assert rf.iterations == rg.iterations
        assert np.allclose(rf.history, rg.history, rtol=1e-8, atol=1e-12)
        assert np.allclose(xf, xg, atol=1e-8)


def test_finite_termination(rng):
    n = 30
    A = rng.standard_normal((n, n)) + n * np.eye(n)
    b = rng.standard_normal(n)
    x, rep = fgmres(lambda v: A @ v, b, cfg=FgmresConfig(tol=1e-13))
    assert rep.iterations <= n
    assert np.linalg.norm(A @ x - b) < 1e-9 * np.linalg.norm(b)


def test_history_is_monotone_absolute_norms(rng):
    n = 25
    A = rng.standard_normal((n, n)) + n * np.eye(n)
    b = rng.standard_normal(n)
    x, rep = fgmres(lambda v: A @ v, b)
    h = np.asarray(rep.history)
    assert h[0] == pytest.approx(np.linalg.norm(b))
    assert np.all(np.diff(h) <= 1e-14)
    assert rep.converged


def test_iteration_varying_preconditioner_still_converges(rng):
    """The flexible method tolerates a preconditioner that changes every
    application; plain GMRES theory would not apply."""
    n = 20
    A = rng.standard_normal((n, n)) + n * np.eye(n)
    b = rng.standard_normal(n)
    state = {"count": 0}

    def flaky(r):
        state["count"] += 1
        if state["count"] % 2 == 0:
            return r / np.diag(A)
        return 0.5 * r

    x, rep = fgmres(lambda v: A @ v, b, precond=flaky)
    assert rep.converged
    h = np.asarray(rep.history)
    assert np.all(np.diff(h) <= 1e-14)


def test_true_residual_matches_reported(rng):
    n = 18
    A = rng.standard_normal((n, n)) + n * np.eye(n)
    b = rng.standard_normal(n)
    x, rep = fgmres(lambda v: A @ v, b, cfg=FgmresConfig(tol=1e-8))
    true_abs = np.linalg.norm(b - A @ x)
    assert true_abs == pytest.approx(rep.history[-1], rel=1e-6, abs=1e-12)


def test_zero_rhs_short_circuits():
    x, rep = fgmres(lambda v: v, np.zeros(7))
    assert rep.iterations == 0
    assert np.all(x == 0.0)
    assert rep.converged


def test_restart_cycles(rng):
    n = 40
    A = rng.standard_normal((n, n))
    A = A @ A.T + 30.0 * n * np.eye(n)
    b = rng.standard_normal(n)
    x, rep = fgmres(lambda v: A @ v, b,
                    cfg=FgmresConfig(tol=1e-9, restart=7, max_iter=400))
    assert rep.converged
    assert np.linalg.norm(A @ x - b) < 1e-6 * np.linalg.norm(b)


def test_non_converged_report_not_error(rng):
    n = 30
    A = rng.standard_normal((n, n)) + n * np.eye(n)
    b = rng.standard_normal(n)
    x, rep = fgmres(lambda v: A @ v, b,
                    cfg=FgmresConfig(tol=1e-14, max_iter=3))
    assert not rep.converged
    assert rep.iterations == 3


def test_config_validation():
    with pytest.raises(ConfigError):
        FgmresConfig(tol=0.0)
    with pytest.raises(ConfigError):
        FgmresConfig(restart=0)
    with pytest.raises(ConfigError):
        FgmresConfig(max_iter=0)


def test_multigrid_preconditioned_rotated_problem():
    """End to end: V-cycle preconditioned FGMRES beats the plain solve on
    iteration count."""
    ps = ProblemSpec("rotated", 15, angle=np.pi / 6, anisotropy=100.0)
    A = ps.assemble()
    hier = build_hierarchy(A, 3)
    equip_classical(hier, "jacobi")
    rng = np.random.default_rng(3)
    # flat full-grid vectors; inactive entries are zero and stay zero
    f = np.where(A.spec.mask.ravel(),
                 rng.standard_normal(A.spec.mask.size), 0.0)
    apply_a = grid_action(A)
    cfg = FgmresConfig(tol=1e-8, max_iter=200)
    x_mg, rep_mg = fgmres(apply_a, f,
                          precond=cycle_preconditioner(hier), cfg=cfg)
    x_plain, rep_plain = fgmres(apply_a, f, cfg=cfg)
    assert rep_mg.converged
    assert rep_mg.iterations < rep_plain.iterations
    h = np.asarray(rep_mg.history)
    assert np.all(np.diff(h) <= 1e-14)
