"""Training graph parity with the real cycle, gradient checks on the full
loss, determinism, and the short end-to-end training paths."""
import numpy as np
import pytest

from mgsmooth import autodiff as ad
from mgsmooth import dense
from mgsmooth.grid import (GridFunction, materialize, materialize_stencil,
                           to_active)
from mgsmooth.hierarchy import (build_hierarchy, equip_classical,
                                equip_conv_init, v_cycle)
from mgsmooth.problems import ProblemSpec, make_dataset
from mgsmooth.smoothers import conv_smoother, infer_kernels, inference_net
from mgsmooth.training import (TrainConfig, _net_graph, _sample_loss,
                               _stack_for, _trainable_conv, forward_loss,
                               frozen_graph, probe_residual_chain,
                               retrain_with_injection, train_adaptive,
                               train_independent, train_level, train_mixture)
from mgsmooth.transfer import prolong, restrict
from mgsmooth.analysis import two_grid_operator


@pytest.fixture(scope="module")
def h2(a_rot7):
    h = build_hierarchy(a_rot7, 2)
    equip_classical(h, "jacobi")
    return h


@pytest.fixture(scope="module")
def sample(a_rot7):
    return make_dataset(a_rot7, 3, seed=11)[0]


def test_forward_loss_matches_cycle(h2, a_rot7, sample):
    """The differentiable graph reproduces the production cycle bit for
    bit at every step count."""
    fn = frozen_graph(h2.levels[0].smoother, a_rot7.spec)
    for k in (1, 2, 3):
        lg = float(forward_loss(h2, 0, fn, sample, k).value)
        u = sample.u0
        for _ in range(k):
            u = v_cycle(h2, 0, sample.f, u)
        assert abs(lg - (u - sample.u_star).norm()) < 1e-13


def test_forward_loss_three_level_conv():
    A = ProblemSpec("rotated", 15, angle=np.pi / 6).assemble()
    h3 = build_hierarchy(A, 3)
    equip_conv_init(h3)
    ds = make_dataset(A, 2, seed=12)
    fn = frozen_graph(h3.levels[0].smoother, A.spec)
    lg = float(forward_loss(h3, 0, fn, ds[1], 2).value)
    u = ds[1].u0
    for _ in range(2):
        u = v_cycle(h3, 0, ds[1].f, u)
    assert abs(lg - (u - ds[1].u_star).norm()) < 1e-13


def test_forward_loss_k0_is_initial_error(h2, a_rot7, sample):
    fn = frozen_graph(h2.levels[0].smoother, a_rot7.spec)
    l0 = float(forward_loss(h2, 0, fn, sample, 0).value)
    assert abs(l0 - (sample.u0 - sample.u_star).norm()) < 1e-15


def test_exact_inverse_smoother_kills_error(h2, a_rot7, sample):
    lu, perm = dense.lu_factor(materialize_stencil(a_rot7))
    exact = lambda r: ad.coarse_solve_const(lu, perm, a_rot7.spec, r)
    assert float(forward_loss(h2, 0, exact, sample, 1).value) < 1e-10


def test_two_grid_power_oracle(h2, a_rot7, sample):
    """Graph iterations equal powers of the dense two-grid operator applied
    to the initial error."""
    from mgsmooth.transfer import coarsen_full
    tp = coarsen_full(a_rot7.spec)
    jac = h2.levels[0].smoother
    TG = two_grid_operator(a_rot7, tp, jac.apply, post=True)
    fn = frozen_graph(jac, a_rot7.spec)
    e0 = to_active(sample.u0 - sample.u_star)
    for k in (1, 2):
        lg = float(forward_loss(h2, 0, fn, sample, k).value)
        ek = np.linalg.matrix_power(TG, k) @ e0
        assert abs(lg - np.linalg.norm(ek)) < 1e-12


def test_grad_of_full_training_loss(h2, a_rot7, sample, rng):
    sm = conv_smoother(a_rot7, "full")
    params, fn, _ = _trainable_conv(sm)
    for p in params[:5]:
        p.value += rng.standard_normal((3, 3)) * 0.01
    stack = _stack_for(h2, 0, fn)
    err = ad.grad_check(lambda: _sample_loss(stack, sample, 2), params, seed=8)
    assert err < 1e-5


def test_grad_of_leaky_training_loss(h2, a_rot7, sample, rng):
    sm = conv_smoother(a_rot7, "full", activation="leaky")
    params, fn, _ = _trainable_conv(sm)
    for p in params[:5]:
        p.value += rng.standard_normal((3, 3)) * 0.01
    stack = _stack_for(h2, 0, fn)
    err = ad.grad_check(lambda: _sample_loss(stack, sample, 2), params, seed=9)
    assert err < 1e-5


@pytest.mark.parametrize("variant", ["fc", "conv"])
def test_net_graph_parity_and_gradient(variant):
    """The training-time net graph agrees with the deployment path and its
    gradient survives a central-difference audit."""
    A = ProblemSpec("variable", 7, kappa=1.0).assemble()
    h = build_hierarchy(A, 2)
    equip_classical(h, "jacobi")
    ds = make_dataset(A, 2, seed=13)
    net = inference_net(variant, k=1, seed=3)
    noise = np.random.default_rng(4)
    for w in net.weights:
        w += noise.standard_normal(w.shape) * 0.05
    net.bump()
    wvars = [ad.Var(w.copy()) for w in net.weights]
    fn = _net_graph(net, wvars, A)
    got = fn(ad.Var(ds[0].f.values)).value
    want = infer_kernels(net, A).apply(ds[0].f).values
    assert np.max(np.abs(got - want)) < 1e-12
    stack = _stack_for(h, 0, fn)
    err = ad.grad_check(lambda: _sample_loss(stack, ds[0], 2), wvars, seed=10)
    assert err < 1e-4


def quick_cfg(**kw):
    base = dict(samples=12, max_steps=2, batch_size=6, epochs=25, seed=42)
    base.update(kw)
    return TrainConfig(**base)


def kernels_equal(a, b):
    return (all(np.array_equal(x.weights, y.weights)
                for x, y in zip(a.layers, b.layers))
            and ((a.skip is None) == (b.skip is None))
            and (a.skip is None
                 or np.array_equal(a.skip.weights, b.skip.weights)))


def test_train_level_decreases_loss_and_is_deterministic(a_rot7):
    h = build_hierarchy(a_rot7, 2)
    equip_conv_init(h)
    sm_a, rec_a = train_level(h, 0, quick_cfg())
    assert rec_a.final < rec_a.initial
    assert len(rec_a.epochs) == 25
    sm_b, rec_b = train_level(h, 0, quick_cfg())
    assert kernels_equal(sm_a, sm_b)
    assert rec_a.epochs == rec_b.epochs


def test_zero_epochs_returns_initialization(a_rot7):
    h = build_hierarchy(a_rot7, 2)
    equip_conv_init(h)
    sm, rec = train_level(h, 0, quick_cfg(epochs=0))
    assert kernels_equal(sm, conv_smoother(a_rot7, "full"))
    assert rec.epochs == []
    assert np.isnan(rec.initial) and np.isnan(rec.final)


def test_train_adaptive_single_stage_matches_train_level(a_rot7):
    h = build_hierarchy(a_rot7, 2)
    equip_conv_init(h)
    sm, _ = train_level(h, 0, quick_cfg())
    hier, recs = train_adaptive(a_rot7, 2, quick_cfg())
    assert len(recs) == 1
    assert kernels_equal(hier.levels[0].smoother, sm)


def test_train_adaptive_trains_coarse_then_fine():
    A = ProblemSpec("rotated", 15, angle=np.pi / 12).assemble()
    cfg = quick_cfg(epochs=4, samples=8, batch_size=4)
    hier, recs = train_adaptive(A, 3, cfg)
    assert len(recs) == 2
    for lev in hier.levels[:-1]:
        assert lev.smoother is not None
    assert hier.levels[0].smoother.spec.same_lattice(A.spec)


def test_train_independent_decreases_loss(a_rot7):
    sm, rec = train_independent(a_rot7, quick_cfg())
    assert rec.final < rec.initial


def test_frozen_coarse_levels_untouched():
    """Training the finest level must not move coarser smoothers."""
    A = ProblemSpec("rotated", 15, angle=np.pi / 12).assemble()
    h = build_hierarchy(A, 3)
    equip_conv_init(h)
    before = [k.weights.copy() for k in h.levels[1].smoother.layers]
    train_level(h, 0, quick_cfg(epochs=3, samples=6, batch_size=3))
    after = [k.weights for k in h.levels[1].smoother.layers]
    assert all(np.array_equal(a, b) for a, b in zip(before, after))


def test_probe_residual_chain_is_transposed_prolongation():
    A = ProblemSpec("rotated", 15).assemble()
    h = build_hierarchy(A, 3)
    equip_classical(h, "jacobi")
    chain = probe_residual_chain(h, 2, np.random.default_rng(1))
    assert len(chain) == 2
    tp = h.levels[0].transfer
    P = materialize(lambda v: prolong(tp, v), tp.coarse, tp.fine)
    want = P.T @ to_active(chain[0])
    assert np.max(np.abs(want - to_active(chain[1]))) < 1e-13


def test_retrain_with_injection_runs_and_keeps_contract(a_rot7):
    cfg = quick_cfg(epochs=3, samples=6, batch_size=3)
    hier, _ = train_adaptive(a_rot7, 2, cfg)
    hier2, recs = retrain_with_injection(hier, cfg, k_probe=2, probes=2)
    assert hier2 is hier
    assert len(recs) == 1
    assert np.isfinite(recs[0].final)


def test_train_mixture_shares_kernels():
    ops = [ProblemSpec("rotated", 7, angle=th, anisotropy=100.0).assemble()
           for th in (0.0, np.pi / 4)]
    cfg = quick_cfg(epochs=3, samples=6, batch_size=3)
    hiers, recs = train_mixture(ops, 2, cfg)
    assert len(hiers) == 2
    s0 = hiers[0].levels[0].smoother
    s1 = hiers[1].levels[0].smoother
    assert all(a is b for a, b in zip(s0.layers, s1.layers))
    assert s0.skip is s1.skip
    # per-operator gains differ because the diagonals differ
    assert s0.gain != s1.gain
