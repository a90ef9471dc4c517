"""Smoother closed forms, convolution stacks, inference nets, serialization."""
import numpy as np
import pytest

from mgsmooth.errors import ConfigError, ContractError
from mgsmooth.grid import (GridFunction, full_spec, materialize,
                           materialize_stencil, to_active)
from mgsmooth.problems import ProblemSpec, assemble_rotated_laplacian
from mgsmooth.smoothers import (build_feature_map, conv_smoother,
                                effective_kernel, gauss_seidel, infer_kernels,
                                inference_net, jacobi, load_model,
                                model_from_dict, model_to_dict,
                                representative_diagonal, save_model)


def masked_noise(spec, rng):
    v = rng.standard_normal(spec.mask.shape)
    v[~spec.mask] = 0.0
    return GridFunction(spec, v)


def test_jacobi_closed_form(a_rot7, rng):
    jac = jacobi(a_rot7, 0.8)
    r = masked_noise(a_rot7.spec, rng)
    want = 0.8 * r.values / a_rot7.center()[3, 3]
    want = np.where(a_rot7.spec.mask, want, 0.0)
    assert np.max(np.abs(jac.apply(r).values - want)) < 1e-13


def test_gauss_seidel_is_lower_triangular_solve(a_rot7, rng):
    gs = gauss_seidel(a_rot7)
    Ad = materialize_stencil(a_rot7)
    r = masked_noise(a_rot7.spec, rng)
    want = np.linalg.solve(np.tril(Ad), to_active(r))
    assert np.max(np.abs(to_active(gs.apply(r)) - want)) < 1e-10


def test_representative_diagonal_median(a_rot7):
    d = representative_diagonal(a_rot7)
    cen = a_rot7.center()[a_rot7.spec.mask]
    assert d == pytest.approx(np.median(cen))


def test_conv_smoother_initial_jacobi_equivalence(a_rot7, rng):
    sm = conv_smoother(a_rot7, "full", omega=2.0 / 3.0)
    jac = jacobi(a_rot7, 2.0 / 3.0)
    r = masked_noise(a_rot7.spec, rng)
    assert np.max(np.abs(sm.apply(r).values - jac.apply(r).values)) < 1e-13


def test_conv_smoother_linear(a_rot7, rng):
    sm = conv_smoother(a_rot7, "full")
    a = masked_noise(a_rot7.spec, rng)
    b = masked_noise(a_rot7.spec, rng)
    lhs = sm.apply(GridFunction(a_rot7.spec, 2.0 * a.values - 3.0 * b.values))
    rhs = 2.0 * sm.apply(a) - 3.0 * sm.apply(b)
    assert np.max(np.abs(lhs.values - rhs.values)) < 1e-12


def test_effective_kernel_sizes(a_rot7):
    full = conv_smoother(a_rot7, "full")
    assert effective_kernel(full).size == 11   # five 3x3 layers plus skip
    rb = conv_smoother(a_rot7, "rb")
    assert effective_kernel(rb).size > full.layers[0].weights.shape[0]


def test_effective_kernel_reproduces_action(a_rot7, rng):
    """Away from the boundary the whole linear stack acts as one kernel."""
    A15 = ProblemSpec("rotated", 15, angle=np.pi / 6).assemble()
    sm = conv_smoother(A15, "full")
    for layer in sm.layers:
        layer.weights[:] += rng.standard_normal((3, 3)) * 0.05
    k = effective_kernel(sm)
    r = masked_noise(A15.spec, rng)
    out = sm.apply(r)
    reach = k.size // 2
    acc = np.zeros_like(r.values)
    for di in range(-reach, reach + 1):
        for dj in range(-reach, reach + 1):
            w = k.weights[di + reach, dj + reach]
            if w != 0.0:
                from mgsmooth.grid import shifted
                acc += w * shifted(r.values, di, dj)
    inner = slice(reach, -reach)
    assert np.max(np.abs(out.values[inner, inner] -
                         acc[inner, inner])) < 1e-11


def test_leaky_activation_is_nonlinear(a_rot7, rng):
    sm = conv_smoother(a_rot7, "full", activation="leaky")
    for layer in sm.layers:
        layer.weights[:] += rng.standard_normal((3, 3)) * 0.3
    r = masked_noise(a_rot7.spec, rng)
    lhs = sm.apply(GridFunction(a_rot7.spec, -1.0 * r.values)).values
    rhs = -1.0 * sm.apply(r).values
    assert np.max(np.abs(lhs - rhs)) > 1e-8


def test_unknown_form_rejected(a_rot7):
    with pytest.raises(ConfigError):
        conv_smoother(a_rot7, "spiral")


def test_inference_net_parameter_counts():
    fc = inference_net("fc", k=1, seed=0)
    assert sum(w.size for w in fc.weights) == 6800
    conv = inference_net("conv", k=1, seed=0)
    assert sum(w.size for w in conv.weights) == 378


def test_feature_maps_shapes():
    A = ProblemSpec("variable", 9, kappa=1.0).assemble()
    assert build_feature_map(A, "fc").shape == (9, 9, 81)
    assert build_feature_map(A, "conv").shape == (9, 9, 3, 3)


def perturbed_net(variant, seed):
    net = inference_net(variant, k=1, seed=seed)
    noise = np.random.default_rng(seed + 100)
    for w in net.weights:
        w += noise.standard_normal(w.shape) * 0.05
    net.bump()
    return net


def test_inferred_kernels_constant_for_constant_coefficients():
    """kappa = 0 freezes the diffusion field, so every interior point gets
    the same inferred kernel."""
    A = ProblemSpec("variable", 9, kappa=0.0).assemble()
    for variant in ("fc", "conv"):
        sm = infer_kernels(perturbed_net(variant, 1), A)
        inner = sm.kernels[2:-2, 2:-2]
        assert np.max(np.abs(inner)) > 0.0
        assert np.max(np.abs(inner - inner[0, 0])) < 1e-8


def test_inferred_kernels_scale_invariance():
    """Doubling the operator halves the inferred action: diagonal
    normalization in, diagonal normalization out."""
    from mgsmooth.grid import StencilField
    A = ProblemSpec("variable", 9, kappa=1.0).assemble()
    B = StencilField(A.spec, 2.0 * A.data)
    net = perturbed_net("fc", 2)
    ka = infer_kernels(net, A).kernels
    kb = infer_kernels(net, B).kernels
    assert np.max(np.abs(kb - 0.5 * ka)) < 1e-10


def test_infer_kernels_memoized_until_bump():
    A = ProblemSpec("variable", 9, kappa=1.0).assemble()
    net = perturbed_net("conv", 3)
    first = infer_kernels(net, A)
    assert infer_kernels(net, A) is first
    net.weights[-1] += 0.01
    net.bump()
    assert infer_kernels(net, A) is not first


def test_inferred_smoother_applies_finite_nonzero():
    A = ProblemSpec("variable", 15, kappa=1.0).assemble()
    sm = infer_kernels(perturbed_net("conv", 4), A)
    rng = np.random.default_rng(0)
    r = masked_noise(A.spec, rng)
    out = sm.apply(r)
    assert np.isfinite(out.values).all()
    assert np.abs(out.values).max() > 0.0
    assert np.all(out.values[~A.spec.mask] == 0.0)


def test_model_round_trip_conv(tmp_path, a_rot7, rng):
    sm = conv_smoother(a_rot7, "full")
    for layer in sm.layers:
        layer.weights[:] += rng.standard_normal((3, 3)) * 0.1
    path = tmp_path / "sm.json"
    save_model(path, sm, metadata={"note": "test"})
    back = load_model(path)
    assert back.form == sm.form
    assert back.gain == sm.gain
    assert all(np.array_equal(a.weights, b.weights)
               for a, b in zip(sm.layers, back.layers))
    assert np.array_equal(sm.skip.weights, back.skip.weights)
    r = masked_noise(a_rot7.spec, rng)
    assert np.array_equal(sm.apply(r).values, back.apply(r).values)


def test_model_round_trip_net(tmp_path):
    net = inference_net("conv", k=1, seed=5)
    path = tmp_path / "net.json"
    save_model(path, net)
    back = load_model(path)
    assert back.variant == "conv"
    assert all(np.array_equal(a, b)
               for a, b in zip(net.weights, back.weights))


def test_model_format_version_guard(a_rot7):
    doc = model_to_dict(conv_smoother(a_rot7, "full"))
    doc["format_version"] = 99
    with pytest.raises(ConfigError):
        model_from_dict(doc)
