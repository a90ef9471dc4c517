"""Training procedures for the convolutional smoothers.

Three strategies: independent per-level relaxation training, adaptive
coarse-to-fine training of a whole hierarchy (each stage freezes every
coarser smoother), and residual-injection retraining that augments the
datasets with the error components the current solver fails to reduce.
The per-point inference nets for variable coefficients train with the same
staged loss.

The loss for a sample (u0, f, u*) drawn for level l is the 2-norm error
after k solver iterations started at u0, with k sampled uniformly from
{1..b} per sample per epoch so the smoother has to help at every stage of
a solve, not only asymptotically.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ContractError, TrainingError
from .grid import ConvKernel, GridFunction, GridSpec, StencilField, \
    apply_stencil, zeros
from .hierarchy import MultigridHierarchy, build_hierarchy, equip_conv_init, \
    v_cycle
from .problems import TrainingSample, make_dataset
from .smoothers import ConvSmoother, InferredSmoother, JacobiSmoother, \
    KernelInferenceNet, build_feature_map, conv_smoother, infer_kernels
from .transfer import restrict


@dataclass
class TrainConfig:
    samples: int = 50          # dataset size per level
    max_steps: int = 4         # k is drawn from U{1..max_steps}
    batch_size: int = 10
    learning_rate: float = 1e-3
    epochs: int = 500
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.max_steps < 1:
            raise ConfigError("max_steps must be at least 1")
        if not 1 <= self.batch_size <= self.samples:
            raise ConfigError("batch size must lie in [1, samples]")
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if self.learning_rate <= 0.0:
            raise ConfigError("learning rate must be positive")


@dataclass
class LossRecord:
    level: int
    epochs: list[float] = field(default_factory=list)  # mean loss per epoch

    @property
    def initial(self) -> float:
        return self.epochs[0] if self.epochs else math.nan

    @property
    def final(self) -> float:
        return self.epochs[-1] if self.epochs else math.nan


class AdamState:
    def __init__(self, params: list[ad.Var], cfg: TrainConfig):
        self.params = params
        self.cfg = cfg
        self.m = [np.zeros_like(p.value) for p in params]
        self.v = [np.zeros_like(p.value) for p in params]
        self.t = 0

    def step(self):
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1 ** self.t
        bc2 = 1.0 - c.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = np.zeros_like(p.value) if p.grad is None else p.grad
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            p.value -= c.learning_rate * (m / bc1) \
                / (np.sqrt(v / bc2) + c.eps)


# ---------------------------------------------------------------------------
# smoothers as recorded graphs

def conv_chain(layers, skip, activation: str, slope: float, gain: float,
               r_node, spec: GridSpec) -> ad.Var:
    """Graph mirror of ConvSmoother.apply; layers/skip may be Vars or
    constant arrays."""
    v = ad.conv2d(layers[0], r_node, spec)
    for kern in layers[1:]:
        if activation == "leaky":
            v = ad.leaky(v, slope)
        v = ad.conv2d(kern, v, spec)
    if skip is not None:
        v = ad.add(v, ad.conv2d(skip, r_node, spec))
    if gain != 1.0:
        v = ad.scale(v, gain)
    return v


def frozen_graph(sm, spec: GridSpec):
    """A trained (or classical) smoother as a constant graph function."""
    if isinstance(sm, ConvSmoother):
        layers = [k.weights for k in sm.layers]
        skip = None if sm.skip is None else sm.skip.weights
        return lambda r: conv_chain(layers, skip, sm.activation, sm.slope,
                                    sm.gain, r, spec)
    if isinstance(sm, JacobiSmoother):
        d = np.where(spec.mask, sm.diag, 1.0)
        factor = np.where(spec.mask, sm.omega / d, 0.0)
        return lambda r: ad.mul_const(r, factor)
    if isinstance(sm, InferredSmoother):
        def fn(r):
            v = r
            for stage in range(sm.k):
                if stage > 0:
                    v = ad.leaky(v, sm.slope)
                v = ad.pointwise_conv(sm.kernels[:, :, stage], v, spec)
            return v
        return fn
    raise ConfigError(
        f"no differentiable form for {type(sm).__name__}")


@dataclass
class _Stack:
    """Levels l..L of a hierarchy with graph smoothers bound per level."""
    operators: list[StencilField]
    transfers: list
    smooth_fns: list
    coarse_lu: np.ndarray
    coarse_perm: np.ndarray
    coarse_spec: GridSpec


def _stack_for(hier: MultigridHierarchy, level: int, smooth_fn) -> _Stack:
    if not 0 <= level < hier.depth - 1:
        raise ConfigError(f"no trainable smoother at level {level}")
    ops, tps, fns = [], [], []
    for l in range(level, hier.depth - 1):
        lev = hier.levels[l]
        ops.append(lev.operator)
        tps.append(lev.transfer)
        if l == level:
            fns.append(smooth_fn)
        else:
            if lev.smoother is None:
                raise ConfigError(
                    f"level {l} is untrained; train coarser levels first")
            fns.append(frozen_graph(lev.smoother, lev.spec))
    return _Stack(ops, tps, fns, hier.coarse_lu, hier.coarse_perm,
                  hier.levels[-1].spec)


def _psi(stack: _Stack, i: int, r_node) -> ad.Var:
    """Correction operator of the training recurrence: pre-smooth, coarse
    solve of the smoothed residual, prolongated correction, post-smooth."""
    if i == len(stack.operators):
        return ad.coarse_solve_const(stack.coarse_lu, stack.coarse_perm,
                                     stack.coarse_spec, r_node)
    A, tp, fn = stack.operators[i], stack.transfers[i], stack.smooth_fns[i]
    h1 = fn(r_node)
    r_c = ad.do_restrict(tp, ad.sub(r_node, ad.stencil_apply(A, h1)))
    t = ad.add(h1, ad.do_prolong(tp, _psi(stack, i + 1, r_c)))
    return ad.add(t, fn(ad.sub(r_node, ad.stencil_apply(A, t))))


def _sample_loss(stack: _Stack, sample: TrainingSample, k: int) -> ad.Var:
    A = stack.operators[0]
    phi = ad.Var(sample.u0.values)
    f = sample.f.values
    for _ in range(k):
        r = ad.sub(f, ad.stencil_apply(A, phi))
        phi = ad.add(phi, _psi(stack, 0, r))
    return ad.norm2(ad.sub(phi, sample.u_star.values))


def forward_loss(hier: MultigridHierarchy, level: int, smooth_fn,
                 sample: TrainingSample, k: int) -> ad.Var:
    """Loss of one sample after k solver iterations, with smooth_fn bound at
    `level` and the hierarchy's own smoothers frozen below it."""
    if k < 0:
        raise ContractError("negative iteration count")
    return _sample_loss(_stack_for(hier, level, smooth_fn), sample, k)


# ---------------------------------------------------------------------------
# trainable parameter bindings

def _trainable_conv(sm: ConvSmoother):
    # copies: the optimizer updates Var values in place
    layer_vars = [ad.Var(k.weights.copy()) for k in sm.layers]
    skip_var = None if sm.skip is None else ad.Var(sm.skip.weights.copy())
    params = list(layer_vars) + ([] if skip_var is None else [skip_var])

    def fn(r_node):
        return conv_chain(layer_vars, skip_var, sm.activation, sm.slope,
                          sm.gain, r_node, sm.spec)

    def realize() -> ConvSmoother:
        layers = [ConvKernel(v.value.copy()) for v in layer_vars]
        skip = None if skip_var is None else ConvKernel(skip_var.value.copy())
        return ConvSmoother(sm.spec, sm.form, layers, skip, sm.activation,
                            sm.slope, sm.gain)
    return params, fn, realize


def _frozen_checksum(hier: MultigridHierarchy, level: int) -> int:
    crc = 0
    for lev in hier.levels[level + 1:-1]:
        sm = lev.smoother
        if isinstance(sm, ConvSmoother):
            for k in lev.smoother.layers:
                crc = zlib.crc32(k.weights.tobytes(), crc)
            if sm.skip is not None:
                crc = zlib.crc32(sm.skip.weights.tobytes(), crc)
    return crc


def _run_epochs(params: list[ad.Var], loss_of, dataset: list[TrainingSample],
                cfg: TrainConfig, rng: np.random.Generator,
                record: LossRecord):
    """The shared optimization loop: for every epoch, shuffle, draw one k
    per sample, and take one Adam step per batch."""
    adam = AdamState(params, cfg)
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(dataset))
        ks = rng.integers(1, cfg.max_steps + 1, size=len(dataset))
        batch_means = []
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            ad.zero_grads(params)
            loss = ad.mean_of(
                [loss_of(dataset[i], int(ks[i])) for i in idx])
            val = float(loss.value)
            if not np.isfinite(val):
                raise TrainingError(
                    f"non-finite loss in epoch {epoch}", epoch=epoch)
            ad.backward(loss)
            adam.step()
            batch_means.append(val)
        record.epochs.append(float(np.mean(batch_means)))


def _level_seed(cfg: TrainConfig, level: int, salt: int) -> list[int]:
    return [cfg.seed, level, salt]


def train_level(hier: MultigridHierarchy, level: int, cfg: TrainConfig,
                dataset: list[TrainingSample] | None = None
                ) -> tuple[ConvSmoother, LossRecord]:
    """Optimize the level's smoother against the solver loss, everything
    coarser frozen.  Returns the trained smoother without installing it."""
    lev = hier.levels[level]
    if level >= hier.depth - 1:
        raise ConfigError("the coarsest level has no smoother to train")
    if not isinstance(lev.smoother, ConvSmoother):
        raise ConfigError(f"level {level} holds no trainable smoother")
    if dataset is None:
        dataset = make_dataset(lev.operator, cfg.samples,
                               seed=_level_seed(cfg, level, 1))
    params, fn, realize = _trainable_conv(lev.smoother)
    stack = _stack_for(hier, level, fn)
    before = _frozen_checksum(hier, level)
    record = LossRecord(level)
    rng = np.random.default_rng(_level_seed(cfg, level, 2))
    _run_epochs(params, lambda s, k: _sample_loss(stack, s, k),
                dataset, cfg, rng, record)
    if _frozen_checksum(hier, level) != before:
        raise ContractError("frozen coarser smoothers were modified")
    return realize(), record


def train_adaptive(A: StencilField, levels: int, cfg: TrainConfig,
                   scheme: str = "full", omega: float = 2.0 / 3.0,
                   activation: str = "linear"
                   ) -> tuple[MultigridHierarchy, list[LossRecord]]:
    """Coarse-to-fine training of a fresh hierarchy: train the deepest
    smoother first against the exact coarsest solve, then walk up with all
    coarser levels frozen."""
    hier = build_hierarchy(A, levels, scheme)
    equip_conv_init(hier, omega, activation)
    records = []
    for level in range(hier.depth - 2, -1, -1):
        sm, rec = train_level(hier, level, cfg)
        hier.levels[level].smoother = sm
        records.append(rec)
    return hier, records


def train_independent(A: StencilField, cfg: TrainConfig, form: str = "full",
                      omega: float = 2.0 / 3.0, activation: str = "linear"
                      ) -> tuple[ConvSmoother, LossRecord]:
    """Relaxation-only baseline: same loss, but the iteration is plain
    u <- u + H(f - Au) with no coarse-grid term."""
    params, fn, realize = _trainable_conv(
        conv_smoother(A, form, omega, activation))

    def loss_of(sample: TrainingSample, k: int) -> ad.Var:
        phi = ad.Var(sample.u0.values)
        for _ in range(k):
            r = ad.sub(sample.f.values, ad.stencil_apply(A, phi))
            phi = ad.add(phi, fn(r))
        return ad.norm2(ad.sub(phi, sample.u_star.values))

    dataset = make_dataset(A, cfg.samples, seed=_level_seed(cfg, 0, 1))
    record = LossRecord(0)
    rng = np.random.default_rng(_level_seed(cfg, 0, 2))
    _run_epochs(params, loss_of, dataset, cfg, rng, record)
    return realize(), record


def train_mixture(operators: list[StencilField], levels: int,
                  cfg: TrainConfig, scheme: str = "full",
                  omega: float = 2.0 / 3.0, activation: str = "linear"
                  ) -> tuple[list[MultigridHierarchy], list[LossRecord]]:
    """One set of kernels per level shared across several operators (a range
    of rotation angles, say), trained coarse-to-fine on the union of their
    datasets.  Each operator keeps its own diagonal gain.  Returns one
    equipped hierarchy per operator plus one loss record per level."""
    if not operators:
        raise ConfigError("mixture training needs at least one operator")
    hiers = [build_hierarchy(A, levels, scheme) for A in operators]
    for h in hiers:
        equip_conv_init(h, omega, activation)
    records = []
    for level in range(hiers[0].depth - 2, -1, -1):
        base = hiers[0].levels[level].smoother
        layer_vars = [ad.Var(k.weights.copy()) for k in base.layers]
        skip_var = (None if base.skip is None
                    else ad.Var(base.skip.weights.copy()))
        params = list(layer_vars) + ([] if skip_var is None else [skip_var])
        stacks = []
        for h in hiers:
            lev = h.levels[level]

            def fn(r_node, _gain=lev.smoother.gain, _spec=lev.spec):
                return conv_chain(layer_vars, skip_var, activation,
                                  base.slope, _gain, r_node, _spec)

            stacks.append(_stack_for(h, level, fn))
        dataset = []
        for hi, h in enumerate(hiers):
            for s in make_dataset(h.levels[level].operator, cfg.samples,
                                  seed=[cfg.seed, level, 1, hi]):
                dataset.append((hi, s))
        befores = [_frozen_checksum(h, level) for h in hiers]
        record = LossRecord(level)
        rng = np.random.default_rng(_level_seed(cfg, level, 2))
        _run_epochs(params,
                    lambda pair, k: _sample_loss(stacks[pair[0]], pair[1], k),
                    dataset, cfg, rng, record)
        for h, before in zip(hiers, befores):
            if _frozen_checksum(h, level) != before:
                raise ContractError("frozen coarser smoothers were modified")
        layers = [ConvKernel(v.value.copy()) for v in layer_vars]
        skip = (None if skip_var is None
                else ConvKernel(skip_var.value.copy()))
        for h in hiers:
            lev = h.levels[level]
            lev.smoother = ConvSmoother(lev.spec, base.form, list(layers),
                                        skip, activation, base.slope,
                                        lev.smoother.gain)
        records.append(record)
    return hiers, records


# ---------------------------------------------------------------------------
# residual injection

def probe_residual_chain(hier: MultigridHierarchy, k_probe: int,
                         rng: np.random.Generator) -> list[GridFunction]:
    """Solve Au = 0 from a random start for k_probe cycles; the surviving
    residual, carried down by the transposed prolongation, is exactly the
    error content the trained solver leaves behind."""
    spec = hier.finest.spec
    v = rng.standard_normal((spec.rows, spec.cols))
    v[~spec.mask] = 0.0
    u = GridFunction(spec, v / float(np.linalg.norm(v)))
    f = zeros(spec)
    for _ in range(k_probe):
        u = v_cycle(hier, 0, f, u)
    r = -apply_stencil(hier.finest.operator, u)
    chain = [r]
    for lev in hier.levels[:-2]:
        r = 2.0 * restrict(lev.transfer, r)   # transposed prolongation
        chain.append(r)
    return chain


def retrain_with_injection(hier: MultigridHierarchy, cfg: TrainConfig,
                           k_probe: int, probes: int = 10
                           ) -> tuple[MultigridHierarchy, list[LossRecord]]:
    """Augment every level's dataset with probe residuals (right-hand sides
    the solver currently leaves behind, target zero) and continue training
    from the existing weights, coarse to fine again."""
    if k_probe < 1:
        raise ConfigError("probe iteration count must be at least 1")
    rng = np.random.default_rng([cfg.seed, 3])
    chains = [probe_residual_chain(hier, k_probe, rng)
              for _ in range(probes)]
    records = []
    for level in range(hier.depth - 2, -1, -1):
        lev = hier.levels[level]
        dataset = make_dataset(lev.operator, cfg.samples,
                               seed=_level_seed(cfg, level, 1))
        for chain in chains:
            r = chain[level]
            z = GridFunction(lev.spec, np.zeros((lev.spec.rows,
                                                 lev.spec.cols)))
            v = rng.standard_normal((lev.spec.rows, lev.spec.cols))
            v[~lev.spec.mask] = 0.0
            u0 = GridFunction(lev.spec, v / float(np.linalg.norm(v)))
            dataset.append(TrainingSample(u0, r, z, manufactured=False))
        sm, rec = train_level(hier, level, cfg, dataset=dataset)
        lev.smoother = sm
        records.append(rec)
    return hier, records


# ---------------------------------------------------------------------------
# per-point inference nets

def _net_graph(net: KernelInferenceNet, weight_vars: list[ad.Var],
               A: StencilField):
    """Kernel-field graph for one operator: normalized features through the
    net, output de-normalized by the local diagonal."""
    feats = build_feature_map(A, net.variant)
    rows, cols = A.spec.rows, A.spec.cols
    d = A.center().copy()
    d[~A.spec.mask] = 1.0
    flat = feats.reshape(rows * cols, *feats.shape[2:])
    scale = d.reshape(-1, *([1] * (flat.ndim - 1)))
    flat = flat / scale
    inv_d = (1.0 / d).reshape(-1, 1)

    def kernels() -> list[ad.Var]:
        if net.variant == "fc":
            h = ad.leaky(ad.matmul(flat, weight_vars[0]), net.slope)
            for w in weight_vars[1:-1]:
                h = ad.leaky(ad.matmul(h, w), net.slope)
            out = ad.matmul(h, weight_vars[-1])
        else:
            h = flat
            acts = None
            for w in weight_vars[:-1]:
                acts = ad.leaky(ad.conv_batch(w, h), net.slope)
                h = ad.sum_axis(acts, 1)
            out = ad.matmul(ad.reshape(acts, (rows * cols, -1)),
                            weight_vars[-1])
        out = ad.mul_const(out, inv_d)
        return [ad.reshape(ad.slice_cols(out, 9 * s, 9 * (s + 1)),
                           (rows, cols, 3, 3)) for s in range(net.k)]

    def smooth_fn(r_node):
        stages = kernels()
        v = r_node
        for s in range(net.k):
            if s > 0:
                v = ad.leaky(v, net.slope)
            v = ad.pointwise_conv(stages[s], v, A.spec)
        return v
    return smooth_fn


def train_inference_net(A: StencilField, variant: str, levels: int,
                        cfg: TrainConfig, k: int = 1, seed_net: int = 0
                        ) -> tuple[KernelInferenceNet, MultigridHierarchy,
                                   list[LossRecord]]:
    """Stage the solver loss over a hierarchy of the variable-coefficient
    operator, optimizing one shared net throughout.  During the stage for
    level l the coarser corrections use kernels inferred from the net as it
    stood after their own stage, held constant."""
    from .smoothers import inference_net
    net = inference_net(variant, k=k, seed=seed_net)
    hier = build_hierarchy(A, levels, scheme="full")
    weight_vars = [ad.Var(w.copy()) for w in net.weights]
    records = []
    for level in range(hier.depth - 2, -1, -1):
        lev = hier.levels[level]
        smooth_fn = _net_graph(net, weight_vars, lev.operator)
        stack = _stack_for(hier, level, smooth_fn)
        dataset = make_dataset(lev.operator, cfg.samples,
                               seed=_level_seed(cfg, level, 1))
        record = LossRecord(level)
        rng = np.random.default_rng(_level_seed(cfg, level, 2))
        _run_epochs(weight_vars, lambda s, kk: _sample_loss(stack, s, kk),
                    dataset, cfg, rng, record)
        records.append(record)
        # freeze this stage's kernels for the finer stages
        net.weights = [v.value.copy() for v in weight_vars]
        net.bump()
        lev.smoother = infer_kernels(net, lev.operator)
    net.weights = [v.value.copy() for v in weight_vars]
    net.bump()
    for lev in hier.levels[:-1]:
        lev.smoother = infer_kernels(net, lev.operator)
    return net, hier, records
