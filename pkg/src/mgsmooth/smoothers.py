"""Smoothers: weighted Jacobi, lexicographic Gauss-Seidel, trainable
convolutional smoothers, and per-point kernel inference for
variable-coefficient operators.

Every smoother maps a residual to a correction (the action of an
approximate inverse).  Constructors bind a smoother to one operator; apply
rejects grid functions from any other spec.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError, UnsupportedOperationError
from .grid import ConvKernel, GridFunction, GridSpec, StencilField, \
    compose_kernels, convolve, delta_kernel, pad_kernel, shifted

LEAKY_SLOPE = 0.01


def _leaky(values: np.ndarray, slope: float) -> np.ndarray:
    return np.where(values > 0.0, values, slope * values)


@dataclass
class JacobiSmoother:
    spec: GridSpec
    diag: np.ndarray
    omega: float = 2.0 / 3.0

    def apply(self, r: GridFunction) -> GridFunction:
        if r.spec != self.spec:
            raise ContractError("jacobi: residual on a different spec")
        out = np.zeros_like(r.values)
        m = self.spec.mask
        out[m] = self.omega * r.values[m] / self.diag[m]
        return GridFunction(self.spec, out)


def jacobi(A: StencilField, omega: float = 2.0 / 3.0) -> JacobiSmoother:
    if not 0.0 < omega < 2.0:
        raise ConfigError(f"jacobi weight out of range: {omega}")
    d = A.center()
    if np.any(d[A.spec.mask] == 0.0):
        raise ConfigError("jacobi: operator has zero diagonal entries")
    return JacobiSmoother(A.spec, d, omega)


@dataclass
class GaussSeidelSmoother:
    operator: StencilField

    @property
    def spec(self) -> GridSpec:
        return self.operator.spec

    def apply(self, r: GridFunction) -> GridFunction:
        """One forward sweep in row-major order, i.e. the exact action of
        the inverse of the lower triangle (diagonal included) of the
        operator in that ordering."""
        if r.spec != self.spec:
            raise ContractError("gauss-seidel: residual on a different spec")
        A = self.operator
        rr = A.reach
        data = A.data
        mask = self.spec.mask
        rows, cols = self.spec.rows, self.spec.cols
        u = np.zeros((rows, cols))
        rv = r.values
        for i in range(rows):
            for j in range(cols):
                if not mask[i, j]:
                    continue
                acc = rv[i, j]
                for di in range(-rr, rr + 1):
                    ii = i + di
                    if ii < 0 or ii >= rows:
                        continue
                    for dj in range(-rr, rr + 1):
                        jj = j + dj
                        if di == 0 and dj == 0:
                            continue
                        if 0 <= jj < cols and mask[ii, jj]:
                            acc -= data[i, j, di + rr, dj + rr] * u[ii, jj]
                u[i, j] = acc / data[i, j, rr, rr]
        return GridFunction(self.spec, u)


def gauss_seidel(A: StencilField) -> GaussSeidelSmoother:
    if np.any(A.center()[A.spec.mask] == 0.0):
        raise ConfigError("gauss-seidel: operator has zero diagonal entries")
    return GaussSeidelSmoother(A)


def representative_diagonal(A: StencilField) -> float:
    """Median active center entry; the scalar stand-in for D in shared
    kernels, exact for constant-coefficient operators."""
    return float(np.median(A.center()[A.spec.mask]))


@dataclass
class ConvSmoother:
    """Stacked shared-kernel smoother.

    form "full": five chained kernels plus a parallel skip kernel,
    activation between the chained layers.  form "rb": two chained kernels,
    no skip.  gain rescales the output when a smoother trained on one grid
    is installed on a level with a different operator scale.
    """
    spec: GridSpec
    form: str                      # "full" | "rb"
    layers: list[ConvKernel]
    skip: ConvKernel | None
    activation: str = "linear"     # "linear" | "leaky"
    slope: float = LEAKY_SLOPE
    gain: float = 1.0

    def __post_init__(self):
        if self.form not in ("full", "rb"):
            raise ConfigError(f"unknown smoother form {self.form!r}")
        if self.form == "full" and (len(self.layers) != 5 or self.skip is None):
            raise ConfigError("full form takes five layers and a skip kernel")
        if self.form == "rb" and (len(self.layers) != 2 or self.skip is not None):
            raise ConfigError("rb form takes two layers and no skip")
        if self.activation not in ("linear", "leaky"):
            raise ConfigError(f"unknown activation {self.activation!r}")

    def apply(self, r: GridFunction) -> GridFunction:
        if r.spec != self.spec:
            raise ContractError("conv smoother: residual on a different spec")
        v = convolve(self.layers[0], r)
        for kern in self.layers[1:]:
            if self.activation == "leaky":
                v = GridFunction(v.spec, _leaky(v.values, self.slope))
            v = convolve(kern, v)
        out = v.values
        if self.skip is not None:
            out = out + convolve(self.skip, r).values
        return GridFunction(self.spec, self.gain * out)

    def is_linear(self) -> bool:
        return self.activation == "linear"


def conv_smoother(A: StencilField, form: str, omega: float = 2.0 / 3.0,
                  activation: str = "linear") -> ConvSmoother:
    """Initialization whose action reproduces weighted Jacobi exactly.

    The inverse-diagonal scale lives in the gain, not the kernels: weights
    stay O(1) whatever the operator scale, so one learning rate works for
    every grid spacing, and retargeting only touches the gain."""
    jk = delta_kernel(3, omega)
    gain = 1.0 / representative_diagonal(A)
    if form == "full":
        layers = [ConvKernel(np.zeros((3, 3))) for _ in range(5)]
        return ConvSmoother(A.spec, form, layers, jk, activation, gain=gain)
    if form == "rb":
        layers = [delta_kernel(3), jk]
        return ConvSmoother(A.spec, form, layers, None, activation, gain=gain)
    raise ConfigError(f"unknown smoother form {form!r}")


def effective_kernel(s: ConvSmoother) -> ConvKernel:
    """Collapse a linear smoother to the single kernel it is equivalent to."""
    if s.activation != "linear":
        raise UnsupportedOperationError(
            "effective kernel undefined for nonlinear activation")
    acc = s.layers[0]
    for kern in s.layers[1:]:
        acc = compose_kernels(kern, acc)
    w = acc.weights
    if s.skip is not None:
        w = w + pad_kernel(s.skip, acc.size).weights
    return ConvKernel(s.gain * w)


# ---------------------------------------------------------------------------
# per-point kernel inference for variable coefficients

def build_feature_map(A: StencilField, variant: str) -> np.ndarray:
    """Stencil data as network input.

    "fc": (rows, cols, 81), the nine neighboring stencil tables flattened
    row-major, neighbor blocks ordered row-major over the offset; neighbors
    outside the grid or inactive contribute zero blocks.
    "conv": (rows, cols, 3, 3), the point's own table as a one-channel
    image.  Summing raw entry channels would lose everything (operator rows
    sum to zero), so channel mixing happens only after activations.
    """
    if A.k != 3:
        raise ContractError("feature map defined for 3x3 stencils only")
    rows, cols = A.spec.rows, A.spec.cols
    tables = A.data.reshape(rows, cols, 9).copy()
    tables[~A.spec.mask] = 0.0
    if variant == "conv":
        return tables.reshape(rows, cols, 3, 3)
    if variant == "fc":
        blocks = np.zeros((rows, cols, 3, 3, 9))
        for oi in (-1, 0, 1):
            for oj in (-1, 0, 1):
                for e in range(9):
                    blocks[:, :, oi + 1, oj + 1, e] = shifted(
                        tables[:, :, e], oi, oj)
        blocks[~A.spec.mask] = 0.0
        return blocks.reshape(rows, cols, 81)
    raise ConfigError(f"unknown feature variant {variant!r}")


_FC_SIZES = (81, 40, 40, 40)
_CONV_CHANNELS = (7, 5, 3)


@dataclass
class KernelInferenceNet:
    """Shared network mapping a point's stencil neighborhood to k smoothing
    kernels for that point.  No biases anywhere, so the map commutes with
    operator rescaling once inputs and outputs are diagonal-normalized."""
    variant: str               # "fc" | "conv"
    weights: list[np.ndarray]
    k: int = 1
    slope: float = LEAKY_SLOPE
    version: int = 0
    _memo: dict = field(default_factory=dict, repr=False)

    def parameter_count(self) -> int:
        return int(sum(w.size for w in self.weights))

    def bump(self):
        """Invalidate cached inferences after a weight update."""
        self.version += 1
        self._memo.clear()


def inference_net(variant: str, k: int = 1, seed: int = 0) -> KernelInferenceNet:
    """He-scaled hidden layers, zero final layer (fresh nets infer the zero
    smoother; training moves them off it)."""
    rng = np.random.default_rng(seed)
    ws: list[np.ndarray] = []
    if variant == "fc":
        for a, b in zip(_FC_SIZES[:-1], _FC_SIZES[1:]):
            ws.append(rng.standard_normal((a, b)) * math.sqrt(2.0 / a))
        ws.append(np.zeros((_FC_SIZES[-1], 9 * k)))
    elif variant == "conv":
        for c in _CONV_CHANNELS:
            ws.append(rng.standard_normal((c, 3, 3)) * math.sqrt(2.0 / 9.0))
        ws.append(np.zeros((9 * _CONV_CHANNELS[-1], 9 * k)))
    else:
        raise ConfigError(f"unknown net variant {variant!r}")
    return KernelInferenceNet(variant, ws, k)


def _conv3x3_same(kernels: np.ndarray, img: np.ndarray) -> np.ndarray:
    """Correlate each 3x3 kernel with a batch of 3x3 images, zero padded.
    kernels (c, 3, 3), img (n, 3, 3) -> (n, c, 3, 3)."""
    n = img.shape[0]
    out = np.zeros((n, kernels.shape[0], 3, 3))
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            w = kernels[:, di + 1, dj + 1]          # (c,)
            i0, i1 = max(0, -di), min(3, 3 - di)
            j0, j1 = max(0, -dj), min(3, 3 - dj)
            if i0 < i1 and j0 < j1:
                patch = img[:, i0 + di:i1 + di, j0 + dj:j1 + dj]
                out[:, :, i0:i1, j0:j1] += w[None, :, None, None] \
                    * patch[:, None, :, :]
    return out


def net_forward(net: KernelInferenceNet, feats: np.ndarray) -> np.ndarray:
    """Batched forward pass: feats (n, 81) for fc or (n, 3, 3) for conv,
    result (n, k, 3, 3)."""
    if net.variant == "fc":
        h = feats
        for w in net.weights[:-1]:
            h = _leaky(h @ w, net.slope)
        out = h @ net.weights[-1]
    else:
        h = feats
        acts = None
        for w in net.weights[:-1]:
            acts = _leaky(_conv3x3_same(w, h), net.slope)
            h = acts.sum(axis=1)
        out = acts.reshape(acts.shape[0], -1) @ net.weights[-1]
    return out.reshape(-1, net.k, 3, 3)


@dataclass
class InferredSmoother:
    spec: GridSpec
    kernels: np.ndarray        # (rows, cols, k, 3, 3)
    k: int
    slope: float = LEAKY_SLOPE

    def apply(self, r: GridFunction) -> GridFunction:
        return inferred_apply(self, r)


def infer_kernels(net: KernelInferenceNet, A: StencilField) -> InferredSmoother:
    """Run the net once per active point and cache the result per
    (net version, operator)."""
    key = id(A)
    hit = net._memo.get(key)
    if hit is not None and hit[0] is A and hit[1] == net.version:
        return hit[2]
    feats = build_feature_map(A, net.variant)
    rows, cols = A.spec.rows, A.spec.cols
    d = A.center().copy()
    d[~A.spec.mask] = 1.0
    flat = feats.reshape(rows * cols, *feats.shape[2:])
    # normalize by the local diagonal so one net serves all operator scales
    scale = d.reshape(-1, *([1] * (flat.ndim - 1)))
    kern = net_forward(net, flat / scale)
    kern = kern / d.reshape(-1, 1, 1, 1)
    kern = kern.reshape(rows, cols, net.k, 3, 3)
    kern[~A.spec.mask] = 0.0
    sm = InferredSmoother(A.spec, kern, net.k, net.slope)
    net._memo[key] = (A, net.version, sm)
    return sm


def _pointwise_conv(kern: np.ndarray, u: np.ndarray, mask) -> np.ndarray:
    """out(p) = <kern(p), 3x3 neighborhood of u at p>; kern (rows, cols, 3, 3)."""
    out = np.zeros_like(u)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            out += kern[:, :, di + 1, dj + 1] * shifted(u, di, dj)
    out[~mask] = 0.0
    return out


def inferred_apply(s: InferredSmoother, r: GridFunction) -> GridFunction:
    if r.spec != s.spec:
        raise ContractError("inferred smoother: residual on a different spec")
    v = r.values
    for stage in range(s.k):
        if stage > 0:
            v = _leaky(v, s.slope)
        v = _pointwise_conv(s.kernels[:, :, stage], v, s.spec.mask)
    return GridFunction(s.spec, v)


# ---------------------------------------------------------------------------
# model files

FORMAT_VERSION = 1


def _arrays_to_lists(ws):
    return [{"shape": list(w.shape), "data": w.ravel().tolist()} for w in ws]


def _lists_to_arrays(items):
    return [np.array(it["data"]).reshape(it["shape"]) for it in items]


def model_to_dict(model, metadata: dict | None = None) -> dict:
    doc = {"format_version": FORMAT_VERSION, "metadata": metadata or {}}
    if isinstance(model, ConvSmoother):
        doc["kind"] = "conv_smoother"
        doc["form"] = model.form
        doc["activation"] = model.activation
        doc["slope"] = model.slope
        doc["gain"] = model.gain
        doc["layers"] = _arrays_to_lists([k.weights for k in model.layers])
        doc["skip"] = (_arrays_to_lists([model.skip.weights])
                       if model.skip is not None else None)
        doc["spec"] = {"rows": model.spec.rows, "cols": model.spec.cols,
                       "spacing": model.spec.spacing}
    elif isinstance(model, KernelInferenceNet):
        doc["kind"] = "inference_net"
        doc["variant"] = model.variant
        doc["k"] = model.k
        doc["slope"] = model.slope
        doc["weights"] = _arrays_to_lists(model.weights)
    else:
        raise ConfigError(f"cannot serialize {type(model).__name__}")
    return doc


def model_from_dict(doc: dict, spec: GridSpec | None = None):
    if doc.get("format_version") != FORMAT_VERSION:
        raise ConfigError(
            f"unsupported model format {doc.get('format_version')!r}")
    kind = doc.get("kind")
    if kind == "conv_smoother":
        if spec is None:
            meta = doc["spec"]
            spec = GridSpec(meta["rows"], meta["cols"], meta["spacing"],
                            np.ones((meta["rows"], meta["cols"]), bool))
        layers = [ConvKernel(w) for w in _lists_to_arrays(doc["layers"])]
        skip = None
        if doc["skip"] is not None:
            skip = ConvKernel(_lists_to_arrays(doc["skip"])[0])
        return ConvSmoother(spec, doc["form"], layers, skip,
                            doc["activation"], doc["slope"], doc["gain"])
    if kind == "inference_net":
        return KernelInferenceNet(doc["variant"],
                                  _lists_to_arrays(doc["weights"]),
                                  doc["k"], doc["slope"])
    raise ConfigError(f"unknown model kind {kind!r}")


def save_model(path, model, metadata: dict | None = None):
    with open(path, "w") as fh:
        json.dump(model_to_dict(model, metadata), fh)


def load_model(path, spec: GridSpec | None = None):
    with open(path) as fh:
        return model_from_dict(json.load(fh), spec)
