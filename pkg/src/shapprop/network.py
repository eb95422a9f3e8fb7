"""Miniature feed-forward inference engine.

Tensors are float64 numpy arrays in row-major (channels-last) layout:
``(features,)`` for dense inputs, ``(length, channels)`` for conv1d and
``(height, width, channels)`` for conv2d. Every layer routine works on a
leading batch axis; the single-sample API adds and strips it.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ParseError, ShapeError, UnsupportedLayer

LAYER_KINDS = ("dense", "conv1d", "conv2d", "relu", "maxpool", "avgpool",
               "globalavgpool", "flatten")
PARAMETRIC = ("dense", "conv1d", "conv2d")
POOLS = ("maxpool", "avgpool")

_LAYER_KEYS = {
    "dense": {"kind", "weights", "bias"},
    "conv1d": {"kind", "weights", "bias", "padding", "stride"},
    "conv2d": {"kind", "weights", "bias", "padding", "stride"},
    "relu": {"kind"},
    "maxpool": {"kind", "window", "stride", "padding"},
    "avgpool": {"kind", "window", "stride", "padding"},
    "globalavgpool": {"kind"},
    "flatten": {"kind"},
}
_MODEL_KEYS = {"input_shape", "layers", "output_dim", "baseline"}


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class LayerSpec:
    kind: str
    weights: Optional[np.ndarray] = None
    bias: Optional[np.ndarray] = None
    window: tuple[int, ...] = ()

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise UnsupportedLayer(f"unsupported layer kind {self.kind!r}")
        if self.kind in PARAMETRIC:
            if self.weights is None or self.bias is None:
                raise ShapeError(f"{self.kind} layer needs weights and bias")
            object.__setattr__(self, "weights", _frozen(self.weights))
            object.__setattr__(self, "bias", _frozen(self.bias))
        elif self.weights is not None or self.bias is not None:
            raise ShapeError(f"{self.kind} layer carries no parameters")
        if self.kind in POOLS:
            window = tuple(int(w) for w in np.atleast_1d(self.window))
            if not window or min(window) < 1:
                raise ShapeError(f"invalid pooling window {self.window!r}")
            object.__setattr__(self, "window", window)

    @property
    def is_linear(self) -> bool:
        """True for layers that are affine maps of their input."""
        return self.kind not in ("relu", "maxpool")


def layer_output_shape(layer: LayerSpec, shape: tuple[int, ...]) -> tuple[int, ...]:
    kind = layer.kind
    if kind == "dense":
        w, b = layer.weights, layer.bias
        if w.ndim != 2 or b.ndim != 1 or b.shape[0] != w.shape[0]:
            raise ShapeError(f"dense weights {w.shape} / bias {b.shape} are inconsistent")
        if shape != (w.shape[1],):
            raise ShapeError(f"dense layer expects input ({w.shape[1]},), got {shape}")
        return (w.shape[0],)
    if kind in ("conv1d", "conv2d"):
        nsp = 1 if kind == "conv1d" else 2
        w, b = layer.weights, layer.bias
        if w.ndim != nsp + 2 or b.ndim != 1 or b.shape[0] != w.shape[-1]:
            raise ShapeError(f"{kind} weights {w.shape} / bias {b.shape} are inconsistent")
        if len(shape) != nsp + 1 or shape[-1] != w.shape[-2]:
            raise ShapeError(f"{kind} expects input with {w.shape[-2]} channels "
                             f"and {nsp} spatial axes, got {shape}")
        spatial = tuple(s - k + 1 for s, k in zip(shape[:nsp], w.shape[:nsp]))
        if min(spatial) < 1:
            raise ShapeError(f"{kind} kernel {w.shape[:nsp]} larger than input {shape}")
        return spatial + (w.shape[-1],)
    if kind == "relu":
        return shape
    if kind in POOLS:
        p = len(layer.window)
        if len(shape) not in (p, p + 1):
            raise ShapeError(f"pooling window {layer.window} does not fit input {shape}")
        for s, k in zip(shape, layer.window):
            if s % k:
                raise ShapeError(f"pooling window {layer.window} does not divide {shape}")
        return tuple(s // k for s, k in zip(shape, layer.window)) + shape[p:]
    if kind == "globalavgpool":
        if len(shape) < 2:
            raise ShapeError(f"globalavgpool needs spatial and channel axes, got {shape}")
        return (shape[-1],)
    # flatten
    return (int(np.prod(shape)),)


@dataclass(frozen=True, eq=False)
class Model:
    input_shape: tuple[int, ...]
    layers: tuple[LayerSpec, ...]
    baseline: Optional[np.ndarray] = None
    shapes: tuple[tuple[int, ...], ...] = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.input_shape or min(self.input_shape) < 1:
            raise ShapeError(f"invalid input shape {self.input_shape}")
        if not self.layers:
            raise ShapeError("a model needs at least one layer")
        shapes = [self.input_shape]
        for layer in self.layers:
            shapes.append(layer_output_shape(layer, shapes[-1]))
        if len(shapes[-1]) != 1:
            raise ShapeError(f"model output must be a vector, got shape {shapes[-1]}")
        object.__setattr__(self, "shapes", tuple(shapes))
        if self.baseline is not None:
            base = _frozen(self.baseline)
            if base.size == 1:
                base = _frozen(np.full(self.input_shape, float(base.reshape(-1)[0])))
            if base.shape != self.input_shape:
                raise ShapeError(f"baseline shape {base.shape} != input shape {self.input_shape}")
            object.__setattr__(self, "baseline", base)

    @property
    def output_dim(self) -> int:
        return self.shapes[-1][0]

    @property
    def n_features(self) -> int:
        return int(np.prod(self.input_shape))

    def baseline_or_zero(self) -> np.ndarray:
        if self.baseline is None:
            return np.zeros(self.input_shape)
        return np.array(self.baseline)


# ---------------------------------------------------------------------------
# batched layer kernels


def _conv(X, w, bias=None):
    """Valid, stride-1 convolution of X (B, *spatial, cin) with w (*k, cin, cout)."""
    ksz = w.shape[:-2]
    out_sp = tuple(s - k + 1 for s, k in zip(X.shape[1:-1], ksz))
    out = np.zeros((X.shape[0],) + out_sp + (w.shape[-1],))
    for offset in np.ndindex(*ksz):
        sl = tuple(slice(o, o + n) for o, n in zip(offset, out_sp))
        out += X[(slice(None),) + sl] @ w[offset]
    if bias is not None:
        out += bias
    return out


def _conv_backward(G, w, in_shape):
    ksz = w.shape[:-2]
    out_sp = G.shape[1:-1]
    dX = np.zeros((G.shape[0],) + tuple(in_shape))
    for offset in np.ndindex(*ksz):
        sl = tuple(slice(o, o + n) for o, n in zip(offset, out_sp))
        dX[(slice(None),) + sl] += G @ w[offset].T
    return dX


def pool_windows(X, window):
    """Rearrange X (B, *spatial[, C]) to (B, *pooled[, C], prod(window)).

    The last axis enumerates each window's units in row-major order.
    """
    B = X.shape[0]
    p = len(window)
    spatial = X.shape[1:1 + p]
    rest = X.shape[1 + p:]
    split = []
    for s, k in zip(spatial, window):
        split += [s // k, k]
    Y = X.reshape((B,) + tuple(split) + rest)
    outer = [1 + 2 * j for j in range(p)]
    inner = [2 + 2 * j for j in range(p)]
    tail = list(range(1 + 2 * p, Y.ndim))
    Y = Y.transpose([0] + outer + tail + inner)
    return Y.reshape(Y.shape[:1 + p + len(rest)] + (-1,))


def unpool_windows(Y, window, in_shape):
    """Inverse of `pool_windows`."""
    B = Y.shape[0]
    p = len(window)
    pooled = Y.shape[1:1 + p]
    rest = Y.shape[1 + p:-1]
    Z = Y.reshape((B,) + pooled + rest + tuple(window))
    # axes: 0, pooled(1..p), rest, window
    nr = len(rest)
    perm = [0]
    for j in range(p):
        perm += [1 + j, 1 + p + nr + j]
    perm += list(range(1 + p, 1 + p + nr))
    return Z.transpose(perm).reshape((B,) + tuple(in_shape))


def apply_layer(layer: LayerSpec, X: np.ndarray) -> np.ndarray:
    kind = layer.kind
    if kind == "dense":
        return X @ layer.weights.T + layer.bias
    if kind in ("conv1d", "conv2d"):
        return _conv(X, layer.weights, layer.bias)
    if kind == "relu":
        return np.maximum(X, 0.0)
    if kind == "maxpool":
        return pool_windows(X, layer.window).max(axis=-1)
    if kind == "avgpool":
        return pool_windows(X, layer.window).mean(axis=-1)
    if kind == "globalavgpool":
        return X.mean(axis=tuple(range(1, X.ndim - 1)))
    return X.reshape(X.shape[0], -1)


def _layer_backward(layer: LayerSpec, X: np.ndarray, G: np.ndarray) -> np.ndarray:
    """Vector-Jacobian product of one layer at input X."""
    kind = layer.kind
    in_shape = X.shape[1:]
    if kind == "dense":
        return G @ layer.weights
    if kind in ("conv1d", "conv2d"):
        return _conv_backward(G, layer.weights, in_shape)
    if kind == "relu":
        # subgradient 0 at the kink
        return G * (X > 0)
    if kind == "maxpool":
        win = pool_windows(X, layer.window)
        # argmax returns the first (lowest row-major) index on ties
        hit = np.zeros_like(win)
        np.put_along_axis(hit, win.argmax(axis=-1)[..., None], 1.0, axis=-1)
        return unpool_windows(hit * G[..., None], layer.window, in_shape)
    if kind == "avgpool":
        n = int(np.prod(layer.window))
        win = np.broadcast_to(G[..., None] / n, G.shape + (n,))
        return unpool_windows(win, layer.window, in_shape)
    if kind == "globalavgpool":
        n = int(np.prod(in_shape[:-1]))
        shape = (G.shape[0],) + (1,) * (len(in_shape) - 1) + (G.shape[-1],)
        return np.broadcast_to(G.reshape(shape) / n, G.shape[:1] + in_shape).copy()
    return G.reshape(G.shape[:1] + in_shape)


# ---------------------------------------------------------------------------
# forward / gradient


def _check_batch(model: Model, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.shape[1:] != model.input_shape:
        raise ShapeError(f"input batch shape {X.shape[1:]} != model input {model.input_shape}")
    return X


def forward_batch(model: Model, X, counter=None, start: int = 0) -> np.ndarray:
    """Evaluate the model on a batch; one forward-equivalent per row."""
    if start == 0:
        X = _check_batch(model, X)
    for layer in model.layers[start:]:
        X = apply_layer(layer, X)
    if counter is not None:
        counter.add(X.shape[0])
    return X


def forward(model: Model, x, counter=None) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != model.input_shape:
        raise ShapeError(f"input shape {x.shape} != model input {model.input_shape}")
    return forward_batch(model, x[None], counter)[0]


def gradient_batch(model: Model, X, c: int, counter=None) -> np.ndarray:
    """d f_c / d x for every row of X by reverse accumulation.

    Costs two forward-equivalents per row (one forward, one backward).
    """
    X = _check_batch(model, X)
    if not 0 <= c < model.output_dim:
        raise ShapeError(f"class index {c} out of range for {model.output_dim} outputs")
    acts = [X]
    for layer in model.layers:
        acts.append(apply_layer(layer, acts[-1]))
    G = np.zeros_like(acts[-1])
    G[:, c] = 1.0
    for layer, A in zip(reversed(model.layers), reversed(acts[:-1])):
        G = _layer_backward(layer, A, G)
    if counter is not None:
        counter.add(2 * X.shape[0])
    return G


def gradient(model: Model, x, c: int, counter=None) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != model.input_shape:
        raise ShapeError(f"input shape {x.shape} != model input {model.input_shape}")
    return gradient_batch(model, x[None], c, counter)[0]


# ---------------------------------------------------------------------------
# file format


def _layer_from_json(obj) -> LayerSpec:
    if not isinstance(obj, dict) or "kind" not in obj:
        raise ParseError(f"layer entry must be an object with a 'kind': {obj!r}")
    kind = obj["kind"]
    if kind not in _LAYER_KEYS:
        raise UnsupportedLayer(f"unsupported layer kind {kind!r}")
    extra = set(obj) - _LAYER_KEYS[kind]
    if extra:
        raise ParseError(f"unknown keys for {kind} layer: {sorted(extra)}")
    if obj.get("padding", "valid") != "valid":
        raise ParseError(f"only 'valid' padding is supported, got {obj['padding']!r}")
    try:
        if kind in PARAMETRIC:
            if "weights" not in obj or "bias" not in obj:
                raise ParseError(f"{kind} layer needs 'weights' and 'bias'")
            w = np.array(obj["weights"], dtype=np.float64)
            b = np.array(obj["bias"], dtype=np.float64)
            if "stride" in obj and any(int(s) != 1 for s in np.atleast_1d(obj["stride"])):
                raise ParseError("convolutions support stride 1 only")
            return LayerSpec(kind, weights=w, bias=b)
        if kind in POOLS:
            if "window" not in obj:
                raise ParseError(f"{kind} layer needs a 'window'")
            window = tuple(int(v) for v in np.atleast_1d(obj["window"]))
            stride = obj.get("stride")
            if stride is not None and tuple(int(v) for v in np.atleast_1d(stride)) != window:
                raise ParseError("pooling stride must equal the window")
            return LayerSpec(kind, window=window)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, (ParseError, ShapeError)):
            raise
        raise ParseError(f"malformed {kind} layer: {exc}") from exc
    return LayerSpec(kind)


def model_from_dict(obj) -> Model:
    if not isinstance(obj, dict):
        raise ParseError("model file must contain a JSON object")
    extra = set(obj) - _MODEL_KEYS
    if extra:
        raise ParseError(f"unknown top-level keys: {sorted(extra)}")
    if "input_shape" not in obj or "layers" not in obj:
        raise ParseError("model needs 'input_shape' and 'layers'")
    if not isinstance(obj["layers"], list):
        raise ParseError("'layers' must be a list")
    try:
        input_shape = tuple(int(s) for s in obj["input_shape"])
    except (TypeError, ValueError) as exc:
        raise ParseError(f"bad input_shape: {obj['input_shape']!r}") from exc
    layers = [_layer_from_json(entry) for entry in obj["layers"]]
    model = Model(input_shape, layers, baseline=obj.get("baseline"))
    if "output_dim" in obj and int(obj["output_dim"]) != model.output_dim:
        raise ShapeError(f"declared output_dim {obj['output_dim']} != {model.output_dim}")
    return model


def model_to_dict(model: Model) -> dict:
    layers = []
    for layer in model.layers:
        entry = {"kind": layer.kind}
        if layer.kind in PARAMETRIC:
            entry["weights"] = layer.weights.tolist()
            entry["bias"] = layer.bias.tolist()
        if layer.kind in POOLS:
            entry["window"] = list(layer.window)
        layers.append(entry)
    out = {"input_shape": list(model.input_shape), "layers": layers,
           "output_dim": model.output_dim}
    if model.baseline is not None:
        out["baseline"] = model.baseline.tolist()
    return out


def load_model(path) -> Model:
    text = Path(path).read_text(encoding="utf-8")
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return model_from_dict(obj)


def save_model(model: Model, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model)) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# random models

_TOKEN_RE = {
    "shape": re.compile(r"^\d+(x\d+)*$"),
    "conv": re.compile(r"^conv([12])d:(\d+(?:x\d+)?):(\d+)$"),
    "pool": re.compile(r"^(max|avg)pool:(\d+(?:x\d+)*)$"),
}


def parse_arch(arch: str) -> tuple[tuple[int, ...], list[tuple]]:
    """Parse an architecture string into an input shape and layer tokens.

    Grammar (tokens joined by ``-``): the first token is the input shape
    (``18`` or ``8x8x1``); then ``<int>`` for a dense layer of that width,
    ``relu``, ``flatten``, ``gap`` (global average pool),
    ``conv1d:<k>:<cout>``, ``conv2d:<kh>x<kw>:<cout>``,
    ``maxpool:<w>[x<w>]`` and ``avgpool:<w>[x<w>]``.
    """
    tokens = [t.strip() for t in arch.strip().split("-")]
    if len(tokens) < 2 or not _TOKEN_RE["shape"].match(tokens[0]):
        raise ShapeError(f"architecture {arch!r} must start with an input shape")
    input_shape = tuple(int(v) for v in tokens[0].split("x"))
    out = []
    for tok in tokens[1:]:
        if tok.isdigit():
            out.append(("dense", int(tok)))
        elif tok in ("relu", "flatten"):
            out.append((tok,))
        elif tok == "gap":
            out.append(("globalavgpool",))
        elif m := _TOKEN_RE["conv"].match(tok):
            kernel = tuple(int(v) for v in m.group(2).split("x"))
            if len(kernel) != int(m.group(1)):
                raise ShapeError(f"kernel {m.group(2)} does not match conv{m.group(1)}d")
            out.append((f"conv{m.group(1)}d", kernel, int(m.group(3))))
        elif m := _TOKEN_RE["pool"].match(tok):
            out.append((f"{m.group(1)}pool", tuple(int(v) for v in m.group(2).split("x"))))
        else:
            raise ShapeError(f"unrecognised architecture token {tok!r}")
    return input_shape, out


def generate_random_model(seed: int, arch: str) -> Model:
    """Random model with He-style weights N(0, 2/fan_in) and biases N(0, 0.1).

    Both normal parameters are variances.
    """
    input_shape, tokens = parse_arch(arch)
    if min(input_shape) < 1:
        raise ShapeError(f"zero-width input in {arch!r}")
    rng = np.random.default_rng(seed)
    shape = input_shape
    layers = []
    for tok in tokens:
        kind = tok[0]
        if kind == "dense":
            width = tok[1]
            if width < 1:
                raise ShapeError(f"zero-width layer in {arch!r}")
            if len(shape) != 1:
                raise ShapeError(f"dense layer after non-vector shape {shape}; add 'flatten'")
            fan_in = shape[0]
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(width, fan_in))
            b = rng.normal(0.0, np.sqrt(0.1), size=width)
            layer = LayerSpec("dense", weights=w, bias=b)
        elif kind in ("conv1d", "conv2d"):
            kernel, cout = tok[1], tok[2]
            if cout < 1 or min(kernel) < 1:
                raise ShapeError(f"zero-width layer in {arch!r}")
            if len(shape) != len(kernel) + 1:
                raise ShapeError(f"{kind} needs input with channel axis, got {shape}")
            cin = shape[-1]
            fan_in = int(np.prod(kernel)) * cin
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=kernel + (cin, cout))
            b = rng.normal(0.0, np.sqrt(0.1), size=cout)
            layer = LayerSpec(kind, weights=w, bias=b)
        elif kind in POOLS:
            layer = LayerSpec(kind, window=tok[1])
        else:
            layer = LayerSpec(kind)
        shape = layer_output_shape(layer, shape)
        layers.append(layer)
    return Model(input_shape, layers)


def linear_model(weights: Sequence[Sequence[float]], bias: Sequence[float]) -> Model:
    """Single dense layer model; convenience for tests and examples."""
    w = np.atleast_2d(np.asarray(weights, dtype=np.float64))
    return Model((w.shape[1],), [LayerSpec("dense", weights=w, bias=np.asarray(bias, float))])
