"""Moment-matching twin of a model: filters diagonal Gaussians layer by layer.

Linear layers move means through the affine map and variances through the
elementwise-squared weights; ReLU and max pooling use the closed forms in
:mod:`shapprop.gaussian`. Covariances are dropped after every layer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .gaussian import MomentPair, max_moments, relu_moments
from .network import LayerSpec, Model, _conv, apply_layer, layer_output_shape, pool_windows


@dataclass(frozen=True, eq=False)
class GaussianActivation:
    mean: np.ndarray
    variance: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        var = np.asarray(self.variance, dtype=np.float64)
        if mean.shape != var.shape:
            raise ShapeError(f"mean shape {mean.shape} != variance shape {var.shape}")
        if np.any(var < 0):
            raise ValueError("variances must be nonnegative")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "variance", var)

    @classmethod
    def point(cls, x) -> "GaussianActivation":
        x = np.asarray(x, dtype=np.float64)
        return cls(x, np.zeros_like(x))


# Batched kernels: mean and var carry a leading batch axis.

def linear_moments(layer: LayerSpec, mean, var):
    kind = layer.kind
    if kind == "dense":
        w = layer.weights
        return mean @ w.T + layer.bias, var @ (w * w).T
    if kind in ("conv1d", "conv2d"):
        w = layer.weights
        return _conv(mean, w, layer.bias), _conv(var, w * w)
    if kind == "avgpool":
        n = int(np.prod(layer.window))
        return (pool_windows(mean, layer.window).mean(axis=-1),
                pool_windows(var, layer.window).mean(axis=-1) / n)
    if kind == "globalavgpool":
        axes = tuple(range(1, mean.ndim - 1))
        n = int(np.prod([mean.shape[a] for a in axes]))
        return mean.mean(axis=axes), var.mean(axis=axes) / n
    if kind == "flatten":
        return apply_layer(layer, mean), apply_layer(layer, var)
    raise ShapeError(f"{kind} is not a linear layer")


def max_pool_moments(layer: LayerSpec, mean, var):
    """Per window, fold units left to right (row-major) with Clark's pair rule.

    Clark's approximation is not associative; the fixed order makes the
    result reproducible.
    """
    wm = pool_windows(mean, layer.window)
    wv = pool_windows(var, layer.window)
    m, v = wm[..., 0], wv[..., 0]
    for j in range(1, wm.shape[-1]):
        m, v = max_moments(m, v, wm[..., j], wv[..., j])
    return m, v


def layer_moments(layer: LayerSpec, mean, var):
    if layer.kind == "relu":
        return relu_moments(mean, var)
    if layer.kind == "maxpool":
        return max_pool_moments(layer, mean, var)
    return linear_moments(layer, mean, var)


def propagate_batch(model: Model, mean, var, start: int = 0):
    """Filter a batch of diagonal Gaussians through ``model.layers[start:]``."""
    for layer in model.layers[start:]:
        mean, var = layer_moments(layer, mean, var)
    return mean, var


def _single(g: GaussianActivation, fn):
    m, v = fn(g.mean[None], g.variance[None])
    return GaussianActivation(m[0], v[0])


def propagate_linear(layer: LayerSpec, g: GaussianActivation) -> GaussianActivation:
    if not layer.is_linear:
        raise ShapeError(f"{layer.kind} is not a linear layer")
    layer_output_shape(layer, g.mean.shape)
    return _single(g, lambda m, v: linear_moments(layer, m, v))


def propagate_relu(g: GaussianActivation) -> GaussianActivation:
    m, v = relu_moments(g.mean, g.variance)
    return GaussianActivation(m, v)


def propagate_max(layer: LayerSpec, g: GaussianActivation) -> GaussianActivation:
    if layer.kind != "maxpool":
        raise ShapeError(f"expected a maxpool layer, got {layer.kind}")
    layer_output_shape(layer, g.mean.shape)
    return _single(g, lambda m, v: max_pool_moments(layer, m, v))


def propagate(model: Model, g: GaussianActivation, start: int = 0) -> GaussianActivation:
    """Filter ``g`` through ``model.layers[start:]``."""
    if g.mean.shape != model.shapes[start]:
        raise ShapeError(f"activation shape {g.mean.shape} != expected {model.shapes[start]}")
    return _single(g, lambda m, v: propagate_batch(model, m, v, start))


def propagate_tail(model: Model, start_index: int, g: GaussianActivation, c: int,
                   counter=None) -> MomentPair:
    """Moments of output unit ``c`` after filtering ``g`` from layer ``start_index`` on.

    Counts two forward-equivalents (mean and variance are both propagated).
    """
    if not 0 <= c < model.output_dim:
        raise ShapeError(f"class index {c} out of range for {model.output_dim} outputs")
    out = propagate(model, g, start_index)
    if counter is not None:
        counter.add(2)
    return MomentPair(float(out.mean[c]), float(out.variance[c]))
