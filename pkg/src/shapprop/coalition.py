"""Gaussian statistics of the first linear layer under random coalitions.

A coalition of size ``k`` keeps ``k`` of the features other than ``i`` at
their input values and sets the rest to the baseline. The first linear
layer's pre-activation is then a sum of ``k`` terms drawn without
replacement from the ``M = N - 1`` per-feature contributions, whose mean
and variance follow from sampling-without-replacement algebra.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument, ShapeError, UnsupportedModel
from .network import Model, PARAMETRIC, _conv, apply_layer

SCALING_MODES = ("corrected", "verbatim")


@dataclass(frozen=True, eq=False)
class CoalitionStats:
    mu: np.ndarray
    var: np.ndarray
    mu_with_i: np.ndarray


@dataclass(frozen=True)
class SizeSchedule:
    sizes: tuple[int, ...]

    @property
    def K(self) -> int:
        return len(self.sizes)


def pick_coalition_sizes(N: int, K: int) -> SizeSchedule:
    """K coalition sizes spread evenly over 0..N-1, endpoints included.

    Rounding is half-up; with K <= N the rounded grid has no duplicates.
    """
    if not 1 <= K <= N:
        raise InvalidArgument(f"need 1 <= K <= N, got K={K}, N={N}")
    if K == 1:
        return SizeSchedule(((N - 1) // 2,))
    grid = np.floor(np.linspace(0, N - 1, K) + 0.5).astype(int)
    return SizeSchedule(tuple(sorted(set(int(k) for k in grid))))


def variance_factor(k: int, M: int, scaling: str = "corrected") -> float:
    """Finite-population factor multiplying the per-feature variance.

    ``corrected`` is k(M-k)/(M-1) for draws from the M features other than
    ``i``; ``verbatim`` is the population-N factor k(N-k)/(N-1) with
    N = M + 1, which leaves variance at k = M.
    """
    if scaling == "corrected":
        return 0.0 if M <= 1 else k * (M - k) / (M - 1)
    if scaling == "verbatim":
        N = M + 1
        return k * (N - k) / (N - 1)
    raise InvalidArgument(f"unknown scaling mode {scaling!r}")


class FirstLayer:
    """The model's input prefix up to and including its first linear layer.

    Only ``flatten`` layers may precede that layer, so the whole prefix is a
    linear map of the raw input. Convolutions are used as structured linear
    maps; nothing is materialised.
    """

    def __init__(self, model: Model):
        idx = next((j for j, layer in enumerate(model.layers) if layer.kind in PARAMETRIC), None)
        if idx is None:
            raise UnsupportedModel("model has no linear (dense/conv) layer")
        for layer in model.layers[:idx]:
            if layer.kind != "flatten":
                raise UnsupportedModel(
                    f"{layer.kind} before the first linear layer breaks the coalition decomposition")
        self.model = model
        self.index = idx
        self.layer = model.layers[idx]
        self.tail_start = idx + 1
        self.hidden_shape = model.shapes[idx + 1]

    def _prefix(self, X):
        for layer in self.model.layers[:self.index]:
            X = apply_layer(layer, X)
        return X

    def apply(self, X, squared: bool = False):
        """Linear part (no bias) on a batch; ``squared`` uses squared weights."""
        X = self._prefix(np.asarray(X, dtype=np.float64))
        w = self.layer.weights
        if squared:
            w = w * w
        if self.layer.kind == "dense":
            return X @ w.T
        return _conv(X, w)

    def affine(self, X):
        return apply_layer(self.layer, self._prefix(np.asarray(X, dtype=np.float64)))


def _check(model: Model, x, baseline):
    x = np.asarray(x, dtype=np.float64)
    if x.shape != model.input_shape:
        raise ShapeError(f"input shape {x.shape} != model input {model.input_shape}")
    if baseline is None:
        baseline = model.baseline_or_zero()
    baseline = np.asarray(baseline, dtype=np.float64)
    if baseline.shape != model.input_shape:
        baseline = np.broadcast_to(baseline, model.input_shape)
    return x, baseline


def feature_unit_stats(first: FirstLayer, delta: np.ndarray, features):
    """Per-feature population statistics of the other features' contributions.

    Args:
        first: the model's first linear layer.
        delta: input minus baseline, shaped like the model input.
        features: flat feature indices.

    Returns:
        ``(mean_unit, var_unit, contrib)`` each shaped ``(len(features), *hidden)``:
        the mean and variance of one randomly drawn remaining feature's
        contribution to every hidden unit, and feature ``i``'s own
        contribution.
    """
    features = np.asarray(features, dtype=int)
    N = delta.size
    M = N - 1
    flat = delta.reshape(-1)
    rows = np.arange(len(features))
    without = np.broadcast_to(flat, (len(features), N)).copy()
    without[rows, features] = 0.0
    only = np.zeros((len(features), N))
    only[rows, features] = flat[features]
    shape = (len(features),) + delta.shape
    without = without.reshape(shape)
    mean_unit = first.apply(without) / M
    var_unit = first.apply(without * without, squared=True) / M - mean_unit ** 2
    contrib = first.apply(only.reshape(shape))
    return mean_unit, var_unit, contrib


def scale_stats(mean_unit, var_unit, k: int, M: int, offset, scaling: str = "corrected"):
    mu = k * mean_unit + offset
    var = np.maximum(variance_factor(k, M, scaling) * var_unit, 0.0)
    if k == 0:
        var = np.zeros_like(var)
    return mu, var


def coalition_input_stats(model: Model, x, i: int, k: int, baseline=None,
                          scaling: str = "corrected") -> CoalitionStats:
    """First-hidden-layer Gaussian for coalitions of size ``k`` without feature ``i``.

    Returns the pre-activation mean and variance (bias included) and the
    mean once feature ``i`` joins the coalition.
    """
    first = FirstLayer(model)
    x, baseline = _check(model, x, baseline)
    N = x.size
    if N < 2:
        raise InvalidArgument("coalition statistics need at least two features")
    if not 0 <= i < N:
        raise InvalidArgument(f"feature index {i} out of range for {N} features")
    if not 0 <= k <= N - 1:
        raise InvalidArgument(f"coalition size {k} out of range 0..{N - 1}")
    offset = first.affine(baseline[None])[0]
    mean_unit, var_unit, contrib = feature_unit_stats(first, x - baseline, [i])
    mu, var = scale_stats(mean_unit[0], var_unit[0], k, N - 1, offset, scaling)
    return CoalitionStats(mu=mu, var=var, mu_with_i=mu + contrib[0])


def sample_coalitions(N: int, i: int, k: int, n_samples: int, rng) -> np.ndarray:
    """Boolean masks (n_samples, N) of uniform k-subsets of features other than i."""
    others = np.delete(np.arange(N), i)
    order = np.argsort(rng.random((n_samples, N - 1)), axis=1)[:, :k]
    masks = np.zeros((n_samples, N), dtype=bool)
    np.put_along_axis(masks, others[order], True, axis=1)
    return masks


def empirical_coalition_stats(model: Model, x, i: int, k: int, n_samples: int,
                              seed=None, baseline=None, batch: int = 20000):
    """Monte Carlo mean/variance of the first-layer pre-activation over coalitions.

    Composes each sampled coalition input explicitly and runs it through the
    model's prefix and first linear layer, so it shares no arithmetic with
    `coalition_input_stats`.
    """
    first = FirstLayer(model)
    x, baseline = _check(model, x, baseline)
    rng = np.random.default_rng(seed)
    N = x.size
    total = np.zeros(first.hidden_shape)
    total_sq = np.zeros(first.hidden_shape)
    shift = None
    done = 0
    while done < n_samples:
        n = min(batch, n_samples - done)
        masks = sample_coalitions(N, i, k, n, rng).reshape((n,) + x.shape)
        Z = first.affine(np.where(masks, x, baseline))
        if shift is None:
            # shifted sums keep the variance free of cancellation
            shift = Z.mean(axis=0)
        Z = Z - shift
        total += Z.sum(axis=0)
        total_sq += (Z * Z).sum(axis=0)
        done += n
    centred = total / n_samples
    var = (total_sq - n_samples * centred ** 2) / (n_samples - 1)
    return shift + centred, var
