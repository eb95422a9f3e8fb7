"""Attribution methods sharing one contract.

Every method returns an :class:`AttributionResult` whose ``values`` hold one
relevance score per input feature (flattened row-major) for output unit
``c``, together with the number of forward-equivalents it spent.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .coalition import (FirstLayer, SCALING_MODES, feature_unit_stats,
                        pick_coalition_sizes, variance_factor)
from .counter import EvalCounter
from .errors import InvalidArgument, ShapeError, TooManyFeatures
from .network import Model, forward_batch, gradient_batch
from .probnet import propagate_batch

MAX_EXACT_FEATURES = 25
# Rows per forward batch; bounds memory, not results.
_ROWS = 1 << 15


@dataclass
class AttributionResult:
    values: np.ndarray
    method: str
    class_index: int
    eval_count: float
    seed: Optional[int] = None
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "class": self.class_index,
            "values": [float(v) for v in self.values],
            "eval_count": self.eval_count,
            "seed": self.seed,
            "params": self.params,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, obj: dict) -> "AttributionResult":
        return cls(values=np.asarray(obj["values"], dtype=np.float64), method=obj["method"],
                   class_index=int(obj["class"]), eval_count=obj["eval_count"],
                   seed=obj.get("seed"), params=dict(obj.get("params") or {}))


def _prepare(model: Model, x, c: int, baseline=None):
    x = np.asarray(x, dtype=np.float64)
    if x.shape != model.input_shape:
        if x.size == model.n_features:
            x = x.reshape(model.input_shape)
        else:
            raise ShapeError(f"input shape {x.shape} != model input {model.input_shape}")
    if not 0 <= c < model.output_dim:
        raise ShapeError(f"class index {c} out of range for {model.output_dim} outputs")
    if baseline is None:
        baseline = model.baseline_or_zero()
    baseline = np.broadcast_to(np.asarray(baseline, dtype=np.float64), model.input_shape)
    return x, np.array(baseline)


def _finish(local: EvalCounter, counter):
    if counter is not None:
        counter.add(local.total)
    return local.total


def _compose(x, baseline, masks):
    """Inputs with x where ``masks`` is set and the baseline elsewhere."""
    masks = masks.reshape(masks.shape[:-1] + x.shape)
    return np.where(masks, x, baseline)


def shapley_weights(N: int) -> np.ndarray:
    """|S|!(N-|S|-1)!/N! = 1/(N * C(N-1, |S|)) for |S| = 0..N-1.

    The denominator is an exact integer, so each weight is correctly rounded.
    """
    return np.array([1.0 / (N * math.comb(N - 1, k)) for k in range(N)])


def exact_shapley(model: Model, x, c: int, baseline=None, counter=None) -> AttributionResult:
    """Exact Shapley values by enumerating all 2**N coalitions once.

    Each coalition value v(S) enters feature i's sum with weight
    w(|S|-1) if i is in S and -w(|S|) otherwise, so the attribution
    accumulates chunk by chunk without storing all 2**N values.
    """
    x, baseline = _prepare(model, x, c, baseline)
    N = x.size
    if N > MAX_EXACT_FEATURES:
        raise TooManyFeatures(
            f"exact Shapley values need 2^{N} = {2 ** N:,} evaluations; limit is N <= {MAX_EXACT_FEATURES}")
    w = shapley_weights(N)
    w_in = np.concatenate([[0.0], w])    # indexed by |S|, for S containing i
    w_out = np.concatenate([w, [0.0]])   # indexed by |S|, for S without i
    local = EvalCounter()
    bit = np.arange(N)
    values = np.zeros(N)
    for start in range(0, 1 << N, _ROWS):
        m = np.arange(start, min(start + _ROWS, 1 << N), dtype=np.int64)
        bits = ((m[:, None] >> bit) & 1).astype(bool)
        v = forward_batch(model, _compose(x, baseline, bits), local)[:, c]
        size = bits.sum(axis=1)
        values += bits.T @ (v * w_in[size]) - (~bits).T @ (v * w_out[size])
    return AttributionResult(values, "exact", c, _finish(local, counter))


def shapley_sampling(model: Model, x, c: int, permutations: int, seed=None,
                     baseline=None, counter=None) -> AttributionResult:
    """Permutation-sampling estimate of Shapley values.

    Each permutation adds features one at a time starting from the
    baseline, costing N + 1 forwards and yielding one marginal per feature.
    """
    if permutations < 1:
        raise InvalidArgument("need at least one permutation")
    x, baseline = _prepare(model, x, c, baseline)
    N = x.size
    rng = np.random.default_rng(seed)
    local = EvalCounter()
    total = np.zeros(N)
    steps = np.arange(N + 1)
    per_chunk = max(1, _ROWS // (N + 1))
    done = 0
    while done < permutations:
        P = min(per_chunk, permutations - done)
        rank = np.argsort(np.argsort(rng.random((P, N)), axis=1), axis=1)
        # row j of permutation p holds the features ranked below j
        masks = rank[:, None, :] < steps[None, :, None]
        v = forward_batch(model, _compose(x, baseline, masks.reshape(-1, N)), local)[:, c]
        v = v.reshape(P, N + 1)
        total += (np.take_along_axis(v, rank + 1, axis=1)
                  - np.take_along_axis(v, rank, axis=1)).sum(axis=0)
        done += P
    return AttributionResult(total / permutations, "sampling", c, _finish(local, counter),
                             seed=seed, params={"M": int(permutations)})


def occlusion(model: Model, x, c: int, baseline=None, counter=None) -> AttributionResult:
    """f_c(x) minus f_c with one feature at a time set to the baseline."""
    x, baseline = _prepare(model, x, c, baseline)
    N = x.size
    masks = np.ones((N + 1, N), dtype=bool)
    masks[np.arange(1, N + 1), np.arange(N)] = False
    local = EvalCounter()
    v = forward_batch(model, _compose(x, baseline, masks), local)[:, c]
    return AttributionResult(v[0] - v[1:], "occlusion", c, _finish(local, counter))


def gradient_x_input(model: Model, x, c: int, counter=None) -> AttributionResult:
    x, _ = _prepare(model, x, c)
    local = EvalCounter()
    g = gradient_batch(model, x[None], c, local)[0]
    return AttributionResult((x * g).reshape(-1), "grad_x_input", c, _finish(local, counter))


def integrated_gradients(model: Model, x, c: int, steps: int = 64, baseline=None,
                         counter=None) -> AttributionResult:
    """Path-integrated gradients from the baseline to x, midpoint rule."""
    if steps < 1:
        raise InvalidArgument("need at least one integration step")
    x, baseline = _prepare(model, x, c, baseline)
    diff = x - baseline
    alphas = (np.arange(1, steps + 1) - 0.5) / steps
    local = EvalCounter()
    grad_sum = np.zeros_like(x)
    per_chunk = max(1, _ROWS // max(1, x.size))
    for start in range(0, steps, per_chunk):
        a = alphas[start:start + per_chunk].reshape((-1,) + (1,) * x.ndim)
        grad_sum += gradient_batch(model, baseline + a * diff, c, local).sum(axis=0)
    values = (diff * grad_sum / steps).reshape(-1)
    return AttributionResult(values, "integrated_gradients", c, _finish(local, counter),
                             params={"steps": int(steps)})


def dasp(model: Model, x, c: int, K: Optional[int] = None, baseline=None,
         scaling: str = "corrected", sizes=None, counter=None) -> AttributionResult:
    """Deep Approximate Shapley Propagation.

    For every feature i and coalition size k, the first linear layer's
    pre-activation over random k-coalitions without i is modelled as a
    diagonal Gaussian, filtered through the rest of the network with and
    without i's contribution added to the mean, and the difference of the
    output means is averaged over the K sizes.

    Args:
        K: number of coalition sizes, spread evenly over 0..N-1. Defaults to N.
        scaling: ``"corrected"`` or ``"verbatim"`` finite-population factor.
        sizes: explicit coalition sizes; overrides ``K``.

    Each (i, k) marginal propagates the with/without pair and is charged
    two forward-equivalents, for 2*K*N in total.
    """
    if scaling not in SCALING_MODES:
        raise InvalidArgument(f"unknown scaling mode {scaling!r}")
    first = FirstLayer(model)
    x, baseline = _prepare(model, x, c, baseline)
    N = x.size
    if N < 2:
        raise InvalidArgument("DASP needs at least two features")
    if sizes is None:
        sizes = pick_coalition_sizes(N, N if K is None else int(K)).sizes
    else:
        sizes = tuple(int(k) for k in sizes)
        if not sizes or min(sizes) < 0 or max(sizes) > N - 1:
            raise InvalidArgument(f"coalition sizes must lie in 0..{N - 1}")
    M = N - 1
    nk = len(sizes)
    ks = np.array(sizes, dtype=np.float64)
    factors = np.array([variance_factor(k, M, scaling) for k in sizes])
    offset = first.affine(baseline[None])[0]
    delta = x - baseline
    hid = first.hidden_shape
    bshape = (nk,) + (1,) * len(hid)
    # about 4M floats per intermediate array
    per_chunk = max(1, (1 << 22) // (nk * int(np.prod(hid))))
    local = EvalCounter()
    values = np.zeros(N)
    for start in range(0, N, per_chunk):
        feats = np.arange(start, min(start + per_chunk, N))
        mean_unit, var_unit, contrib = feature_unit_stats(first, delta, feats)
        # (features, sizes, *hidden)
        mu = ks.reshape(bshape) * mean_unit[:, None] + offset
        var = np.maximum(factors.reshape(bshape) * var_unit[:, None], 0.0)
        var[:, ks == 0] = 0.0
        mu_with = mu + contrib[:, None]
        rows = (len(feats) * nk,) + hid
        # same-shape batches so identical rows give bitwise identical outputs
        out, _ = propagate_batch(model, mu.reshape(rows), var.reshape(rows), first.tail_start)
        out_with, _ = propagate_batch(model, mu_with.reshape(rows), var.reshape(rows),
                                      first.tail_start)
        diff = (out_with[:, c] - out[:, c]).reshape(len(feats), nk)
        values[feats] = diff.sum(axis=1) / nk
        local.add(2 * nk * len(feats))
    params = {"K": nk, "sizes": list(sizes), "scaling": scaling}
    return AttributionResult(values, "dasp", c, _finish(local, counter), params=params)


METHODS = ("exact", "sampling", "occlusion", "grad_x_input", "integrated_gradients", "dasp")


def run_method(method: str, model: Model, x, c: int, baseline=None, seed=None,
               counter=None, **params) -> AttributionResult:
    """Dispatch by method name; ``params`` carries K, M, steps or scaling."""
    if method == "exact":
        return exact_shapley(model, x, c, baseline, counter=counter)
    if method == "sampling":
        return shapley_sampling(model, x, c, int(params["M"]), seed=seed,
                                baseline=baseline, counter=counter)
    if method == "occlusion":
        return occlusion(model, x, c, baseline, counter=counter)
    if method == "grad_x_input":
        return gradient_x_input(model, x, c, counter=counter)
    if method == "integrated_gradients":
        return integrated_gradients(model, x, c, int(params.get("steps", 64)), baseline,
                                    counter=counter)
    if method == "dasp":
        K = params.get("K")
        return dasp(model, x, c, None if K is None else int(K), baseline,
                    scaling=params.get("scaling", "corrected"), sizes=params.get("sizes"),
                    counter=counter)
    raise InvalidArgument(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
