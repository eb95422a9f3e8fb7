import json

import numpy as np
import pytest

from conftest import max_model, mlp, random_linear_model
from shapprop.attribution import (METHODS, AttributionResult, dasp, exact_shapley,
                                  gradient_x_input, integrated_gradients, occlusion, run_method,
                                  shapley_sampling, shapley_weights)
from shapprop.counter import EvalCounter
from shapprop.errors import InvalidArgument, ShapeError, TooManyFeatures
from shapprop.network import LayerSpec, Model, forward, generate_random_model, linear_model


def with_zero_column(model, j):
    layers = list(model.layers)
    w = layers[0].weights.copy()
    w[:, j] = 0.0
    layers[0] = LayerSpec("dense", weights=w, bias=layers[0].bias)
    return Model(model.input_shape, layers)


def symmetric_mlp(seed, n=6):
    """MLP whose first-layer columns 0 and 1 are identical."""
    m = mlp(seed, n_in=n, hidden=12)
    return with_copied_column(m, 0, 1)


def with_copied_column(model, src, dst):
    layers = list(model.layers)
    w = layers[0].weights.copy()
    w[:, dst] = w[:, src]
    layers[0] = LayerSpec("dense", weights=w, bias=layers[0].bias)
    return Model(model.input_shape, layers)


def brute_force_shapley(f, x, baseline):
    """Shapley values by the permutation definition over all N! orders."""
    from itertools import permutations
    N = len(x)
    R = np.zeros(N)
    count = 0
    for order in permutations(range(N)):
        z = baseline.copy()
        prev = f(z)
        for j in order:
            z[j] = x[j]
            cur = f(z)
            R[j] += cur - prev
            prev = cur
        count += 1
    return R / count


class TestExact:
    def test_max_model(self):
        r = exact_shapley(max_model(), [1.0, 3.0], 0)
        np.testing.assert_array_equal(r.values, [0.5, 2.5])
        assert r.eval_count == 4

    def test_matches_permutation_definition(self, rng):
        m = mlp(3, n_in=5, hidden=6)
        x = rng.normal(size=5)
        base = rng.normal(size=5)
        ref = brute_force_shapley(lambda z: forward(m, z)[0], x, base)
        np.testing.assert_allclose(exact_shapley(m, x, 0, base).values, ref, atol=1e-12)

    def test_weights_sum(self):
        from math import comb
        for N in (1, 2, 7, 20):
            w = shapley_weights(N)
            assert sum(comb(N - 1, s) * w[s] for s in range(N)) == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_completeness(self, seed):
        m = mlp(seed, n_in=9, hidden=16, n_out=3)
        x = np.random.default_rng(seed).normal(size=9)
        for c in range(3):
            r = exact_shapley(m, x, c)
            assert abs(r.values.sum() - (forward(m, x)[c] - forward(m, np.zeros(9))[c])) < 1e-8

    def test_null_player(self, rng):
        m = with_zero_column(mlp(1, n_in=8), 5)
        r = exact_shapley(m, rng.normal(size=8), 0)
        assert abs(r.values[5]) < 1e-12

    def test_symmetry(self, rng):
        m = symmetric_mlp(2)
        x = rng.normal(size=6)
        x[1] = x[0]
        r = exact_shapley(m, x, 0)
        assert abs(r.values[0] - r.values[1]) < 1e-10

    def test_linearity(self, rng):
        f1, f2 = mlp(4, n_in=6, hidden=5), mlp(5, n_in=6, hidden=7)
        a, b = 1.5, -0.7
        w1, w2 = f1.layers[0], f2.layers[0]
        v1, v2 = f1.layers[2], f2.layers[2]
        combined = Model((6,), [
            LayerSpec("dense", weights=np.vstack([w1.weights, w2.weights]),
                      bias=np.concatenate([w1.bias, w2.bias])),
            LayerSpec("relu"),
            LayerSpec("dense", weights=np.hstack([a * v1.weights, b * v2.weights]),
                      bias=a * v1.bias + b * v2.bias)])
        x = rng.normal(size=6)
        expected = a * exact_shapley(f1, x, 0).values + b * exact_shapley(f2, x, 0).values
        np.testing.assert_allclose(exact_shapley(combined, x, 0).values, expected, atol=1e-8)

    def test_eval_count(self):
        counter = EvalCounter()
        r = exact_shapley(mlp(0, n_in=11), np.ones(11), 0, counter=counter)
        assert r.eval_count == 2 ** 11 == counter.total

    def test_too_many_features(self):
        m = linear_model(np.ones((1, 26)), [0])
        with pytest.raises(TooManyFeatures, match="2\\^26"):
            exact_shapley(m, np.ones(26), 0)

    def test_bad_class(self):
        with pytest.raises(ShapeError):
            exact_shapley(max_model(), [1.0, 2.0], 1)


class TestLinearModels:
    """Every method recovers w_i * x_i on a linear model with zero baseline."""

    @pytest.mark.parametrize("seed", range(5))
    def test_all_methods(self, seed):
        m = random_linear_model(seed, 8, depth=1 + seed % 3)
        x = np.random.default_rng(seed).normal(size=8)
        w_eff = gradient_x_input(m, np.ones(8), 0).values
        expected = w_eff * x
        results = [
            exact_shapley(m, x, 0), occlusion(m, x, 0), gradient_x_input(m, x, 0),
            integrated_gradients(m, x, 0, 3), shapley_sampling(m, x, 0, 1, seed=seed),
            dasp(m, x, 0), dasp(m, x, 0, K=3),
        ]
        for r in results:
            np.testing.assert_allclose(r.values, expected, atol=1e-8, err_msg=r.method)

    def test_single_feature_occlusion(self):
        m = Model((1,), [LayerSpec("dense", weights=[[2.0]], bias=[1.0]), LayerSpec("relu")])
        np.testing.assert_allclose(occlusion(m, [3.0], 0).values, [6.0])


class TestOcclusion:
    def test_max_model_bias(self):
        r = occlusion(max_model(), [1.0, 3.0], 0)
        np.testing.assert_array_equal(r.values, [0.0, 2.0])
        assert r.eval_count == 3

    def test_baseline(self):
        m = linear_model([[1.0, 2.0]], [0])
        r = occlusion(m, [3.0, 4.0], 0, baseline=[1.0, 1.0])
        np.testing.assert_array_equal(r.values, [2.0, 6.0])


class TestGradients:
    def test_zero_input(self):
        r = gradient_x_input(mlp(0, n_in=5), np.zeros(5), 0)
        np.testing.assert_array_equal(r.values, 0)
        assert r.eval_count == 2

    def test_dead_path(self):
        m = Model((2,), [LayerSpec("dense", weights=[[1, 0], [0, 1]], bias=[0, -10]),
                         LayerSpec("relu"), LayerSpec("dense", weights=[[1, 1]], bias=[0])])
        assert gradient_x_input(m, [1.0, 2.0], 0).values[1] == 0

    @staticmethod
    def completeness_gap(seed, steps):
        m = mlp(seed, n_in=8, hidden=16)
        x = np.random.default_rng(seed).normal(size=8)
        gap = forward(m, x)[0] - forward(m, np.zeros(8))[0]
        return abs(integrated_gradients(m, x, 0, steps).values.sum() - gap) / abs(gap)

    @pytest.mark.xfail(reason="midpoint rule is only O(1/m) across ReLU kinks", strict=False)
    @pytest.mark.parametrize("seed", range(5))
    def test_ig_completeness_at_128(self, seed):
        assert self.completeness_gap(seed, 128) < 1e-3

    def test_ig_completeness_converges(self):
        coarse = np.mean([self.completeness_gap(s, 128) for s in range(20)])
        fine = np.mean([self.completeness_gap(s, 1024) for s in range(20)])
        assert fine < 0.25 * coarse and fine < 1e-3

    def test_ig_eval_count(self):
        assert integrated_gradients(mlp(0, n_in=4), np.ones(4), 0, 128).eval_count == 256

    def test_ig_self_convergence(self, rng):
        m = mlp(9, n_in=8, hidden=16)
        x = rng.normal(size=8)
        a = integrated_gradients(m, x, 0, 256).values
        b = integrated_gradients(m, x, 0, 512).values
        assert np.linalg.norm(a - b) < 1e-3 * np.linalg.norm(b)

    def test_ig_invalid_steps(self):
        with pytest.raises(InvalidArgument):
            integrated_gradients(max_model(), [1.0, 2.0], 0, 0)


class TestSampling:
    def test_deterministic(self, rng):
        m = mlp(0, n_in=7)
        x = rng.normal(size=7)
        a = shapley_sampling(m, x, 0, 30, seed=5)
        b = shapley_sampling(m, x, 0, 30, seed=5)
        c = shapley_sampling(m, x, 0, 30, seed=6)
        assert a.values.tobytes() == b.values.tobytes()
        assert not np.array_equal(a.values, c.values)

    def test_eval_count(self):
        assert shapley_sampling(mlp(0, n_in=7), np.ones(7), 0, 13, seed=0).eval_count == 13 * 8

    def test_each_permutation_is_complete(self, rng):
        m = mlp(1, n_in=6)
        x = rng.normal(size=6)
        r = shapley_sampling(m, x, 0, 1, seed=0)
        assert r.values.sum() == pytest.approx(forward(m, x)[0] - forward(m, np.zeros(6))[0])

    def test_chunked_equals_unchunked(self, rng, monkeypatch):
        import shapprop.attribution as attr
        m = mlp(2, n_in=6)
        x = rng.normal(size=6)
        a = shapley_sampling(m, x, 0, 40, seed=1).values
        monkeypatch.setattr(attr, "_ROWS", 7 * 3)
        b = shapley_sampling(m, x, 0, 40, seed=1).values
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_invalid(self):
        with pytest.raises(InvalidArgument):
            shapley_sampling(max_model(), [1.0, 2.0], 0, 0)


class TestDasp:
    def test_eval_count(self):
        m = mlp(0, n_in=9)
        counter = EvalCounter()
        r = dasp(m, np.ones(9), 0, K=4, counter=counter)
        assert r.eval_count == 2 * 4 * 9 == counter.total
        assert dasp(m, np.ones(9), 0).eval_count == 2 * 9 * 9

    def test_null_player_exact_zero(self, rng):
        m = with_zero_column(mlp(3, n_in=10), 4)
        r = dasp(m, rng.normal(size=10), 0)
        assert r.values[4] == 0.0

    def test_zero_feature_value(self, rng):
        x = rng.normal(size=10)
        x[7] = 0.0
        assert dasp(mlp(6, n_in=10), x, 0).values[7] == 0.0

    def test_explicit_sizes_bitwise(self, rng):
        m = mlp(4, n_in=10)
        x = rng.normal(size=10)
        a = dasp(m, x, 0, K=4)
        b = dasp(m, x, 0, sizes=[0, 3, 6, 9])
        assert a.values.tobytes() == b.values.tobytes()
        assert a.params == {"K": 4, "sizes": [0, 3, 6, 9], "scaling": "corrected"}

    def test_single_size_exact_at_endpoints(self, rng):
        # k = 0 and k = N-1 coalitions are deterministic, so those marginals are exact
        m = mlp(5, n_in=8)
        x = rng.normal(size=8)
        f = lambda z: forward(m, z)[0]
        r0 = dasp(m, x, 0, sizes=[0]).values
        r7 = dasp(m, x, 0, sizes=[7]).values
        for i in range(8):
            only = np.zeros(8)
            only[i] = x[i]
            rest = x.copy()
            rest[i] = 0
            assert r0[i] == pytest.approx(f(only) - f(np.zeros(8)), abs=1e-12)
            assert r7[i] == pytest.approx(f(x) - f(rest), abs=1e-12)

    def test_close_to_exact(self):
        from shapprop.harness import spearman
        m = mlp(8, n_in=12, hidden=32)
        x = np.random.default_rng(8).normal(size=12)
        assert spearman(dasp(m, x, 0).values, exact_shapley(m, x, 0).values) > 0.9

    def test_verbatim_scaling_changes_values(self, rng):
        m = mlp(7, n_in=8)
        x = rng.normal(size=8)
        a = dasp(m, x, 0)
        b = dasp(m, x, 0, scaling="verbatim")
        assert b.params["scaling"] == "verbatim"
        assert not np.array_equal(a.values, b.values)

    def test_conv_model(self, rng):
        m = generate_random_model(0, "5x5x1-conv2d:2x2:3-relu-maxpool:2x2-flatten-4-relu-2")
        r = dasp(m, rng.normal(size=(5, 5, 1)), 1, K=5)
        assert r.values.shape == (25,) and np.all(np.isfinite(r.values))

    def test_chunking_does_not_change_results(self, rng, monkeypatch):
        import shapprop.attribution as attr
        m = mlp(2, n_in=10)
        x = rng.normal(size=10)
        a = dasp(m, x, 0).values
        # inflate the hidden size seen by the chunker so every feature is its own chunk
        orig = attr.np.prod
        monkeypatch.setattr(attr.np, "prod", lambda s: orig(s) * (1 << 20))
        b = dasp(m, x, 0).values
        monkeypatch.setattr(attr.np, "prod", orig)
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)

    @pytest.mark.parametrize("kwargs", [{"K": 0}, {"K": 11}, {"sizes": [10]}, {"sizes": []},
                                        {"scaling": "nope"}])
    def test_invalid(self, kwargs):
        with pytest.raises(InvalidArgument):
            dasp(mlp(0, n_in=10), np.ones(10), 0, **kwargs)


class TestResult:
    def test_json_round_trip(self):
        r = dasp(mlp(0, n_in=5), np.ones(5), 0, K=2)
        obj = json.loads(r.to_json())
        assert set(obj) == {"method", "class", "values", "eval_count", "seed", "params"}
        back = AttributionResult.from_dict(obj)
        assert back.values.tobytes() == r.values.tobytes()
        assert back.params == r.params

    def test_run_method(self):
        m = linear_model([[1.0, -2.0, 3.0]], [0.5])
        x = np.array([1.0, 1.0, 2.0])
        for name in METHODS:
            r = run_method(name, m, x, 0, seed=0, M=3, K=3, steps=4)
            np.testing.assert_allclose(r.values, [1, -2, 6], atol=1e-12)
            assert r.method == name
        with pytest.raises(InvalidArgument):
            run_method("deeplift", m, x, 0)
