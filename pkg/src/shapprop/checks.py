"""Monte Carlo validation suites for the moment-matching machinery.

Each check compares a closed-form or propagated quantity against a
sampling estimate that shares no code with it, and returns a
:class:`CheckResult`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .coalition import coalition_input_stats, empirical_coalition_stats
from .gaussian import max_moments, relu_moments
from .network import LayerSpec, Model, forward_batch, generate_random_model
from .probnet import propagate_batch

# Added to every Monte Carlo band; covers estimates whose sample spread is 0.
MC_ABS_FLOOR = 1e-9


@dataclass
class CheckResult:
    name: str
    passed: bool
    worst: float
    detail: str

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"


def mc_moments(samples):
    """Sample mean/variance and the standard errors of both."""
    n = samples.shape[0]
    mean = samples.mean(axis=0)
    dev = samples - mean
    var = (dev ** 2).mean(axis=0)
    m4 = (dev ** 4).mean(axis=0)
    se_mean = np.sqrt(var / n)
    se_var = np.sqrt(np.maximum(m4 - var ** 2, 0.0) / n)
    return mean, var * n / (n - 1), se_mean, se_var


def _z(value, estimate, se):
    return abs(value - estimate) / (se + MC_ABS_FLOOR)


def check_relu_moments(n_inputs=100, n_samples=10**6, seed=0, n_se=4.0) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_inputs):
        mu = rng.uniform(-5, 5)
        var = rng.uniform(1e-4, 4)
        y = np.maximum(rng.normal(mu, np.sqrt(var), n_samples), 0.0)
        m, v, se_m, se_v = mc_moments(y)
        cm, cv = relu_moments(mu, var)
        worst = max(worst, _z(cm, m, se_m), _z(cv, v, se_v))
    return CheckResult("relu_gaussian_moments vs Monte Carlo", worst <= n_se, worst,
                       f"{n_inputs} inputs, worst deviation {worst:.2f} SE (limit {n_se})")


def check_max_moments(n_inputs=100, n_samples=10**6, seed=1, n_se=4.0) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_inputs):
        ma, mb = rng.uniform(-5, 5, 2)
        va, vb = rng.uniform(1e-4, 4, 2)
        y = np.maximum(rng.normal(ma, np.sqrt(va), n_samples),
                       rng.normal(mb, np.sqrt(vb), n_samples))
        m, v, se_m, se_v = mc_moments(y)
        cm, cv = max_moments(ma, va, mb, vb)
        worst = max(worst, _z(cm, m, se_m), _z(cv, v, se_v))
    return CheckResult("max_pair_moments vs Monte Carlo", worst <= n_se, worst,
                       f"{n_inputs} input pairs, worst deviation {worst:.2f} SE (limit {n_se})")


def random_tail(seed, width=16, hidden=8) -> Model:
    """relu -> dense -> relu -> dense(1), fed by a Gaussian of given width."""
    rng = np.random.default_rng(seed)
    w1 = rng.normal(0, np.sqrt(2.0 / width), (hidden, width))
    w2 = rng.normal(0, np.sqrt(2.0 / hidden), (1, hidden))
    layers = [LayerSpec("relu"),
              LayerSpec("dense", weights=w1, bias=rng.normal(0, np.sqrt(0.1), hidden)),
              LayerSpec("relu"),
              LayerSpec("dense", weights=w2, bias=rng.normal(0, np.sqrt(0.1), 1))]
    return Model((width,), layers)


def check_tail_propagation(n_models=20, n_samples=10**6, seed=2, rel_tol=0.05,
                           batch=200_000) -> CheckResult:
    """Propagated output mean vs sampling through two nonlinear layers.

    Relative error is taken against max(|MC mean|, MC std), which keeps the
    measure meaningful when the output mean is close to zero.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for j in range(n_models):
        tail = random_tail(seed * 1000 + j)
        mu = rng.normal(0, 1, 16)
        var = rng.uniform(0.1, 2.0, 16)
        pm, _ = propagate_batch(tail, mu[None], var[None])
        total = total_sq = 0.0
        done = 0
        while done < n_samples:
            n = min(batch, n_samples - done)
            z = rng.normal(mu, np.sqrt(var), (n, 16))
            out = forward_batch(tail, z)[:, 0]
            total += out.sum()
            total_sq += (out ** 2).sum()
            done += n
        mc_mean = total / n_samples
        mc_std = np.sqrt(max(total_sq / n_samples - mc_mean ** 2, 0.0))
        err = abs(pm[0, 0] - mc_mean) / max(abs(mc_mean), mc_std)
        worst = max(worst, err)
    return CheckResult("probabilistic tail vs Monte Carlo", worst < rel_tol, worst,
                       f"{n_models} tails, worst relative mean error {worst:.4f} (limit {rel_tol})")


def check_coalition_stats(n_layers=20, n_samples=10**5, seed=3, rel_tol=0.02,
                          n_se=4.0, n_features=12, width=16) -> CheckResult:
    """First-layer coalition mean/variance vs explicitly sampled coalitions.

    Variances must agree within ``rel_tol`` relative error per hidden unit;
    means within ``n_se`` Monte Carlo standard errors.
    """
    rng = np.random.default_rng(seed)
    worst_var = worst_z = 0.0
    for j in range(n_layers):
        model = generate_random_model(seed * 1000 + j, f"{n_features}-{width}")
        x = rng.normal(size=n_features)
        i = int(rng.integers(n_features))
        for k in sorted({2, n_features // 2, n_features - 2}):
            stats = coalition_input_stats(model, x, i, k)
            emp_mean, emp_var = empirical_coalition_stats(model, x, i, k, n_samples,
                                                          seed=derive(seed, j, k))
            worst_var = max(worst_var, float(np.max(np.abs(stats.var - emp_var) / emp_var)))
            se = np.sqrt(emp_var / n_samples)
            worst_z = max(worst_z, float(np.max(_z(stats.mu, emp_mean, se))))
    passed = worst_var <= rel_tol and worst_z <= n_se
    return CheckResult("coalition first-layer statistics vs sampled coalitions", passed,
                       worst_var,
                       f"{n_layers} layers, worst relative variance error {worst_var:.4f} "
                       f"(limit {rel_tol}), worst mean deviation {worst_z:.2f} SE (limit {n_se})")


def derive(*parts) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def run_all(seed: int = 0) -> list[CheckResult]:
    """Run every suite at the sample counts its tolerances are calibrated for."""
    return [
        check_relu_moments(seed=seed),
        check_max_moments(seed=seed + 1),
        check_tail_propagation(seed=seed + 2),
        check_coalition_stats(seed=seed + 3),
    ]
