import numpy as np
import pytest

from shapprop.network import LayerSpec, Model, generate_random_model

ACCEPTANCE_LINES = []


def record_criterion(number, passed, detail):
    ACCEPTANCE_LINES.append(f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def max_model():
    """f(x1, x2) = max(x1, x2) as a bare max-pool model."""
    return Model((2,), [LayerSpec("maxpool", window=(2,))])


def random_linear_model(seed, n_in, depth=1, n_out=1):
    rng = np.random.default_rng(seed)
    layers = []
    width = n_in
    for d in range(depth):
        out = n_out if d == depth - 1 else int(rng.integers(3, 9))
        layers.append(LayerSpec("dense", weights=rng.normal(size=(out, width)),
                                bias=rng.normal(size=out)))
        width = out
    return Model((n_in,), layers)


def mlp(seed, n_in=10, hidden=32, n_out=1):
    return generate_random_model(seed, f"{n_in}-{hidden}-relu-{n_out}")
