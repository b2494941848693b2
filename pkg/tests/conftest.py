import functools
import time

import numpy as np
import pytest

from psrlcert.nn import init_mlp
from psrlcert.train import TrainConfig, train_g_supervised, train_q_ddqn


def random_mlp(rng, sizes=None, bias_scale=0.5):
    if sizes is None:
        depth = int(rng.integers(1, 4))
        sizes = [int(rng.integers(1, 7)) for _ in range(depth + 1)]
    p = init_mlp(sizes, rng)
    for layer in p.layers:
        layer.biases[:] = rng.normal(0.0, bias_scale, size=layer.biases.shape)
    return p


def central_difference(f, x, h=1e-6):
    """Numerical gradient of scalar ``f`` at array ``x``."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        hi = f(x)
        x[i] = old - h
        lo = f(x)
        x[i] = old
        grad[i] = (hi - lo) / (2 * h)
    return grad


def rel_error(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(1e-6, np.abs(a) + np.abs(b))))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


PRETRAIN_SECONDS: dict[tuple[int, str], float] = {}
ACCEPTANCE_LINES: list[str] = []


@functools.lru_cache(maxsize=None)
def pretrained_pair(seed: int, preset: str = "highway"):
    """Nominal (g, q) after DDQN and supervised g with default settings, cached per session."""
    start = time.perf_counter()
    cfg = TrainConfig(seed=seed)
    q = train_q_ddqn(preset, cfg)
    g = train_g_supervised(q, preset, cfg)
    PRETRAIN_SECONDS[(seed, preset)] = time.perf_counter() - start
    return g, q


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
