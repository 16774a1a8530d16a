import numpy as np
import pytest

from rtkgloro.lipschitz import LipschitzBounds
from rtkgloro.netcore import Dense, MinMax, Network

ACCEPTANCE_LINES: list[str] = []


def fixed_bounds(K) -> LipschitzBounds:
    """Converged-looking bounds wrapping an explicit pair matrix."""
    K = np.asarray(K, dtype=np.float64)
    if K.ndim == 0:
        raise ValueError("use uniform_bounds for scalars")
    return LipschitzBounds(1.0, K, True)


def uniform_bounds(C: int, value: float = 1.0) -> LipschitzBounds:
    return fixed_bounds(value * (1.0 - np.eye(C)))


def linear_net(W, b=None) -> Network:
    W = np.asarray(W, dtype=np.float64)
    b = np.zeros(W.shape[0]) if b is None else np.asarray(b, dtype=np.float64)
    return Network([Dense(W, b)], (W.shape[1],))


def random_net(rng: np.random.Generator, n_layers: int, d: int, C: int, width: int | None = None) -> Network:
    """``n_layers`` dense layers with MinMax between them and Gaussian weights."""
    layers = []
    fan = d
    for _ in range(n_layers - 1):
        w = width or int(rng.integers(2, 9)) * 2
        layers += [Dense(rng.standard_normal((w, fan)) / np.sqrt(fan), 0.1 * rng.standard_normal(w)), MinMax()]
        fan = w
    layers.append(Dense(rng.standard_normal((C, fan)) / np.sqrt(fan), 0.1 * rng.standard_normal(C)))
    return Network(layers, (d,))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
