"""Upper bounds on the Lipschitz constants of logit differences.

Bounds are products of layer-wise spectral norms estimated by power
iteration.  The default ``pairwise`` mode keeps the final dense layer
per class pair, ``K[j, i] = L_pen * ||w_j - w_i||``, where ``L_pen`` is the
product of spectral norms of all earlier parametric layers.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, aslinearoperator

from . import autodiff as ad
from .autodiff import Tensor
from .netcore import Conv, Dense, Network

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 200_000
MONOTONE_SLACK = 1e-12


@dataclass
class PowerState:
    """Iterate of the power method for one linear operator."""

    u: np.ndarray
    iterations: int = 0
    estimate: float = 0.0
    converged: bool = False
    degenerate: bool = False

    @classmethod
    def fresh(cls, dim: int, rng: np.random.Generator) -> "PowerState":
        u = rng.standard_normal(dim)
        return cls(u / np.linalg.norm(u))


@dataclass
class LipschitzBounds:
    L_pen: float
    K: np.ndarray
    converged: bool
    mode: str = "pairwise"
    layer_norms: list[float] = field(default_factory=list)

    @property
    def num_classes(self) -> int:
        return self.K.shape[0]


def spectral_norm(
    op,
    state: PowerState | None = None,
    iters: int | None = None,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    seed: int = 0,
) -> tuple[float, PowerState]:
    """Estimate the largest singular value of ``op`` by power iteration on ``op^T op``.

    ``iters`` runs exactly that many steps; ``iters=None`` iterates until two
    successive estimates differ by less than ``tol`` (relative).  The estimate
    ``||A u||`` with unit ``u`` never exceeds the true norm.
    """
    op = aslinearoperator(op)
    n = op.shape[1]
    if state is None:
        state = PowerState.fresh(n, np.random.default_rng(seed))
    if state.u.shape != (n,):
        raise ValueError(f"power state has dimension {state.u.shape}, operator expects {n}")
    u = state.u
    prev = state.estimate if state.iterations else -math.inf
    budget = iters if iters is not None else max_iter
    converged = False
    est = state.estimate
    for _ in range(budget):
        w = op.matvec(u)
        est = float(np.linalg.norm(w))
        if est == 0.0:
            return 0.0, PowerState(u, state.iterations + 1, 0.0, True, True)
        z = op.rmatvec(w)
        zn = np.linalg.norm(z)
        u = z / zn
        state = PowerState(u, state.iterations + 1, est)
        if iters is None and abs(est - prev) <= tol * est:
            converged = True
            break
        prev = est
    if iters is None and not converged:
        logger.warning("power iteration did not converge in %d steps (estimate %.12g)", budget, est)
    state.converged = converged
    return est, state


def conv_operator(conv: Conv, input_shape: tuple[int, int, int]) -> LinearOperator:
    """The convolution (without bias) as a linear map on flattened H x W x C inputs."""
    H, W, C = input_shape
    out_shape = conv.out_shape(input_shape)
    kernel = conv.kernel.data

    def matvec(v):
        x = np.asarray(v).reshape(1, H, W, C)
        return ad.conv2d_numpy(x, kernel, conv.stride, conv.padding).ravel()

    def rmatvec(g):
        g = np.asarray(g).reshape((1,) + out_shape)
        return ad.conv2d_transpose_numpy(g, kernel, (H, W), conv.stride, conv.padding).ravel()

    return LinearOperator((math.prod(out_shape), H * W * C), matvec=matvec, rmatvec=rmatvec, dtype=np.float64)


def layer_operator(layer, input_shape) -> LinearOperator:
    if isinstance(layer, Dense):
        return aslinearoperator(layer.weights.data)
    if isinstance(layer, Conv):
        return conv_operator(layer, input_shape)
    raise TypeError(f"{type(layer).__name__} has no linear operator")


def conv_spectral_norm(
    conv: Conv,
    input_shape,
    state: PowerState | None = None,
    iters: int | None = None,
    tol: float = DEFAULT_TOL,
) -> float:
    return spectral_norm(conv_operator(conv, tuple(input_shape)), state, iters, tol)[0]


def _parametric(net: Network, include_final: bool) -> list[int]:
    stop = len(net.layers) if include_final else len(net.layers) - 1
    return [i for i in range(stop) if isinstance(net.layers[i], (Dense, Conv))]


def init_power_states(net: Network, seed: int | None = None, include_final: bool = True) -> dict[int, PowerState]:
    """Fresh states for every parametric layer, seeded from ``seed`` (or the model's ``power_seed``)."""
    if seed is None:
        seed = int(net.metadata.get("power_seed", 0))
    rng = np.random.default_rng(seed)
    shapes = net.layer_input_shapes()
    states = {}
    for i in _parametric(net, include_final):
        states[i] = PowerState.fresh(layer_operator(net.layers[i], shapes[i]).shape[1], rng)
    return states


def update_power_states(
    net: Network,
    states: dict[int, PowerState],
    iters: int | None = None,
    tol: float = DEFAULT_TOL,
    include_final: bool = False,
) -> list[float]:
    """Advance every state in place; returns the layer estimates."""
    shapes = net.layer_input_shapes()
    norms = []
    for i in _parametric(net, include_final):
        est, states[i] = spectral_norm(layer_operator(net.layers[i], shapes[i]), states[i], iters, tol)
        norms.append(est)
    return norms


def rayleigh_norm(net: Network, index: int, state: PowerState) -> Tensor:
    """Differentiable ``u^T A v`` at the state's iterate; the iterate is a constant."""
    layer = net.layers[index]
    shape = net.layer_input_shapes()[index]
    v = state.u
    if isinstance(layer, Dense):
        w = layer.weights.data @ v
        n = np.linalg.norm(w)
        if n == 0.0:
            return Tensor(0.0)
        return ad.tsum(layer.weights * np.outer(w / n, v))
    x = v.reshape((1,) + tuple(shape))
    out = ad.conv2d(x, layer.kernel, layer.stride, layer.padding)
    n = np.linalg.norm(out.data)
    if n == 0.0:
        return Tensor(0.0)
    return ad.tsum(out * (out.data / n))


def row_difference_norms(weights: Tensor) -> Tensor:
    """``D[j, i] = ||w_j - w_i||_2`` with an exactly zero, gradient-safe diagonal."""
    C = weights.shape[0]
    diff = weights.reshape(C, 1, -1) - weights.reshape(1, C, -1)
    eye = np.eye(C)
    sq = ad.tsum(ad.square(diff), axis=2) + eye
    return ad.sqrt(sq) * (1.0 - eye)


def pair_bounds_tensor(net: Network, states: dict[int, PowerState], mode: str = "pairwise") -> Tensor:
    """Differentiable C x C bound matrix at the current power states (no iteration)."""
    L = Tensor(1.0)
    for i in _parametric(net, include_final=False):
        L = L * rayleigh_norm(net, i, states[i])
    C = net.num_classes
    if mode == "pairwise":
        return L * row_difference_norms(net.layers[-1].weights)
    if mode == "whole-product":
        last = len(net.layers) - 1
        return L * rayleigh_norm(net, last, states[last]) * (math.sqrt(2.0) * (1.0 - np.eye(C)))
    raise ValueError(f"unknown bound mode {mode!r}")


def pair_bounds(
    net: Network,
    states: dict[int, PowerState] | None = None,
    mode: str = "pairwise",
    iters: int | None = None,
    tol: float = DEFAULT_TOL,
) -> LipschitzBounds:
    """Numeric bounds.  ``iters=None`` runs every power iteration to convergence."""
    include_final = mode == "whole-product"
    if states is None:
        states = init_power_states(net, include_final=include_final)
    norms = update_power_states(net, states, iters, tol, include_final=include_final)
    if include_final:
        L_pen = float(np.prod(norms[:-1]))
        K = math.sqrt(2.0) * L_pen * norms[-1] * (1.0 - np.eye(net.num_classes))
    elif mode == "pairwise":
        L_pen = float(np.prod(norms))
        K = L_pen * row_difference_norms(Tensor(net.layers[-1].weights.data)).data
    else:
        raise ValueError(f"unknown bound mode {mode!r}")
    idx = _parametric(net, include_final)
    converged = iters is None and all(states[i].converged for i in idx)
    return LipschitzBounds(L_pen, K, converged, mode, norms)
