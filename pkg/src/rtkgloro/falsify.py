"""Oracles that try to break issued certificates.

Each oracle searches the l2 ball of radius eps around a certified point for an
input whose top-|S| prediction set differs from the certified safe set S.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import GradientTape, Tensor
from .certify import GuaranteeConfig, certified_radius
from .netcore import Network, class_ranks, forward, forward_tensor, predict_topk

NORM_SLACK = 1e-9


@dataclass
class AttackReport:
    point_id: int
    certificate: str
    attack: str
    violated: bool
    witness: np.ndarray | None = None
    max_disruption: float = -math.inf
    vacuous: bool = False
    params: dict = field(default_factory=dict)


def _masks(safe_sets: Sequence[frozenset[int]], C: int) -> np.ndarray:
    inside = np.zeros((len(safe_sets), C), dtype=bool)
    for r, s in enumerate(safe_sets):
        inside[r, list(s)] = True
    return inside


def disruption(logits: np.ndarray, inside: np.ndarray) -> np.ndarray:
    """``max_{i not in S} f_i - min_{j in S} f_j`` per row; positive means S was overtaken."""
    hi_out = np.where(inside, -np.inf, logits).max(axis=1)
    lo_in = np.where(inside, logits, np.inf).min(axis=1)
    return hi_out - lo_in


def safe_set_changed(logits: np.ndarray, inside: np.ndarray) -> np.ndarray:
    """Whether F^{|S|} of each row differs from S (the predict_topk tie rule applies)."""
    k = inside.sum(axis=1)
    ranks = class_ranks(logits)
    return ((ranks < k[:, None]) != inside).any(axis=1)


def _project(delta: np.ndarray, eps: float) -> np.ndarray:
    norms = np.linalg.norm(delta.reshape(len(delta), -1), axis=1)
    scale = np.where(norms > eps, eps / np.maximum(norms, 1e-300), 1.0)
    return delta * scale.reshape((-1,) + (1,) * (delta.ndim - 1))


def _uniform_ball(rng: np.random.Generator, n: int, shape: tuple[int, ...], eps: float) -> np.ndarray:
    d = math.prod(shape)
    g = rng.standard_normal((n, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    r = eps * rng.uniform(size=(n, 1)) ** (1.0 / d)
    return (g * r).reshape((n,) + shape)


def _report(point_id, cert, attack, X, deltas, logits, inside_rows, owner, n_points, params) -> list[AttackReport]:
    """Fold per-candidate results back to one report per point."""
    score = disruption(logits, inside_rows)
    changed = safe_set_changed(logits, inside_rows)
    reports = []
    for p in range(n_points):
        rows = np.flatnonzero(owner == p)
        best = float(score[rows].max()) if rows.size else -math.inf
        hit = rows[changed[rows]]
        witness = deltas[hit[0]].copy() if hit.size else None
        reports.append(AttackReport(point_id[p], cert[p], attack, bool(hit.size), witness, best, params=params))
    return reports


def pgd_attack_batch(
    net: Network,
    X,
    eps: float,
    safe_sets: Sequence[frozenset[int]],
    steps: int = 200,
    restarts: int = 10,
    seed: int = 0,
    point_ids: Sequence[int] | None = None,
) -> list[AttackReport]:
    """Projected l2 gradient ascent on ``max_{i not in S} f_i - min_{j in S} f_j``.

    Restart 0 starts at the point itself, the rest uniformly in the ball.
    Step size is ``2.5 * eps / steps``.
    """
    X = np.asarray(X, dtype=np.float64)
    n = len(X)
    shape = X.shape[1:]
    ids = list(point_ids) if point_ids is not None else list(range(n))
    certs = [",".join(map(str, sorted(s))) for s in safe_sets]
    step_size = 2.5 * eps / max(steps, 1)
    params = {"steps": steps, "restarts": restarts, "step_size": step_size, "seed": seed}
    inside = _masks(safe_sets, net.num_classes)
    owner = np.tile(np.arange(n), restarts)
    base = X[owner]
    inside_rows = inside[owner]
    rng = np.random.default_rng(seed)
    delta = np.zeros_like(base)
    if restarts > 1 and eps > 0:
        delta[n:] = _uniform_ball(rng, n * (restarts - 1), shape, eps)
    best_delta = delta.copy()
    best_score = np.full(len(base), -np.inf)
    changed_any = np.zeros(len(base), dtype=bool)
    for _ in range(steps + 1):
        xin = Tensor(base + delta)
        with GradientTape() as tape:
            f = forward_tensor(net, xin)
            hi_out = ad.tmax(ad.where(inside_rows, -1e30, f), axis=1)
            lo_in = ad.tmin(ad.where(inside_rows, f, 1e30), axis=1)
            obj = ad.tsum(hi_out - lo_in)
        score = hi_out.data - lo_in.data
        changed = safe_set_changed(f.data, inside_rows)
        # once a flip is on record only stronger flips replace it
        improve = (changed & ~changed_any) | ((score > best_score) & (changed | ~changed_any))
        best_score = np.where(improve, score, best_score)
        best_delta[improve] = delta[improve]
        changed_any |= changed
        if eps == 0:
            break
        (g,) = tape.gradient(obj, [xin])
        gn = np.linalg.norm(g.reshape(len(g), -1), axis=1).reshape((-1,) + (1,) * len(shape))
        delta = _project(delta + step_size * g / np.maximum(gn, 1e-300), eps)
    final = forward(net, base + best_delta)
    return _report(ids, certs, "pgd", X, best_delta, final, inside_rows, owner, n, params)


def pgd_safe_set_attack(net: Network, x, eps: float, safe_set, steps: int = 200, restarts: int = 10, seed: int = 0) -> AttackReport:
    x = np.asarray(x, dtype=np.float64)
    return pgd_attack_batch(net, x[None], eps, [frozenset(safe_set)], steps, restarts, seed)[0]


def sphere_sample_batch(
    net: Network,
    X,
    eps: float,
    safe_sets: Sequence[frozenset[int]],
    n_samples: int = 10_000,
    seed: int = 0,
    point_ids: Sequence[int] | None = None,
    chunk_rows: int = 200_000,
) -> list[AttackReport]:
    """Uniform samples from each eps-ball; reports any sample that changes the safe set."""
    X = np.asarray(X, dtype=np.float64)
    n = len(X)
    ids = list(point_ids) if point_ids is not None else list(range(n))
    certs = [",".join(map(str, sorted(s))) for s in safe_sets]
    params = {"n_samples": n_samples, "seed": seed}
    if n_samples == 0:
        return [AttackReport(ids[p], certs[p], "sphere", False, vacuous=True, params=params) for p in range(n)]
    shape = X.shape[1:]
    inside = _masks(safe_sets, net.num_classes)
    rng = np.random.default_rng(seed)
    reports = []
    per_chunk = max(1, chunk_rows // n_samples)
    for start in range(0, n, per_chunk):
        pts = np.arange(start, min(start + per_chunk, n))
        owner = np.repeat(np.arange(len(pts)), n_samples)
        deltas = _uniform_ball(rng, len(owner), shape, eps)
        logits = forward(net, X[pts][owner] + deltas)
        reports += _report(
            [ids[p] for p in pts], [certs[p] for p in pts], "sphere", None, deltas, logits, inside[pts][owner],
            owner, len(pts), params,
        )
    return reports


def sphere_sample_check(net: Network, x, eps: float, safe_set, n_samples: int = 10_000, seed: int = 0) -> AttackReport:
    x = np.asarray(x, dtype=np.float64)
    return sphere_sample_batch(net, x[None], eps, [frozenset(safe_set)], n_samples, seed)[0]


def verify_witness(net: Network, x, report: AttackReport, eps: float) -> bool:
    """Re-evaluate a reported witness: within the ball and actually changing the safe set."""
    if report.witness is None:
        return False
    if np.linalg.norm(report.witness) > eps + NORM_SLACK:
        return False
    safe = frozenset(int(c) for c in report.certificate.split(",")) if report.certificate else frozenset()
    return predict_topk(forward(net, np.asarray(x) + report.witness), len(safe)) != safe


# ---------------------------------------------------------------- exact certification of linear models


@dataclass
class ExactDecision:
    accepted: bool
    kstar: int | None
    margin: float
    safe_set: frozenset[int] | None


def linear_exact_certify(net: Network, x, eps: float, config: GuaranteeConfig) -> ExactDecision:
    """Exact certification of a network with no hidden layers.

    For ``f(x) = W x + b`` the worst case of ``f_j - f_i`` over the eps-ball is
    ``f_j(x) - f_i(x) - eps * ||w_j - w_i||``; the margin chain is replayed
    with these exact pair margins using plain loops.
    """
    if not net.is_linear():
        raise ValueError("exact certification requires a network without hidden layers")
    W = net.layers[0].weights.data
    b = net.layers[0].bias.data
    f = W @ np.asarray(x, dtype=np.float64).ravel() + b
    C = len(f)
    order = sorted(range(C), key=lambda c: (-f[c], c))
    if config.kind == "standard":
        kmax = 1
    elif config.kind == "rtk":
        kmax = max(1, min(config.K, C - 1))
    else:
        kmax = max(1, min(config.affinity.kmax, C - 1))
    best_m = -math.inf
    certified = []
    for k in range(1, kmax + 1):
        top, rest = order[:k], order[k:]
        if config.kind == "affinity" and not config.affinity.contains(top):
            continue
        mk = min(
            f[j] - max(f[i] + eps * float(np.linalg.norm(W[j] - W[i])) for i in rest)
            for j in top
        )
        if mk > 0:
            certified.append(k)
        best_m = max(best_m, mk)
    if best_m == -math.inf:  # no admissible k
        return ExactDecision(False, None, -1e30, None)
    if best_m > 0:
        kstar = max(certified)
        return ExactDecision(True, kstar, best_m, frozenset(order[:kstar]))
    return ExactDecision(False, None, best_m, None)


def linear_exact_radius(net: Network, x, config: GuaranteeConfig) -> float:
    """Exact certified radius of a linear model (bounds are tight for linear maps)."""
    W = net.layers[0].weights.data
    D = np.linalg.norm(W[:, None, :] - W[None, :, :], axis=2)
    f = W @ np.asarray(x, dtype=np.float64).ravel() + net.layers[0].bias.data
    return certified_radius(f, D, config.K, config.affinity)
