"""Standard, relaxed top-K and affinity certification heads.

All margin computations are batched over rows of a logit matrix and written
with :mod:`rtkgloro.autodiff` operations, so the same code serves training
(inside a gradient tape) and certification (eager numpy).
"""

from __future__ import annotations

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .lipschitz import LipschitzBounds
from .netcore import Network, class_ranks, forward

logger = logging.getLogger(__name__)

# Stands in for -inf/+inf in masked reductions and the "no admissible k" sentinel;
# finite so gradients stay finite during training.
BIG = 1e30
GUARANTEES = ("standard", "rtk", "affinity")


class CertificationRefused(RuntimeError):
    """Raised when certification is requested with unconverged Lipschitz bounds."""


@dataclass(frozen=True)
class AffinityCollection:
    sets: tuple[frozenset[int], ...]
    num_classes: int

    def __post_init__(self):
        if not self.sets:
            raise ValueError("an affinity collection needs at least one set")
        for s in self.sets:
            if not s:
                raise ValueError("affinity sets must be nonempty")
            if min(s) < 0 or max(s) >= self.num_classes:
                raise ValueError(f"affinity set {sorted(s)} has classes outside 0..{self.num_classes - 1}")
        missing = set(range(self.num_classes)) - set().union(*self.sets)
        if missing:
            warnings.warn(f"classes {sorted(missing)} are not in any affinity set", stacklevel=3)

    @classmethod
    def from_sets(cls, sets: Iterable[Iterable[int]], num_classes: int) -> "AffinityCollection":
        # duplicates are kept: per-class families may repeat a set
        return cls(tuple(frozenset(int(c) for c in s) for s in sets), num_classes)

    @classmethod
    def singletons(cls, num_classes: int) -> "AffinityCollection":
        return cls.from_sets([[c] for c in range(num_classes)], num_classes)

    @classmethod
    def full(cls, num_classes: int) -> "AffinityCollection":
        return cls.from_sets([range(num_classes)], num_classes)

    @property
    def bitmaps(self) -> np.ndarray:
        bm = np.zeros((len(self.sets), self.num_classes), dtype=bool)
        for r, s in enumerate(self.sets):
            bm[r, list(s)] = True
        return bm

    @property
    def kmax(self) -> int:
        return max(len(s) for s in self.sets)

    def contains(self, classes: Iterable[int]) -> bool:
        classes = set(classes)
        return any(classes <= s for s in self.sets)


@dataclass(frozen=True)
class GuaranteeConfig:
    kind: str = "standard"
    K: int = 1
    affinity: AffinityCollection | None = None

    def __post_init__(self):
        if self.kind not in GUARANTEES:
            raise ValueError(f"guarantee must be one of {GUARANTEES}, got {self.kind!r}")
        if self.kind == "affinity" and self.affinity is None:
            raise ValueError("affinity guarantee needs an affinity collection")
        if self.K < 1:
            raise ValueError("K must be at least 1")

    @classmethod
    def standard(cls) -> "GuaranteeConfig":
        return cls("standard", 1)

    @classmethod
    def rtk(cls, K: int) -> "GuaranteeConfig":
        return cls("rtk", K)

    @classmethod
    def with_affinity(cls, affinity: AffinityCollection) -> "GuaranteeConfig":
        return cls("affinity", affinity.kmax, affinity)

    def k_max(self, num_classes: int) -> int:
        """Largest k considered: K (or the largest affinity set) clamped to C - 1."""
        if self.kind == "standard":
            return 1
        return max(1, min(self.K, num_classes - 1))

    def clamped(self, num_classes: int) -> bool:
        return self.kind != "standard" and self.K > num_classes - 1

    @property
    def label(self) -> str:
        if self.kind == "rtk":
            return f"RT{self.K}"
        return self.kind


@dataclass
class CertificationResult:
    accepted: bool
    guarantee: str
    kstar: int | None
    safe_set: frozenset[int] | None
    margin: float
    per_k_margins: np.ndarray
    radius: float | None = None
    min_k: int | None = None
    smallest_safe_set: frozenset[int] | None = None
    clamped: bool = False


# ---------------------------------------------------------------- batched core


def _check_k(k: int, C: int) -> None:
    if not 1 <= k <= C - 1:
        raise ValueError(f"k must be in 1..{C - 1} (k = C has an empty complement), got {k}")


def topk_margin_table(f: Tensor, K, eps: float, kmax: int, ranks: np.ndarray | None = None):
    """Per-class and per-k margins for k = 1..kmax.

    Returns ``(mkj, mk)`` where ``mkj[k-1]`` is a (B, C) tensor holding
    ``f_j - max_{i not in F^k}(f_i + eps K_ji)`` (meaningful for ``j in F^k``)
    and ``mk`` is the (B, kmax) tensor of ``min_{j in F^k} mkj``.
    """
    f, K = ad.as_tensor(f), ad.as_tensor(K)
    B, C = f.shape
    if ranks is None:
        ranks = class_ranks(f.data)
    # shifted[b, j, i] = f_i + eps K_ji
    shifted = f.reshape(B, 1, C) + (K * eps).reshape(1, C, C)
    mkj, mk = [], []
    for k in range(1, kmax + 1):
        inside = ranks < k
        outside = ~inside
        best_out = ad.tmax(ad.where(outside[:, None, :], shifted, -BIG), axis=2)
        m_j = f - best_out
        mkj.append(m_j)
        mk.append(ad.tmin(ad.where(inside, m_j, BIG), axis=1))
    return mkj, ad.stack(mk, axis=1)


def admissible_mask(ranks: np.ndarray, kmax: int, affinity: AffinityCollection) -> np.ndarray:
    """(B, kmax) mask of k with F^k contained in some affinity set (bitmap test)."""
    outside_sets = ~affinity.bitmaps  # (S, C)
    adm = np.empty((ranks.shape[0], kmax), dtype=bool)
    for k in range(1, kmax + 1):
        topk = ranks < k  # (B, C)
        # F^k subset of S  <=>  no top-k class lies outside S
        escapes = (topk[:, None, :] & outside_sets[None, :, :]).any(axis=2)
        adm[:, k - 1] = (~escapes).any(axis=1)
    return adm


def certification_margins(f, K, eps: float, config: GuaranteeConfig):
    """Margin of the configured guarantee for each row of ``f``.

    Returns ``(m, mk, admissible)``: the (B,) margin tensor, the (B, kmax)
    per-k margins and the (B, kmax) mask of k values the guarantee admits.
    """
    f = ad.as_tensor(f)
    B, C = f.shape
    kmax = config.k_max(C)
    if config.kind == "affinity":
        kmax = max(1, min(config.affinity.kmax, C - 1))
    ranks = class_ranks(f.data)
    _, mk = topk_margin_table(f, K, eps, kmax, ranks)
    if config.kind == "affinity":
        adm = admissible_mask(ranks, kmax, config.affinity)
        m = ad.tmax(ad.where(adm, mk, -BIG), axis=1)
    else:
        adm = np.ones((B, kmax), dtype=bool)
        m = ad.tmax(mk, axis=1)
    return m, mk, adm


def standard_bottom(f, K, eps: float) -> Tensor:
    """The GloRo bottom logit ``max_{i != j}(f_i + eps K_ji)`` with j the top class."""
    f, K = ad.as_tensor(f), ad.as_tensor(K)
    B, C = f.shape
    top = np.argmax(f.data, axis=1)
    Krows = ad.getitem(K, top)  # (B, C): K[top, i]
    cand = f + Krows * eps
    others = np.ones((B, C), dtype=bool)
    others[np.arange(B), top] = False
    return ad.tmax(ad.where(others, cand, -BIG), axis=1)


def gloro_logits(f, K, eps: float, config: GuaranteeConfig) -> Tensor:
    """Augmented (B, C + 1) logits; the last column is the bottom class."""
    f = ad.as_tensor(f)
    if config.kind == "standard":
        bottom = standard_bottom(f, K, eps)
    else:
        m, _, _ = certification_margins(f, K, eps, config)
        bottom = ad.tmax(f, axis=1) - m
    return ad.concat([f, bottom.reshape(-1, 1)], axis=1)


def head_accepts(aug) -> np.ndarray:
    """Accept iff the maximal augmented output is a real class; ties go to bottom."""
    aug = np.asarray(aug.data if isinstance(aug, Tensor) else aug)
    single = aug.ndim == 1
    aug = np.atleast_2d(aug)
    out = aug[:, :-1].max(axis=1) > aug[:, -1]
    return out[0] if single else out


# ---------------------------------------------------------------- single-point API


def _row(logits) -> Tensor:
    return Tensor(np.asarray(logits, dtype=np.float64).reshape(1, -1))


def _kmat(K, C: int) -> np.ndarray:
    K = np.asarray(K.K if isinstance(K, LipschitzBounds) else K, dtype=np.float64)
    if K.ndim == 0:
        K = K * (1.0 - np.eye(C))
    return K


def margins_mkj(logits, K, eps: float, k: int) -> dict[int, float]:
    f = _row(logits)
    C = f.shape[1]
    _check_k(k, C)
    ranks = class_ranks(f.data)
    mkj, _ = topk_margin_table(f, _kmat(K, C), eps, k, ranks)
    return {int(j): float(mkj[k - 1].data[0, j]) for j in np.flatnonzero(ranks[0] < k)}


def margin_mk(logits, K, eps: float, k: int) -> float:
    f = _row(logits)
    C = f.shape[1]
    _check_k(k, C)
    _, mk = topk_margin_table(f, _kmat(K, C), eps, k)
    return float(mk.data[0, k - 1])


def margin_rtk(logits, K, eps: float, Kparam: int) -> float:
    f = _row(logits)
    m, _, _ = certification_margins(f, _kmat(K, f.shape[1]), eps, GuaranteeConfig.rtk(Kparam))
    return float(m.data[0])


def margin_affinity(logits, K, eps: float, affinity: AffinityCollection) -> float:
    f = _row(logits)
    m, _, _ = certification_margins(f, _kmat(K, f.shape[1]), eps, GuaranteeConfig.with_affinity(affinity))
    return float(m.data[0])


def margin_standard(logits, K, eps: float) -> float:
    """``f_top - max_{i != top}(f_i + eps K_top,i)``."""
    f = _row(logits)
    return float(f.data[0].max() - standard_bottom(f, _kmat(K, f.shape[1]), eps).data[0])


def augmented_logits(logits, K, eps: float, config: GuaranteeConfig) -> np.ndarray:
    f = np.asarray(logits, dtype=np.float64)
    single = f.ndim == 1
    out = gloro_logits(np.atleast_2d(f), _kmat(K, f.shape[-1]), eps, config).data
    return out[0] if single else out


def rtk_head(net: Network, bounds: LipschitzBounds, eps: float, Kparam: int, x) -> np.ndarray:
    return augmented_logits(forward(net, x), bounds.K, eps, GuaranteeConfig.rtk(Kparam))


def affinity_head(net: Network, bounds: LipschitzBounds, eps: float, affinity: AffinityCollection, x) -> np.ndarray:
    return augmented_logits(forward(net, x), bounds.K, eps, GuaranteeConfig.with_affinity(affinity))


def standard_head(net: Network, bounds: LipschitzBounds, eps: float, x) -> np.ndarray:
    return augmented_logits(forward(net, x), bounds.K, eps, GuaranteeConfig.standard())


# ---------------------------------------------------------------- radius


def pair_radii(diff: np.ndarray, K: np.ndarray) -> np.ndarray:
    """Elementwise ``diff / K`` with the zero-bound cases resolved."""
    with np.errstate(divide="ignore", invalid="ignore"):
        r = diff / K
    zero = K == 0
    r = np.where(zero & (diff > 0), np.inf, r)
    r = np.where(zero & (diff < 0), -np.inf, r)
    return np.where(zero & (diff == 0), 0.0, r)


def radius_table(f: np.ndarray, K: np.ndarray, kmax: int) -> np.ndarray:
    """(B, kmax) table of r^k = min over j in F^k, i not in F^k of (f_j - f_i) / K_ji."""
    f = np.atleast_2d(np.asarray(f, dtype=np.float64))
    ranks = class_ranks(f)
    radii = pair_radii(f[:, :, None] - f[:, None, :], K[None])  # [b, j, i]
    out = np.empty((f.shape[0], kmax))
    for k in range(1, kmax + 1):
        inside = ranks < k
        mask = inside[:, :, None] & ~inside[:, None, :]
        out[:, k - 1] = np.where(mask, radii, np.inf).min(axis=(1, 2))
    return out


def certified_radius(logits, K, Kparam: int, affinity: AffinityCollection | None = None) -> float:
    """Largest eps at which the relaxed top-K certificate would still be issued."""
    f = np.asarray(logits, dtype=np.float64).reshape(1, -1)
    C = f.shape[1]
    Kmat = _kmat(K, C)
    if affinity is not None:
        kmax = max(1, min(affinity.kmax, C - 1))
        table = radius_table(f, Kmat, kmax)
        adm = admissible_mask(class_ranks(f), kmax, affinity)
        table = np.where(adm, table, -np.inf)
    else:
        table = radius_table(f, Kmat, max(1, min(Kparam, C - 1)))
    return float(table.max())


# ---------------------------------------------------------------- certificates


def require_converged(bounds: LipschitzBounds) -> None:
    if not bounds.converged:
        raise CertificationRefused("certificates are only issued from converged Lipschitz bounds")


def certify_logits(logits: np.ndarray, bounds: LipschitzBounds, eps: float, config: GuaranteeConfig) -> list[CertificationResult]:
    """Certificates for a (B, C) logit matrix; see :func:`certify_point`."""
    f = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    C = f.shape[1]
    Kmat = bounds.K
    m, mk, adm = certification_margins(f, Kmat, eps, config)
    m, mk = m.data, mk.data
    kmax = mk.shape[1]
    table = radius_table(f, Kmat, kmax)
    order = np.argsort(-f, axis=1, kind="stable")
    if config.kind == "standard":
        # the standard margin is recomputed with the GloRo bottom logit
        m = f.max(axis=1) - standard_bottom(f, Kmat, eps).data
    clamped = config.clamped(C)
    if clamped:
        logger.warning("K=%d exceeds C-1=%d; clamped", config.K, C - 1)
    results = []
    for b in range(f.shape[0]):
        certified = (mk[b] > 0) & adm[b]
        ks = np.flatnonzero(certified) + 1
        accepted = bool(m[b] > 0)
        if accepted and ks.size == 0:  # rounding disagreement between the two standard formulas
            accepted = False
        radius = float(np.where(adm[b], table[b], -np.inf).max())
        if accepted:
            kstar, kmin = int(ks.max()), int(ks.min())
            results.append(
                CertificationResult(
                    True, config.kind, kstar, frozenset(int(c) for c in order[b, :kstar]), float(m[b]),
                    mk[b].copy(), radius, kmin, frozenset(int(c) for c in order[b, :kmin]), clamped,
                )
            )
        else:
            results.append(
                CertificationResult(False, config.kind, None, None, float(m[b]), mk[b].copy(), radius, clamped=clamped)
            )
    return results


def certify_batch(
    net: Network,
    bounds: LipschitzBounds,
    eps: float,
    config: GuaranteeConfig,
    X,
    workers: int = 1,
    chunk: int = 4096,
) -> list[CertificationResult]:
    require_converged(bounds)
    X = np.asarray(X, dtype=np.float64)
    pieces = [X[i : i + chunk] for i in range(0, len(X), chunk)]

    def run(piece):
        return certify_logits(forward(net, piece), bounds, eps, config)

    if workers > 1 and len(pieces) > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(run, pieces))
    else:
        parts = [run(p) for p in pieces]
    return [r for part in parts for r in part]


def certify_point(net: Network, bounds: LipschitzBounds, eps: float, config: GuaranteeConfig, x) -> CertificationResult:
    """Certificate for one point.

    ``kstar`` is the largest certified k (the loosest guarantee) and
    ``safe_set = F^kstar(x)``; ``smallest_safe_set`` uses the smallest certified k.
    """
    x = np.asarray(x, dtype=np.float64)
    return certify_batch(net, bounds, eps, config, x[None])[0]


def decisions(results: Sequence[CertificationResult]) -> np.ndarray:
    return np.array([r.accepted for r in results], dtype=bool)
