"""Verified-robust accuracy, rejection rate and clean accuracy."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .certify import AffinityCollection, CertificationResult, GuaranteeConfig, certify_batch
from .data import LabeledDataset
from .lipschitz import LipschitzBounds, pair_bounds
from .netcore import Network, class_ranks, forward, predict_topk

METRIC_COLUMNS = ("dataset", "guarantee", "eps", "vra", "rejection_rate", "clean_accuracy", "n", "seed")


@dataclass
class MetricsReport:
    guarantee: str
    eps: float
    vra: float
    rejection_rate: float
    clean_accuracy: float
    counts: dict = field(default_factory=dict)


def _check(results: Sequence[CertificationResult], kind: str | tuple[str, ...]) -> None:
    kinds = (kind,) if isinstance(kind, str) else kind
    for r in results:
        if r.guarantee not in kinds:
            raise ValueError(f"expected {kinds} certificates, got {r.guarantee!r}")


def _safe_hits(results, labels) -> np.ndarray:
    return np.array([r.accepted and int(y) in r.safe_set for r, y in zip(results, labels)], dtype=bool)


def rtk_vra(results: Sequence[CertificationResult], labels) -> float:
    """Fraction of points certified with the label inside F^{k*}."""
    _check(results, ("rtk", "standard"))
    return float(_safe_hits(results, labels).mean()) if len(results) else 0.0


def affinity_vra(results: Sequence[CertificationResult], labels, affinity: AffinityCollection | None = None) -> float:
    _check(results, ("affinity", "standard"))
    hits = _safe_hits(results, labels)
    if affinity is not None:
        hits &= np.array([not r.accepted or affinity.contains(r.safe_set) for r in results])
    return float(hits.mean()) if len(results) else 0.0


def standard_vra(results: Sequence[CertificationResult], logits, labels) -> float:
    top = np.argmax(np.atleast_2d(logits), axis=1)
    hits = [r.accepted and t == y for r, t, y in zip(results, top, labels)]
    return float(np.mean(hits)) if len(hits) else 0.0


def rejection_rate(results: Sequence[CertificationResult]) -> float:
    return float(np.mean([not r.accepted for r in results])) if len(results) else 0.0


def topk_accuracy(logits, label: int, k: int) -> bool:
    return int(label) in predict_topk(logits, k)


def affinity_accuracy(logits, label: int, affinity: AffinityCollection) -> bool:
    """True iff every class scored above the label shares an affinity set with it."""
    f = np.asarray(logits, dtype=np.float64)
    above = set(np.flatnonzero(f > f[int(label)]).tolist())
    return any(int(label) in s and above <= s for s in affinity.sets)


def clean_correct(logits: np.ndarray, labels, config: GuaranteeConfig) -> np.ndarray:
    """Per-point correctness under the guarantee's accuracy notion."""
    logits = np.atleast_2d(logits)
    labels = np.asarray(labels)
    if config.kind == "affinity":
        return np.array([affinity_accuracy(f, y, config.affinity) for f, y in zip(logits, labels)], dtype=bool)
    k = config.k_max(logits.shape[1]) if config.kind == "rtk" else 1
    ranks = class_ranks(logits)
    return ranks[np.arange(len(labels)), labels] < k


def metrics_from_results(
    results: Sequence[CertificationResult], logits, labels, eps: float, config: GuaranteeConfig
) -> MetricsReport:
    labels = np.asarray(labels)
    if config.kind == "standard":
        vra = standard_vra(results, logits, labels)
    elif config.kind == "rtk":
        vra = rtk_vra(results, labels)
    else:
        vra = affinity_vra(results, labels, config.affinity)
    correct = clean_correct(logits, labels, config)
    accepted = int(sum(r.accepted for r in results))
    return MetricsReport(
        config.label,
        eps,
        vra,
        rejection_rate(results),
        float(correct.mean()),
        {"n": len(results), "accepted": accepted, "correct": int(correct.sum())},
    )


def evaluate_network(
    net: Network,
    eps: float,
    config: GuaranteeConfig,
    dataset: LabeledDataset,
    bounds: LipschitzBounds | None = None,
    workers: int = 1,
) -> MetricsReport:
    """Certify ``dataset`` with converged bounds and reduce to a report."""
    bounds = bounds or pair_bounds(net)
    X = dataset.points.reshape((len(dataset),) + net.input_shape)
    results = certify_batch(net, bounds, eps, config, X, workers=workers)
    return metrics_from_results(results, forward(net, X), dataset.labels, eps, config)


def _config_line(fh, config_ref: str | None) -> None:
    if config_ref:
        fh.write(f"# config: {config_ref}\n")


def write_metrics_csv(rows: list[dict], path, config_ref: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        _config_line(fh, config_ref)
        writer = csv.DictWriter(fh, fieldnames=list(METRIC_COLUMNS), extrasaction="ignore")
        writer.writeheader()
        writer.writerows(rows)


def summarize(rows: list[dict]) -> list[dict]:
    """Append mean and standard deviation rows per (dataset, guarantee, eps) group."""
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        groups.setdefault((r["dataset"], r["guarantee"], r["eps"]), []).append(r)
    out = []
    for (ds, g, eps), members in groups.items():
        for stat, fn in (("mean", np.mean), ("std", np.std)):
            row = {"dataset": ds, "guarantee": g, "eps": eps, "n": members[0]["n"], "seed": stat}
            for col in ("vra", "rejection_rate", "clean_accuracy"):
                row[col] = float(fn([m[col] for m in members]))
            out.append(row)
    return out


def write_bounds_csv(bounds: LipschitzBounds, class_names: list[str], path, config_ref: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        _config_line(fh, config_ref)
        writer = csv.writer(fh)
        writer.writerow(["class"] + list(class_names))
        for name, row in zip(class_names, bounds.K):
            writer.writerow([name] + [repr(float(v)) for v in row])


def read_metrics_csv(path) -> list[dict]:
    with open(Path(path), newline="") as fh:
        return list(csv.DictReader(line for line in fh if not line.startswith("#")))
