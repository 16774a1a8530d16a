"""Synthetic datasets, separation estimates and affinity-set configuration."""

from __future__ import annotations

import csv
import io
import json
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .certify import AffinityCollection

DATASET_HEADER = "# rtkgloro-dataset v1"
AFFINITY_HEADER = "# rtkgloro-affinity v1"

ACAS_CLASSES = ("hard left", "left", "clear", "right", "hard right")


class DataError(ValueError):
    """Malformed dataset or affinity configuration."""


@dataclass
class LabeledDataset:
    points: np.ndarray
    labels: np.ndarray
    class_names: list[str]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.points.ndim != 2 or len(self.points) < 1:
            raise DataError("points must be a nonempty n x d matrix")
        if self.labels.shape != (len(self.points),):
            raise DataError("one label per point is required")
        if self.labels.min() < 0 or self.labels.max() >= len(self.class_names):
            raise DataError("labels must lie in [0, C)")

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return len(self.points)

    def subset(self, index) -> "LabeledDataset":
        return replace(self, points=self.points[index], labels=self.labels[index])


@dataclass(frozen=True)
class SeparationEstimate:
    min_interclass_distance: float
    suggested_eps: float


def gen_synthetic_2d(seed: int, n_per_class: int, overlap: float = 0.0) -> LabeledDataset:
    """Four isotropic Gaussian blobs with means at 0, 90, 180 and 270 degrees on the unit circle.

    The standard deviation is ``0.25 + 0.35 * overlap``: adjacent classes
    overlap for ``overlap > 0`` while opposite classes stay apart.
    """
    if n_per_class < 1:
        raise ValueError("n_per_class must be at least 1")
    if not 0.0 <= overlap <= 1.0:
        raise ValueError("overlap must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    sigma = 0.25 + 0.35 * overlap
    angles = np.deg2rad([0.0, 90.0, 180.0, 270.0])
    means = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    points = np.concatenate([m + sigma * rng.standard_normal((n_per_class, 2)) for m in means])
    labels = np.repeat(np.arange(4), n_per_class)
    perm = rng.permutation(len(points))
    meta = {"generator": "synthetic_2d", "seed": seed, "n_per_class": n_per_class, "overlap": overlap, "sigma": sigma}
    return LabeledDataset(points[perm], labels[perm], ["east", "north", "west", "south"], meta)


def acas_teacher_score(z: np.ndarray) -> np.ndarray:
    """Smooth turn field on normalized inputs in [0, 1]^d; larger means "turn further left".

    An angle-like blend of the first two coordinates.
    """
    z = np.atleast_2d(z)
    angle = np.arctan2(z[:, 1] + 0.75, 0.5 - z[:, 0])  # in (0.98, 2.16)
    return (angle - math.pi / 2) * 1.6 + 0.05


HARD_EDGE = 0.45
# half-width of the "clear" band: narrowest where the third input is small
CLEAR_MIN, CLEAR_SLOPE = 0.02, 0.18


def acas_clear_halfwidth(z: np.ndarray) -> np.ndarray:
    z = np.atleast_2d(z)
    if z.shape[1] < 3:
        return np.full(len(z), CLEAR_MIN + CLEAR_SLOPE / 2)
    return CLEAR_MIN + CLEAR_SLOPE * z[:, 2]


def acas_teacher(z: np.ndarray) -> np.ndarray:
    """Ordered advisory labels 0 (hard left) .. 4 (hard right).

    Every label region is a band of the score field with positive width, so
    nearby points with different labels differ by one advisory step; the
    "clear" band pinches to a width of ``2 * CLEAR_MIN`` score units.
    """
    t = acas_teacher_score(z)
    h = acas_clear_halfwidth(z)
    labels = np.full(len(t), 2)
    labels[t >= h] = 1
    labels[t >= HARD_EDGE] = 0
    labels[t <= -h] = 3
    labels[t <= -HARD_EDGE] = 4
    return labels


def gen_acas_synthetic(seed: int, n: int, d: int = 5, input_ranges=None) -> LabeledDataset:
    """Uniform inputs within ``input_ranges`` labeled by :func:`acas_teacher`."""
    if d < 2:
        raise ValueError("the advisory teacher needs at least two inputs")
    ranges = np.asarray(input_ranges if input_ranges is not None else [(0.0, 1.0)] * d, dtype=np.float64)
    if ranges.shape != (d, 2) or np.any(ranges[:, 1] <= ranges[:, 0]):
        raise ValueError("input_ranges must be d (low, high) pairs with low < high")
    rng = np.random.default_rng(seed)
    z = rng.uniform(size=(n, d))
    points = ranges[:, 0] + z * (ranges[:, 1] - ranges[:, 0])
    labels = acas_teacher(z)
    meta = {"generator": "acas_synthetic", "seed": seed, "n": n, "d": d, "input_ranges": ranges.tolist()}
    return LabeledDataset(points, labels, list(ACAS_CLASSES), meta)


def class_cores(dataset: LabeledDataset, fraction: float) -> LabeledDataset:
    """Keep, per class, the ``fraction`` of points nearest the class centroid."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("core fraction must lie in (0, 1]")
    keep = []
    for c in np.unique(dataset.labels):
        idx = np.flatnonzero(dataset.labels == c)
        pts = dataset.points[idx]
        dist = np.linalg.norm(pts - pts.mean(axis=0), axis=1)
        n_keep = max(1, int(math.ceil(fraction * len(idx))))
        keep.append(idx[np.argsort(dist, kind="stable")[:n_keep]])
    return dataset.subset(np.sort(np.concatenate(keep)))


def estimate_separation(dataset: LabeledDataset, core_fraction: float = 1.0) -> SeparationEstimate:
    """Exact minimum l2 distance between two points with different labels.

    ``core_fraction < 1`` first trims every class to its central points
    (see :func:`class_cores`), which gives a usable scale for datasets whose
    class tails overlap.
    """
    present = np.unique(dataset.labels)
    if len(present) < 2:
        raise DataError("separation needs at least two classes")
    if core_fraction < 1.0:
        dataset = class_cores(dataset, core_fraction)
    best = math.inf
    for c in present[:-1]:
        # pairs (c, c') with c' > c cover every unordered class pair once
        mine = dataset.points[dataset.labels == c]
        other = dataset.points[dataset.labels > c]
        dist, _ = cKDTree(other).query(mine, k=1)
        best = min(best, float(dist.min()))
    return SeparationEstimate(best, best / 2.0)


def rescale_to_separation(dataset: LabeledDataset, target: float) -> LabeledDataset:
    """Scale points about the origin so the minimum cross-class distance equals ``target``."""
    sep = estimate_separation(dataset).min_interclass_distance
    if sep == 0.0:
        raise DataError("cannot rescale a dataset with coincident cross-class points")
    meta = dict(dataset.meta, rescale=target / sep)
    return replace(dataset, points=dataset.points * (target / sep), meta=meta)


def split(dataset: LabeledDataset, test_fraction: float, seed: int = 0) -> tuple[LabeledDataset, LabeledDataset]:
    perm = np.random.default_rng(seed).permutation(len(dataset))
    n_test = int(round(test_fraction * len(dataset)))
    return dataset.subset(perm[n_test:]), dataset.subset(perm[:n_test])


# ---------------------------------------------------------------- CSV files


def save_dataset(dataset: LabeledDataset, path, config_ref: str | None = None) -> None:
    buf = io.StringIO()
    buf.write(DATASET_HEADER + "\n")
    info = {"class_names": dataset.class_names, "meta": dataset.meta}
    if config_ref:
        info["config"] = config_ref
    buf.write("# " + json.dumps(info) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([f"x{i + 1}" for i in range(dataset.dim)] + ["label"])
    for p, y in zip(dataset.points, dataset.labels):
        writer.writerow([repr(float(v)) for v in p] + [int(y)])
    Path(path).write_text(buf.getvalue())


def load_dataset(path) -> LabeledDataset:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("# rtkgloro-dataset"):
        raise DataError(f"{path}: missing dataset version line")
    info = {}
    body = lines[1:]
    if body and body[0].startswith("# "):
        info = json.loads(body[0][2:])
        body = body[1:]
    rows = list(csv.reader(body))
    if not rows or rows[0][-1] != "label":
        raise DataError(f"{path}: header must end with 'label'")
    try:
        data = np.array([[float(v) for v in r[:-1]] for r in rows[1:]])
        labels = np.array([int(r[-1]) for r in rows[1:]])
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc
    names = info.get("class_names") or [str(c) for c in range(int(labels.max()) + 1)]
    return LabeledDataset(data.reshape(len(labels), -1), labels, list(names), info.get("meta", {}))


# ---------------------------------------------------------------- affinity configuration

_CALL = re.compile(r"^(per_class_with|partition|adjacent_pairs)\s*\((.*)\)\s*$")


def _resolve(token: str, class_names: list[str]) -> int:
    token = token.strip()
    if token in class_names:
        return class_names.index(token)
    if token.isdigit() and int(token) < len(class_names):
        return int(token)
    raise DataError(f"unknown class name {token!r}")


def _names(arg_text: str, class_names: list[str]) -> list[int]:
    return [_resolve(t, class_names) for t in arg_text.split(",") if t.strip()]


def parse_affinity_config(text: str, class_names: list[str]) -> AffinityCollection:
    """Parse the line-per-set affinity format.

    Lines are ``set = a, b, ...`` or one of the generators
    ``per_class_with(a, b, ...)``, ``partition(n)`` / ``partition(a, b | c, d)``
    and ``adjacent_pairs()`` / ``adjacent_pairs(a, b, c, ...)``.
    ``#`` starts a comment.
    """
    C = len(class_names)
    sets: list[list[int]] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("set") and "=" in line:
            members = _names(line.split("=", 1)[1], class_names)
            if not members:
                raise DataError(f"line {lineno}: empty affinity set")
            sets.append(members)
            continue
        match = _CALL.match(line)
        if not match:
            raise DataError(f"line {lineno}: cannot parse {raw!r}")
        name, args = match.groups()
        if name == "per_class_with":
            extra = _names(args, class_names)
            sets += [[c] + extra for c in range(C)]
        elif name == "partition":
            if args.strip().isdigit():
                size = int(args)
                if size < 1:
                    raise DataError(f"line {lineno}: partition size must be positive")
                sets += [list(range(s, min(s + size, C))) for s in range(0, C, size)]
            else:
                groups = [_names(g, class_names) for g in args.split("|")]
                if any(not g for g in groups):
                    raise DataError(f"line {lineno}: empty partition group")
                sets += groups
        else:
            order = _names(args, class_names) if args.strip() else list(range(C))
            if len(order) < 2:
                raise DataError(f"line {lineno}: adjacent_pairs needs at least two classes")
            sets += [[a, b] for a, b in zip(order, order[1:])]
    if not sets:
        raise DataError("affinity configuration defines no sets")
    return AffinityCollection.from_sets(sets, C)


def format_affinity_config(affinity: AffinityCollection, class_names: list[str]) -> str:
    lines = [AFFINITY_HEADER]
    for s in affinity.sets:
        lines.append("set = " + ", ".join(class_names[c] for c in sorted(s)))
    return "\n".join(lines) + "\n"


def load_affinity(path, class_names: list[str]) -> AffinityCollection:
    return parse_affinity_config(Path(path).read_text(), class_names)
