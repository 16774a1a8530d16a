"""Static figures for the CLI: certified-boundary maps, training curves, metric bars."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.colors import ListedColormap, to_rgb  # noqa: E402

BOTTOM_COLOR = "#1a1a1a"
CLASS_COLORS = ("#d62728", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf")


def set_color(members: frozenset[int] | None) -> tuple[float, float, float]:
    """Singletons take their class color; larger sets blend their members and fade toward white."""
    if not members:
        return to_rgb(BOTTOM_COLOR)
    rgb = np.mean([to_rgb(CLASS_COLORS[c % len(CLASS_COLORS)]) for c in members], axis=0)
    fade = 0.25 * (len(members) - 1)
    return tuple(float(v) for v in rgb + (1.0 - rgb) * min(fade, 0.6))


def _label(members, class_names) -> str:
    if not members:
        return "⊥ (rejected)"
    return "{" + ", ".join(class_names[c] for c in sorted(members)) + "}"


def plot_boundary(xs, ys, safe_sets, class_names, path, points=None, labels=None, title=None) -> None:
    """Color every grid cell by its smallest certified safe set; rejected cells are dark.

    ``safe_sets`` is row-major over ``ys`` then ``xs`` (``len(ys) * len(xs)`` entries).
    """
    xs, ys = np.asarray(xs), np.asarray(ys)
    keys = sorted({s for s in safe_sets}, key=lambda s: (len(s) if s else 0, sorted(s) if s else []))
    index = {k: i for i, k in enumerate(keys)}
    grid = np.array([index[s] for s in safe_sets]).reshape(len(ys), len(xs))
    cmap = ListedColormap([set_color(k) for k in keys])

    fig, ax = plt.subplots(figsize=(6.0, 5.2))
    dx = (xs[1] - xs[0]) / 2 if len(xs) > 1 else 0.5
    dy = (ys[1] - ys[0]) / 2 if len(ys) > 1 else 0.5
    ax.imshow(
        grid, origin="lower", cmap=cmap, vmin=-0.5, vmax=len(keys) - 0.5, interpolation="nearest",
        extent=(xs[0] - dx, xs[-1] + dx, ys[0] - dy, ys[-1] + dy), aspect="auto",
    )
    if points is not None:
        pts = np.asarray(points)
        colors = [CLASS_COLORS[int(c) % len(CLASS_COLORS)] for c in labels]
        ax.scatter(pts[:, 0], pts[:, 1], c=colors, s=4, edgecolors="white", linewidths=0.2)
    handles = [plt.Rectangle((0, 0), 1, 1, color=set_color(k)) for k in keys]
    ax.legend(handles, [_label(k, class_names) for k in keys], fontsize=7, loc="upper left", bbox_to_anchor=(1.01, 1.0))
    ax.set_xlabel("$x_1$")
    ax.set_ylabel("$x_2$")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(Path(path))
    plt.close(fig)


def plot_history(history: list[dict], path, title=None) -> None:
    epochs = [h["epoch"] for h in history]
    fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(9.0, 3.4))
    ax_loss.plot(epochs, [h["loss"] for h in history], color="k", lw=1)
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("loss")
    ax_acc.plot(epochs, [h["clean_acc"] for h in history], label="clean accuracy", lw=1)
    evald = [h for h in history if h.get("vra") is not None]
    if evald:
        ax_acc.plot([h["epoch"] for h in evald], [h["vra"] for h in evald], "o-", ms=3, label="VRA")
        ax_acc.plot([h["epoch"] for h in evald], [h["rejection_rate"] for h in evald], "s-", ms=3, label="rejection rate")
    ax_acc.set_ylim(0.0, 1.02)
    ax_acc.set_xlabel("epoch")
    ax_acc.legend(fontsize=8)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(Path(path))
    plt.close(fig)


def plot_metrics(rows: list[dict], path, title=None) -> None:
    """Grouped bars of mean VRA and rejection rate per guarantee (error bars from the std rows)."""
    means = [r for r in rows if r.get("seed") == "mean"]
    stds = {(r["dataset"], r["guarantee"], r["eps"]): r for r in rows if r.get("seed") == "std"}
    if not means:
        means, stds = rows, {}
    names = [f"{r['dataset']}\n{r['guarantee']}" for r in means]
    pos = np.arange(len(means))
    fig, ax = plt.subplots(figsize=(max(4.0, 1.3 * len(means)), 3.6))
    for shift, col in ((-0.2, "vra"), (0.2, "rejection_rate")):
        vals = [float(r[col]) for r in means]
        err = [float(stds[(r["dataset"], r["guarantee"], r["eps"])][col]) if stds else 0.0 for r in means]
        ax.bar(pos + shift, vals, 0.4, yerr=err, label=col.replace("_", " "), capsize=2)
    ax.set_xticks(pos)
    ax.set_xticklabels(names, fontsize=8)
    ax.set_ylim(0.0, 1.05)
    ax.legend(fontsize=8)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(Path(path))
    plt.close(fig)
