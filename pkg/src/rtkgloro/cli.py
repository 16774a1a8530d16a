"""Command-line entry point: ``rtkgloro <command> [--config FILE] [--key value ...]``.

Every run writes its resolved configuration to ``<name>.config.yaml`` in the
output directory and each artifact records that file name.  The output
directory defaults to ``$RTKGLORO_OUTDIR`` or the working directory.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np
import yaml

from . import plotting
from .certify import AffinityCollection, CertificationRefused, GuaranteeConfig, certify_batch
from .data import (
    DataError,
    LabeledDataset,
    estimate_separation,
    gen_acas_synthetic,
    gen_synthetic_2d,
    load_affinity,
    load_dataset,
    rescale_to_separation,
    save_dataset,
    split,
)
from .falsify import pgd_attack_batch, sphere_sample_batch
from .lipschitz import pair_bounds
from .metrics import metrics_from_results, summarize, write_bounds_csv, write_metrics_csv
from .netcore import Network, ShapeError, dense_network, forward, load_network, save_network
from .train import LambdaSchedule, LRSchedule, TrainConfig, TrainingError, train

logger = logging.getLogger("rtkgloro")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_REFUSED, EXIT_VIOLATION = 0, 2, 3, 4, 5
OUTDIR_ENV = "RTKGLORO_OUTDIR"


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- typed options


def _int_list(v) -> list[int]:
    if isinstance(v, str):
        v = [t for t in v.replace("[", "").replace("]", "").split(",") if t.strip()]
    return [int(t) for t in (v if isinstance(v, (list, tuple)) else [v])]


def _float_list(v) -> list[float]:
    if isinstance(v, str):
        v = [t for t in v.replace("[", "").replace("]", "").split(",") if t.strip()]
    return [float(t) for t in (v if isinstance(v, (list, tuple)) else [v])]


def _str_list(v) -> list[str]:
    if isinstance(v, str):
        return [t.strip() for t in v.split(",") if t.strip()]
    return [str(t) for t in v]


def _bool(v) -> bool:
    if isinstance(v, bool):
        return v
    s = str(v).lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _optional(cast: Callable) -> Callable:
    def parse(v):
        if v is None or (isinstance(v, str) and v.lower() in ("", "none", "null")):
            return None
        return cast(v)

    return parse


def _eps(v):
    if isinstance(v, str) and v.lower() == "auto":
        return "auto"
    return float(v)


@dataclass(frozen=True)
class Opt:
    cast: Callable
    default: Any
    help: str = ""


GUARANTEE_OPTS = {
    "guarantee": Opt(_optional(str), None, "standard | rtk | affinity (default: from the model)"),
    "K": Opt(_optional(int), None, "K for the rtk guarantee"),
    "affinity": Opt(_optional(str), None, "affinity configuration file"),
    "eps": Opt(_optional(float), None, "certification radius (default: from the model)"),
}

COMMANDS: dict[str, dict[str, Opt]] = {
    "gen-data": {
        "dataset": Opt(str, "synthetic2d", "synthetic2d | acas"),
        "seed": Opt(int, 0),
        "n_per_class": Opt(int, 400, "synthetic2d points per class"),
        "overlap": Opt(float, 0.6, "synthetic2d overlap in [0, 1]"),
        "n": Opt(int, 4000, "acas point count"),
        "d": Opt(int, 5, "acas input dimension"),
        "rescale_to": Opt(_optional(float), None, "rescale so the minimum cross-class distance equals this"),
        "test_fraction": Opt(float, 0.25),
        "name": Opt(str, "data"),
    },
    "train": {
        "data": Opt(_optional(str), None, "training dataset CSV"),
        "test_data": Opt(_optional(str), None, "evaluation dataset CSV"),
        "guarantee": Opt(str, "standard"),
        "K": Opt(int, 2),
        "affinity": Opt(_optional(str), None),
        "eps": Opt(_eps, "auto", "float, or auto = half the estimated class separation"),
        "core_fraction": Opt(float, 1.0, "class-core fraction used by eps=auto"),
        "hidden": Opt(_int_list, [64, 64]),
        "epochs": Opt(int, 200),
        "batch_size": Opt(int, 128),
        "lr_start": Opt(float, 1e-3),
        "lr_end": Opt(float, 1e-6),
        "lr_decay_onset": Opt(float, 0.5),
        "loss": Opt(str, "cross-entropy", "cross-entropy | trades | clean"),
        "lambda_start": Opt(float, 1.0),
        "lambda_end": Opt(float, 1.0),
        "lambda_shape": Opt(str, "linear"),
        "lambda_onset": Opt(float, 1.0),
        "power_iters": Opt(int, 2, "power iterations per batch"),
        "eval_every": Opt(int, 0),
        "seeds": Opt(_int_list, [0]),
        "name": Opt(str, "model"),
    },
    "certify": {
        "model": Opt(_optional(str), None),
        "data": Opt(_optional(str), None),
        **GUARANTEE_OPTS,
        "power_iters": Opt(_optional(int), None, "fixed power iterations (unconverged bounds are refused)"),
        "workers": Opt(int, 1),
        "name": Opt(str, "certificates"),
    },
    "eval": {
        "models": Opt(_str_list, [], "comma-separated model files"),
        "data": Opt(_optional(str), None),
        "dataset_name": Opt(_optional(str), None),
        **GUARANTEE_OPTS,
        "workers": Opt(int, 1),
        "name": Opt(str, "metrics"),
    },
    "boundary": {
        "model": Opt(_optional(str), None),
        "data": Opt(_optional(str), None, "optional dataset drawn over the map"),
        **GUARANTEE_OPTS,
        "grid": Opt(_int_list, [50, 50], "cells along x and y"),
        "xlim": Opt(_float_list, [-2.5, 2.5]),
        "ylim": Opt(_float_list, [-2.5, 2.5]),
        "plot": Opt(_bool, True),
        "workers": Opt(int, 1),
        "name": Opt(str, "boundary"),
    },
    "attack": {
        "model": Opt(_optional(str), None),
        "data": Opt(_optional(str), None),
        **GUARANTEE_OPTS,
        "steps": Opt(int, 200),
        "restarts": Opt(int, 10),
        "samples": Opt(int, 10_000),
        "max_points": Opt(_optional(int), None, "attack at most this many certified points"),
        "seed": Opt(int, 0),
        "name": Opt(str, "attack"),
    },
}

REQUIRED = {
    "train": ("data",),
    "certify": ("model", "data"),
    "eval": ("models", "data"),
    "boundary": ("model",),
    "attack": ("model", "data"),
}


def _parse_overrides(tokens: list[str]) -> dict[str, str]:
    out, i = {}, 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--"):
            raise ConfigError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
        elif i + 1 < len(tokens):
            i += 1
            value = tokens[i]
        else:
            raise ConfigError(f"option {tok} needs a value")
        out[key.replace("-", "_")] = value
        i += 1
    return out


def resolve_config(command: str, config_path: str | None, overrides: dict[str, Any]) -> dict[str, Any]:
    """Defaults, then the config file (flat keys or a section named after the command), then overrides."""
    opts = COMMANDS[command]
    raw: dict[str, Any] = {}
    if config_path:
        try:
            loaded = yaml.safe_load(Path(config_path).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {config_path}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a mapping")
        shared = {k: v for k, v in loaded.items() if k not in COMMANDS}
        known = set().union(*COMMANDS.values())
        stray = sorted(set(shared) - known)
        if stray:
            raise ConfigError(f"unknown option(s) in {config_path}: {', '.join(stray)}")
        # top-level keys apply to whichever commands know them
        raw.update({k: v for k, v in shared.items() if k in opts})
        section = loaded.get(command) or {}
        if not isinstance(section, dict):
            raise ConfigError(f"section {command!r} must be a mapping")
        raw.update(section)
    raw.update(overrides)
    unknown = sorted(set(raw) - set(opts))
    if unknown:
        raise ConfigError(f"unknown option(s) for {command}: {', '.join(unknown)}")
    cfg = {}
    for key, opt in opts.items():
        try:
            cfg[key] = opt.cast(raw[key]) if key in raw else opt.default
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key}: {raw[key]!r} ({exc})") from exc
    for key in REQUIRED.get(command, ()):
        if not cfg[key]:
            raise ConfigError(f"{command} needs --{key}")
    return cfg


def write_snapshot(out_dir: Path, command: str, cfg: dict) -> str:
    name = f"{cfg['name']}.config.yaml"
    body = {"command": command, **cfg}
    (out_dir / name).write_text(yaml.safe_dump(body, sort_keys=False))
    return name


# ---------------------------------------------------------------- shared helpers


def _load_data(path) -> LabeledDataset:
    try:
        return load_dataset(path)
    except FileNotFoundError as exc:
        raise DataError(f"dataset not found: {path}") from exc


def _load_model(path) -> Network:
    try:
        return load_network(path)
    except FileNotFoundError as exc:
        raise DataError(f"model not found: {path}") from exc
    except (KeyError, ValueError) as exc:
        raise DataError(f"malformed model file {path}: {exc}") from exc


def _class_names(net: Network) -> list[str]:
    return list(net.metadata.get("class_names") or [str(c) for c in range(net.num_classes)])


def _guarantee(kind: str, K: int | None, affinity_path: str | None, class_names: list[str]) -> GuaranteeConfig:
    if kind == "standard":
        return GuaranteeConfig.standard()
    if kind == "rtk":
        if K is None:
            raise ConfigError("the rtk guarantee needs K")
        return GuaranteeConfig.rtk(K)
    if kind == "affinity":
        if not affinity_path:
            raise ConfigError("the affinity guarantee needs an affinity configuration file")
        try:
            return GuaranteeConfig.with_affinity(load_affinity(affinity_path, class_names))
        except FileNotFoundError as exc:
            raise ConfigError(f"affinity file not found: {affinity_path}") from exc
    raise ConfigError(f"unknown guarantee {kind!r}")


def _model_guarantee(cfg: dict, net: Network) -> tuple[GuaranteeConfig, float]:
    """Guarantee and eps from the options, falling back to what the model was trained with."""
    names = _class_names(net)
    meta = net.metadata
    kind = cfg["guarantee"] or meta.get("guarantee", "standard")
    if kind == "affinity" and not cfg["affinity"] and meta.get("affinity_sets"):
        guarantee = GuaranteeConfig.with_affinity(AffinityCollection.from_sets(meta["affinity_sets"], net.num_classes))
    else:
        guarantee = _guarantee(kind, cfg["K"] if cfg["K"] is not None else meta.get("K"), cfg["affinity"], names)
    eps = cfg["eps"] if cfg["eps"] is not None else meta.get("epsilon")
    if eps is None:
        raise ConfigError("eps is not set and the model records none")
    if eps < 0:
        raise ConfigError("eps must be non-negative")
    if guarantee.clamped(net.num_classes):
        logger.warning("K=%d exceeds C-1=%d for this model; clamping", guarantee.K, net.num_classes - 1)
    return guarantee, float(eps)


def _inputs(net: Network, data: LabeledDataset) -> np.ndarray:
    if data.dim != int(np.prod(net.input_shape)):
        raise DataError(f"dataset has {data.dim} features, model expects {net.input_shape}")
    return data.points.reshape((len(data),) + net.input_shape)


def _join(members, names) -> str:
    return ";".join(names[c] for c in sorted(members)) if members else ""


def _open_csv(path: Path, snapshot: str):
    fh = open(path, "w", newline="")
    fh.write(f"# config: {snapshot}\n")
    return fh, csv.writer(fh)


# ---------------------------------------------------------------- commands


def cmd_gen_data(cfg: dict, out: Path, snapshot: str) -> int:
    if cfg["dataset"] == "synthetic2d":
        ds = gen_synthetic_2d(cfg["seed"], cfg["n_per_class"], cfg["overlap"])
    elif cfg["dataset"] == "acas":
        ds = gen_acas_synthetic(cfg["seed"], cfg["n"], cfg["d"])
    else:
        raise ConfigError(f"unknown dataset {cfg['dataset']!r}")
    if cfg["rescale_to"] is not None:
        ds = rescale_to_separation(ds, cfg["rescale_to"])
    if not 0.0 <= cfg["test_fraction"] < 1.0:
        raise ConfigError("test_fraction must lie in [0, 1)")
    sep = estimate_separation(ds)
    outputs = {}
    if cfg["test_fraction"] > 0:
        train_ds, test_ds = split(ds, cfg["test_fraction"], cfg["seed"])
        for tag, part in (("train", train_ds), ("test", test_ds)):
            outputs[tag] = out / f"{cfg['name']}_{tag}.csv"
            save_dataset(part, outputs[tag], snapshot)
    else:
        outputs["all"] = out / f"{cfg['name']}.csv"
        save_dataset(ds, outputs["all"], snapshot)
    for tag, path in outputs.items():
        print(f"{tag}: {path}")
    print(f"min cross-class distance: {sep.min_interclass_distance:.6g}  suggested eps: {sep.suggested_eps:.6g}")
    return EXIT_OK


def _train_config(cfg: dict, eps: float, guarantee: GuaranteeConfig, seed: int) -> TrainConfig:
    return TrainConfig(
        epochs=cfg["epochs"],
        batch_size=cfg["batch_size"],
        lr_schedule=LRSchedule(cfg["lr_start"], cfg["lr_end"], cfg["lr_decay_onset"]),
        loss=cfg["loss"],
        trades_schedule=LambdaSchedule(cfg["lambda_start"], cfg["lambda_end"], cfg["lambda_shape"], cfg["lambda_onset"]),
        power_iters_per_batch=cfg["power_iters"],
        eps=eps,
        guarantee=guarantee,
        seed=seed,
        eval_every=cfg["eval_every"],
    )


def cmd_train(cfg: dict, out: Path, snapshot: str) -> int:
    data = _load_data(cfg["data"])
    test = _load_data(cfg["test_data"]) if cfg["test_data"] else None
    guarantee = _guarantee(cfg["guarantee"], cfg["K"], cfg["affinity"], data.class_names)
    if guarantee.clamped(data.num_classes):
        logger.warning("K=%d exceeds C-1=%d; clamping", guarantee.K, data.num_classes - 1)
    eps = cfg["eps"]
    if eps == "auto":
        eps = estimate_separation(data, cfg["core_fraction"]).suggested_eps
        logger.info("eps=auto resolved to %.6g", eps)
    for seed in cfg["seeds"]:
        try:
            tcfg = _train_config(cfg, eps, guarantee, seed)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        net = dense_network(data.dim, cfg["hidden"], data.num_classes, seed=seed)
        net.metadata.update(class_names=data.class_names, config=snapshot, train_config=tcfg.to_dict())
        net, history = train(net, data, tcfg, eval_data=test)
        stem = f"{cfg['name']}_seed{seed}"
        save_network(net, out / f"{stem}.json")
        with open(out / f"{stem}_history.csv", "w", newline="") as fh:
            fh.write(f"# config: {snapshot}\n")
            cols = ["epoch", "lr", "lambda", "loss", "clean_acc", "vra", "rejection_rate"]
            writer = csv.DictWriter(fh, fieldnames=cols)
            writer.writeheader()
            writer.writerows({k: ("" if h.get(k) is None else h[k]) for k in cols} for h in history)
        plotting.plot_history(history, out / f"{stem}_history.svg", title=f"{guarantee.label}, seed {seed} ({snapshot})")
        last = history[-1]
        print(
            f"seed {seed}: eps={eps:.6g} {guarantee.label} clean_acc={last['clean_acc']:.4f} "
            f"vra={last['vra']:.4f} rejection_rate={last['rejection_rate']:.4f} -> {out / (stem + '.json')}"
        )
    return EXIT_OK


def cmd_certify(cfg: dict, out: Path, snapshot: str) -> int:
    net = _load_model(cfg["model"])
    data = _load_data(cfg["data"])
    guarantee, eps = _model_guarantee(cfg, net)
    bounds = pair_bounds(net, iters=cfg["power_iters"])
    results = certify_batch(net, bounds, eps, guarantee, _inputs(net, data), workers=cfg["workers"])
    names = _class_names(net)
    path = out / f"{cfg['name']}.csv"
    fh, writer = _open_csv(path, snapshot)
    with fh:
        writer.writerow(["id", "accepted", "kstar", "safe_set", "margin", "radius"])
        for i, r in enumerate(results):
            writer.writerow([i, int(r.accepted), r.kstar or "", _join(r.safe_set, names), repr(r.margin), repr(r.radius)])
    accepted = sum(r.accepted for r in results)
    print(f"{guarantee.label} eps={eps:.6g}: {accepted}/{len(results)} accepted -> {path}")
    return EXIT_OK


def cmd_eval(cfg: dict, out: Path, snapshot: str) -> int:
    data = _load_data(cfg["data"])
    ds_name = cfg["dataset_name"] or data.meta.get("generator") or Path(cfg["data"]).stem
    rows = []
    for i, model_path in enumerate(cfg["models"]):
        net = _load_model(model_path)
        guarantee, eps = _model_guarantee(cfg, net)
        bounds = pair_bounds(net)
        X = _inputs(net, data)
        results = certify_batch(net, bounds, eps, guarantee, X, workers=cfg["workers"])
        report = metrics_from_results(results, forward(net, X), data.labels, eps, guarantee)
        seed = net.metadata.get("power_seed", i)
        rows.append(
            {
                "dataset": ds_name, "guarantee": report.guarantee, "eps": eps, "vra": report.vra,
                "rejection_rate": report.rejection_rate, "clean_accuracy": report.clean_accuracy,
                "n": len(data), "seed": seed,
            }
        )
        write_bounds_csv(bounds, _class_names(net), out / f"{cfg['name']}_bounds_{Path(model_path).stem}.csv", snapshot)
    rows += summarize(rows)
    path = out / f"{cfg['name']}.csv"
    write_metrics_csv(rows, path, snapshot)
    plotting.plot_metrics(rows, out / f"{cfg['name']}.svg", title=f"{ds_name} ({snapshot})")
    for r in rows:
        if r["seed"] == "mean":
            print(f"{r['dataset']} {r['guarantee']} eps={r['eps']:.6g}: vra={r['vra']:.4f} rejection_rate={r['rejection_rate']:.4f} clean_accuracy={r['clean_accuracy']:.4f}")
    print(f"metrics -> {path}")
    return EXIT_OK


def boundary_grid(net: Network, bounds, eps: float, guarantee: GuaranteeConfig, xs, ys, workers: int = 1):
    """Certificates on the grid ``ys x xs`` (row-major, x varying fastest)."""
    gx, gy = np.meshgrid(xs, ys)
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    results = certify_batch(net, bounds, eps, guarantee, pts, workers=workers)
    return pts, forward(net, pts), results


def cmd_boundary(cfg: dict, out: Path, snapshot: str) -> int:
    net = _load_model(cfg["model"])
    if net.input_shape != (2,):
        raise ConfigError(f"boundary export needs a model with 2D inputs, got {net.input_shape}")
    guarantee, eps = _model_guarantee(cfg, net)
    grid = cfg["grid"] * 2 if len(cfg["grid"]) == 1 else cfg["grid"]
    if len(grid) != 2 or min(grid) < 1 or len(cfg["xlim"]) != 2 or len(cfg["ylim"]) != 2:
        raise ConfigError("grid needs one or two positive counts; xlim/ylim need two values")
    xs = np.linspace(*cfg["xlim"], grid[0]) if grid[0] > 1 else np.array([np.mean(cfg["xlim"])])
    ys = np.linspace(*cfg["ylim"], grid[1]) if grid[1] > 1 else np.array([np.mean(cfg["ylim"])])
    pts, logits, results = boundary_grid(net, pair_bounds(net), eps, guarantee, xs, ys, cfg["workers"])
    names = _class_names(net)
    path = out / f"{cfg['name']}.csv"
    fh, writer = _open_csv(path, snapshot)
    with fh:
        writer.writerow(["x", "y", "argmax", "accepted", "kstar", "smallest_safe_set"])
        for p, f, r in zip(pts, logits, results):
            writer.writerow(
                [repr(float(p[0])), repr(float(p[1])), names[int(np.argmax(f))], int(r.accepted), r.kstar or "",
                 _join(r.smallest_safe_set, names)]
            )
    rejected = sum(not r.accepted for r in results)
    print(f"{guarantee.label} eps={eps:.6g}: {len(results)} cells, {rejected} rejected -> {path}")
    if cfg["plot"]:
        data = _load_data(cfg["data"]) if cfg["data"] else None
        plotting.plot_boundary(
            xs, ys, [r.smallest_safe_set for r in results], names, out / f"{cfg['name']}.svg",
            points=data.points if data else None, labels=data.labels if data else None,
            title=f"{guarantee.label}, eps={eps:.3g} ({snapshot})",
        )
    return EXIT_OK


def cmd_attack(cfg: dict, out: Path, snapshot: str) -> int:
    net = _load_model(cfg["model"])
    data = _load_data(cfg["data"])
    guarantee, eps = _model_guarantee(cfg, net)
    X = _inputs(net, data)
    results = certify_batch(net, pair_bounds(net), eps, guarantee, X)
    ids = [i for i, r in enumerate(results) if r.accepted]
    if cfg["max_points"] is not None:
        ids = ids[: cfg["max_points"]]
    safe = [results[i].safe_set for i in ids]
    reports = []
    if ids:
        reports += pgd_attack_batch(net, X[ids], eps, safe, cfg["steps"], cfg["restarts"], cfg["seed"], ids)
        reports += sphere_sample_batch(net, X[ids], eps, safe, cfg["samples"], cfg["seed"], ids)
    path = out / f"{cfg['name']}.csv"
    fh, writer = _open_csv(path, snapshot)
    with fh:
        writer.writerow(["point_id", "certificate", "attack", "violated", "max_disruption", "vacuous", "witness", "params"])
        for r in reports:
            witness = "" if r.witness is None else ";".join(repr(float(v)) for v in r.witness.ravel())
            writer.writerow(
                [r.point_id, r.certificate, r.attack, int(r.violated), repr(r.max_disruption), int(r.vacuous), witness,
                 json.dumps(r.params)]
            )
    violations = sum(r.violated for r in reports)
    print(f"{guarantee.label} eps={eps:.6g}: attacked {len(ids)} certified points, {violations} violations -> {path}")
    return EXIT_VIOLATION if violations else EXIT_OK


HANDLERS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "certify": cmd_certify,
    "eval": cmd_eval,
    "boundary": cmd_boundary,
    "attack": cmd_attack,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rtkgloro", description="Train, certify, evaluate and attack relaxed-robustness GloRo networks.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, opts in COMMANDS.items():
        p = sub.add_parser(name, epilog="options: " + ", ".join(f"--{k}" for k in opts))
        p.add_argument("--config", help="YAML or JSON configuration file")
        p.add_argument("--out-dir", help=f"output directory (default ${OUTDIR_ENV} or .)")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args.command, args.config, _parse_overrides(extra))
        out = Path(args.out_dir or os.environ.get(OUTDIR_ENV) or ".")
        out.mkdir(parents=True, exist_ok=True)
        snapshot = write_snapshot(out, args.command, cfg)
        return HANDLERS[args.command](cfg, out, snapshot)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ShapeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CertificationRefused as exc:
        print(f"certification refused: {exc}", file=sys.stderr)
        return EXIT_REFUSED
    except TrainingError as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
