"""Command line: ``tpmwatch {train,predict,evaluate,sweep,inspect-tree,gen-synthetic}``.

Metrics, logs and sweep rows are written as JSON lines.  Exit codes:
0 success, 2 configuration error, 3 data/model-file error, 4 divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import fields

import numpy as np

from .data import DataError, SyntheticSpec, generate_synthetic, save_csv
from .deconfound import DeconfoundedModel
from .net import DivergenceError
from .persist import ModelFileError, load_model, method_of, save_model
from .pipeline import (SWEEP_AXES, ConfigError, RunConfig, evaluate_model, fit_method, load_dataset,
                       predict_dataset, read_config_file)
from .tpm import TpmModel

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4

log = logging.getLogger("tpmwatch")


def _emit(record, out=None):
    line = json.dumps(record, sort_keys=True)
    if out is None:
        print(line)
    else:
        out.write(line + "\n")


def _overrides(args) -> dict:
    return {
        "method": getattr(args, "method", None),
        "seed": getattr(args, "seed", None),
        "num_leaves": getattr(args, "leaves", None),
        "num_groups": getattr(args, "groups", None),
        "data.train": getattr(args, "data", None),
        "output.model": getattr(args, "out", None),
    }


def _config_and_data(args, data_key="train"):
    """Config plus its training data, with config and data-schema problems reported together."""
    cfg, problems = RunConfig.collect(read_config_file(args.config), **_overrides(args))
    path = cfg.raw["data"][data_key]
    ds = None
    if not path:
        problems.append(f"no {data_key} data given (use --data or data.{data_key} in the config)")
    else:
        try:
            ds = load_dataset(cfg, path)
        except DataError as err:
            if problems:
                problems.append(str(err))
            else:
                raise
        if ds is not None:
            problems += cfg.check_dataset(ds)
    if problems:
        raise ConfigError(problems)
    return cfg, ds


def _eval_mode(model, cfg: dict) -> str:
    if isinstance(model, DeconfoundedModel):
        return cfg.get("deconfound", {}).get("eval_mode", "conditional")
    return "conditional"


def cmd_train(args) -> int:
    cfg, ds = _config_and_data(args)
    model, history = fit_method(cfg, ds)
    out = cfg.raw["output"]["model"]
    save_model(model, out, cfg.raw)
    log_path = cfg.raw["output"]["log"] or str(out) + ".log.jsonl"
    with open(log_path, "w") as fh:
        for rec in history.records:
            _emit(rec, fh)
    _emit({"model": str(out), "method": cfg.method, "epochs": len(history), "log": log_path})
    return EXIT_OK


def cmd_predict(args) -> int:
    model, stored = load_model(args.model, with_config=True)
    cfg = RunConfig.from_dict(stored)
    ds = load_dataset(cfg, args.data)
    pred, std = predict_dataset(model, ds, _eval_mode(model, stored))
    fh = open(args.out, "w") if args.out else None
    try:
        for i, p in enumerate(pred):
            rec = {"row": i, "prediction": float(p)}
            if std is not None:
                rec["std"] = float(std[i])
            _emit(rec, fh)
    finally:
        if fh:
            fh.close()
    return EXIT_OK


def cmd_evaluate(args) -> int:
    model, stored = load_model(args.model, with_config=True)
    cfg = RunConfig.from_dict(stored)
    ds = load_dataset(cfg, args.data)
    _emit(evaluate_model(model, ds, _eval_mode(model, stored), method_of(model)))
    return EXIT_OK


def _parse_values(axis, text):
    cast = float if axis == "alpha2" else int
    try:
        return [cast(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError([f"--values must be comma-separated {cast.__name__}s"]) from None


def run_sweep(cfg: RunConfig, train_ds, eval_ds, axis: str, values) -> list[dict]:
    """Train and evaluate once per value of ``axis``; one metrics row per value."""
    rows = []
    for v in values:
        raw = json.loads(json.dumps(cfg.raw))
        if axis == "alpha2":
            raw["train"]["weights"]["alpha2"] = v
        else:
            raw[axis] = v
        run = RunConfig.from_dict(raw)
        model, _ = fit_method(run, train_ds)
        row = evaluate_model(model, eval_ds, raw["deconfound"]["eval_mode"] if run.method == "tpm-deconfounded"
                             else "conditional", run.method)
        rows.append({"axis": axis, "value": v, **row})
    return rows


def cmd_sweep(args) -> int:
    if args.axis not in SWEEP_AXES:
        raise ConfigError([f"--axis must be one of {list(SWEEP_AXES)}"])
    values = _parse_values(args.axis, args.values)
    cfg, ds = _config_and_data(args)
    eval_path = cfg.raw["data"]["eval"]
    if eval_path:
        train_ds, eval_ds = ds, load_dataset(cfg, eval_path)
    else:
        train_ds, eval_ds = ds.split(cfg.raw["data"]["test_fraction"], cfg.raw["seed"])
    fh = open(args.out, "w") if args.out else None
    try:
        for row in run_sweep(cfg, train_ds, eval_ds, args.axis, values):
            _emit(row, fh)
    finally:
        if fh:
            fh.close()
    return EXIT_OK


def format_tree(tree) -> str:
    """One line per node: id, interval, head index or leaf midpoint."""
    b = tree.scale.boundaries
    m = tree.leaf_count
    lines = [f"# {tree.kind} tree, {m} leaves, {tree.num_heads} heads; intervals are [lo, hi)"]
    for i, n in enumerate(tree.nodes):
        s, e = n.leaf_span
        close = "]" if e == m else ")"
        interval = f"[{b[s]:.6g}, {b[e]:.6g}{close}"
        if n.is_leaf:
            lines.append(f"n{i}: {interval} leaf={s} midpoint={n.leaf_midpoint:.6g}")
        else:
            lines.append(f"n{i}: {interval} head={n.head} children=n{n.children[0]},n{n.children[1]}")
    return "\n".join(lines)


def cmd_inspect_tree(args) -> int:
    model = load_model(args.model)
    if isinstance(model, TpmModel):
        print(format_tree(model.tree))
    elif isinstance(model, DeconfoundedModel):
        for g, tree in enumerate(model.trees):
            print(f"# group {g} (prior {model.partition.prior[g]:.6g})")
            print(format_tree(tree))
    else:
        raise ConfigError([f"{method_of(model)} models have no decomposition tree"])
    return EXIT_OK


def cmd_gen_synthetic(args) -> int:
    spec_fields = {f.name for f in fields(SyntheticSpec)}
    d = read_config_file(args.config).get("synthetic", {}) if args.config else {}
    unknown = sorted(set(d) - spec_fields)
    if unknown:
        raise ConfigError([f"unknown synthetic keys {unknown}"])
    if args.seed is not None:
        d["seed"] = args.seed
    if args.n is not None:
        d["n"] = args.n
    try:
        spec = SyntheticSpec(**d)
    except (TypeError, ValueError) as err:
        raise ConfigError([str(err)]) from None
    ds = generate_synthetic(spec)
    save_csv(ds, args.out)
    _emit({"out": args.out, "rows": len(ds), "mean_watch_time": float(np.mean(ds.watch_time))})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tpmwatch", description="Tree-based progressive watch-time regression")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def run_flags(sp):
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--data", help="training CSV (overrides data.train)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--method", help="tpm, tpm-deconfounded, wlr, d2q or or")
        sp.add_argument("--leaves", type=int, help="number of ordinal ranks (tree leaves)")
        sp.add_argument("--groups", type=int, help="number of duration groups")

    sp = sub.add_parser("train", help="train a model and write the model file")
    run_flags(sp)
    sp.add_argument("--out", help="model file path (overrides output.model)")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("predict", help="write per-row predictions as JSON lines")
    sp.add_argument("--model", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("evaluate", help="MAE, XAUC and mean predicted std-dev")
    sp.add_argument("--model", required=True)
    sp.add_argument("--data", required=True)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("sweep", help="train/evaluate over a grid of one setting")
    run_flags(sp)
    sp.add_argument("--axis", required=True, choices=SWEEP_AXES)
    sp.add_argument("--values", required=True, help="comma-separated values")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("inspect-tree", help="print the decomposition tree of a model")
    sp.add_argument("--model", required=True)
    sp.set_defaults(func=cmd_inspect_tree)

    sp = sub.add_parser("gen-synthetic", help="write a synthetic dataset as CSV")
    sp.add_argument("--out", required=True)
    sp.add_argument("--config", help="JSON file whose 'synthetic' object sets generator fields")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--n", type=int)
    sp.set_defaults(func=cmd_gen_synthetic)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as err:
        for problem in err.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ModelFileError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as err:
        print(f"training {err}", file=sys.stderr)
        return EXIT_DIVERGED
    except ValueError as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except BrokenPipeError:
        # reader went away (e.g. ``| head``); silence the flush at exit
        devnull = os.open(os.devnull, os.O_WRONLY)
        os.dup2(devnull, sys.stdout.fileno())
        return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
