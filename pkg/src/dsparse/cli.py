"""Command-line entry point: train, eval, ablate, export-gates, make-toy.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

from threadpoolctl import threadpool_limits

from . import autodiff as ad
from .ablation import MODES, rows_to_json, format_table, run_ablation
from .checkpoint import CheckpointError, IntegrityError, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, load_run_config
from .evaluation import AggregateReport, evaluate
from .kgdata import KnowledgeGraph, generate_toy_kg, group_pairs, load_dataset, write_dataset
from .train import DivergenceError, train_run

log = logging.getLogger("dsparse")


class UsageError(Exception):
    pass


def _write(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def load_kg(data: str | None, toy: int | None, toy_seed: int = 7) -> KnowledgeGraph:
    if toy is not None:
        try:
            return generate_toy_kg(toy, toy_seed)
        except ValueError as e:
            raise ConfigError(str(e)) from e
    if data is None:
        raise ConfigError("no dataset: pass --data DIR or --toy N")
    if not os.path.isdir(data):
        raise UsageError(f"data directory not found: {data}")
    for name in ("train.txt", "valid.txt", "test.txt"):
        if not os.path.isfile(os.path.join(data, name)):
            raise UsageError(f"missing {name} in data directory {data}")
    return load_dataset(data)


def _overrides(args) -> dict[str, str]:
    out = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    for key in ("data", "toy", "toy_seed", "runs", "epochs", "seed"):
        value = getattr(args, key, None)
        if value is not None:
            out[key] = str(value)
    return out


def _run_config(args) -> RunConfig:
    cfg = load_run_config(args.config, _overrides(args))
    cfg.validate()
    return cfg


def _data_meta(cfg: RunConfig) -> dict:
    return {"data": cfg.data, "toy": cfg.toy, "toy_seed": cfg.toy_seed}


# ---------------------------------------------------------------- commands


def cmd_train(args) -> int:
    cfg = _run_config(args)
    kg = load_kg(cfg.data, cfg.toy, cfg.toy_seed)
    mcfg, tcfg = cfg.model_config(kg), cfg.train_config()
    os.makedirs(args.out, exist_ok=True)
    _write(os.path.join(args.out, "config.txt"), cfg.to_text())
    reports = []
    for i in range(cfg.runs):
        run_dir = args.out if cfg.runs == 1 else os.path.join(args.out, f"run{i}")
        os.makedirs(run_dir, exist_ok=True)
        run_tcfg = type(tcfg)(**{**tcfg.to_dict(), "seed": tcfg.seed + i})
        log.info("run %d/%d seed %d", i + 1, cfg.runs, run_tcfg.seed)
        result = train_run(kg, mcfg, run_tcfg)
        save_checkpoint(result, os.path.join(run_dir, "checkpoint.bin"), meta=_data_meta(cfg))
        with ad.precision(tcfg.precision):
            report = evaluate(result.model, kg, args.split, meta={"seed": run_tcfg.seed, "epochs": result.epoch})
        reports.append(report)
        _write(os.path.join(run_dir, "history.json"), json.dumps(result.history, indent=2, sort_keys=True))
        if cfg.runs > 1:
            _write(os.path.join(run_dir, "report.txt"), report.to_text())
            _write(os.path.join(run_dir, "report.json"), report.to_json())
    if cfg.runs == 1:
        text, js = reports[0].to_text(), reports[0].to_json()
    else:
        agg = AggregateReport(args.split, reports)
        text, js = agg.to_text(), agg.to_json()
    _write(os.path.join(args.out, "report.txt"), text)
    _write(os.path.join(args.out, "report.json"), js)
    print(text, end="")
    return 0


def _checkpoint_kg(args, meta: dict) -> KnowledgeGraph:
    data = args.data if args.data is not None else (None if args.toy is not None else meta.get("data"))
    toy = args.toy if args.toy is not None else (None if args.data is not None else meta.get("toy"))
    toy_seed = args.toy_seed if args.toy_seed is not None else meta.get("toy_seed", 7)
    return load_kg(data, toy, toy_seed)


def _open_checkpoint(path: str):
    if not os.path.isfile(path):
        raise UsageError(f"checkpoint not found: {path}")
    return load_checkpoint(path)


def _check_vocab(ckpt, kg: KnowledgeGraph) -> None:
    c = ckpt.model.config
    if (c.n_entities, c.n_relations) != (kg.n_entities, kg.n_relations):
        raise IntegrityError(
            f"checkpoint expects {c.n_entities} entities / {c.n_relations} relations, "
            f"dataset has {kg.n_entities} / {kg.n_relations}"
        )


def cmd_eval(args) -> int:
    ckpt = _open_checkpoint(args.checkpoint)
    kg = _checkpoint_kg(args, ckpt.meta)
    _check_vocab(ckpt, kg)
    with ad.precision(ckpt.train_config.precision):
        report = evaluate(ckpt.model, kg, args.split, meta={"checkpoint": os.path.basename(args.checkpoint)})
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write(os.path.join(args.out, f"eval_{args.split}.txt"), report.to_text())
        _write(os.path.join(args.out, f"eval_{args.split}.json"), report.to_json())
    print(report.to_text(), end="")
    return 0


def cmd_ablate(args) -> int:
    cfg = _run_config(args)
    grid = [g.strip() for g in args.grid.split(",")] if args.grid else []
    kg = load_kg(cfg.data, cfg.toy, cfg.toy_seed)
    os.makedirs(args.out, exist_ok=True)
    _write(os.path.join(args.out, "config.txt"), cfg.to_text())
    rows = run_ablation(args.mode, grid, cfg, kg, args.split, log=log.info)
    table = format_table(rows)
    _write(os.path.join(args.out, f"ablation_{args.mode}.txt"), table)
    _write(os.path.join(args.out, f"ablation_{args.mode}.json"), rows_to_json(args.mode, rows))
    print(table, end="")
    return 0


def export_gates(ckpt, kg: KnowledgeGraph, path: str, splits=("train",)) -> int:
    """Write one CSV row of gate weights per distinct (s, r) pair; returns the row count."""
    import numpy as np

    triples = np.concatenate([kg.augmented(s) for s in splits])
    pairs, _ = group_pairs(triples)
    with ad.precision(ckpt.train_config.precision):
        gates = ckpt.model.gate_values(pairs[:, 0], pairs[:, 1])
    k = gates.shape[1]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["entity", "relation"] + [f"g_{i + 1}" for i in range(k)])
        for (s, r), g in zip(pairs.tolist(), gates):
            w.writerow([kg.vocab.entities[s], kg.vocab.relations[r]] + [repr(float(x)) for x in g])
    return len(pairs)


def cmd_export_gates(args) -> int:
    ckpt = _open_checkpoint(args.checkpoint)
    kg = _checkpoint_kg(args, ckpt.meta)
    _check_vocab(ckpt, kg)
    splits = tuple(s.strip() for s in args.splits.split(","))
    for s in splits:
        if s not in ("train", "valid", "test"):
            raise ConfigError(f"unknown split {s!r}")
    n = export_gates(ckpt, kg, args.out, splits)
    print(f"wrote {n} rows to {args.out}")
    return 0


def cmd_make_toy(args) -> int:
    kg = load_kg(None, args.entities, args.seed)
    write_dataset(kg, args.out)
    print(f"wrote toy graph ({kg.n_entities} entities, {len(kg.train)}/{len(kg.valid)}/{len(kg.test)} triples) to {args.out}")
    return 0


# ---------------------------------------------------------------- parser


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key (repeatable)")
    p.add_argument("--data", help="dataset directory with train.txt/valid.txt/test.txt")
    p.add_argument("--toy", type=int, help="use a generated toy graph with this many entities")
    p.add_argument("--toy-seed", dest="toy_seed", type=int)
    p.add_argument("--runs", type=int, help="repeat with seeds seed..seed+runs-1")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--split", default="test", choices=["train", "valid", "test"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dsparse", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train (optionally repeated) and evaluate")
    _add_config_args(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--data")
    p.add_argument("--toy", type=int)
    p.add_argument("--toy-seed", dest="toy_seed", type=int)
    p.add_argument("--split", default="test", choices=["train", "valid", "test"])
    p.add_argument("--out", help="directory for report files")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run an ablation grid")
    p.add_argument("mode", choices=MODES)
    p.add_argument("--grid", help="comma-separated grid values (experts mode: k:t items)")
    _add_config_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("export-gates", help="write gate vectors of every (entity, relation) pair as CSV")
    p.add_argument("checkpoint")
    p.add_argument("--data")
    p.add_argument("--toy", type=int)
    p.add_argument("--toy-seed", dest="toy_seed", type=int)
    p.add_argument("--splits", default="train", help="comma-separated splits whose pairs to export")
    p.add_argument("--out", required=True, help="CSV path")
    p.set_defaults(func=cmd_export_gates)

    p = sub.add_parser("make-toy", help="write a toy modular-arithmetic dataset")
    p.add_argument("out")
    p.add_argument("--entities", type=int, default=40)
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=cmd_make_toy)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        with threadpool_limits(limits=1):
            return args.func(args)
    except (ConfigError, UsageError) as e:
        print(f"dsparse: error: {e}", file=sys.stderr)
        return 2
    except (CheckpointError, DivergenceError, OSError, ValueError) as e:
        print(f"dsparse: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
