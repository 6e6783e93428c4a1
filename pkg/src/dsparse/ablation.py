"""Grid sweeps over the architectural knobs studied in the ablations.

Every mode expands a grid into named points, each a set of overrides on a
base :class:`RunConfig`. Points are validated before any training starts.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .config import ConfigError, RunConfig
from .evaluation import METRICS
from .kgdata import KnowledgeGraph
from .model import parameter_count
from .train import repeated_runs

MODES = ("sparsity", "experts", "depth", "downscale", "dropout", "components")


@dataclass
class AblationPoint:
    name: str
    overrides: dict


def _floats(grid) -> list[float]:
    try:
        return [float(g) for g in grid]
    except ValueError as e:
        raise ConfigError(f"grid values must be numbers: {e}") from None


def _ints(grid) -> list[int]:
    try:
        return [int(g) for g in grid]
    except ValueError as e:
        raise ConfigError(f"grid values must be integers: {e}") from None


def downscaled_width(alpha: float, width: int) -> int:
    """Output width after cutting a layer to alpha * width."""
    return int(round(alpha * width))


def raised_dropout(p: float, alpha: float) -> float:
    """Dropout rate p + alpha * (1 - p)."""
    return p + alpha * (1 - p)


def plan(mode: str, grid, base: RunConfig) -> list[AblationPoint]:
    grid = [g for g in (grid or []) if str(g).strip() != ""]
    hidden = base.hidden if base.hidden is not None else base.dim
    if mode == "sparsity":
        points = []
        for a in _floats(grid or [0.0, 0.25, 0.5, 0.75]):
            if not 0 <= a < 1:
                raise ConfigError(f"sparsity must be in [0, 1), got {a}")
            points.append(AblationPoint(f"sparsity={a:g}", {"sparsity": a}))
        return points
    if mode == "experts":
        points = []
        for item in grid or ["1:1", "3:1", "5:1"]:
            k_text, _, t_text = str(item).partition(":")
            try:
                k, t = int(k_text), float(t_text or base.temperature)
            except ValueError:
                raise ConfigError(f"experts grid items look like k:t, got {item!r}") from None
            if k < 1 or not t > 0:
                raise ConfigError(f"need k >= 1 and t > 0, got {item!r}")
            points.append(AblationPoint(f"k={k},t={t:g}", {"n_experts": k, "temperature": t}))
        points.append(AblationPoint(f"pure-mlp(k={base.n_experts})", {"encoder": "pure-mlp"}))
        return points
    if mode == "depth":
        points = []
        for d in _ints(grid or [1, 2, 3, 4]):
            if d < 1:
                raise ConfigError(f"depth must be >= 1, got {d}")
            points.append(AblationPoint(f"depth={d},residual", {"depth": d, "residual": True}))
            points.append(AblationPoint(f"depth={d},plain", {"depth": d, "residual": False}))
            if d >= 2:
                points.append(AblationPoint(f"depth={d},wide-linear", {"depth": d, "decoder": "wide-linear"}))
        return points
    if mode == "downscale":
        points = []
        for a in _floats(grid or [0.25, 0.5, 0.75]):
            width = downscaled_width(a, hidden)
            if width < 1 or a > 1:
                raise ConfigError(f"downscale alpha={a:g} gives width {width}; need 1 <= alpha*d <= d")
            points.append(AblationPoint(f"downscale={a:g}", {"hidden": width, "sparsity": 0.0}))
        return points
    if mode == "dropout":
        points = []
        for a in _floats(grid or [0.25, 0.5, 0.75]):
            p = raised_dropout(base.dropout, a)
            if not 0 <= a < 1 or not p < 1:
                raise ConfigError(f"dropout alpha must be in [0, 1), got {a}")
            points.append(AblationPoint(f"dropout-alpha={a:g}", {"dropout": p, "sparsity": 0.0}))
        return points
    if mode == "components":
        points = [
            AblationPoint("D+R+Res", {"use_dynamic": True, "use_relation_aware": True}),
            AblationPoint("D+Res", {"use_dynamic": True, "use_relation_aware": False}),
            AblationPoint("R+Res", {"use_dynamic": False, "use_relation_aware": True}),
        ]
        for d in _ints(grid or [base.depth]):
            if d < 1:
                raise ConfigError(f"depth must be >= 1, got {d}")
            points.append(AblationPoint(f"Res(depth={d})", {"use_dynamic": False, "use_relation_aware": False, "depth": d}))
        return points
    raise ConfigError(f"unknown ablation mode {mode!r}; choose from {', '.join(MODES)}")


def run_point(point: AblationPoint, base: RunConfig, kg: KnowledgeGraph, split: str = "test") -> dict:
    cfg = RunConfig(**{**asdict(base), **point.overrides})
    mcfg = cfg.model_config(kg)
    agg, results = repeated_runs(kg, mcfg, cfg.train_config(), n=cfg.runs, split=split)
    row = {"point": point.name, "n_params": parameter_count(mcfg)}
    for m in METRICS:
        row[m] = agg.mean(m)
        row[f"{m}_std"] = agg.std(m)
    row["train_loss"] = float(np.mean([r.losses[-1] for r in results])) if results[0].history else float("nan")
    row["train_loss_per_run"] = [r.losses[-1] if r.history else float("nan") for r in results]
    row["hits1_per_run"] = agg.values("hits1")
    row["config"] = {k: v for k, v in asdict(cfg).items() if k not in ("data", "toy", "toy_seed")}
    return row


def run_ablation(mode: str, grid, base: RunConfig, kg: KnowledgeGraph, split: str = "test", log=None) -> list[dict]:
    points = plan(mode, grid, base)
    for p in points:
        RunConfig(**{**asdict(base), **p.overrides}).model_config(kg)
    rows = []
    for p in points:
        rows.append(run_point(p, base, kg, split))
        if log:
            log(format_row(rows[-1]))
    return rows


def format_row(row: dict) -> str:
    return (f"{row['point']:<28} {row['n_params']:>10d} {row['mrr']:>8.4f} {row['hits1']:>8.4f} "
            f"{row['hits3']:>8.4f} {row['hits10']:>8.4f} {row['train_loss']:>10.6f}")


def format_table(rows: list[dict]) -> str:
    head = f"{'point':<28} {'params':>10} {'mrr':>8} {'hits1':>8} {'hits3':>8} {'hits10':>8} {'train_loss':>10}"
    return "\n".join([head, "-" * len(head)] + [format_row(r) for r in rows]) + "\n"


def rows_to_json(mode: str, rows: list[dict]) -> str:
    return json.dumps({"mode": mode, "rows": rows}, indent=2, sort_keys=True)
