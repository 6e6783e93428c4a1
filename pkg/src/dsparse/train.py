"""1-N training loop with mask-preserving Adam."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import autodiff as ad
from .autodiff import DiffArray
from .evaluation import AggregateReport, EvalReport, evaluate
from .kgdata import KnowledgeGraph, group_pairs, make_batches
from .model import DSparsEModel, ModelConfig

log = logging.getLogger(__name__)


class DivergenceError(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 128
    epochs: int = 100
    label_smoothing: float = 0.1
    weight_decay: float = 0.0  # decoupled (AdamW-style); 0 gives plain Adam
    seed: int = 0
    eval_every: int = 0  # 0 disables periodic validation
    precision: str = "float64"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.lr < 0:
            raise ValueError("learning rate must be >= 0")
        if self.batch_size < 2:
            raise ValueError("batch size must be >= 2")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not 0 <= self.label_smoothing < 1:
            raise ValueError(f"label smoothing must be in [0, 1), got {self.label_smoothing}")
        if self.weight_decay < 0:
            raise ValueError("weight decay must be >= 0")
        if self.eval_every < 0:
            raise ValueError("eval_every must be >= 0")
        if self.precision not in ("float64", "float32"):
            raise ValueError(f"precision must be float64 or float32, got {self.precision!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


class Adam:
    """Bias-corrected Adam that keeps masked weight entries at exactly zero.

    ``weight_decay`` shrinks parameters directly (decoupled from the moments).
    """

    def __init__(self, params: dict[str, DiffArray], masks: dict[str, np.ndarray] | None = None,
                 lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.params = params
        self.masks = masks or {}
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(p.values) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.values) for k, p in params.items()}

    def step(self, grads: dict[str, np.ndarray] | None = None) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1**self.t
        c2 = 1 - b2**self.t
        for name, p in self.params.items():
            g = grads[name] if grads is not None else p.grad
            if g is None:
                continue
            if g.shape != p.shape:
                raise ad.DimensionError(f"gradient {g.shape} does not match parameter {name} {p.shape}")
            mask = self.masks.get(name)
            if mask is not None:
                g = g * mask
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            if self.weight_decay:
                p.values *= 1 - self.lr * self.weight_decay
            p.values -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            if mask is not None:
                p.values *= mask


def smooth_labels(y, ls: float) -> np.ndarray:
    """(1 - ls) * y + ls / N for an N-column label matrix."""
    if not 0 <= ls < 1:
        raise ValueError(f"label smoothing must be in [0, 1), got {ls}")
    y = np.asarray(y, dtype=np.float64)
    return (1 - ls) * y + ls / y.shape[-1]


@dataclass
class TrainResult:
    model: DSparsEModel
    optimizer: Adam
    rng: np.random.Generator
    train_config: TrainConfig
    history: list[dict] = field(default_factory=list)
    epoch: int = 0

    @property
    def losses(self) -> list[float]:
        return [h["loss"] for h in self.history]


def train_run(kg: KnowledgeGraph, model_config: ModelConfig, train_config: TrainConfig,
              resume: TrainResult | None = None) -> TrainResult:
    """Train for ``train_config.epochs`` epochs over every distinct (s, r) pair.

    The model is seeded from ``train_config.seed`` so one seed fixes the run.
    Raises DivergenceError on a non-finite loss.
    """
    tc = train_config
    with ad.precision(tc.precision):
        if resume is None:
            model_config = replace(model_config, seed=tc.seed)
            model = DSparsEModel(model_config)
            params = model.parameters()
            state = TrainResult(model, Adam(params, model.masks(), lr=tc.lr, weight_decay=tc.weight_decay), np.random.default_rng(tc.seed), tc)
        else:
            state = resume
        model, opt, rng = state.model, state.optimizer, state.rng
        params = opt.params
        train = kg.augmented("train")
        grouped = group_pairs(train)
        n_ent = kg.n_entities
        for epoch in range(state.epoch + 1, state.epoch + tc.epochs + 1):
            total, count = 0.0, 0
            for b, batch in enumerate(make_batches(train, tc.batch_size, n_ent, rng, grouped)):
                for p in params.values():
                    p.grad = None
                scores = model.forward(batch.subjects, batch.relations, "train", rng)
                loss = ad.bce_1n_loss(scores, smooth_labels(batch.labels, tc.label_smoothing))
                value = float(loss.values)
                if not np.isfinite(value):
                    raise DivergenceError(f"non-finite loss at epoch {epoch}, batch {b}")
                ad.backward(loss)
                opt.step()
                total += value * len(batch)
                count += len(batch)
            entry = {"epoch": epoch, "loss": total / max(count, 1)}
            if tc.eval_every and epoch % tc.eval_every == 0 and len(kg.valid):
                entry["valid"] = evaluate(model, kg, "valid").metrics()
                log.info("epoch %d loss %.6f valid %s", epoch, entry["loss"], entry["valid"])
            else:
                log.debug("epoch %d loss %.6f", epoch, entry["loss"])
            state.history.append(entry)
            state.epoch = epoch
    return state


def repeated_runs(kg: KnowledgeGraph, model_config: ModelConfig, train_config: TrainConfig,
                  n: int = 5, split: str = "test", same_seed: bool = False) -> tuple[AggregateReport, list[TrainResult]]:
    """Train and evaluate ``n`` times with seeds seed, seed+1, ..."""
    if n < 1:
        raise ValueError("need at least one run")
    results, reports = [], []
    for i in range(n):
        seed = train_config.seed + (0 if same_seed else i)
        res = train_run(kg, model_config, replace(train_config, seed=seed))
        with ad.precision(train_config.precision):
            reports.append(evaluate(res.model, kg, split, meta={"seed": seed}))
        results.append(res)
    return AggregateReport(split, reports), results


def final_report(result: TrainResult, kg: KnowledgeGraph, split: str = "test") -> EvalReport:
    with ad.precision(result.train_config.precision):
        return evaluate(result.model, kg, split, meta={"seed": result.train_config.seed, "epochs": result.epoch})
