"""Filtered-ranking evaluation: MRR and Hits@{1,3,10}."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .kgdata import KnowledgeGraph

HITS_AT = (1, 3, 10)
METRICS = ("mrr", "hits1", "hits3", "hits10")

Scorer = Callable[[np.ndarray, np.ndarray], np.ndarray]


class ProtocolError(ValueError):
    pass


def filtered_rank(scores, gold: int, filter_set) -> int:
    """Rank of ``gold`` once the other known-true entities are removed.

    Ties count half: rank = 1 + #(higher) + floor(#(equal, not gold) / 2).
    """
    scores = np.asarray(scores)
    filter_idx = np.asarray(sorted(filter_set) if isinstance(filter_set, (set, frozenset)) else filter_set, dtype=np.int64)
    if gold not in filter_idx:
        raise ProtocolError(f"gold entity {gold} is not in its own filter set")
    keep = np.ones(scores.shape[0], dtype=bool)
    keep[filter_idx] = False
    target = scores[gold]
    higher = int(np.count_nonzero(keep & (scores > target)))
    ties = int(np.count_nonzero(keep & (scores == target)))
    return 1 + higher + ties // 2


def mrr_hits(ranks: Sequence[int]) -> dict[str, float]:
    ranks = np.asarray(ranks, dtype=np.float64)
    if ranks.size == 0:
        raise ValueError("no ranks to aggregate")
    if (ranks < 1).any():
        raise ValueError("ranks must be >= 1")
    out = {"mrr": float(np.mean(1.0 / ranks))}
    for n in HITS_AT:
        out[f"hits{n}"] = float(np.mean(ranks <= n))
    return out


@dataclass
class EvalReport:
    split: str
    ranks: list[int]
    mrr: float
    hits1: float
    hits3: float
    hits10: float
    meta: dict = field(default_factory=dict)

    @property
    def n_queries(self) -> int:
        return len(self.ranks)

    @classmethod
    def from_ranks(cls, ranks: Sequence[int], split: str, meta: dict | None = None) -> EvalReport:
        return cls(split=split, ranks=[int(r) for r in ranks], meta=dict(meta or {}), **mrr_hits(ranks))

    def metrics(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in METRICS}

    def to_dict(self, with_ranks: bool = True) -> dict:
        d = {"split": self.split, "n_queries": self.n_queries, **self.metrics(), "meta": self.meta}
        if with_ranks:
            d["ranks"] = self.ranks
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_text(self) -> str:
        lines = [f"split = {self.split}", f"n_queries = {self.n_queries}"]
        lines += [f"{k} = {v:.6f}" for k, v in self.metrics().items()]
        return "\n".join(lines) + "\n"


@dataclass
class AggregateReport:
    """Mean and sample standard deviation over repeated runs."""

    split: str
    runs: list[EvalReport]

    def values(self, metric: str) -> list[float]:
        return [getattr(r, metric) for r in self.runs]

    def mean(self, metric: str) -> float:
        return float(np.mean(self.values(metric)))

    def std(self, metric: str) -> float:
        v = self.values(metric)
        return float(np.std(v, ddof=1)) if len(v) > 1 else 0.0

    def to_dict(self) -> dict:
        out = {"split": self.split, "n_runs": len(self.runs), "n_queries": self.runs[0].n_queries}
        for m in METRICS:
            out[m] = self.mean(m)
            out[f"{m}_std"] = self.std(m)
        out["per_run"] = [r.to_dict(with_ranks=False) for r in self.runs]
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_text(self) -> str:
        lines = [f"split = {self.split}", f"n_runs = {len(self.runs)}", f"n_queries = {self.runs[0].n_queries}"]
        for m in METRICS:
            lines.append(f"{m} = {self.mean(m):.6f} +- {self.std(m):.6f}")
        return "\n".join(lines) + "\n"


def queries(kg: KnowledgeGraph, split: str) -> np.ndarray:
    """(s, r, o) queries for both directions: raw triples then their inverses."""
    return kg.augmented(split)


def rank_queries(scorer: Scorer, kg: KnowledgeGraph, triples: np.ndarray, batch_size: int = 256) -> np.ndarray:
    ranks = np.empty(len(triples), dtype=np.int64)
    for lo in range(0, len(triples), batch_size):
        chunk = triples[lo : lo + batch_size]
        scores = np.asarray(scorer(chunk[:, 0], chunk[:, 1]))
        for i, (s, r, o) in enumerate(chunk.tolist()):
            ranks[lo + i] = filtered_rank(scores[i], o, kg.truth[(s, r)])
    return ranks


def as_scorer(model) -> Scorer:
    if hasattr(model, "predict"):
        return model.predict
    if callable(model):
        return model
    raise TypeError("expected a model with .predict or a callable scorer")


def evaluate(model, kg: KnowledgeGraph, split: str = "test", batch_size: int = 256, meta: dict | None = None) -> EvalReport:
    """Filtered MRR / Hits@N on ``split``, counting both query directions."""
    triples = queries(kg, split)
    if len(triples) == 0:
        raise ValueError(f"split {split!r} is empty")
    ranks = rank_queries(as_scorer(model), kg, triples, batch_size)
    return EvalReport.from_ranks(ranks, split, meta)

