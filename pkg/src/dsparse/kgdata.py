"""Triple corpora, vocabularies, the filtered truth index and 1-N batches."""

from __future__ import annotations

import os
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple

import numpy as np

INVERSE_SUFFIX = "_inv"
SPLITS = ("train", "valid", "test")


class ParseError(ValueError):
    pass


class VocabError(KeyError):
    pass


class StateError(RuntimeError):
    pass


class Triple(NamedTuple):
    subject: int
    relation: int
    object: int


@dataclass
class Vocab:
    entities: list[str] = field(default_factory=list)
    relations: list[str] = field(default_factory=list)
    augmented: bool = False
    n_raw_relations: int | None = None

    def __post_init__(self):
        self.entity_ids = {name: i for i, name in enumerate(self.entities)}
        self.relation_ids = {name: i for i, name in enumerate(self.relations)}

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    def copy(self) -> Vocab:
        return Vocab(list(self.entities), list(self.relations), self.augmented, self.n_raw_relations)

    def add_entity(self, name: str) -> int:
        if name not in self.entity_ids:
            self.entity_ids[name] = len(self.entities)
            self.entities.append(name)
        return self.entity_ids[name]

    def add_relation(self, name: str) -> int:
        if self.augmented:
            raise StateError("cannot add relations to an inverse-augmented vocabulary")
        if name not in self.relation_ids:
            self.relation_ids[name] = len(self.relations)
            self.relations.append(name)
        return self.relation_ids[name]

    def inverse_of(self, relation: int) -> int:
        if not self.augmented:
            raise StateError("vocabulary has no inverse relations")
        n = self.n_raw_relations
        return relation + n if relation < n else relation - n


def load_triples(path: str | os.PathLike, vocab: Vocab | None = None, strict: bool = False) -> tuple[np.ndarray, Vocab]:
    """Read a tab-separated triple file into an (N, 3) id array.

    With ``vocab=None`` a new vocabulary is built in first-seen order. With an
    existing vocabulary, unseen entity names are added unless ``strict``.
    Unseen relation names are always an error against a reused vocabulary in
    strict mode.
    """
    building = vocab is None
    vocab = Vocab() if building else vocab
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}")
            s, r, o = parts
            if strict and not building:
                for name in (s, o):
                    if name not in vocab.entity_ids:
                        raise VocabError(f"{path}:{lineno}: unknown entity {name!r}")
                if r not in vocab.relation_ids:
                    raise VocabError(f"{path}:{lineno}: unknown relation {r!r}")
            rows.append((vocab.add_entity(s), vocab.add_relation(r), vocab.add_entity(o)))
    return np.array(rows, dtype=np.int64).reshape(-1, 3), vocab


def write_triples(path: str | os.PathLike, triples: np.ndarray, vocab: Vocab) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s, r, o in triples:
            fh.write(f"{vocab.entities[s]}\t{vocab.relations[r]}\t{vocab.entities[o]}\n")


def augment_vocab(vocab: Vocab) -> Vocab:
    if vocab.augmented:
        raise StateError("vocabulary is already inverse-augmented")
    out = vocab.copy()
    n = len(out.relations)
    for name in vocab.relations:
        out.add_relation(name + INVERSE_SUFFIX)
    out.augmented = True
    out.n_raw_relations = n
    return out


def inverse_triples(triples: np.ndarray, n_raw_relations: int) -> np.ndarray:
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    return np.stack([triples[:, 2], triples[:, 1] + n_raw_relations, triples[:, 0]], axis=1)


def add_inverse_relations(triples: np.ndarray, vocab: Vocab) -> tuple[np.ndarray, Vocab]:
    """Append (o, r_inv, s) for every (s, r, o); r_inv has id r + |R_raw|."""
    aug = augment_vocab(vocab)
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    return np.concatenate([triples, inverse_triples(triples, aug.n_raw_relations)]), aug


def build_truth_index(*splits: np.ndarray) -> dict[tuple[int, int], np.ndarray]:
    """Map (subject, relation) to the sorted objects seen across all ``splits``."""
    acc: dict[tuple[int, int], set[int]] = defaultdict(set)
    for triples in splits:
        for s, r, o in np.asarray(triples).reshape(-1, 3).tolist():
            acc[(s, r)].add(o)
    return {k: np.array(sorted(v), dtype=np.int64) for k, v in acc.items()}


@dataclass
class KnowledgeGraph:
    """Vocabulary (inverse-augmented), raw splits and the filter index.

    ``train``/``valid``/``test`` hold the raw triples; the inverse direction
    is derived on demand with :meth:`augmented`.
    """

    vocab: Vocab
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    truth: dict[tuple[int, int], np.ndarray] = field(init=False, repr=False)

    def __post_init__(self):
        if not self.vocab.augmented:
            self.vocab = augment_vocab(self.vocab)
        self.truth = build_truth_index(*(self.augmented(s) for s in SPLITS))

    @property
    def n_entities(self) -> int:
        return self.vocab.n_entities

    @property
    def n_relations(self) -> int:
        return self.vocab.n_relations

    def split(self, name: str) -> np.ndarray:
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}")
        return getattr(self, name)

    def augmented(self, name: str) -> np.ndarray:
        raw = self.split(name)
        return np.concatenate([raw, inverse_triples(raw, self.vocab.n_raw_relations)])


def load_dataset(directory: str | os.PathLike, strict: bool = True) -> KnowledgeGraph:
    """Load ``train.txt``, ``valid.txt`` and ``test.txt`` from ``directory``."""
    if not os.path.isdir(directory):
        raise FileNotFoundError(f"dataset directory not found: {directory}")
    train, vocab = load_triples(os.path.join(directory, "train.txt"))
    valid, vocab = load_triples(os.path.join(directory, "valid.txt"), vocab, strict=strict)
    test, vocab = load_triples(os.path.join(directory, "test.txt"), vocab, strict=strict)
    return KnowledgeGraph(vocab, train, valid, test)


def write_dataset(kg: KnowledgeGraph, directory: str | os.PathLike) -> None:
    os.makedirs(directory, exist_ok=True)
    raw = kg.vocab.copy()
    raw.relations = raw.relations[: kg.vocab.n_raw_relations]
    for name in SPLITS:
        write_triples(os.path.join(directory, f"{name}.txt"), kg.split(name), raw)


# ---------------------------------------------------------------- 1-N batches


@dataclass
class Batch1N:
    pairs: np.ndarray  # (B, 2) subject, relation
    labels: np.ndarray  # (B, |E|) 0/1

    @property
    def subjects(self) -> np.ndarray:
        return self.pairs[:, 0]

    @property
    def relations(self) -> np.ndarray:
        return self.pairs[:, 1]

    def __len__(self) -> int:
        return len(self.pairs)


def group_pairs(triples: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Unique (s, r) pairs in first-seen order and the objects of each."""
    objects: dict[tuple[int, int], list[int]] = {}
    for s, r, o in np.asarray(triples).reshape(-1, 3).tolist():
        objects.setdefault((s, r), []).append(o)
    pairs = np.array(list(objects), dtype=np.int64).reshape(-1, 2)
    return pairs, [np.unique(v) for v in objects.values()]


def batch_bounds(n: int, batch_size: int) -> list[tuple[int, int]]:
    """Slices of ``range(n)``; a trailing batch of one row joins its predecessor."""
    bounds = [(lo, min(lo + batch_size, n)) for lo in range(0, n, batch_size)]
    if len(bounds) > 1 and bounds[-1][1] - bounds[-1][0] < 2:
        lo, _ = bounds[-2]
        bounds[-2:] = [(lo, n)]
    return bounds


def make_batches(
    train_triples: np.ndarray,
    batch_size: int,
    n_entities: int,
    rng: np.random.Generator | int | None = 0,
    grouped: tuple[np.ndarray, list[np.ndarray]] | None = None,
) -> Iterator[Batch1N]:
    """Yield one epoch of 1-N batches over the distinct (s, r) pairs.

    ``rng`` may be a seed or a Generator; pass a shared Generator to get a
    fresh order every epoch. ``None`` disables shuffling.
    """
    if batch_size < 2:
        raise ValueError("batch size must be >= 2 (batch norm needs two rows)")
    pairs, objects = grouped if grouped is not None else group_pairs(train_triples)
    order = np.arange(len(pairs))
    if rng is not None:
        rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        rng.shuffle(order)
    for lo, hi in batch_bounds(len(order), batch_size):
        idx = order[lo:hi]
        labels = np.zeros((len(idx), n_entities), dtype=np.float64)
        for row, i in enumerate(idx):
            labels[row, objects[i]] = 1.0
        yield Batch1N(pairs[idx], labels)


# ---------------------------------------------------------------- toy graph

TOY_RELATIONS = ("plus1", "plus2", "mirror")


def generate_toy_kg(n_entities: int, seed: int = 0) -> KnowledgeGraph:
    """Modular-arithmetic graph on entities "0".."n-1".

    plus1: s -> s+1, plus2: s -> s+2, mirror: s -> n-1-s (all mod n). The
    3n triples are shuffled with ``seed`` and split 80/10/10.
    """
    n = n_entities
    if n < 20:
        raise ValueError("toy graph needs at least 20 entities")
    vocab = Vocab([str(i) for i in range(n)], list(TOY_RELATIONS))
    s = np.arange(n)
    triples = np.concatenate(
        [
            np.stack([s, np.full(n, 0), (s + 1) % n], axis=1),
            np.stack([s, np.full(n, 1), (s + 2) % n], axis=1),
            np.stack([s, np.full(n, 2), (n - 1 - s) % n], axis=1),
        ]
    ).astype(np.int64)
    rng = np.random.default_rng(seed)
    triples = triples[rng.permutation(len(triples))]
    n_train = int(round(0.8 * len(triples)))
    n_valid = int(round(0.1 * len(triples)))
    return KnowledgeGraph(
        vocab,
        triples[:n_train],
        triples[n_train : n_train + n_valid],
        triples[n_train + n_valid :],
    )
