import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dsparse.kgdata import (
    KnowledgeGraph,
    ParseError,
    StateError,
    Vocab,
    VocabError,
    add_inverse_relations,
    batch_bounds,
    build_truth_index,
    generate_toy_kg,
    group_pairs,
    load_dataset,
    load_triples,
    make_batches,
    write_dataset,
    write_triples,
)

FB15K237 = os.environ.get("DSPARSE_FB15K237")


@pytest.fixture
def tsv(tmp_path):
    def write(lines, name="t.txt"):
        p = tmp_path / name
        p.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
        return p

    return write


def test_load_two_lines(tsv):
    triples, vocab = load_triples(tsv(["a\tr\tb", "b\tr\tc"]))
    assert triples.tolist() == [[0, 0, 1], [1, 0, 2]]
    assert vocab.entities == ["a", "b", "c"] and vocab.relations == ["r"]


def test_load_empty_file(tsv):
    triples, vocab = load_triples(tsv([]))
    assert triples.shape == (0, 3) and vocab.n_entities == 0 and vocab.n_relations == 0


def test_malformed_line_reports_line_number(tsv):
    with pytest.raises(ParseError, match=":2:"):
        load_triples(tsv(["a\tr\tb", "a\tr"]))


def test_strict_mode_rejects_unseen_entity(tsv):
    _, vocab = load_triples(tsv(["a\tr\tb"], "train.txt"))
    with pytest.raises(VocabError):
        load_triples(tsv(["a\tr\tz"], "test.txt"), vocab, strict=True)
    triples, vocab = load_triples(tsv(["a\tr\tz"], "test.txt"), vocab, strict=False)
    assert vocab.entity_ids["z"] == 2


def test_utf8_names_round_trip(tmp_path, tsv):
    triples, vocab = load_triples(tsv(["köln\tliegt_in\tdeutschland", "東京\tliegt_in\t日本"]))
    out = tmp_path / "copy.txt"
    write_triples(out, triples, vocab)
    again, vocab2 = load_triples(out)
    assert again.tolist() == triples.tolist()
    assert vocab2.entities == vocab.entities and vocab2.relations == vocab.relations


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.sampled_from("abcdefg"), st.sampled_from(["r1", "r2", "r3"]), st.sampled_from("abcdefg")), max_size=30))
def test_load_write_load_is_identity(tmp_path_factory, rows):
    d = tmp_path_factory.mktemp("rt")
    src = d / "a.txt"
    src.write_text("".join(f"{s}\t{r}\t{o}\n" for s, r, o in rows), encoding="utf-8")
    triples, vocab = load_triples(src)
    write_triples(d / "b.txt", triples, vocab)
    again, vocab2 = load_triples(d / "b.txt")
    assert again.tolist() == triples.tolist()
    assert vocab2.entities == vocab.entities and vocab2.relations == vocab.relations


def test_inverse_augmentation():
    vocab = Vocab(["a", "b"], ["r"])
    triples, aug = add_inverse_relations(np.array([[0, 0, 1]]), vocab)
    assert triples.tolist() == [[0, 0, 1], [1, 1, 0]]
    assert aug.relations == ["r", "r_inv"] and aug.n_relations == 2


def test_inverse_ids_round_trip():
    vocab = Vocab(["x"], [f"r{i}" for i in range(237)])
    _, aug = add_inverse_relations(np.zeros((0, 3), dtype=np.int64), vocab)
    assert aug.n_relations == 474
    for r in range(237):
        inv = aug.relation_ids[f"r{r}_inv"]
        assert inv - 237 == r and aug.inverse_of(inv) == r and aug.inverse_of(r) == inv


def test_double_augmentation_is_rejected():
    _, aug = add_inverse_relations(np.zeros((0, 3), dtype=np.int64), Vocab([], ["r"]))
    with pytest.raises(StateError):
        add_inverse_relations(np.zeros((0, 3), dtype=np.int64), aug)


def test_truth_index_union():
    idx = build_truth_index(np.array([[0, 0, 1]]), np.array([[0, 0, 2]]))
    assert idx[(0, 0)].tolist() == [1, 2]


def test_truth_index_disjoint_relations():
    idx = build_truth_index(np.array([[0, 0, 1], [0, 1, 2]]))
    assert set(idx) == {(0, 0), (0, 1)}
    assert idx[(0, 0)].tolist() == [1] and idx[(0, 1)].tolist() == [2]


def test_truth_index_superset_of_splits():
    kg = generate_toy_kg(30, 1)
    for split in ("train", "valid", "test"):
        for s, r, o in kg.augmented(split).tolist():
            assert o in kg.truth[(s, r)]


def test_batches_group_pairs():
    batches = list(make_batches(np.array([[0, 0, 1], [0, 0, 2], [1, 0, 2]]), 2, 3, rng=None))
    assert len(batches) == 1
    b = batches[0]
    assert b.pairs.tolist() == [[0, 0], [1, 0]]
    assert b.labels.tolist() == [[0, 1, 1], [0, 0, 1]]


def test_batches_deterministic_shuffle():
    kg = generate_toy_kg(40, 3)
    train = kg.augmented("train")
    a = [b.pairs.tolist() for b in make_batches(train, 8, kg.n_entities, rng=11)]
    b = [b.pairs.tolist() for b in make_batches(train, 8, kg.n_entities, rng=11)]
    c = [b.pairs.tolist() for b in make_batches(train, 8, kg.n_entities, rng=12)]
    assert a == b and a != c


def test_batches_cover_every_distinct_pair():
    kg = generate_toy_kg(50, 4)
    train = kg.augmented("train")
    expected = {(s, r) for s, r, _ in train.tolist()}
    seen = [tuple(p) for b in make_batches(train, 16, kg.n_entities, rng=0) for p in b.pairs.tolist()]
    assert len(seen) == len(expected) and set(seen) == expected


def test_label_rows_count_train_objects():
    rng = np.random.default_rng(5)
    train = np.unique(rng.integers(0, 6, size=(60, 3)) % [12, 3, 12], axis=0)
    objs = {}
    for s, r, o in train.tolist():
        objs.setdefault((s, r), set()).add(o)
    for b in make_batches(train, 4, 12, rng=1):
        for (s, r), row in zip(b.pairs.tolist(), b.labels):
            assert row.sum() == len(objs[(s, r)]) >= 1
            assert set(np.flatnonzero(row)) == objs[(s, r)]


@pytest.mark.parametrize("n,bs,expected", [(10, 4, [(0, 4), (4, 8), (8, 10)]), (9, 4, [(0, 4), (4, 9)]), (1, 4, [(0, 1)])])
def test_short_final_batch_rule(n, bs, expected):
    assert batch_bounds(n, bs) == expected


def test_batch_size_must_allow_batchnorm():
    with pytest.raises(ValueError):
        next(make_batches(np.array([[0, 0, 1]]), 1, 2))


def test_toy_graph_shape():
    kg = generate_toy_kg(20, 0)
    assert len(kg.train) + len(kg.valid) + len(kg.test) == 60
    assert kg.vocab.n_raw_relations == 3 and kg.n_relations == 6
    all_raw = np.concatenate([kg.train, kg.valid, kg.test])
    plus1 = all_raw[all_raw[:, 1] == 0]
    assert sorted(plus1[:, 0].tolist()) == list(range(20))
    assert all((o - s) % 20 == 1 for s, _, o in plus1.tolist())


def test_toy_graph_deterministic():
    a, b = generate_toy_kg(30, 9), generate_toy_kg(30, 9)
    for s in ("train", "valid", "test"):
        assert a.split(s).tobytes() == b.split(s).tobytes()
    assert generate_toy_kg(30, 10).train.tobytes() != a.train.tobytes()


def test_toy_graph_minimum_size():
    with pytest.raises(ValueError):
        generate_toy_kg(19, 0)


def test_dataset_directory_round_trip(tmp_path):
    kg = generate_toy_kg(25, 2)
    write_dataset(kg, tmp_path)
    again = load_dataset(tmp_path)
    assert again.vocab.relations == kg.vocab.relations
    for s in ("train", "valid", "test"):
        # names are the same, ids may be renumbered in first-seen order
        names = lambda g, t: [(g.vocab.entities[a], g.vocab.relations[b], g.vocab.entities[c]) for a, b, c in t.tolist()]
        assert names(again, again.split(s)) == names(kg, kg.split(s))


def test_every_training_triple_in_truth_index():
    kg = generate_toy_kg(40, 0)
    for s, r, o in kg.augmented("train").tolist():
        assert o in kg.truth[(s, r)]
    assert kg.n_relations == 2 * kg.vocab.n_raw_relations


@pytest.mark.skipif(not FB15K237, reason="set DSPARSE_FB15K237 to the dataset directory")
def test_fb15k237_counts():
    triples, vocab = load_triples(os.path.join(FB15K237, "train.txt"))
    with open(os.path.join(FB15K237, "train.txt"), encoding="utf-8") as fh:
        rows = [line.rstrip("\n").split("\t") for line in fh if line.strip()]
    assert len(triples) == len(rows) == 272_115
    assert vocab.n_entities == len({r[0] for r in rows} | {r[2] for r in rows}) == 14_541
    assert vocab.n_relations == len({r[1] for r in rows}) == 237
    kg = load_dataset(FB15K237)
    assert kg.n_relations == 474
    for s, r, o in kg.augmented("test").tolist():
        assert o in kg.truth[(s, r)]
