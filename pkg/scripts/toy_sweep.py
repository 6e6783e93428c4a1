"""Sweep the free training knobs on the toy graph and print test Hits@1 per relation.

The architecture and optimizer settings stay at the toy acceptance values;
only batch size, dropout, hidden width and weight decay vary.

    python3 scripts/toy_sweep.py --batch 8 4 --dropout 0.2 0.3
"""

import argparse
import itertools
import time

import numpy as np
from threadpoolctl import threadpool_limits

from dsparse.evaluation import evaluate, queries
from dsparse.kgdata import generate_toy_kg
from dsparse.model import ModelConfig
from dsparse.train import TrainConfig, train_run


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--entities", type=int, default=100)
    ap.add_argument("--toy-seed", type=int, default=7)
    ap.add_argument("--epochs", type=int, default=300)
    ap.add_argument("--batch", type=int, nargs="+", default=[8])
    ap.add_argument("--dropout", type=float, nargs="+", default=[0.3])
    ap.add_argument("--hidden", type=int, nargs="+", default=[32])
    ap.add_argument("--weight-decay", type=float, nargs="+", default=[0.0])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    kg = generate_toy_kg(args.entities, args.toy_seed)
    q = queries(kg, "test")
    print("batch dropout hidden wd | train_h1 test_h1 | per-relation test_h1 | seconds")
    for bs, p, h, wd in itertools.product(args.batch, args.dropout, args.hidden, args.weight_decay):
        mc = ModelConfig(kg.n_entities, kg.n_relations, dim=32, hidden=h, n_experts=3, temperature=1.0,
                         sparsity=0.5, depth=3, dropout=p)
        tc = TrainConfig(lr=1e-3, batch_size=bs, epochs=args.epochs, label_smoothing=0.1, weight_decay=wd, seed=args.seed)
        start = time.perf_counter()
        with threadpool_limits(limits=1):
            res = train_run(kg, mc, tc)
        elapsed = time.perf_counter() - start
        train_h1 = evaluate(res.model, kg, "train").hits1
        test = evaluate(res.model, kg, "test")
        ranks = np.array(test.ranks)
        per_rel = " ".join(f"{kg.vocab.relations[r]}={np.mean(ranks[q[:, 1] == r] == 1):.2f}" for r in np.unique(q[:, 1]))
        print(f"{bs} {p} {h} {wd} | {train_h1:.3f} {test.hits1:.3f} | {per_rel} | {elapsed:.0f}")


if __name__ == "__main__":
    main()
