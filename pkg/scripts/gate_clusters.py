"""Summarize exported gate vectors: mean gate per relation and intra/inter distances.

    dsparse export-gates runs/toy/checkpoint.bin --out gates.csv
    python3 scripts/gate_clusters.py gates.csv
"""

import argparse
import csv

import numpy as np


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("csv")
    args = ap.parse_args()
    with open(args.csv, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    rel = np.array([r[1] for r in rows])
    g = np.array([[float(x) for x in r[2:]] for r in rows])
    print("relation".ljust(16), " ".join(h.rjust(7) for h in header[2:]), "  n")
    for name in sorted(set(rel)):
        sel = g[rel == name]
        print(name.ljust(16), " ".join(f"{v:7.4f}" for v in sel.mean(axis=0)), f"  {len(sel)}")
    dist = np.sqrt(((g[:, None, :] - g[None, :, :]) ** 2).sum(-1))
    same = rel[:, None] == rel[None, :]
    off = ~np.eye(len(g), dtype=bool)
    print(f"mean intra-relation distance {dist[same & off].mean():.4f}")
    print(f"mean inter-relation distance {dist[~same].mean():.4f}")


if __name__ == "__main__":
    main()
