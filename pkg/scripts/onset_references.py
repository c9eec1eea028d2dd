"""Onset times S_x at p=0.6 under a p=1 reference envelope and under a held-out p=0.6 reference.

usage: python scripts/onset_references.py [--configs 10] [--side 199]
"""
import argparse
import math

import numpy as np

from clusterwalk import verify as vf
from clusterwalk import walk as wk
from clusterwalk.cluster import cluster_graph
from clusterwalk.percolation import Box, sample_bond_config

TIMES = [2.0, 4.0, 8.0, 16.0, 32.0, 64.0]


def kernel_at(side, p, seed):
    g = cluster_graph(sample_bond_config(Box.centered(2, side), p, seed))
    x = int(np.argmin(np.abs(g.coords).sum(axis=1)))
    return g, x, wk.exact_heat_kernel(g, TIMES, sources=[x])


def held_out(side, count=8):
    pairs = []
    for i in range(count):
        _, x, k = kernel_at(side, 0.6, 1000 + i)
        pairs.append((k, x))
    return pairs


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--configs", type=int, default=10)
    ap.add_argument("--side", type=int, default=199)
    ap.add_argument("--relax", type=float, default=4.0)
    args = ap.parse_args()
    g1, x1, k1 = kernel_at(args.side, 1.0, 0)
    refs = {"p=1": vf.fit_gaussian_envelope(k1, x1).constants,
            "held-out": vf.fit_reference_envelope(held_out(args.side)).constants}
    for name, c in refs.items():
        print(f"{name:9s} c1={c['c1']:.3g} c2={c['c2']:.3g} c3={c['c3']:.3g} c4={c['c4']:.3g}")
    for seed in range(args.configs):
        g, x, k = kernel_at(args.side, 0.6, seed)
        S = {name: vf.estimate_onset_time(g, x, TIMES, c, relax=args.relax, kernel=k).S_x
             for name, c in refs.items()}
        ratio = k.q[:, 0, x] / k1.q[:, 0, x1]
        print(f"seed {seed}: S_x {S}; q_xx ratio to p=1 {np.round(ratio, 2).tolist()}")


if __name__ == "__main__":
    main()
