"""On-diagonal slope of log q_t(x,x) at p=0.6 in an early and a late time window.

Shows how far the early window sits from the asymptotic slope of -1.
usage: python scripts/ondiagonal_windows.py [--seeds 5] [--side 299]
"""
import argparse

import numpy as np

from clusterwalk import verify as vf
from clusterwalk import walk as wk
from clusterwalk.cluster import cluster_graph
from clusterwalk.percolation import Box, sample_bond_config


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--side", type=int, default=299)
    ap.add_argument("--p", type=float, default=0.6)
    args = ap.parse_args()
    times = np.geomspace(4, 1000, 16)
    print("seed  [4,100]  [100,1000]")
    for seed in range(args.seeds):
        g = cluster_graph(sample_bond_config(Box.centered(2, args.side), args.p, seed))
        x = int(np.argmin(np.abs(g.coords).sum(axis=1)))
        k = wk.exact_heat_kernel(g, times, sources=[x])
        early = vf.fit_ondiagonal(k, (4, 100), x).diagnostics["slope"]
        late = vf.fit_ondiagonal(k, (100, 1000), x).diagnostics["slope"]
        print(f"{seed:4d}  {early:7.3f}  {late:9.3f}")


if __name__ == "__main__":
    main()
