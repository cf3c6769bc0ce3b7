#!/usr/bin/env python3
"""Contraction experiment: stationary data, increasingly fine partitions.

Simulates counts from the single-precision model on a grid and fits
candidate models with 1/3/4/5/6 sub-regions; reports how far each
candidate's per-sub-region estimates drift from the single-precision
estimate (they should barely drift at all under the joint prior).
"""
import argparse
import sys

sys.path.insert(0, __file__.rsplit("/", 2)[0] + "/src")

from fbesag.cli import _grid_partitions  # noqa: E402
from fbesag.graph import grid_graph  # noqa: E402
from fbesag.studies import StudyConfig, contraction_study  # noqa: E402


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--rows", type=int, default=20)
    ap.add_argument("--cols", type=int, default=20)
    ap.add_argument("--replicates", type=int, default=10)
    ap.add_argument("--log-tau", type=float, default=0.69)
    ap.add_argument("--intercept", type=float, default=2.0)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out", default="contraction_out")
    args = ap.parse_args()

    partitions = _grid_partitions(args.rows, args.cols, "contraction")
    config = StudyConfig(
        graph=grid_graph(args.rows, args.cols),
        partitions=partitions,
        generator_partition=dict(partitions)["p1"],
        log_tau=args.log_tau,
        sigma_gamma=0.0,
        replicates=args.replicates,
        intercept=args.intercept,
        base_seed=args.seed,
        threads=args.threads,
    )
    result = contraction_study(config)
    result.write(args.out)
    for row in result.table_rows:
        print(row)


if __name__ == "__main__":
    main()
