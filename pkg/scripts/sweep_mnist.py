"""Accuracy against epsilon, filters per class, or projection size on MNIST.

    python scripts/sweep_mnist.py --data data/mnist --axis num_filters --grid 1 5 10 30 100
    python scripts/sweep_mnist.py --data data/mnist --axis epsilon --grid 0.5 1 2 4 --restarts 10

Writes a CSV table (stdout, or --out).
"""

import argparse
from pathlib import Path

from dpllm import data
from dpllm.dp_optimizer import TrainConfig
from dpllm.evaluation import AXES, ModelSpec, sweep


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--data", required=True)
    ap.add_argument("--axis", choices=AXES, required=True)
    ap.add_argument("--grid", type=float, nargs="+", required=True)
    ap.add_argument("--restarts", type=int, default=3)
    ap.add_argument("--non-private", action="store_true")
    ap.add_argument("--beta", type=float, default=1 / 30)
    ap.add_argument("--out")
    args = ap.parse_args()

    train_set = data.load_idx(*data.find_idx_pair(args.data, "train"), num_classes=10)
    test_set = data.load_idx(*data.find_idx_pair(args.data, "test"), num_classes=10)
    grid = args.grid if args.axis == "epsilon" else [int(v) for v in args.grid]
    result = sweep(args.axis, grid, train_set, test_set, ModelSpec(beta=args.beta),
                   TrainConfig(dp_enabled=not args.non_private), restarts=args.restarts)
    table = result.table()
    if args.out:
        Path(args.out).write_text(table)
    print(table, end="")


if __name__ == "__main__":
    main()
