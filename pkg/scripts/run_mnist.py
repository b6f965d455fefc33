"""Private MNIST (or Fashion-MNIST) training with the default recipe.

    python scripts/run_mnist.py --data data/mnist --seeds 0 1 2
    python scripts/run_mnist.py --data data/fashion-mnist --beta 1 --target-epsilon 0.5

Prints one line per seed and the mean test accuracy.
"""

import argparse
import logging

import numpy as np

from dpllm import accountant, data
from dpllm.dp_optimizer import TrainConfig, accuracy_of, steps_per_epoch, train
from dpllm.model import init_params


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--data", required=True, help="directory with the four IDX files")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--num-filters", type=int, default=30)
    ap.add_argument("--proj-dim", type=int, default=300)
    ap.add_argument("--beta", type=float, default=1 / 30)
    ap.add_argument("--sigma", type=float, default=1.3)
    ap.add_argument("--target-epsilon", type=float, default=0.0)
    ap.add_argument("--non-private", action="store_true")
    ap.add_argument("--epochs", type=int, default=20)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    pairs = data.find_idx_pair(args.data, "train"), data.find_idx_pair(args.data, "test")
    if None in pairs:
        raise SystemExit(f"no IDX files in {args.data}")
    train_set = data.load_idx(*pairs[0], num_classes=10)
    test_set = data.load_idx(*pairs[1], num_classes=10)

    cfg = TrainConfig(epochs=args.epochs, noise_multiplier=args.sigma, dp_enabled=not args.non_private)
    if cfg.dp_enabled and args.target_epsilon > 0:
        q = cfg.batch_size / len(train_set)
        steps = cfg.epochs * steps_per_epoch(len(train_set), cfg)
        cfg.noise_multiplier = accountant.calibrate_sigma(q, steps, cfg.delta, args.target_epsilon)
        print(f"calibrated sigma={cfg.noise_multiplier:.4f}")

    accs = []
    for seed in args.seeds:
        cfg.seed = seed
        params = init_params(10, args.num_filters, train_set.dim, args.proj_dim or None, args.beta, seed=seed)
        proj = params.projections()
        params, report = train(train_set, params, cfg, test_set, projections=proj)
        accs.append(accuracy_of(params, proj, test_set))
        print(f"seed={seed} accuracy={accs[-1]:.4f} epsilon={report.epsilon} steps={report.steps}")
    print(f"mean accuracy {np.mean(accs):.4f} +- {np.std(accs):.4f} over {len(accs)} seeds")


if __name__ == "__main__":
    main()
