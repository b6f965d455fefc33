"""Small end-to-end demo on scikit-learn's 8x8 digits (no download needed).

Trains private and non-private models, prints accuracies, the share of test
inputs dominated by a single filter, and renders the top filters for one input.
"""

import argparse
from pathlib import Path

import numpy as np
from sklearn.datasets import load_digits

from dpllm import interpret
from dpllm.data import Dataset, split
from dpllm.dp_optimizer import TrainConfig, accuracy_of, train
from dpllm.model import init_params


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out-dir", default="digits_out")
    ap.add_argument("--num-filters", type=int, default=5)
    args = ap.parse_args()
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    d = load_digits()
    train_set, test_set = split(Dataset(d.data / 16.0, d.target, 10, image_shape=(8, 8)), 0.2, seed=0)
    for dp in (False, True):
        cfg = TrainConfig(batch_size=100, epochs=20, learning_rate=0.01, dp_enabled=dp, clip=0.1,
                          noise_multiplier=1.0)
        params = init_params(10, args.num_filters, 64, None, 1.0, seed=0)
        params, rep = train(train_set, params, cfg, test_set)
        proj = params.projections()
        share = interpret.dominance_fraction(params, proj, test_set.features)
        tag = "private" if dp else "nonprivate"
        print(f"{tag}: accuracy={accuracy_of(params, proj, test_set):.4f} epsilon={rep.epsilon} "
              f"single-filter share={share:.2f}")
        ex = interpret.local_explanation(params, proj, test_set.features[0], top_k=3)
        for rank, (m, filt) in enumerate(zip(ex.top_indices, ex.top_filters)):
            interpret.render_filter(filt, 8, 8, out / f"{tag}_rank{rank}_filter{m}.ppm", fmt="ppm")
        weights = np.round([w for _, w in ex.rankings[ex.predicted_class][:3]], 3)
        print(f"  input 0: predicted {ex.predicted_class}, top weights {weights.tolist()}")


if __name__ == "__main__":
    main()
