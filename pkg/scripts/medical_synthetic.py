"""Tabular pipeline on the synthetic medical-like data (or a real CSV with the same schema).

    python scripts/medical_synthetic.py                  # generate 110,300 synthetic rows
    python scripts/medical_synthetic.py --csv henan.csv  # same recipe on a real file

Trains non-private and private (sigma=1.25, C=0.001, delta=2e-5) models with
two filters per class and writes per-class weighted-filter heatmaps.
"""

import argparse
from pathlib import Path

import numpy as np

from dpllm import data, interpret
from dpllm.dp_optimizer import TrainConfig, accuracy_of, train
from dpllm.model import init_params


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--csv")
    ap.add_argument("--out-dir", default="medical_out")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    if args.csv is None:
        X, bits = data.synthetic_medical(seed=args.seed)
        args.csv = out / "synthetic_medical.csv"
        data.write_medical_csv(args.csv, X, bits)
    full, _, report = data.load_csv(args.csv, None, list(data.MEDICAL_LABELS), keep_top=4, standardize=False)
    print(f"kept {report.kept_rows} of {report.total_rows} rows; classes {full.class_names}")
    raw_train, raw_test = data.split(full, 0.1, seed=args.seed)
    std = data.Standardizer.fit(raw_train.features)
    train_set = data.Dataset(std.transform(raw_train.features), raw_train.labels, full.num_classes, full.class_names)
    test_set = data.Dataset(std.transform(raw_test.features), raw_test.labels, full.num_classes, full.class_names)
    majority = np.bincount(test_set.labels).max() / len(test_set)
    print(f"majority-class accuracy {majority:.4f}")

    for dp in (False, True):
        cfg = TrainConfig(batch_size=256, epochs=20, learning_rate=0.01, dp_enabled=dp, clip=0.001,
                          noise_multiplier=1.25, delta=2e-5, seed=args.seed)
        params = init_params(full.num_classes, 2, full.dim, None, 1.0, seed=args.seed)
        params, rep = train(train_set, params, cfg)
        proj = params.projections()
        tag = "private" if dp else "nonprivate"
        print(f"{tag}: accuracy={accuracy_of(params, proj, test_set):.4f} epsilon={rep.epsilon}")
        # one example per class, as weighted filters normalized per row
        rows, labels = [], []
        for k in range(full.num_classes):
            x = test_set.features[np.flatnonzero(test_set.labels == k)[0]]
            rows.append(interpret.local_explanation(params, proj, x, 1).weighted_filter)
            labels.append(full.class_names[k])
        features = [c for c in data.csv_header(args.csv) if c not in data.MEDICAL_LABELS]
        interpret.write_heatmap_csv(out / f"heatmap_{tag}.csv", rows, labels, features)


if __name__ == "__main__":
    main()
