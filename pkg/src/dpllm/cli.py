"""Command-line entry point: ``dpllm <command> [options]``.

Commands: train, eval, explain, export-filters, accountant, calibrate, sweep,
gen-medical.  Failures print one line ``error: kind=<Name> message="..."`` to
stderr and exit with status 1 (2 for usage errors).
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import accountant, checkpoint, config as config_mod, data, evaluation, interpret
from .dp_optimizer import steps_per_epoch, train
from .model import init_params

log = logging.getLogger("dpllm")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# --- data -------------------------------------------------------------------

def load_run_data(cfg: config_mod.RunConfig, meta: dict | None = None):
    """Return ``(train_set, test_set, data_meta)`` for a run configuration.

    ``meta`` carries standardization and powerset state from a training run so
    tabular test data is transformed exactly as at training time.
    """
    if cfg.data_format == "idx":
        if cfg.data_dir:
            tr = data.find_idx_pair(cfg.data_dir, "train")
            te = data.find_idx_pair(cfg.data_dir, "test")
            if tr is None or te is None:
                raise FileNotFoundError(f"no MNIST-style IDX files in {cfg.data_dir}")
        else:
            tr = (cfg.train_images, cfg.train_labels)
            te = (cfg.test_images, cfg.test_labels)
        train_set = data.load_idx(*tr)
        test_set = data.load_idx(*te, num_classes=train_set.num_classes)
        return train_set, test_set, {}

    label_cols = [c.strip() for c in cfg.label_cols.split(",") if c.strip()]
    feature_cols = [c.strip() for c in cfg.feature_cols.split(",") if c.strip()] or None
    std = report = None
    if meta and "standardizer" in meta:
        std = data.Standardizer(np.array(meta["standardizer"]["mean"]), np.array(meta["standardizer"]["std"]))
    if meta and meta.get("powerset"):
        p = meta["powerset"]
        report = data.PowersetReport(tuple(p["dense_to_original"]), {int(k): v for k, v in p["counts"].items()},
                                     p["kept_rows"], p["total_rows"])
    if cfg.test_csv:
        train_set, std, report = data.load_csv(cfg.train_csv, feature_cols, label_cols, cfg.keep_top, std, report)
        test_set, _, _ = data.load_csv(cfg.test_csv, feature_cols, label_cols, cfg.keep_top, std, report)
    else:
        full, _, report = data.load_csv(
            cfg.train_csv, feature_cols, label_cols, cfg.keep_top, powerset=report, standardize=False
        )
        train_set, test_set = data.split(full, cfg.test_fraction, cfg.split_seed)
        # statistics from the training rows only, reused for the test rows
        if std is None:
            std = data.Standardizer.fit(train_set.features)
        train_set = replace(train_set, features=std.transform(train_set.features))
        test_set = replace(test_set, features=std.transform(test_set.features))
    meta_out = {"standardizer": {"mean": std.mean.tolist(), "std": std.std.tolist()}}
    if report is not None:
        meta_out["powerset"] = {
            "dense_to_original": list(report.dense_to_original),
            "counts": {str(k): v for k, v in report.counts.items()},
            "kept_rows": report.kept_rows, "total_rows": report.total_rows,
        }
    return train_set, test_set, meta_out


def _clean(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


# --- commands ---------------------------------------------------------------

def cmd_train(cfg: config_mod.RunConfig, out=None) -> dict:
    out = out or sys.stdout
    cfg.validate()
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "effective_config.txt").write_text(cfg.dumps())
    train_set, test_set, data_meta = load_run_data(cfg)
    tcfg = cfg.train_config()
    if tcfg.dp_enabled and cfg.target_epsilon > 0:
        q = tcfg.batch_size / len(train_set)
        steps = tcfg.epochs * steps_per_epoch(len(train_set), tcfg)
        tcfg = replace(tcfg, noise_multiplier=accountant.calibrate_sigma(q, steps, tcfg.delta, cfg.target_epsilon))
    params = init_params(
        train_set.num_classes, cfg.num_filters, train_set.dim, cfg.proj_dim or None, cfg.beta,
        seed=cfg.seed, init_scale=cfg.init_scale,
    )
    log_path = out_dir / "train_log.csv"
    with open(log_path, "w") as fh:
        fh.write("epoch,train_loss,test_accuracy,epsilon\n")

        def on_epoch(rec):
            fields = [rec.epoch, rec.train_loss, rec.test_accuracy, rec.epsilon]
            fh.write(",".join("" if v is None else repr(v) for v in fields) + "\n")
            fh.flush()

        params, report = train(train_set, params, tcfg, test_set, on_epoch=on_epoch)
        if report.epsilon is not None:
            summary = f"epsilon={report.epsilon!r} delta={report.delta!r} steps={report.steps}"
        else:
            summary = f"epsilon=inf delta=0 steps={report.steps}"
        fh.write(summary + "\n")
    meta = _clean({
        "config": {k: getattr(cfg, k) for k in config_mod.FIELD_TYPES},
        "noise_multiplier_used": tcfg.noise_multiplier,
        "report": report.to_dict(),
        "data": data_meta,
        "image_shape": list(train_set.image_shape) if train_set.image_shape else None,
    })
    checkpoint.save(out_dir / "checkpoint.json", params, meta)
    (out_dir / "report.json").write_text(json.dumps(meta["report"], indent=1))
    print(summary, file=out)
    return meta


def _restore(checkpoint_path, flags):
    params, meta = checkpoint.load(checkpoint_path)
    values = dict(meta.get("config", {}))
    values.update(config_mod.parse_flags(flags))
    cfg = config_mod.RunConfig(**values)
    return params, meta, cfg


def cmd_eval(checkpoint_path, flags, out_path=None, out=None) -> dict:
    out = out or sys.stdout
    params, meta, cfg = _restore(checkpoint_path, flags)
    _, test_set, _ = load_run_data(cfg, meta.get("data"))
    projections = params.projections()
    cm = evaluation.confusion_matrix(params, projections, test_set)
    metrics = {"accuracy": float(np.trace(cm) / cm.sum()), "n": int(cm.sum()), "confusion": cm.tolist()}
    if out_path:
        Path(out_path).write_text(json.dumps(metrics, indent=1))
    print(f"accuracy={metrics['accuracy']!r} n={metrics['n']}", file=out)
    return metrics


def cmd_explain(checkpoint_path, flags, index: int, top_k: int, out_dir, fmt: str = "pgm", out=None) -> dict:
    out = out or sys.stdout
    params, meta, cfg = _restore(checkpoint_path, flags)
    if not 1 <= top_k <= params.num_filters:
        raise ValueError(f"top_k={top_k} must lie in [1, {params.num_filters}]")
    _, test_set, _ = load_run_data(cfg, meta.get("data"))
    if not 0 <= index < len(test_set):
        raise IndexError(f"input index {index} out of range [0, {len(test_set)})")
    projections = params.projections()
    rep = interpret.local_explanation(params, projections, test_set.features[index], top_k, index)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    shape = tuple(meta.get("image_shape") or ()) or None
    fmt = fmt if shape else "csv"
    rows, cols = shape if shape else (None, None)
    ext = "csv" if fmt == "csv" else fmt.split("-")[0]
    for rank, (m, filt) in enumerate(zip(rep.top_indices, rep.top_filters)):
        interpret.render_filter(filt, rows, cols, out_dir / f"input{index}_rank{rank}_filter{m}.{ext}", fmt)
    interpret.render_filter(rep.weighted_filter, rows, cols, out_dir / f"input{index}_weighted.{ext}", fmt)
    doc = rep.to_dict()
    doc["true_label"] = int(test_set.labels[index])
    (out_dir / f"explanation_{index}.json").write_text(json.dumps(doc, indent=1))
    print(f"input={index} predicted={rep.predicted_class} top_weight={rep.top_weight()!r}", file=out)
    return doc


def cmd_export_filters(checkpoint_path, out_dir, fmt: str = "pgm", out=None) -> list:
    out = out or sys.stdout
    params, meta = checkpoint.load(checkpoint_path)
    bank = interpret.global_filters(params, params.projections())
    shape = tuple(meta.get("image_shape") or ()) or interpret.image_shape_for(params.input_dim)
    if fmt != "csv" and shape is None:
        raise ValueError(f"input dimension {params.input_dim} is not an image; use --format csv")
    rows, cols = shape if shape else (None, None)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ext = "csv" if fmt == "csv" else fmt.split("-")[0]
    paths = []
    for k in range(params.num_classes):
        for m in range(params.num_filters):
            paths.append(interpret.render_filter(bank[k, m], rows, cols, out_dir / f"class{k}_filter{m}.{ext}", fmt))
    print(f"exported={len(paths)} dir={out_dir}", file=out)
    return paths


def cmd_accountant(q, sigma, steps, delta, out=None) -> float:
    out = out or sys.stdout
    ledger = accountant.PrivacyLedger(q, sigma).charge(steps)
    eps = ledger.get_epsilon(delta)
    print(f"epsilon={eps!r} delta={delta!r} q={q!r} sigma={sigma!r} steps={steps} order={ledger.best_order(delta)}", file=out)
    return eps


def cmd_calibrate(q, steps, delta, eps, out=None) -> float:
    out = out or sys.stdout
    sigma = accountant.calibrate_sigma(q, steps, delta, eps)
    print(f"sigma={sigma!r} epsilon={eps!r} delta={delta!r} q={q!r} steps={steps}", file=out)
    return sigma


def cmd_sweep(cfg: config_mod.RunConfig, axis: str, grid: list, restarts: int, out_path, out=None):
    out = out or sys.stdout
    cfg.validate()
    train_set, test_set, _ = load_run_data(cfg)
    model = evaluation.ModelSpec(cfg.num_filters, cfg.proj_dim or None, cfg.beta)
    result = evaluation.sweep(axis, grid, train_set, test_set, model, cfg.train_config(), restarts, cfg.seed)
    table = result.table()
    if out_path:
        Path(out_path).write_text(table)
    out.write(table)
    return result


def cmd_gen_medical(out_path, n: int, seed: int, out=None) -> Path:
    out = out or sys.stdout
    X, bits = data.synthetic_medical(n=n, seed=seed)
    data.write_medical_csv(out_path, X, bits)
    print(f"wrote={out_path} rows={n}", file=out)
    return Path(out_path)


# --- argument parsing -------------------------------------------------------

def _parse_grid(text: str) -> list:
    vals = []
    for tok in text.split(","):
        tok = tok.strip()
        vals.append(None if tok.lower() == "none" else float(tok) if "." in tok or "e" in tok.lower() else int(tok))
    return vals


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dpllm", description="Differentially private locally linear maps")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("train", help="train a model; any config key may be passed as --kebab-case")
    s.add_argument("--config")

    s = sub.add_parser("eval", help="evaluate a checkpoint on its test data")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--out")

    s = sub.add_parser("explain", help="rank and render the filters used for one test input")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--index", type=int, default=0)
    s.add_argument("--top-k", type=int, default=3)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--format", default="pgm")

    s = sub.add_parser("export-filters", help="render every class filter in input space")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--format", default="pgm")

    s = sub.add_parser("accountant", help="epsilon after a number of subsampled Gaussian steps")
    s.add_argument("--q", type=float, required=True)
    s.add_argument("--sigma", type=float, required=True)
    s.add_argument("--steps", type=int, required=True)
    s.add_argument("--delta", type=float, required=True)

    s = sub.add_parser("calibrate", help="noise multiplier reaching a target epsilon")
    s.add_argument("--q", type=float, required=True)
    s.add_argument("--steps", type=int, required=True)
    s.add_argument("--delta", type=float, required=True)
    s.add_argument("--epsilon", type=float, required=True)

    s = sub.add_parser("sweep", help="accuracy over a grid of epsilon, num_filters or proj_dim")
    s.add_argument("--config")
    s.add_argument("--axis", required=True, choices=evaluation.AXES)
    s.add_argument("--grid", required=True)
    s.add_argument("--restarts", type=int, default=1)
    s.add_argument("--out")

    s = sub.add_parser("gen-medical", help="write a synthetic medical-like CSV")
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=int, default=110_300)
    s.add_argument("--seed", type=int, default=0)
    return p


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args, rest = parser.parse_known_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        if rest and args.command not in ("train", "eval", "explain", "sweep"):
            raise UsageError(f"unrecognized arguments: {' '.join(rest)}")
        if args.command == "train":
            cmd_train(config_mod.build(args.config, rest))
        elif args.command == "eval":
            cmd_eval(args.checkpoint, rest, args.out)
        elif args.command == "explain":
            cmd_explain(args.checkpoint, rest, args.index, args.top_k, args.out_dir, args.format)
        elif args.command == "export-filters":
            cmd_export_filters(args.checkpoint, args.out_dir, args.format)
        elif args.command == "accountant":
            cmd_accountant(args.q, args.sigma, args.steps, args.delta)
        elif args.command == "calibrate":
            cmd_calibrate(args.q, args.steps, args.delta, args.epsilon)
        elif args.command == "sweep":
            cmd_sweep(config_mod.build(args.config, rest), args.axis, _parse_grid(args.grid), args.restarts, args.out)
        elif args.command == "gen-medical":
            cmd_gen_medical(args.out, args.n, args.seed)
    except UsageError as exc:
        print(f'error: kind=UsageError message={json.dumps(str(exc))}', file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"error: kind={type(exc).__name__} message={json.dumps(str(exc))}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
