"""Command-line driver: ``laplace-metric <subcommand> [options]``.

Exit codes: 0 success, 1 validation failure (bad arguments, config, data or
a failed check), 2 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from laplace_metric import __version__, oracles, pipeline
from laplace_metric.checkpoint import (
    KIND_MAP,
    KIND_POSTERIOR,
    CheckpointError,
    load_checkpoint,
    save_params,
    save_posterior,
)
from laplace_metric.config import ConfigError, RunConfig, load_config
from laplace_metric.data import DatasetParseError, InvalidDatasetError, load_dataset, save_dataset
from laplace_metric.metrics import MetricsReport, ood_auroc_auprc, uncertainty_from_kappa

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("laplace_metric")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _load(path, cfg: RunConfig):
    return load_dataset(path, cfg.data.n_classes)


def _posterior(path):
    kind, spec, payload, _ = load_checkpoint(path)
    if kind != KIND_POSTERIOR:
        raise CheckpointError(f"{path} holds a {kind} checkpoint; a posterior is required")
    return spec, payload


def _emit(doc: dict, out) -> None:
    if out:
        pipeline.write_json(out, doc)
    else:
        json.dump(doc, sys.stdout, indent=2, sort_keys=True)
        sys.stdout.write("\n")


def cmd_gen_data(args, cfg: RunConfig) -> int:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    for name, ds in zip(("train", "test", "ood"), pipeline.make_data(cfg)):
        save_dataset(ds, out / f"{name}.csv")
    print(f"wrote train/test/ood CSVs to {out}")
    return EXIT_OK


def cmd_train_map(args, cfg: RunConfig) -> int:
    params = pipeline.run_map(cfg, _load(args.data, cfg))
    save_params(args.out, cfg.net, params, cfg.hash())
    return EXIT_OK


def cmd_posthoc(args, cfg: RunConfig) -> int:
    kind, spec, params, _ = load_checkpoint(args.checkpoint)
    if kind != KIND_MAP:
        raise CheckpointError(f"{args.checkpoint} is not a trained-parameter checkpoint")
    if spec != cfg.net:
        raise ConfigError("checkpoint network does not match the config")
    post = pipeline.run_posthoc(cfg, _load(args.data, cfg), params)
    save_posterior(args.out, spec, post, cfg.hash())
    return EXIT_OK


def cmd_train_online(args, cfg: RunConfig) -> int:
    post = pipeline.run_online(cfg, _load(args.data, cfg))
    save_posterior(args.out, cfg.net, post, cfg.hash())
    return EXIT_OK


def cmd_embed(args, cfg: RunConfig) -> int:
    spec, post = _posterior(args.checkpoint)
    ds = _load(args.data, cfg)
    n = args.n_samples or cfg.eval.n_samples
    Z = pipeline.embed_mean(spec, post.params, ds.X)
    _, kappa = pipeline.stochastic_kappa(spec, post, ds.X, n, cfg.seed)
    fh = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "label", "kappa"] + [f"e{k}" for k in range(Z.shape[1])])
        for ident, label, k, z in zip(ds.ids, ds.labels, kappa, Z):
            w.writerow([ident, int(label), repr(float(k))] + [repr(float(v)) for v in z])
    finally:
        if fh is not sys.stdout:
            fh.close()
    return EXIT_OK


def cmd_eval(args, cfg: RunConfig) -> int:
    spec, post = _posterior(args.checkpoint)
    db, queries = _load(args.db, cfg), _load(args.queries, cfg)
    ood = _load(args.ood, cfg) if args.ood else None
    metrics = pipeline.evaluate(cfg, spec, post, db, queries, ood)
    _emit(pipeline.build_report(cfg, metrics, post, args.checkpoint), args.out)
    return EXIT_OK


def cmd_ood_eval(args, cfg: RunConfig) -> int:
    spec, post = _posterior(args.checkpoint)
    queries, ood = _load(args.queries, cfg), _load(args.ood, cfg)
    n = cfg.eval.n_samples
    _, k_id = pipeline.stochastic_kappa(spec, post, queries.X, n, cfg.seed + pipeline.SEED_QUERIES)
    _, k_ood = pipeline.stochastic_kappa(spec, post, ood.X, n, cfg.seed + pipeline.SEED_OOD)
    scores = np.r_[uncertainty_from_kappa(k_id), uncertainty_from_kappa(k_ood)]
    is_ood = np.r_[np.zeros(len(queries), bool), np.ones(len(ood), bool)]
    metrics = MetricsReport(counts={"queries": len(queries), "ood": len(ood)})
    metrics.auroc, metrics.auprc = ood_auroc_auprc(scores, is_ood)
    _emit(pipeline.build_report(cfg, metrics, post, args.checkpoint), args.out)
    return EXIT_OK


def cmd_verify(args, cfg: RunConfig) -> int:
    results = oracles.run_all(quick=args.quick)
    for r in results:
        print(r.line())
    ok = all(r.passed for r in results)
    print("verify:", "all checks passed" if ok else "FAILED")
    return EXIT_OK if ok else EXIT_INVALID


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON run configuration (defaults apply to missing keys)")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--out", help="output path (directory for gen-data)")

    p = _Parser(prog="laplace-metric", description="Laplace posteriors for contrastive embedding networks.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("gen-data", parents=[common], help="write synthetic train/test/ood blobs")
    s.set_defaults(func=cmd_gen_data)
    s = sub.add_parser("train-map", parents=[common], help="deterministic contrastive training")
    s.add_argument("--data", required=True)
    s.set_defaults(func=cmd_train_map, needs_out=True)
    s = sub.add_parser("laplace-posthoc", parents=[common], help="fit a post-hoc Laplace posterior")
    s.add_argument("--data", required=True)
    s.add_argument("--checkpoint", required=True, help="trained-parameter checkpoint")
    s.set_defaults(func=cmd_posthoc, needs_out=True)
    s = sub.add_parser("train-online", parents=[common], help="online Laplace training")
    s.add_argument("--data", required=True)
    s.set_defaults(func=cmd_train_online, needs_out=True)
    s = sub.add_parser("embed", parents=[common], help="mean embeddings and concentration per item")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--n-samples", type=int)
    s.set_defaults(func=cmd_embed)
    s = sub.add_parser("eval", parents=[common], help="retrieval and calibration report")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--db", required=True)
    s.add_argument("--queries", required=True)
    s.add_argument("--ood")
    s.set_defaults(func=cmd_eval)
    s = sub.add_parser("ood-eval", parents=[common], help="OoD AUROC/AUPRC report")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--queries", required=True)
    s.add_argument("--ood", required=True)
    s.set_defaults(func=cmd_ood_eval)
    s = sub.add_parser("verify", parents=[common], help="run the numerical oracle suite")
    s.add_argument("--quick", action="store_true", help="fewer random trials")
    s.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "needs_out", False) and not args.out:
            parser.error(f"{args.command} requires --out")
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        return args.func(args, cfg)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    except (ConfigError, CheckpointError, DatasetParseError, InvalidDatasetError, FileNotFoundError) as exc:
        print(f"laplace-metric: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - anything else is a runtime failure
        print(f"laplace-metric: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
