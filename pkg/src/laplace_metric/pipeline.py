"""End-to-end experiment steps shared by the CLI and the acceptance tests."""

from __future__ import annotations

import datetime as _dt
import json
from pathlib import Path

import numpy as np

from laplace_metric import __version__, kernels
from laplace_metric.config import RunConfig
from laplace_metric.data import Dataset, gen_blobs
from laplace_metric.laplace import (
    GaussianPosterior,
    embed_stochastic,
    map_train,
    online_train,
    posthoc_fit,
)
from laplace_metric.metrics import (
    ECE_INVERSE_BIN,
    ECE_WEIGHTED,
    MAP_VARIANT,
    MetricsReport,
    RetrievalIndex,
    average_precision_at_k,
    ece_retrieval,
    map_at_k,
    ood_auroc_auprc,
    recall_at_k,
    sparsification_ausc,
    uncertainty_from_kappa,
)
from laplace_metric.net import NetSpec, forward, init_params, normalize
from laplace_metric.vmf import K_MAX, vmf_estimate_batch

REPORT_FORMAT_VERSION = 1

# offsets keep the sampling streams of different evaluation steps apart
SEED_QUERIES, SEED_OOD, SEED_SHUFFLE = 1, 2, 3


def make_data(cfg: RunConfig):
    d = cfg.data
    return gen_blobs(d.n_classes, d.per_class, d.dim, d.spread, d.ood_offset, cfg.seed, d.scale, center=d.center)


def run_map(cfg: RunConfig, train: Dataset) -> np.ndarray:
    init = init_params(cfg.net, cfg.seed)
    return map_train(train, cfg.net, init, cfg.contrastive, cfg.map.lr, cfg.map.steps, cfg.seed)


def run_posthoc(cfg: RunConfig, train: Dataset, params) -> GaussianPosterior:
    return posthoc_fit(params, train, cfg.net, cfg.contrastive, cfg.hessian, cfg.prior_sigma,
                       cfg.active_subset, cfg.seed)


def run_online(cfg: RunConfig, train: Dataset) -> GaussianPosterior:
    init = init_params(cfg.net, cfg.seed)
    return online_train(train, cfg.net, init, cfg.online, cfg.contrastive, cfg.hessian, cfg.prior_sigma,
                        cfg.seed, cfg.active_subset)


def embed_mean(spec: NetSpec, params, X) -> np.ndarray:
    return normalize(forward(spec, params, X))


def stochastic_kappa(spec: NetSpec, posterior: GaussianPosterior, X, n: int, seed: int):
    """Sampled unit embeddings shaped (N, n, d) and the per-item concentration estimate."""
    samples = embed_stochastic(spec, posterior, X, n, seed)
    _, kappa = vmf_estimate_batch(samples)
    return samples.transpose(1, 0, 2), kappa


def evaluate(cfg: RunConfig, spec: NetSpec, posterior: GaussianPosterior, db: Dataset, queries: Dataset,
             ood: Dataset | None = None) -> MetricsReport:
    """Retrieval of ``queries`` against ``db`` through the posterior mean, plus uncertainty metrics."""
    ev = cfg.eval
    index = RetrievalIndex(embed_mean(spec, posterior.params, db.X), db.labels)
    Q = embed_mean(spec, posterior.params, queries.X)
    rep = MetricsReport()
    for k in ev.ks:
        if k > len(index):
            continue
        rep.recall[str(k)] = recall_at_k(Q, queries.labels, index, k)
        rep.map[str(k)] = map_at_k(Q, queries.labels, index, k)

    latents, kappa = stochastic_kappa(spec, posterior, queries.X, ev.n_samples, cfg.seed + SEED_QUERIES)
    uncertainty = uncertainty_from_kappa(kappa)
    correct = average_precision_at_k(Q, queries.labels, index, 1)
    grid, curve, rep.ausc = sparsification_ausc(uncertainty, correct)
    shuffled = np.random.default_rng(cfg.seed + SEED_SHUFFLE).permutation(uncertainty)
    _, _, rep.ausc_shuffled = sparsification_ausc(shuffled, correct)
    rep.ece, calib = ece_retrieval(latents, queries.labels, index, ev.ece_bins, ev.ece_inverse_bin_weight)
    rep.curves = {
        "sparsification": {"t": grid.tolist(), "map1": curve.tolist()},
        "calibration": calib,
    }
    rep.counts = {
        "db": len(db),
        "queries": len(queries),
        "kappa_clamped": int(np.sum(kappa >= K_MAX)),
        "kappa_median": float(np.median(kappa)),
    }
    if ood is not None:
        _, kappa_ood = stochastic_kappa(spec, posterior, ood.X, ev.n_samples, cfg.seed + SEED_OOD)
        scores = np.r_[uncertainty, uncertainty_from_kappa(kappa_ood)]
        is_ood = np.r_[np.zeros(len(queries), bool), np.ones(len(ood), bool)]
        rep.auroc, rep.auprc = ood_auroc_auprc(scores, is_ood)
        rep.counts["ood"] = len(ood)
        rep.counts["kappa_clamped"] += int(np.sum(kappa_ood >= K_MAX))
        rep.counts["kappa_ood_median"] = float(np.median(kappa_ood))
    return rep


def build_report(cfg: RunConfig, metrics: MetricsReport, posterior: GaussianPosterior | None = None,
                 checkpoint: str = "") -> dict:
    info = posterior.info if posterior is not None else {}
    return {
        "format_version": REPORT_FORMAT_VERSION,
        "software_version": __version__,
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "checkpoint": checkpoint,
        "flags": {
            "ece_variant": ECE_INVERSE_BIN if cfg.eval.ece_inverse_bin_weight else ECE_WEIGHTED,
            "map_variant": MAP_VARIANT,
            "k_max": K_MAX,
            "hessian_clamped": int(info.get("hessian_clamped", 0)),
            "precision_floored": int(info.get("precision_floored", 0)),
            "kernel_backend": kernels.BACKEND,
        },
        "metrics": metrics.to_dict(),
    }


def write_json(path, doc: dict) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
