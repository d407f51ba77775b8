"""Acceptance suite: one test per criterion, each recording a pass/fail line."""

import time

import numpy as np
import pytest

from conftest import CRITERIA_LINES
from laplace_metric import oracles
from laplace_metric.config import RunConfig
from laplace_metric.metrics import RetrievalIndex, map_at_k
from laplace_metric.net import normalize
from laplace_metric.pipeline import embed_mean, evaluate, make_data, run_map, run_online, run_posthoc
from laplace_metric.vmf import kappa_from_r, vmf_estimate


def record(number: int, passed: bool, detail: str) -> None:
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {detail}"
    print(line)
    CRITERIA_LINES.append(line)
    assert passed, line


def record_oracle(number: int, result: oracles.OracleResult) -> None:
    record(number, result.passed, f"{result.name}: {result.detail} ({result.seconds:.2f}s)")


def test_criterion_1_jacobians():
    res = oracles.check_jacobians(n=100, rtol=1e-5)
    record(1, res.passed and res.seconds < 10.0, f"{res.name}: {res.detail} ({res.seconds:.2f}s, limit 10s)")


def test_criterion_2_output_hessians():
    record_oracle(2, oracles.check_output_hessians(n=100, rtol=1e-4))


def test_criterion_3_ggn_identity():
    record_oracle(3, oracles.check_ggn_identity(n=50, tol=1e-10))


def test_criterion_4_psd():
    record_oracle(4, oracles.check_psd(n=200, tol=1e-8))


def test_criterion_5_loglik_equivalence():
    record_oracle(5, oracles.check_equivalence(n=50, tol=1e-8))


def test_criterion_6_minibatch_unbiased():
    record_oracle(6, oracles.check_minibatch(n_draws=10000))


def test_criterion_7_stop_gradient_neutral():
    record_oracle(7, oracles.check_stop_gradient(tol=1e-12))


def test_criterion_8_vmf_estimator():
    grid = np.linspace(0.0, 0.999, 1000)
    monotone = all(bool(np.all(np.diff(kappa_from_r(grid, d)) >= 0)) for d in (2, 3, 8, 64))
    rng = np.random.default_rng(42)
    mu = normalize(np.array([1.0, 2.0, -0.5]))
    tight = vmf_estimate(normalize(mu + 0.05 * rng.normal(size=(100, 3)))).kappa
    loose = vmf_estimate(normalize(mu + 0.5 * rng.normal(size=(100, 3)))).kappa
    record(8, monotone and tight > loose,
           f"kappa monotone on grid: {monotone}; kappa(sigma=0.05)={tight:.1f} > kappa(sigma=0.5)={loose:.2f}")


@pytest.fixture(scope="module")
def pinned_run():
    cfg = RunConfig()
    train, test, ood = make_data(cfg)
    t0 = time.perf_counter()
    online = run_online(cfg, train)
    online_metrics = evaluate(cfg, cfg.net, online, train, test, ood)
    seconds = time.perf_counter() - t0
    theta = run_map(cfg, train)
    posthoc = run_posthoc(cfg, train, theta)
    mean = posthoc.full_mean()
    index = RetrievalIndex(embed_mean(cfg.net, mean, train.X), train.labels)
    posthoc_map1 = map_at_k(embed_mean(cfg.net, mean, test.X), test.labels, index, 1)
    return {"online": online_metrics, "seconds": seconds, "posthoc_map1": posthoc_map1}


@pytest.mark.slow
def test_criterion_9_end_to_end(pinned_run):
    m, seconds = pinned_run["online"], pinned_run["seconds"]
    checks = {
        "auroc": m.auroc >= 0.9,
        "ausc": m.ausc >= m.ausc_shuffled + 0.05,
        "ece": m.ece <= 0.15,
        "time": seconds < 120.0,
    }
    failed = [k for k, ok in checks.items() if not ok]
    record(9, not failed,
           f"AUROC {m.auroc:.3f} (>=0.9), AUSC {m.ausc:.4f} vs shuffled {m.ausc_shuffled:.4f} (+0.05), "
           f"ECE {m.ece:.4f} (<=0.15), online train+eval {seconds:.1f}s (<120s)"
           + (f"; failed: {', '.join(failed)}" if failed else ""))


@pytest.mark.slow
def test_criterion_10_online_vs_posthoc(pinned_run):
    online, posthoc = pinned_run["online"].map["1"], pinned_run["posthoc_map1"]
    record(10, online >= posthoc - 0.02, f"online mAP@1 {online:.4f} >= post-hoc mAP@1 {posthoc:.4f} - 0.02")
