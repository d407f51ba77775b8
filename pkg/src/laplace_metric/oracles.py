"""Independent numerical checks: finite differences, dense GGN assembly,
PSD suites, the loss/log-likelihood identity and minibatch unbiasedness.

Used by ``laplace-metric verify`` and by the test suite.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from laplace_metric import kernels
from laplace_metric.contrastive import (
    POSITIVE,
    HessianApprox,
    MarginConfig,
    PairBatch,
    TargetMode,
    dataset_loss,
    full_batch,
    ggn_hessian_diag,
    hessian_weights,
    loss_gradient,
    mine_pairs,
    pair_hessian_output,
    per_pair_loss,
)
from laplace_metric.data import Dataset
from laplace_metric.net import (
    ARCCOS,
    EUCLIDEAN,
    NetSpec,
    batch_jacobians,
    finite_diff_jacobian,
    forward,
    init_params,
    jacobian,
    normalize,
    unpack,
)
from laplace_metric.vmf import dataset_log_likelihood


@dataclass
class OracleResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail} ({self.seconds:.2f}s)"


def random_net(rng: np.random.Generator, max_hidden: int = 6, max_depth: int = 2,
               in_dim: int | None = None, out_dim: int | None = None) -> tuple[NetSpec, np.ndarray]:
    depth = int(rng.integers(1, max_depth + 1))
    dims = [in_dim or int(rng.integers(1, 4))]
    dims += [int(rng.integers(2, max_hidden + 1)) for _ in range(depth - 1)]
    dims.append(out_dim or int(rng.integers(2, 4)))
    act = "relu" if rng.random() < 0.5 else "tanh"
    spec = NetSpec(tuple(dims), act)
    return spec, init_params(spec, int(rng.integers(2**31)))


def random_dataset(rng: np.random.Generator, dim: int, class_sizes) -> Dataset:
    labels = np.repeat(np.arange(len(class_sizes)), class_sizes)
    X = rng.normal(size=(labels.size, dim))
    return Dataset([f"p{k}" for k in range(labels.size)], X, labels, len(class_sizes))


def _close(a, b, rtol) -> tuple[bool, float]:
    """Relative agreement with the tolerance scaled by the largest reference entry."""
    scale = max(float(np.max(np.abs(b))), 1e-300)
    err = float(np.max(np.abs(a - b) / (np.abs(b) + scale)))
    return err <= rtol, err


def near_relu_kink(spec: NetSpec, params, x, margin: float) -> bool:
    """True when a hidden ReLU pre-activation is within ``margin`` of zero."""
    if spec.activation != "relu":
        return False
    a = np.asarray(x, dtype=np.float64)
    layers = unpack(spec, np.asarray(params, dtype=np.float64))
    for W, b in layers[:-1]:
        pre = W @ a + b
        if np.any(np.abs(pre) < margin):
            return True
        a = np.maximum(pre, 0.0)
    return False


def check_jacobians(n: int = 100, seed: int = 0, rtol: float = 1e-5, step: float = 1e-5) -> OracleResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = 0.0
    ok = True
    for _ in range(n):
        spec, params = random_net(rng)
        x = rng.normal(size=spec.input_dim)
        # a perturbation of size `step` in any weight must not flip a ReLU
        while near_relu_kink(spec, params, x, 1e3 * step * (1.0 + np.abs(x).sum())):
            x = rng.normal(size=spec.input_dim)
        for split in (EUCLIDEAN, ARCCOS):
            A = jacobian(spec, params, x, split, "all").matrix
            F = finite_diff_jacobian(spec, params, x, split, "all", step)
            good, err = _close(A, F, rtol)
            ok &= good
            worst = max(worst, err)
    return OracleResult("jacobian vs finite differences", ok, f"{n} nets x 2 splits, max rel err {worst:.2e}",
                        time.perf_counter() - t0)


def fd_output_hessian(y: float, z_i, z_j, split: str, h: float = 1e-4) -> np.ndarray:
    """Second-order central differences of ``per_pair_loss`` in the stacked outputs."""
    x0 = np.concatenate([z_i, z_j])
    d = z_i.shape[0]
    n = x0.size
    H = np.zeros((n, n))

    def f(v):
        return per_pair_loss(y, v[:d], v[d:], split)

    for a in range(n):
        for b in range(n):
            ea, eb = np.eye(n)[a] * h, np.eye(n)[b] * h
            H[a, b] = (f(x0 + ea + eb) - f(x0 + ea - eb) - f(x0 - ea + eb) + f(x0 - ea - eb)) / (4 * h * h)
    return H


def check_output_hessians(n: int = 100, seed: int = 1, rtol: float = 1e-4) -> OracleResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = 0.0
    ok = True
    for _ in range(n):
        d = int(rng.integers(2, 5))
        zi, zj = normalize(rng.normal(size=d)), normalize(rng.normal(size=d))
        y = float(rng.normal())
        for split in (EUCLIDEAN, ARCCOS):
            good, err = _close(pair_hessian_output(y, zi, zj, split), fd_output_hessian(y, zi, zj, split), rtol)
            ok &= good
            worst = max(worst, err)
    return OracleResult("output-space hessians vs finite differences", ok,
                        f"{n} unit pairs x 2 splits, max rel err {worst:.2e}", time.perf_counter() - t0)


def dense_ggn(dataset: Dataset, params, spec: NetSpec, batch: PairBatch, split: str = EUCLIDEAN,
              approx: HessianApprox = HessianApprox(), active_subset="all") -> np.ndarray:
    """Dense GGN over the active range, assembled pair by pair (no clamping)."""
    E, J = batch_jacobians(spec, params, dataset.X, split, active_subset)
    w = hessian_weights(batch, approx)
    d = E.shape[1]
    P = J.shape[2]
    G = np.zeros((P, P))
    for i, j, wk in zip(batch.i, batch.j, w):
        if wk == 0.0:
            continue
        H = pair_hessian_output(wk, E[i], E[j], split)
        if approx.variant == "fix":
            H[:d, d:] = 0.0
            H[d:, :d] = 0.0
        Js = np.concatenate([J[i], J[j]], axis=0)
        G += Js.T @ H @ Js
    return G


def check_ggn_identity(n: int = 50, seed: int = 2, tol: float = 1e-10) -> OracleResult:
    """Full-block euclidean diagonal equals sum_ij y_ij * colsum((J_i - J_j)^2)."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        spec, params = random_net(rng)
        ds = random_dataset(rng, spec.input_dim, rng.integers(1, 4, size=int(rng.integers(1, 4))))
        Z = normalize(forward(spec, params, ds.X))
        batch = full_batch(Z, ds.labels, MarginConfig(float(rng.uniform(0.2, 2.0))))
        _, J = batch_jacobians(spec, params, ds.X, EUCLIDEAN, "all")
        ref = np.zeros(J.shape[2])
        for i, j, y in zip(batch.i, batch.j, batch.weights()):
            ref += y * np.sum((J[i] - J[j]) ** 2, axis=0)
        kern = kernels.pair_ggn_diag(Z, J, batch.i, batch.j, hessian_weights(batch, HessianApprox("full")),
                                     False, True)
        dense = np.diag(dense_ggn(ds, params, spec, batch, EUCLIDEAN, HessianApprox("full")))
        worst = max(worst, float(np.max(np.abs(kern - ref))), float(np.max(np.abs(dense - ref))))
    return OracleResult("euclidean GGN diagonal identity", worst <= tol, f"{n} batches, max abs err {worst:.2e}",
                        time.perf_counter() - t0)


def check_psd(n: int = 200, seed: int = 3, tol: float = 1e-8) -> OracleResult:
    """Dense fix/pos GGN is PSD on class-balanced datasets; full diagonal is never negative."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    min_eig = {"fix": np.inf, "pos": np.inf}
    min_full = np.inf
    for _ in range(n):
        spec, params = random_net(rng, max_hidden=4)
        n_classes = int(rng.integers(1, 4))
        per = int(rng.integers(1, 4))
        ds = random_dataset(rng, spec.input_dim, [per] * n_classes)
        Z = normalize(forward(spec, params, ds.X))
        batch = full_batch(Z, ds.labels, MarginConfig(float(rng.uniform(0.1, 2.5))))
        for variant in ("fix", "pos"):
            G = dense_ggn(ds, params, spec, batch, EUCLIDEAN, HessianApprox(variant))
            min_eig[variant] = min(min_eig[variant], float(np.linalg.eigvalsh(G).min()))
        # full variant on arbitrary class sizes
        ds2 = random_dataset(rng, spec.input_dim, rng.integers(1, 4, size=int(rng.integers(1, 4))))
        diag = ggn_hessian_diag(ds2, params, spec, MarginConfig(float(rng.uniform(0.1, 2.5))),
                                approx=HessianApprox("full"), active_subset="all")
        min_full = min(min_full, float(diag.min()))
    ok = min_eig["fix"] >= -tol and min_eig["pos"] >= -tol and min_full >= 0.0
    return OracleResult("GGN PSD suite", ok,
                        f"{n} datasets, min eig fix {min_eig['fix']:.2e}, pos {min_eig['pos']:.2e}, "
                        f"min full diag {min_full:.2e}", time.perf_counter() - t0)


def check_equivalence(n: int = 50, seed: int = 4, tol: float = 1e-8) -> OracleResult:
    """Loss differences equal negated vMF log-likelihood differences."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        spec, _ = random_net(rng)
        ds = random_dataset(rng, spec.input_dim, rng.integers(1, 4, size=int(rng.integers(2, 4))))
        kappa = float(rng.uniform(0.1, 5.0))
        mode = TargetMode("vmf", kappa)
        t1, t2 = (init_params(spec, int(rng.integers(2**31))) for _ in range(2))
        cover = MarginConfig.covering()
        dl = dataset_loss(ds, t1, spec, cover, mode) - dataset_loss(ds, t2, spec, cover, mode)
        dlog = dataset_log_likelihood(ds, t1, spec, kappa) - dataset_log_likelihood(ds, t2, spec, kappa)
        worst = max(worst, abs(dl + dlog))
    return OracleResult("loss / vMF log-likelihood equivalence", worst <= tol,
                        f"{n} parameter pairs, max |dL + dlogP| {worst:.2e}", time.perf_counter() - t0)


def check_minibatch(n_draws: int = 10000, seed: int = 5, n_pos: int = 4, n_neg: int = 5) -> OracleResult:
    """Stratified minibatch losses are unbiased; the full pair set reproduces the full loss."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    labels = np.array([0, 0, 0, 1, 1, 2])
    Z = normalize(rng.normal(size=(6, 3)))
    margin = MarginConfig(1.2)
    full = full_batch(Z, labels, margin)
    full_loss = kernels.pair_loss(Z, full.i, full.j, full.weights(), False)
    n_dpos = int(np.sum(full.kind == POSITIVE))
    exhaustive = mine_pairs(Z, labels, n_dpos, len(full) - n_dpos, "random", margin, rng=rng)
    exact_err = abs(kernels.pair_loss(Z, exhaustive.i, exhaustive.j, exhaustive.weights(), False) - full_loss)
    vals = np.empty(n_draws)
    for k in range(n_draws):
        b = mine_pairs(Z, labels, n_pos, n_neg, "random", margin, rng=rng)
        vals[k] = kernels.pair_loss(Z, b.i, b.j, b.weights(), False)
    se = vals.std(ddof=1) / np.sqrt(n_draws)
    z = abs(vals.mean() - full_loss) / se
    ok = exact_err <= 1e-12 and z <= 3.0
    return OracleResult("minibatch unbiasedness", ok,
                        f"full-batch err {exact_err:.1e}, mean {vals.mean():.6f} vs {full_loss:.6f} "
                        f"({z:.2f} SE over {n_draws} draws)", time.perf_counter() - t0)


def stop_gradient_loss_grad(dataset: Dataset, params, spec: NetSpec, batch: PairBatch,
                            active_subset="all") -> tuple[float, np.ndarray]:
    """Loss and gradient of the decomposed euclidean objective

        L(sg z_i, z_j) + L(z_i, sg z_j) - L(sg z_i, sg z_j)

    evaluated term by term. Each one-sided term only passes gradient through
    its free argument, and the doubly stopped term carries none.
    """
    E, J = batch_jacobians(spec, params, dataset.X, EUCLIDEAN, active_subset)
    w = batch.weights()
    Ei, Ej = E[batch.i], E[batch.j]
    term = 0.5 * np.sum((Ei - Ej) ** 2, axis=1)
    value = float(np.sum(w * term) + np.sum(w * term) - np.sum(w * term))
    G = np.zeros_like(E)
    np.add.at(G, batch.j, w[:, None] * (Ej - Ei))   # L(sg z_i, z_j)
    np.add.at(G, batch.i, w[:, None] * (Ei - Ej))   # L(z_i, sg z_j)
    return value, np.einsum("nk,nkp->p", G, J)


def check_stop_gradient(n: int = 20, seed: int = 6, tol: float = 1e-12) -> OracleResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        spec, params = random_net(rng)
        ds = random_dataset(rng, spec.input_dim, rng.integers(1, 4, size=int(rng.integers(2, 4))))
        Z = normalize(forward(spec, params, ds.X))
        batch = full_batch(Z, ds.labels, MarginConfig(float(rng.uniform(0.2, 2.0))))
        v_sg, g_sg = stop_gradient_loss_grad(ds, params, spec, batch)
        v = dataset_loss(ds, params, spec, batch=batch)
        g = loss_gradient(ds, params, spec, batch=batch)
        scale = max(1.0, float(np.max(np.abs(g))))
        worst = max(worst, abs(v - v_sg), float(np.max(np.abs(g - g_sg))) / scale)
    return OracleResult("stop-gradient decomposition neutrality", worst <= tol,
                        f"{n} batches, max err {worst:.2e}", time.perf_counter() - t0)


def run_all(quick: bool = False) -> list[OracleResult]:
    """Every oracle; ``quick`` shrinks the trial counts for smoke runs."""
    f = 0.2 if quick else 1.0
    return [
        check_jacobians(max(1, int(100 * f))),
        check_output_hessians(max(1, int(100 * f))),
        check_ggn_identity(max(1, int(50 * f))),
        check_psd(max(1, int(200 * f))),
        check_equivalence(max(1, int(50 * f))),
        check_minibatch(10000 if not quick else 2000),
        check_stop_gradient(max(1, int(20 * f))),
    ]
