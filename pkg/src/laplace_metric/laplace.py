"""Diagonal Laplace posteriors over a parameter range: post-hoc and online."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from laplace_metric.contrastive import (
    ContrastiveConfig,
    HessianApprox,
    ggn_hessian_diag,
    loss_gradient,
    dataset_loss,
)
from laplace_metric.data import Dataset
from laplace_metric.net import NetSpec, check_params, forward, normalize

log = logging.getLogger(__name__)

EPS_PREC = 1e-12


class DivergenceError(RuntimeError):
    def __init__(self, message: str, step: int):
        super().__init__(f"step {step}: {message}")
        self.step = step


@dataclass
class GaussianPosterior:
    """``N(mean, diag(precision)^-1)`` over ``params[active[0]:active[1]]``.

    ``params`` holds the full network parameters; entries outside the active
    range are point estimates.
    """

    mean: np.ndarray
    precision_diag: np.ndarray
    prior_sigma: float
    params: np.ndarray
    active: tuple[int, int]
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.precision_diag = np.asarray(self.precision_diag, dtype=np.float64)
        self.params = np.asarray(self.params, dtype=np.float64).copy()
        self.active = (int(self.active[0]), int(self.active[1]))
        if self.mean.shape != self.precision_diag.shape or self.mean.size != self.active[1] - self.active[0]:
            raise ValueError("mean, precision and active range disagree in length")
        if np.any(self.precision_diag <= 0):
            raise ValueError("precision must be positive")
        self.params[self.active[0] : self.active[1]] = self.mean

    @property
    def variance(self) -> np.ndarray:
        return 1.0 / self.precision_diag

    def full_mean(self) -> np.ndarray:
        return self.params.copy()


@dataclass(frozen=True)
class OnlineConfig:
    lr: float = 0.1
    alpha: float = 0.01
    n_mc: int = 5
    steps: int = 200
    hessian_every: int = 1

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.n_mc < 1 or self.steps < 0 or self.hessian_every < 1:
            raise ValueError("n_mc and hessian_every must be >= 1, steps >= 0")


def discounted_precision(precision, hessian, alpha: float) -> np.ndarray:
    """One online precision update ``(1 - alpha) H + hessian``, before flooring."""
    return (1.0 - alpha) * np.asarray(precision, dtype=np.float64) + hessian


def _check_finite(value, what: str, step: int):
    if not np.all(np.isfinite(value)):
        raise DivergenceError(f"non-finite {what}", step)


def map_train(dataset: Dataset, spec: NetSpec, init, contrastive: ContrastiveConfig = ContrastiveConfig(),
              lr: float = 0.1, steps: int = 200, seed: int = 0, train_subset="all",
              history: list | None = None) -> np.ndarray:
    """Deterministic contrastive training with plain gradient descent.

    Pair kinds are re-classified (or re-mined) at the current parameters each
    step. When ``history`` is a list it receives ``(loss, grad_norm)`` per step.
    """
    params = check_params(spec, init).copy()
    start, stop = spec.resolve_subset(train_subset)
    rng = np.random.default_rng(seed)
    for step in range(steps):
        batch = contrastive.make_batch(dataset, params, spec, rng)
        loss = dataset_loss(dataset, params, spec, split=contrastive.split, batch=batch)
        _check_finite(loss, "loss", step)
        grad = loss_gradient(dataset, params, spec, split=contrastive.split, batch=batch,
                             active_subset=(start, stop))
        _check_finite(grad, "gradient", step)
        if history is not None:
            history.append((loss, float(np.linalg.norm(grad))))
        params[start:stop] -= lr * grad
    return params


def posthoc_fit(theta_star, dataset: Dataset, spec: NetSpec, contrastive: ContrastiveConfig = ContrastiveConfig(),
                approx: HessianApprox = HessianApprox(), prior_sigma: float = 1.0, active_subset="last",
                seed: int = 0) -> GaussianPosterior:
    """Laplace posterior centred at ``theta_star`` with GGN-diagonal plus prior precision."""
    theta_star = check_params(spec, theta_star)
    start, stop = spec.resolve_subset(active_subset)
    batch = contrastive.make_batch(dataset, theta_star, spec, np.random.default_rng(seed))
    stats: dict = {}
    hess = ggn_hessian_diag(dataset, theta_star, spec, split=contrastive.split, approx=approx, batch=batch,
                            active_subset=(start, stop), stats=stats)
    precision = hess + prior_sigma**-2
    floored = int(np.sum(precision < EPS_PREC))
    precision = np.maximum(precision, EPS_PREC)
    info = {"hessian_clamped": stats.get("clamped", 0), "precision_floored": floored}
    return GaussianPosterior(theta_star[start:stop], precision, prior_sigma, theta_star, (start, stop), info)


def online_train(dataset: Dataset, spec: NetSpec, init, online: OnlineConfig = OnlineConfig(),
                 contrastive: ContrastiveConfig = ContrastiveConfig(), approx: HessianApprox = HessianApprox(),
                 prior_sigma: float = 1.0, seed: int = 0, active_subset="last", train_subset="all",
                 history: list | None = None, callback=None) -> GaussianPosterior:
    """Online Laplace: expected-gradient steps with a discounted Hessian memory.

    Each step samples ``n_mc`` parameter vectors from the current Gaussian
    over the active range, descends along their mean gradient, and updates
    ``H <- (1 - alpha) H + GGN(mean)``. The precision starts at the prior
    precision and is floored at ``EPS_PREC``. Parameters in ``train_subset``
    outside the active range follow the same averaged gradient as point
    estimates. ``callback(step, params, precision)`` runs after every step.
    """
    params = check_params(spec, init).copy()
    a0, a1 = spec.resolve_subset(active_subset)
    t0, t1 = spec.resolve_subset(train_subset)
    rng = np.random.default_rng(seed)
    precision = np.full(a1 - a0, prior_sigma**-2)
    hess = None
    floored = 0
    clamped = 0
    for step in range(online.steps):
        batch = contrastive.make_batch(dataset, params, spec, rng)
        std = precision**-0.5
        grad = np.zeros(t1 - t0)
        for _ in range(online.n_mc):
            theta = params.copy()
            theta[a0:a1] += std * rng.standard_normal(a1 - a0)
            grad += loss_gradient(dataset, theta, spec, split=contrastive.split, batch=batch,
                                  active_subset=(t0, t1))
        grad /= online.n_mc
        _check_finite(grad, "gradient", step)

        if hess is None or step % online.hessian_every == 0:
            stats: dict = {}
            hess = ggn_hessian_diag(dataset, params, spec, split=contrastive.split, approx=approx, batch=batch,
                                    active_subset=(a0, a1), stats=stats)
            clamped += stats.get("clamped", 0)
        precision = discounted_precision(precision, hess, online.alpha)
        floored += int(np.sum(precision < EPS_PREC))
        precision = np.maximum(precision, EPS_PREC)
        _check_finite(precision, "precision", step)

        params[t0:t1] -= online.lr * grad
        _check_finite(params, "parameters", step)
        if history is not None:
            history.append(float(np.linalg.norm(grad)))
        if callback is not None:
            callback(step, params, precision)
    info = {"hessian_clamped": clamped, "precision_floored": floored}
    return GaussianPosterior(params[a0:a1], precision, prior_sigma, params, (a0, a1), info)


def sample_params(posterior: GaussianPosterior, n: int, seed: int = 0) -> np.ndarray:
    """(n, n_params) parameter draws; only the active range is random."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    a0, a1 = posterior.active
    eps = rng.standard_normal((n, a1 - a0))
    out = np.tile(posterior.params, (n, 1))
    out[:, a0:a1] = posterior.mean + posterior.precision_diag**-0.5 * eps
    return out


def embed_stochastic(spec: NetSpec, posterior: GaussianPosterior, x, n: int, seed: int = 0) -> np.ndarray:
    """Unit embeddings of ``x`` through ``n`` sampled networks.

    Shape is (n, d) for a single input vector and (n, N, d) for a batch.
    """
    thetas = sample_params(posterior, n, seed)
    return np.stack([normalize(forward(spec, th, x)) for th in thetas])
