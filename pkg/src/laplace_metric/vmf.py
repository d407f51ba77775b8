"""von Mises-Fisher helpers: unnormalized density, plug-in estimates, dataset log-likelihood."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from laplace_metric.net import NetSpec, forward, normalize

K_MAX = 1e6
R_EPS = 1e-12


@dataclass
class VmfEstimate:
    mu: np.ndarray
    r_bar: float
    kappa: float
    n_samples: int
    mu_defined: bool = True
    clamped: bool = False


def _check_unit(v, name, tol=1e-8):
    v = np.asarray(v, dtype=np.float64)
    if abs(np.linalg.norm(v) - 1.0) > tol:
        raise ValueError(f"{name} must be a unit vector")
    return v


def vmf_log_density_unnorm(z, mu, kappa: float) -> float:
    """``-kappa |z - mu|^2 / 2``; the normalizer depends on kappa only and is omitted."""
    z = _check_unit(z, "z")
    mu = _check_unit(mu, "mu")
    if kappa < 0:
        raise ValueError("kappa must be nonnegative")
    d = z - mu
    return -0.5 * kappa * float(d @ d)


def kappa_from_r(r_bar, dim: int):
    """Concentration estimate ``R(D - R^2) / (1 - R^2)``, clamped to ``[0, K_MAX]``."""
    r = np.asarray(r_bar, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        k = r * (dim - r**2) / (1.0 - r**2)
    k = np.where(r > 1.0 - R_EPS, K_MAX, k)
    k = np.where(r < R_EPS, 0.0, k)
    return np.clip(k, 0.0, K_MAX)


def vmf_estimate(samples) -> VmfEstimate:
    """Mean direction, resultant length and concentration from unit vectors (rows)."""
    S = np.asarray(samples, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] < 2:
        raise ValueError("need at least two samples")
    m = S.mean(axis=0)
    r = float(np.linalg.norm(m))
    if r < R_EPS:
        return VmfEstimate(np.full(S.shape[1], np.nan), r, 0.0, S.shape[0], mu_defined=False)
    kappa = float(kappa_from_r(r, S.shape[1]))
    return VmfEstimate(m / r, r, kappa, S.shape[0], clamped=kappa >= K_MAX)


def vmf_estimate_batch(samples) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized estimate for samples shaped (n_samples, n_items, d): returns (r_bar, kappa)."""
    S = np.asarray(samples, dtype=np.float64)
    r = np.linalg.norm(S.mean(axis=0), axis=-1)
    return r, kappa_from_r(r, S.shape[-1])


def dataset_log_likelihood(dataset, params, spec: NetSpec, kappa: float) -> float:
    """Parameter-dependent part of the contrastive vMF log-likelihood.

    Sums ``-kappa |z_i - z_j|^2 / 2`` over ordered positive pairs and
    ``-kappa |z_i + z_j|^2 / 2`` over ordered negative pairs.
    """
    Z = normalize(forward(spec, params, dataset.X))
    labels = dataset.labels
    same = labels[:, None] == labels[None, :]
    G = Z @ Z.T
    sq = np.einsum("ij,ij->i", Z, Z)
    minus = sq[:, None] + sq[None, :] - 2.0 * G
    plus = sq[:, None] + sq[None, :] + 2.0 * G
    return float(-0.5 * kappa * (minus[same].sum() + plus[~same].sum()))
