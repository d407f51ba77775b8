"""Pairs, targets, contrastive loss and its GGN Hessian diagonal.

Pairs are ordered index pairs ``(i, j)`` over a dataset and include the
trivial self-pairs ``(i, i)``. Each pair carries a scalar target ``y`` and the
per-pair loss is ``0.5 * y * |z_i - z_j|^2``; positives, negatives inside the
margin and negatives outside the margin differ only in their target.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from laplace_metric import kernels
from laplace_metric.data import Dataset, InvalidDatasetError
from laplace_metric.net import (
    ARCCOS,
    EUCLIDEAN,
    SPLITS,
    DegenerateEmbeddingError,
    EPS_NORM,
    NetSpec,
    batch_jacobians,
    forward,
    normalize,
)

POSITIVE = 0
NEGATIVE_INSIDE = 1
NEGATIVE_OUTSIDE = 2
KIND_NAMES = {POSITIVE: "positive", NEGATIVE_INSIDE: "negative_inside", NEGATIVE_OUTSIDE: "negative_outside"}


class MiningError(ValueError):
    pass


class EmptyBatchError(ValueError):
    pass


@dataclass(frozen=True)
class MarginConfig:
    """Margin ``m`` compared against ``|z_i - z_j|`` (unsquared) or its square."""

    m: float = 0.5
    convention: str = "unsquared"

    def __post_init__(self):
        if not self.m > 0:
            raise ValueError("margin must be positive")
        if self.convention not in ("squared", "unsquared"):
            raise ValueError(f"unknown margin convention {self.convention!r}")

    @classmethod
    def covering(cls) -> "MarginConfig":
        """A margin containing the whole sphere: every negative is inside."""
        return cls(math.inf)

    def inside(self, dist: np.ndarray) -> np.ndarray:
        dist = np.asarray(dist)
        return (dist**2 if self.convention == "squared" else dist) <= self.m


@dataclass(frozen=True)
class TargetMode:
    """``balanced`` uses +1/|D2_pos| and -1/|D2_neg|; ``vmf`` uses +kappa / -kappa."""

    mode: str = "balanced"
    kappa: float = 1.0

    def __post_init__(self):
        if self.mode not in ("balanced", "vmf"):
            raise ValueError(f"unknown target mode {self.mode!r}")
        if self.mode == "vmf" and not self.kappa > 0:
            raise ValueError("kappa must be positive in vmf mode")


@dataclass(frozen=True)
class HessianApprox:
    variant: str = "fix"
    w_n: float | None = None

    def __post_init__(self):
        if self.variant not in ("pos", "fix", "full"):
            raise ValueError(f"unknown hessian approximation {self.variant!r}")
        if self.w_n is not None and not 0.0 <= self.w_n <= 1.0:
            raise ValueError("w_n must lie in [0, 1]")

    @property
    def effective_w_n(self) -> float:
        if self.variant == "pos":
            return 0.0
        return 0.5 if self.w_n is None else float(self.w_n)


@dataclass
class PairBatch:
    """A set of ordered pairs with their kinds and (possibly minibatch-scaled) targets.

    The loss over the batch is ``scale * sum(L_target)``; ``scale`` is
    ``|D2| / |B|`` for minibatches and 1 for the full pair set.
    """

    i: np.ndarray
    j: np.ndarray
    kind: np.ndarray
    target: np.ndarray
    scale: float = 1.0
    n_pos: int = 0
    n_neg: int = 0
    n_dataset_pairs: int = 0

    def __len__(self) -> int:
        return int(self.i.shape[0])

    def weights(self) -> np.ndarray:
        return self.scale * self.target

    def counts(self) -> dict:
        return {
            "pairs": len(self),
            "positive": int(np.sum(self.kind == POSITIVE)),
            "negative_inside": int(np.sum(self.kind == NEGATIVE_INSIDE)),
            "negative_outside": int(np.sum(self.kind == NEGATIVE_OUTSIDE)),
        }


def pairwise_distances(Z: np.ndarray) -> np.ndarray:
    Z = np.asarray(Z, dtype=np.float64)
    diff = Z[:, None, :] - Z[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def classify_pairs(embeddings, labels, margin: MarginConfig = MarginConfig()) -> np.ndarray:
    """(N, N) matrix of pair kinds. Self-pairs are positives."""
    labels = np.asarray(labels)
    same = labels[:, None] == labels[None, :]
    inside = margin.inside(pairwise_distances(embeddings))
    kinds = np.full(same.shape, NEGATIVE_OUTSIDE, dtype=np.int8)
    kinds[~same & inside] = NEGATIVE_INSIDE
    kinds[same] = POSITIVE
    return kinds


def class_pair_counts(labels, n_classes: int | None = None) -> tuple[int, int]:
    """(|D2_pos|, |D2_neg|) = (sum_c n_c^2, sum_{c != c'} n_c n_c')."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise InvalidDatasetError("empty dataset")
    sizes = np.bincount(labels, minlength=n_classes or 0)
    if n_classes is not None and np.any(sizes[:n_classes] == 0):
        raise InvalidDatasetError(f"empty class {int(np.argmin(sizes[:n_classes]))}")
    n = labels.size
    n_pos = int(np.sum(sizes**2))
    return n_pos, n * n - n_pos


def full_targets(labels, kinds: np.ndarray, mode: TargetMode = TargetMode(), n_classes: int | None = None) -> np.ndarray:
    """Target for every ordered pair of the dataset."""
    n_pos, n_neg = class_pair_counts(labels, n_classes)
    if mode.mode == "vmf":
        y_pos, y_neg = mode.kappa, -mode.kappa
    else:
        y_pos = 1.0 / n_pos
        y_neg = -1.0 / n_neg if n_neg else 0.0
    Y = np.zeros(kinds.shape)
    Y[kinds == POSITIVE] = y_pos
    Y[kinds == NEGATIVE_INSIDE] = y_neg
    return Y


def minibatch_targets(kinds, n_dataset_pairs: int, batch_size: int, n_pos: int, n_neg: int) -> np.ndarray:
    """Balanced targets rescaled for a batch of ``n_pos`` positives and ``n_neg`` negatives.

    With ``scale = |D2| / |B|`` the batch loss is an unbiased estimate of the
    full loss when positives and negatives are each sampled uniformly.
    """
    return _batch_targets(np.asarray(kinds), n_dataset_pairs, batch_size, n_pos, n_neg,
                          y_pos=1.0, y_neg=-1.0)


def _batch_targets(kinds, n_dataset_pairs, batch_size, n_pos, n_neg, y_pos, y_neg):
    if n_pos == 0 and n_neg == 0:
        raise EmptyBatchError("batch has neither positives nor negatives")
    has_pos = np.any(kinds == POSITIVE)
    has_neg = np.any(kinds != POSITIVE)
    if (has_pos and n_pos <= 0) or (has_neg and n_neg <= 0):
        raise ValueError("batch counts inconsistent with pair kinds")
    y = np.zeros(kinds.shape)
    if n_pos:
        y[kinds == POSITIVE] = y_pos * batch_size / (n_dataset_pairs * n_pos)
    if n_neg:
        y[kinds == NEGATIVE_INSIDE] = y_neg * batch_size / (n_dataset_pairs * n_neg)
    return y


def full_batch(embeddings, labels, margin: MarginConfig = MarginConfig(), target_mode: TargetMode = TargetMode(),
               n_classes: int | None = None) -> PairBatch:
    """Every ordered pair of the dataset, classified at ``embeddings``."""
    if target_mode.mode == "vmf":
        margin = MarginConfig.covering()
    kinds = classify_pairs(embeddings, labels, margin)
    Y = full_targets(labels, kinds, target_mode, n_classes)
    n = kinds.shape[0]
    ii, jj = np.indices((n, n))
    n_pos, n_neg = class_pair_counts(labels)
    return PairBatch(ii.ravel(), jj.ravel(), kinds.ravel(), Y.ravel(), 1.0, n_pos, n_neg, n * n)


def mine_pairs(embeddings, labels, n_pos: int, n_neg: int, strategy: str = "random",
               margin: MarginConfig = MarginConfig(), target_mode: TargetMode = TargetMode(),
               rng: np.random.Generator | None = None, chunk_size: int | None = None) -> PairBatch:
    """Sample a batch of ``n_pos`` positive and ``n_neg`` negative pairs.

    ``random`` draws pairs uniformly without replacement from all ordered
    pairs. ``batch_hard`` restricts to a random chunk of points and keeps the
    farthest positives and the closest negatives. Targets are rescaled by the
    batch counts so the batch estimates the full-dataset loss.
    """
    rng = np.random.default_rng() if rng is None else rng
    Z = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    n = Z.shape[0]
    if target_mode.mode == "vmf":
        margin = MarginConfig.covering()

    if strategy == "random":
        idx = np.arange(n)
    elif strategy == "batch_hard":
        size = n if chunk_size is None else min(int(chunk_size), n)
        idx = np.sort(rng.choice(n, size=size, replace=False))
    else:
        raise ValueError(f"unknown mining strategy {strategy!r}")

    sub_labels = labels[idx]
    same = sub_labels[:, None] == sub_labels[None, :]
    pos_flat = np.flatnonzero(same)
    neg_flat = np.flatnonzero(~same)
    if n_pos > pos_flat.size or n_neg > neg_flat.size:
        raise MiningError(
            f"requested {n_pos} positives / {n_neg} negatives, available {pos_flat.size} / {neg_flat.size}"
        )

    if strategy == "random":
        pos_sel = np.sort(rng.choice(pos_flat, size=n_pos, replace=False))
        neg_sel = np.sort(rng.choice(neg_flat, size=n_neg, replace=False))
    else:
        D = pairwise_distances(Z[idx]).ravel()
        pos_sel = pos_flat[np.argsort(-D[pos_flat], kind="stable")[:n_pos]]
        neg_sel = neg_flat[np.argsort(D[neg_flat], kind="stable")[:n_neg]]

    m = idx.size
    flat = np.concatenate([pos_sel, neg_sel])
    ii = idx[flat // m]
    jj = idx[flat % m]
    dist = np.linalg.norm(Z[ii] - Z[jj], axis=1)
    kind = np.full(flat.size, NEGATIVE_OUTSIDE, dtype=np.int8)
    kind[: pos_sel.size] = POSITIVE
    neg_part = kind[pos_sel.size :]
    neg_part[margin.inside(dist[pos_sel.size :])] = NEGATIVE_INSIDE

    batch_size = int(flat.size)
    n_dataset_pairs = n * n
    if target_mode.mode == "vmf":
        n_dpos, n_dneg = class_pair_counts(labels)
        target = _batch_targets(kind, n_dataset_pairs, batch_size, n_pos, n_neg,
                                y_pos=target_mode.kappa * n_dpos, y_neg=-target_mode.kappa * n_dneg)
    else:
        target = minibatch_targets(kind, n_dataset_pairs, batch_size, n_pos, n_neg)
    return PairBatch(ii, jj, kind, target, n_dataset_pairs / batch_size, n_pos, n_neg, n_dataset_pairs)


def per_pair_loss(y: float, z_i, z_j, split: str = EUCLIDEAN) -> float:
    z_i = np.asarray(z_i, dtype=np.float64)
    z_j = np.asarray(z_j, dtype=np.float64)
    if split == EUCLIDEAN:
        d = z_i - z_j
        return 0.5 * y * float(d @ d)
    if split == ARCCOS:
        ni, nj = np.linalg.norm(z_i), np.linalg.norm(z_j)
        if ni <= EPS_NORM or nj <= EPS_NORM:
            raise DegenerateEmbeddingError("zero-norm input to the arccos loss")
        return y * (1.0 - float(z_i @ z_j) / (ni * nj))
    raise ValueError(f"unknown split {split!r}")


def pair_hessian_output(y: float, z_i, z_j, split: str = EUCLIDEAN) -> np.ndarray:
    """Hessian of ``per_pair_loss`` wrt the stacked outputs ``(z_i, z_j)``."""
    z_i = np.asarray(z_i, dtype=np.float64)
    z_j = np.asarray(z_j, dtype=np.float64)
    d = z_i.shape[0]
    eye = np.eye(d)
    if split == EUCLIDEAN:
        return y * np.block([[eye, -eye], [-eye, eye]])
    if split != ARCCOS:
        raise ValueError(f"unknown split {split!r}")
    ri, rj = np.linalg.norm(z_i), np.linalg.norm(z_j)
    if ri <= EPS_NORM or rj <= EPS_NORM:
        raise DegenerateEmbeddingError("zero-norm input to the arccos loss")
    a, b = z_i / ri, z_j / rj
    c = float(a @ b)
    sym = np.outer(a, b) + np.outer(b, a)
    H11 = y / ri**2 * (c * eye + sym - 3.0 * c * np.outer(a, a))
    H22 = y / rj**2 * (c * eye + sym - 3.0 * c * np.outer(b, b))
    H12 = y / (ri * rj) * (-eye + np.outer(a, a) + np.outer(b, b) - c * np.outer(a, b))
    return np.block([[H11, H12], [H12.T, H22]])


def _outputs(dataset: Dataset, params, spec: NetSpec, split: str):
    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}")
    U = forward(spec, params, dataset.X)
    Z = normalize(U)
    return U, Z


def _resolve_batch(dataset, Z, batch, margin, target_mode):
    if batch is not None:
        return batch
    return full_batch(Z, dataset.labels, margin, target_mode, dataset.n_classes)


def dataset_loss(dataset: Dataset, params, spec: NetSpec, margin: MarginConfig = MarginConfig(),
                 target_mode: TargetMode = TargetMode(), split: str = EUCLIDEAN,
                 batch: PairBatch | None = None) -> float:
    """Contrastive loss (constants dropped) over all pairs, or over ``batch`` when given."""
    U, Z = _outputs(dataset, params, spec, split)
    batch = _resolve_batch(dataset, Z, batch, margin, target_mode)
    E = U if split == ARCCOS else Z
    return kernels.pair_loss(E, batch.i, batch.j, batch.weights(), split == ARCCOS)


def loss_gradient(dataset: Dataset, params, spec: NetSpec, margin: MarginConfig = MarginConfig(),
                  target_mode: TargetMode = TargetMode(), split: str = EUCLIDEAN,
                  batch: PairBatch | None = None, active_subset="all") -> np.ndarray:
    """Gradient of ``dataset_loss`` wrt a parameter range; pair kinds are held fixed."""
    _, Z = _outputs(dataset, params, spec, split)
    batch = _resolve_batch(dataset, Z, batch, margin, target_mode)
    E, J = batch_jacobians(spec, params, dataset.X, split, active_subset)
    G = kernels.pair_output_grad(E, batch.i, batch.j, batch.weights(), split == ARCCOS)
    return np.einsum("nk,nkp->p", G, J)


def hessian_weights(batch: PairBatch, approx: HessianApprox) -> np.ndarray:
    """Per-pair GGN weights after the positive/negative reweighting.

    Positives get ``2 (1 - w_n)`` and negatives ``2 w_n`` times their loss
    weight, so ``w_n = 0.5`` reproduces the plain sum and ``w_n = 0`` drops
    the negatives.
    """
    w = batch.weights()
    wn = approx.effective_w_n
    return np.where(batch.kind == POSITIVE, 2.0 * (1.0 - wn) * w, 2.0 * wn * w)


def ggn_hessian_diag(dataset: Dataset, params, spec: NetSpec, margin: MarginConfig = MarginConfig(),
                     target_mode: TargetMode = TargetMode(), split: str = EUCLIDEAN,
                     approx: HessianApprox = HessianApprox(), batch: PairBatch | None = None,
                     active_subset="last", stats: dict | None = None) -> np.ndarray:
    """Diagonal of the GGN of the contrastive loss under a PSD-enforcing variant.

    ``pos`` drops negative pairs, ``fix`` drops the cross blocks between the
    two points of a pair, ``full`` keeps every block and clamps the summed
    diagonal at zero. The arccos split is always clamped at zero. When
    ``stats`` is given it receives the number of clamped entries.
    """
    _, Z = _outputs(dataset, params, spec, split)
    batch = _resolve_batch(dataset, Z, batch, margin, target_mode)
    E, J = batch_jacobians(spec, params, dataset.X, split, active_subset)
    w = hessian_weights(batch, approx)
    diag = kernels.pair_ggn_diag(E, J, batch.i, batch.j, w, split == ARCCOS, approx.variant != "fix")
    clamped = 0
    if approx.variant == "full" or split == ARCCOS:
        clamped = int(np.sum(diag < 0.0))
        diag = np.maximum(diag, 0.0)
    if stats is not None:
        stats["clamped"] = stats.get("clamped", 0) + clamped
    return diag


@dataclass(frozen=True)
class MiningConfig:
    n_pos: int
    n_neg: int
    strategy: str = "random"
    chunk_size: int | None = None


@dataclass(frozen=True)
class ContrastiveConfig:
    """Everything needed to turn embeddings into a batch of weighted pairs."""

    margin: MarginConfig = MarginConfig()
    target_mode: TargetMode = TargetMode()
    split: str = EUCLIDEAN
    mining: MiningConfig | None = None

    def make_batch(self, dataset: Dataset, params, spec: NetSpec, rng: np.random.Generator | None = None) -> PairBatch:
        """Classify pairs at ``params``; mine a minibatch when mining is configured."""
        Z = normalize(forward(spec, params, dataset.X))
        if self.mining is None:
            return full_batch(Z, dataset.labels, self.margin, self.target_mode, dataset.n_classes)
        mc = self.mining
        n_pos_avail, n_neg_avail = class_pair_counts(dataset.labels)
        if mc.strategy == "random":
            # a short dataset cannot supply more pairs than exist
            n_pos, n_neg = min(mc.n_pos, n_pos_avail), min(mc.n_neg, n_neg_avail)
        else:
            n_pos, n_neg = mc.n_pos, mc.n_neg
        return mine_pairs(Z, dataset.labels, n_pos, n_neg, mc.strategy, self.margin, self.target_mode,
                          rng, mc.chunk_size)
