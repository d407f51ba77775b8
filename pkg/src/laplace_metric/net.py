"""Small feedforward embedding network with explicit Jacobians.

Parameters live in one flat float64 vector. Layout is layer-major; within a
layer the weight matrix ``W`` (shape ``d_out x d_in``) comes first in
row-major order, followed by the bias ``b`` (length ``d_out``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

EPS_NORM = 1e-9

EUCLIDEAN = "euclidean"
ARCCOS = "arccos"
SPLITS = (EUCLIDEAN, ARCCOS)


class DegenerateEmbeddingError(ValueError):
    """Raised when a pre-normalization embedding has (near) zero norm."""


@dataclass(frozen=True)
class NetSpec:
    layer_dims: tuple[int, ...]
    activation: str = "relu"
    normalize_output: bool = True

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        object.__setattr__(self, "layer_dims", dims)
        if len(dims) < 2:
            raise ValueError("need at least one linear layer")
        if any(d <= 0 for d in dims):
            raise ValueError(f"layer dims must be positive, got {dims}")
        if dims[-1] < 2:
            raise ValueError("embedding dim must be >= 2")
        if self.activation not in ("relu", "tanh"):
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def embedding_dim(self) -> int:
        return self.layer_dims[-1]

    @property
    def n_layers(self) -> int:
        return len(self.layer_dims) - 1

    @property
    def n_params(self) -> int:
        return sum(a * b + b for a, b in zip(self.layer_dims[:-1], self.layer_dims[1:]))

    def layer_offsets(self) -> list[tuple[int, int, int]]:
        """(start of W, start of b, end of layer) for every linear layer."""
        out = []
        pos = 0
        for d_in, d_out in zip(self.layer_dims[:-1], self.layer_dims[1:]):
            w0 = pos
            b0 = w0 + d_in * d_out
            pos = b0 + d_out
            out.append((w0, b0, pos))
        return out

    def last_layer(self) -> tuple[int, int]:
        w0, _, end = self.layer_offsets()[-1]
        return (w0, end)

    def all_params(self) -> tuple[int, int]:
        return (0, self.n_params)

    def resolve_subset(self, subset) -> tuple[int, int]:
        """Turn ``"last"``, ``"all"``, ``None`` or a ``(start, stop)`` pair into an index range."""
        if subset is None or subset == "last":
            return self.last_layer()
        if subset == "all":
            return self.all_params()
        start, stop = (int(s) for s in subset)
        if not 0 <= start < stop <= self.n_params:
            raise ValueError(f"invalid parameter range {(start, stop)} for {self.n_params} params")
        return (start, stop)

    def to_dict(self) -> dict:
        return {
            "layer_dims": list(self.layer_dims),
            "activation": self.activation,
            "normalize_output": self.normalize_output,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetSpec":
        return cls(tuple(d["layer_dims"]), d.get("activation", "relu"), d.get("normalize_output", True))


@dataclass
class JacobianBlock:
    matrix: np.ndarray
    split: str
    active_subset: tuple[int, int] = field(default=(0, 0))


def check_params(spec: NetSpec, params) -> np.ndarray:
    params = np.asarray(params, dtype=np.float64)
    if params.ndim != 1 or params.shape[0] != spec.n_params:
        raise ValueError(f"expected {spec.n_params} parameters, got shape {params.shape}")
    if not np.all(np.isfinite(params)):
        raise ValueError("parameter vector has non-finite entries")
    return params


def unpack(spec: NetSpec, params: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    layers = []
    for (w0, b0, end), d_in, d_out in zip(spec.layer_offsets(), spec.layer_dims[:-1], spec.layer_dims[1:]):
        layers.append((params[w0:b0].reshape(d_out, d_in), params[b0:end]))
    return layers


def pack(layers: Sequence[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    return np.concatenate([np.concatenate([W.ravel(), b.ravel()]) for W, b in layers])


def init_params(spec: NetSpec, seed: int = 0) -> np.ndarray:
    """He/Glorot-scaled Gaussian weights and small random biases."""
    rng = np.random.default_rng(seed)
    layers = []
    for d_in, d_out in zip(spec.layer_dims[:-1], spec.layer_dims[1:]):
        gain = 2.0 if spec.activation == "relu" else 1.0
        W = rng.normal(scale=np.sqrt(gain / d_in), size=(d_out, d_in))
        b = rng.normal(scale=0.1, size=d_out)
        layers.append((W, b))
    return pack(layers)


def _act(spec: NetSpec, a: np.ndarray) -> np.ndarray:
    return np.maximum(a, 0.0) if spec.activation == "relu" else np.tanh(a)


def _act_grad(spec: NetSpec, pre: np.ndarray, post: np.ndarray) -> np.ndarray:
    if spec.activation == "relu":
        # subgradient at 0 is 0
        return (pre > 0.0).astype(np.float64)
    return 1.0 - post**2


def _as_batch(spec: NetSpec, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != spec.input_dim:
        raise ValueError(f"input dim mismatch: expected {spec.input_dim}, got shape {x.shape}")
    return X, single


def _forward_cache(spec: NetSpec, params: np.ndarray, X: np.ndarray):
    acts = [X]
    pres = []
    layers = unpack(spec, params)
    a = X
    for k, (W, b) in enumerate(layers):
        pre = a @ W.T + b
        pres.append(pre)
        a = pre if k == len(layers) - 1 else _act(spec, pre)
        acts.append(a)
    return layers, pres, acts


def forward(spec: NetSpec, params, x) -> np.ndarray:
    """Pre-normalization output ``u`` for one input vector or a batch of rows."""
    params = check_params(spec, params)
    X, single = _as_batch(spec, x)
    _, _, acts = _forward_cache(spec, params, X)
    return acts[-1][0] if single else acts[-1]


def normalize(u, eps: float = EPS_NORM) -> np.ndarray:
    """Project onto the unit sphere; rows are normalized independently for 2-D input."""
    u = np.asarray(u, dtype=np.float64)
    n = np.linalg.norm(u, axis=-1, keepdims=True)
    if np.any(n <= eps):
        raise DegenerateEmbeddingError(f"embedding norm {float(n.min()):.3g} <= {eps:g}")
    return u / n


def normalize_jacobian(u, eps: float = EPS_NORM) -> np.ndarray:
    """Jacobian of ``u -> u/|u|``, i.e. ``(I - zz^T)/|u|``. Batched over leading axes."""
    u = np.asarray(u, dtype=np.float64)
    n = np.linalg.norm(u, axis=-1, keepdims=True)
    if np.any(n <= eps):
        raise DegenerateEmbeddingError(f"embedding norm {float(n.min()):.3g} <= {eps:g}")
    z = u / n
    d = u.shape[-1]
    eye = np.eye(d)
    return (eye - z[..., :, None] * z[..., None, :]) / n[..., None]


def batch_jacobians(spec: NetSpec, params, X, split: str = EUCLIDEAN, active_subset=None):
    """Per-row Jacobians of the network output wrt a contiguous parameter range.

    Returns:
        (E, J) where ``E`` is the (N, d) output the loss consumes for ``split``
        (unit embeddings for euclidean, raw ``u`` for arccos) and ``J`` has
        shape (N, d, n_active).
    """
    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}")
    params = check_params(spec, params)
    X, _ = _as_batch(spec, X)
    start, stop = spec.resolve_subset(active_subset)
    layers, pres, acts = _forward_cache(spec, params, X)
    U = acts[-1]
    N, d = U.shape
    J = np.zeros((N, d, stop - start))

    # delta = du/d(pre_l), shape (N, d, d_out_l); walk layers backwards
    delta = np.broadcast_to(np.eye(d), (N, d, d)).copy()
    for k in range(len(layers) - 1, -1, -1):
        w0, b0, end = spec.layer_offsets()[k]
        if end > start and w0 < stop:
            a_prev = acts[k]
            dW = (delta[:, :, :, None] * a_prev[:, None, None, :]).reshape(N, d, -1)
            block = np.concatenate([dW, delta], axis=2)
            lo, hi = max(w0, start), min(end, stop)
            J[:, :, lo - start : hi - start] = block[:, :, lo - w0 : hi - w0]
        if k == 0 or w0 <= start:
            break
        W = layers[k][0]
        delta = (delta @ W) * _act_grad(spec, pres[k - 1], acts[k])[:, None, :]

    if split == EUCLIDEAN:
        E = normalize(U)
        J = np.einsum("nij,njp->nip", normalize_jacobian(U), J)
    else:
        E = U
    return E, J


def jacobian(spec: NetSpec, params, x, split: str = EUCLIDEAN, active_subset=None) -> JacobianBlock:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("jacobian() takes a single input vector; use batch_jacobians for batches")
    _, J = batch_jacobians(spec, params, x, split, active_subset)
    return JacobianBlock(J[0], split, spec.resolve_subset(active_subset))


def finite_diff_jacobian(spec: NetSpec, params, x, split: str = EUCLIDEAN, active_subset=None,
                         step: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of the output used by ``split``; a test oracle."""
    params = check_params(spec, params).copy()
    start, stop = spec.resolve_subset(active_subset)

    def out(p):
        u = forward(spec, p, x)
        return normalize(u) if split == EUCLIDEAN else u

    cols = []
    for idx in range(start, stop):
        orig = params[idx]
        params[idx] = orig + step
        f_plus = out(params)
        params[idx] = orig - step
        f_minus = out(params)
        params[idx] = orig
        cols.append((f_plus - f_minus) / (2.0 * step))
    return np.stack(cols, axis=-1)
