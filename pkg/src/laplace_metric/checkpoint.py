"""Checkpoints: a JSON envelope with base64 little-endian float64 arrays.

Arrays round-trip bit-exactly; the envelope stays human-readable.
"""

from __future__ import annotations

import base64
import json
from pathlib import Path

import numpy as np

from laplace_metric.laplace import GaussianPosterior
from laplace_metric.net import NetSpec, check_params

FORMAT_VERSION = 1
KIND_MAP = "map"
KIND_POSTERIOR = "posterior"


class CheckpointError(ValueError):
    pass


def encode_array(a) -> str:
    return base64.b64encode(np.asarray(a, dtype="<f8").tobytes()).decode("ascii")


def decode_array(s: str) -> np.ndarray:
    return np.frombuffer(base64.b64decode(s.encode("ascii")), dtype="<f8").astype(np.float64)


def save_params(path, spec: NetSpec, params, config_hash: str = "") -> None:
    doc = {
        "format_version": FORMAT_VERSION,
        "kind": KIND_MAP,
        "spec": spec.to_dict(),
        "config_hash": config_hash,
        "params": encode_array(check_params(spec, params)),
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def save_posterior(path, spec: NetSpec, posterior: GaussianPosterior, config_hash: str = "") -> None:
    doc = {
        "format_version": FORMAT_VERSION,
        "kind": KIND_POSTERIOR,
        "spec": spec.to_dict(),
        "sigma_prior": posterior.prior_sigma,
        "config_hash": config_hash,
        "active": list(posterior.active),
        "params": encode_array(posterior.params),
        "mean": encode_array(posterior.mean),
        "precision": encode_array(posterior.precision_diag),
        "info": posterior.info,
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def load_checkpoint(path) -> tuple[str, NetSpec, object, str]:
    """Returns ``(kind, spec, payload, config_hash)``.

    The payload is a parameter vector for ``map`` checkpoints and a
    ``GaussianPosterior`` for ``posterior`` checkpoints.
    """
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    if doc.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format_version {doc.get('format_version')!r}")
    try:
        spec = NetSpec.from_dict(doc["spec"])
        params = check_params(spec, decode_array(doc["params"]))
        kind = doc["kind"]
        if kind == KIND_MAP:
            return kind, spec, params, doc.get("config_hash", "")
        if kind == KIND_POSTERIOR:
            post = GaussianPosterior(decode_array(doc["mean"]), decode_array(doc["precision"]),
                                     float(doc["sigma_prior"]), params, tuple(doc["active"]), doc.get("info", {}))
            return kind, spec, post, doc.get("config_hash", "")
    except (KeyError, ValueError, TypeError) as exc:
        raise CheckpointError(f"malformed checkpoint {path}: {exc}") from None
    raise CheckpointError(f"unknown checkpoint kind {kind!r}")
