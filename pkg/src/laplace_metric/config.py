"""Run configuration: JSON round-trip, validation and a stable hash."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, fields
from pathlib import Path

from laplace_metric.contrastive import (
    ContrastiveConfig,
    HessianApprox,
    MarginConfig,
    MiningConfig,
    TargetMode,
)
from laplace_metric.laplace import OnlineConfig
from laplace_metric.net import SPLITS, EUCLIDEAN, NetSpec

FORMAT_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataConfig:
    n_classes: int = 3
    per_class: int = 200
    dim: int = 2
    spread: float = 1.6
    ood_offset: float = 20.0
    scale: float = 3.0
    center: float = 10.0


@dataclass(frozen=True)
class MapConfig:
    lr: float = 1.0
    steps: int = 1600


@dataclass(frozen=True)
class EvalConfig:
    ks: tuple[int, ...] = (1, 5, 10)
    n_samples: int = 100
    ece_bins: int = 15
    ece_inverse_bin_weight: bool = False

    def __post_init__(self):
        object.__setattr__(self, "ks", tuple(int(k) for k in self.ks))
        if not self.ks or min(self.ks) < 1:
            raise ValueError("eval ks must be positive")
        if self.n_samples < 2 or self.ece_bins < 1:
            raise ValueError("need n_samples >= 2 and ece_bins >= 1")


@dataclass(frozen=True)
class RunConfig:
    net: NetSpec = NetSpec((2, 32, 3))
    margin: MarginConfig = MarginConfig()
    target: TargetMode = TargetMode()
    split: str = EUCLIDEAN
    hessian: HessianApprox = HessianApprox("fix")
    prior_sigma: float = 0.3
    online: OnlineConfig = OnlineConfig(lr=1.0, alpha=0.0005, n_mc=5, steps=1600)
    map: MapConfig = MapConfig()
    mining: MiningConfig | None = MiningConfig(1000, 1000)
    active_subset: str = "last"
    eval: EvalConfig = EvalConfig()
    seed: int = 42
    data: DataConfig = DataConfig()

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ConfigError(f"unknown split {self.split!r}")
        if not self.prior_sigma > 0:
            raise ConfigError("prior_sigma must be positive")
        if self.net.input_dim != self.data.dim:
            raise ConfigError("net input dim must match data dim")

    @property
    def contrastive(self) -> ContrastiveConfig:
        return ContrastiveConfig(self.margin, self.target, self.split, self.mining)

    def to_dict(self) -> dict:
        def plain(obj):
            return {f.name: getattr(obj, f.name) for f in fields(obj)}

        ev = plain(self.eval)
        ev["ks"] = list(ev["ks"])
        return {
            "net": self.net.to_dict(),
            "margin": plain(self.margin),
            "target": plain(self.target),
            "split": self.split,
            "hessian": plain(self.hessian),
            "prior_sigma": self.prior_sigma,
            "online": plain(self.online),
            "map": plain(self.map),
            "mining": None if self.mining is None else plain(self.mining),
            "active_subset": self.active_subset,
            "eval": ev,
            "seed": self.seed,
            "data": plain(self.data),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        """Build from a (possibly partial) dict; missing keys take defaults."""
        base = cls().to_dict()
        unknown = set(d) - set(base)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        merged = dict(base)
        for key, value in d.items():
            if isinstance(base[key], dict) and isinstance(value, dict):
                extra = set(value) - set(base[key])
                if extra:
                    raise ConfigError(f"unknown keys in {key!r}: {sorted(extra)}")
                merged[key] = {**base[key], **value}
            else:
                merged[key] = value
        try:
            mining = merged["mining"]
            return cls(
                net=NetSpec.from_dict(merged["net"]),
                margin=MarginConfig(float(merged["margin"]["m"]), merged["margin"]["convention"]),
                target=TargetMode(**merged["target"]),
                split=merged["split"],
                hessian=HessianApprox(**merged["hessian"]),
                prior_sigma=float(merged["prior_sigma"]),
                online=OnlineConfig(**merged["online"]),
                map=MapConfig(**merged["map"]),
                mining=None if mining is None else MiningConfig(**{**base_mining(), **mining}),
                active_subset=merged["active_subset"],
                eval=EvalConfig(**merged["eval"]),
                seed=int(merged["seed"]),
                data=DataConfig(**merged["data"]),
            )
        except ConfigError:
            raise
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(str(exc)) from None

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()

    def with_seed(self, seed: int) -> "RunConfig":
        return RunConfig.from_dict({**self.to_dict(), "seed": int(seed)})


def base_mining() -> dict:
    return {"n_pos": 1000, "n_neg": 1000, "strategy": "random", "chunk_size": None}


def load_config(path) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return RunConfig.from_dict(raw)


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
