"""Training configuration: defaults, key=value file loading, validation."""

from __future__ import annotations

import dataclasses
import math
import warnings
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError

ABLATIONS = ("none", "no_cls_loss", "no_rec_loss", "no_decoder", "no_ae", "no_gnn", "no_domain")
ACTIVATIONS = ("leaky_relu", "relu")
OPTIMIZERS = ("adam", "sgd")

# tuning grids; leaving them only earns a warning
TUNING_RANGES = {
    "feature_dim": (16, 32, 64),
    "gcn_layers": tuple(range(1, 7)),
    "gcn_hidden": (16, 32, 64, 128),
    "lstm_layers": (1, 2, 3),
    "lstm_hidden": (16, 32, 64),
    "pool_ratio": (0.05, 0.10, 0.15, 0.20, 0.25, 0.30),
    "ae_width": (16, 32, 64),
    "mlp_hidden": ((16,), (32,), (16, 8), (32, 16)),
    "batch_size": (8, 16, 32, 64),
    "lr": (1e-2, 1e-3, 1e-4),
}


class RangeWarning(UserWarning):
    pass


@dataclass(frozen=True)
class TrainConfig:
    feature_dim: int = 32
    gcn_layers: int = 3
    gcn_hidden: int = 64
    lstm_layers: int = 1
    lstm_hidden: int = 32
    pool_ratio: float = 0.20
    ae_width: int = 32
    mlp_hidden: tuple[int, ...] = (16,)
    activation: str = "leaky_relu"
    leaky_slope: float = 0.01
    optimizer: str = "adam"
    batch_size: int = 8
    lr: float = 1e-3
    lr_min: float = 1e-5
    t0: int = 10
    t_mult: int = 2
    epochs: int = 100
    patience: int = 10
    seed: int = 0
    use_domain: bool = True
    ablation: str = "none"
    root_in_error: bool = True
    beta: float | None = None  # None picks 1.0 with domain features, 10.0 without
    w2v_epochs: int = 5
    w2v_negatives: int = 5
    w2v_lr: float = 0.025
    max_nodes: int = 200_000

    def __post_init__(self):
        object.__setattr__(self, "mlp_hidden", tuple(int(h) for h in self.mlp_hidden))
        self.validate()

    @property
    def domain_enabled(self) -> bool:
        return self.use_domain and self.ablation != "no_domain"

    @property
    def effective_beta(self) -> float:
        if self.beta is not None:
            return float(self.beta)
        return 1.0 if self.domain_enabled else 10.0

    @property
    def gcn_dims(self) -> tuple[int, ...]:
        return (self.feature_dim, *([self.gcn_hidden] * (self.gcn_layers - 1)), self.feature_dim)

    def validate(self) -> None:
        def bad(key, why):
            raise ConfigError(f"{key}: {why} (got {getattr(self, key)!r})")

        for key in ("feature_dim", "gcn_layers", "gcn_hidden", "lstm_layers", "lstm_hidden",
                    "ae_width", "batch_size", "epochs", "t0", "t_mult", "w2v_epochs", "w2v_negatives", "max_nodes"):
            v = getattr(self, key)
            if isinstance(v, bool) or not isinstance(v, int) or v < 1:
                bad(key, "must be a positive integer")
        if isinstance(self.patience, bool) or not isinstance(self.patience, int) or self.patience < 0:
            bad("patience", "must be a non-negative integer")
        if not all(h >= 1 for h in self.mlp_hidden):
            bad("mlp_hidden", "layer widths must be positive")
        if not (0 < self.pool_ratio <= 1):
            bad("pool_ratio", "must lie in (0, 1]")
        for key in ("lr", "lr_min", "w2v_lr"):
            v = getattr(self, key)
            if not (math.isfinite(v) and v > 0):
                bad(key, "must be a positive finite number")
        if self.lr_min > self.lr:
            bad("lr_min", "must not exceed lr")
        if not (0 <= self.leaky_slope < 1):
            bad("leaky_slope", "must lie in [0, 1)")
        if self.beta is not None and not (math.isfinite(self.beta) and self.beta > 0):
            bad("beta", "must be positive")
        if self.activation not in ACTIVATIONS:
            bad("activation", f"must be one of {ACTIVATIONS}")
        if self.optimizer not in OPTIMIZERS:
            bad("optimizer", f"must be one of {OPTIMIZERS}")
        if self.ablation not in ABLATIONS:
            bad("ablation", f"unknown variant; expected one of {ABLATIONS}")
        # the domain vector is a node row and the reconstruction is compared to the input
        if self.lstm_hidden != self.feature_dim:
            bad("lstm_hidden", "must equal feature_dim")
        if self.ae_width != self.feature_dim:
            bad("ae_width", "must equal feature_dim")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            bad("seed", "must be a non-negative integer")
        for key, grid in TUNING_RANGES.items():
            v = getattr(self, key)
            ok = any(math.isclose(v, g) for g in grid) if isinstance(v, float) else v in grid
            if not ok:
                warnings.warn(RangeWarning(f"{key}={v!r} is outside the usual tuning range {grid}"), stacklevel=3)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["mlp_hidden"] = list(self.mlp_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"{unknown[0]}: unknown configuration key")
        return cls(**d)


_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def _coerce(key: str, raw: str):
    kind = _TYPES[key]
    raw = raw.strip()
    try:
        if kind == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "float | None":
            return None if raw.lower() in ("", "none", "auto") else float(raw)
        if kind == "tuple[int, ...]":
            return tuple(int(x) for x in raw.replace(",", " ").split())
        return raw
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind}") from exc


def parse_config_text(text: str, base: TrainConfig | None = None) -> TrainConfig:
    """``key = value`` per line, ``#`` comments; unknown keys are errors."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"{key}: unknown configuration key")
        values[key] = _coerce(key, raw)
    return (base or TrainConfig()).replace(**values)


def load_config(path: str | Path, base: TrainConfig | None = None) -> TrainConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc}") from exc
    return parse_config_text(text, base)


def dump_config(config: TrainConfig) -> str:
    lines = []
    for f in fields(config):
        v = getattr(config, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        elif v is None:
            v = "auto"
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


def apply_ablation(config: TrainConfig, variant: str) -> TrainConfig:
    if variant not in ABLATIONS:
        raise ConfigError(f"ablation: unknown variant {variant!r}")
    return config.replace(ablation=variant)
