"""Run configuration: ``key = value`` files merged with command-line overrides.

Recognised keys
---------------
model
    image_size, patch_size, hidden_dim, num_layers, num_heads, mlp_dim,
    num_classes, layer_norm_eps, post_ln
training
    learning_rate, batch_size, max_epochs, patience, beta1, beta2, adam_eps,
    head_only
split
    train_fraction, shuffle, stratified
shared
    seed (drives the split, per-epoch shuffling and parameter init)

Blank lines and lines starting with ``#`` are ignored.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

from pcvit.dataset import SplitSpec
from pcvit.errors import ContractError
from pcvit.trainer import TrainingConfig
from pcvit.vit import ViTConfig

_MODEL_KEYS = {f.name: f.type for f in dataclasses.fields(ViTConfig)}
_TRAIN_KEYS = {
    f.name: f.type for f in dataclasses.fields(TrainingConfig) if f.name not in ("seed", "checkpoint_path")
}
_SPLIT_KEYS = {f.name: f.type for f in dataclasses.fields(SplitSpec) if f.name != "seed"}
KNOWN_KEYS = set(_MODEL_KEYS) | set(_TRAIN_KEYS) | set(_SPLIT_KEYS) | {"seed"}


def _coerce(key: str, kind, raw: str):
    kind = kind if isinstance(kind, str) else kind.__name__
    text = str(raw).strip()
    try:
        if kind == "bool":
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
    except ValueError:
        raise ContractError(f"config key {key!r}: cannot parse {text!r} as {kind}") from None
    return text


def parse_kv_lines(lines, source: str = "<config>") -> dict[str, str]:
    values = {}
    for n, line in enumerate(lines, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ContractError(f"{source}:{n}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in KNOWN_KEYS:
            raise ContractError(f"{source}:{n}: unknown config key {key!r}")
        values[key] = value
    return values


def read_config_file(path) -> dict[str, str]:
    with open(path) as fh:
        return parse_kv_lines(fh, str(path))


@dataclass(frozen=True)
class RunConfig:
    model: ViTConfig = field(default_factory=ViTConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    split: SplitSpec = field(default_factory=SplitSpec)
    seed: int = 0

    @classmethod
    def from_values(cls, values: dict[str, str]) -> "RunConfig":
        seed = _coerce("seed", "int", values["seed"]) if "seed" in values else 0
        model = {k: _coerce(k, t, values[k]) for k, t in _MODEL_KEYS.items() if k in values}
        train = {k: _coerce(k, t, values[k]) for k, t in _TRAIN_KEYS.items() if k in values}
        split = {k: _coerce(k, t, values[k]) for k, t in _SPLIT_KEYS.items() if k in values}
        return cls(ViTConfig(**model), TrainingConfig(seed=seed, **train), SplitSpec(seed=seed, **split), seed)

    def as_lines(self) -> list[str]:
        """The resolved configuration in the same ``key = value`` format."""
        out = [f"seed = {self.seed}"]
        for obj, keys in ((self.model, _MODEL_KEYS), (self.training, _TRAIN_KEYS), (self.split, _SPLIT_KEYS)):
            out.extend(f"{k} = {getattr(obj, k)}" for k in keys)
        return out


def load_run_config(path=None, overrides: dict[str, str] | None = None) -> RunConfig:
    values = read_config_file(path) if path else {}
    for key in overrides or {}:
        if key not in KNOWN_KEYS:
            raise ContractError(f"unknown config key {key!r}")
    values.update({k: str(v) for k, v in (overrides or {}).items()})
    return RunConfig.from_values(values)
