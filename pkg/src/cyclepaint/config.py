"""Training configuration, its JSON form and ``key=value`` overrides."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .losses import LossWeights
from .masking import MaskSpec, feasible_sides
from .networks import DiscriminatorConfig, GeneratorConfig, receptive_field


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainingConfig:
    resolution: int = 64
    batch_size: int = 8
    total_steps: int = 2000
    learning_rate: float = 2e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    weights: LossWeights = field(default_factory=LossWeights)
    mask_spec: MaskSpec = field(default_factory=MaskSpec)
    seed: int = 0
    checkpoint_every: int = 500
    log_every: int = 10
    include_E_adv_in_forward: bool = False
    use_cycle_loss: bool = True
    # architecture
    gen_channels: int = 16
    gen_stages: int = 2
    dilation_rates: tuple[int, ...] = (2, 4, 8)
    disc_channels: int = 16
    disc_stages: int = 4

    def __post_init__(self):
        object.__setattr__(self, "dilation_rates", tuple(self.dilation_rates))
        if self.total_steps < 1:
            raise ConfigError("total_steps must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.checkpoint_every < 1 or self.log_every < 1:
            raise ConfigError("checkpoint_every and log_every must be >= 1")

    def generator_config(self) -> GeneratorConfig:
        return GeneratorConfig(self.gen_channels, self.gen_stages, self.dilation_rates, 4, 3, self.resolution)

    def discriminator_config(self) -> DiscriminatorConfig:
        return DiscriminatorConfig(self.disc_channels, self.disc_stages, 3, self.resolution)

    def check_receptive_field(self) -> None:
        """The bottleneck must see further than the largest hole is wide."""
        sides = feasible_sides(self.mask_spec, self.resolution, self.resolution)
        if not sides:
            raise ConfigError(f"mask spec infeasible at resolution {self.resolution}")
        rf = receptive_field(self.generator_config())
        if rf <= max(sides):
            raise ConfigError(
                f"generator receptive field {rf}px does not exceed the largest mask side {max(sides)}px"
            )

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["dilation_rates"] = list(self.dilation_rates)
        return d

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "TrainingConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        try:
            if "weights" in d:
                d["weights"] = _nested(LossWeights, d["weights"], "weights")
            if "mask_spec" in d:
                d["mask_spec"] = _nested(MaskSpec, d["mask_spec"], "mask_spec")
            return cls(**d)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None


def _nested(kind, value, name):
    if isinstance(value, kind):
        return value
    known = {f.name for f in dataclasses.fields(kind)}
    unknown = set(value) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(f'{name}.{k}' for k in unknown)}")
    return kind(**value)


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        if text.lower() in ("true", "false"):
            return text.lower() == "true"
        return text


def apply_overrides(cfg: TrainingConfig, overrides: list[str]) -> TrainingConfig:
    """Apply ``key=value`` pairs; nested fields use dotted keys (``weights.alpha=5``)."""
    d = cfg.to_dict()
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        parts = key.strip().split(".")
        target = d
        for p in parts[:-1]:
            if not isinstance(target.get(p), dict):
                raise ConfigError(f"unknown config key {key!r}")
            target = target[p]
        if parts[-1] not in target:
            raise ConfigError(f"unknown config key {key!r}")
        target[parts[-1]] = _parse_value(value.strip())
    return TrainingConfig.from_dict(d)


def load_config(path: str | Path | None, overrides: list[str] = ()) -> TrainingConfig:
    cfg = TrainingConfig()
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        cfg = TrainingConfig.from_dict(data)
    return apply_overrides(cfg, list(overrides))


# may differ between an interrupted run and its continuation
RESUMABLE_FIELDS = {"total_steps", "checkpoint_every", "log_every"}


def config_diff(a: TrainingConfig, b: TrainingConfig, ignore=RESUMABLE_FIELDS) -> list[str]:
    def flat(d, prefix=""):
        for k, v in d.items():
            if isinstance(v, dict):
                yield from flat(v, f"{prefix}{k}.")
            else:
                yield f"{prefix}{k}", v

    fa, fb = dict(flat(a.to_dict())), dict(flat(b.to_dict()))
    return [f"{k}: {fa[k]!r} != {fb[k]!r}" for k in fa if k not in ignore and fa[k] != fb[k]]
