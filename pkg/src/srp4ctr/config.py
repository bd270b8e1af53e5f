"""Flat ``key = value`` run configuration.

Keys are namespaced (``data.*``, ``model.*``, ``pretrain.*``, ``finetune.*``,
``serve.*``) and typed by their defaults.  Layering: defaults, then the file,
then ``--set`` overrides, then subcommand flags.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterable, Mapping

from .data.synthetic import SyntheticConfig
from .model.config import EncoderConfig, FinetuneConfig, ModelConfig
from .runtime.train import TrainRunSpec


class ConfigKeyError(ValueError):
    pass


_TRAIN_KEYS = ("steps", "batch_size", "lr", "lr_end", "decay_power", "eval_every")


def _defaults() -> dict[str, object]:
    out: dict[str, object] = {"seed": 42, "val_fraction": 0.1, "split_seed": 0}
    for f in fields(SyntheticConfig):
        out[f"data.{f.name}"] = f.default
    for name in ("num_layers", "d_model", "num_heads", "ffn_multiplier"):
        out[f"model.{name}"] = EncoderConfig.__dataclass_fields__[name].default
    out.update(
        {
            "pretrain.steps": 5000,
            "pretrain.batch_size": 64,
            "pretrain.lr": 1e-3,
            "pretrain.lr_end": 1e-5,
            "pretrain.decay_power": 1.0,
            "pretrain.eval_every": 200,
            "pretrain.item_mask_ratio": 0.2,
            "pretrain.behavior_mask_ratio": 0.2,
            "pretrain.behavior_loss_weight": 1.0,
            "finetune.steps": 2000,
            "finetune.batch_size": 64,
            "finetune.lr": 1e-3,
            "finetune.lr_end": 1e-5,
            "finetune.decay_power": 1.0,
            "finetune.eval_every": 200,
        }
    )
    for f in fields(FinetuneConfig):
        out[f"finetune.{f.name}"] = f.default
    out.update({"serve.requests": 20, "serve.candidates": 100, "flops.batch": 100})
    return out


DEFAULTS: dict[str, object] = _defaults()


def _coerce(key: str, raw: str) -> object:
    default = DEFAULTS[key]
    text = raw.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise ConfigKeyError(f"{key}: cannot read {raw!r} as {type(default).__name__}") from None
    return text


def parse_assignment(text: str) -> tuple[str, object]:
    if "=" not in text:
        raise ConfigKeyError(f"expected key=value, got {text!r}")
    key, value = text.split("=", 1)
    key = key.strip()
    if key not in DEFAULTS:
        raise ConfigKeyError(f"unknown config key {key!r}")
    return key, _coerce(key, value)


def parse_config_text(text: str) -> dict[str, object]:
    out: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            key, value = parse_assignment(line)
        except ConfigKeyError as exc:
            raise ConfigKeyError(f"line {lineno}: {exc}") from None
        out[key] = value
    return out


@dataclass
class RunConfig:
    values: dict[str, object]

    @classmethod
    def load(cls, path=None, overrides: Iterable[str] = (), flags: Mapping[str, object] | None = None) -> "RunConfig":
        values = dict(DEFAULTS)
        if path is not None:
            values.update(parse_config_text(Path(path).read_text(encoding="utf-8")))
        for item in overrides:
            key, value = parse_assignment(item)
            values[key] = value
        for key, value in (flags or {}).items():
            if value is None:
                continue
            if key not in DEFAULTS:
                raise ConfigKeyError(f"unknown config key {key!r}")
            values[key] = value
        return cls(values)

    def __getitem__(self, key: str):
        return self.values[key]

    def section(self, prefix: str) -> dict[str, object]:
        return {k[len(prefix) + 1 :]: v for k, v in self.values.items() if k.startswith(prefix + ".")}

    def synthetic(self) -> SyntheticConfig:
        return SyntheticConfig(**self.section("data"))

    def encoder(self) -> EncoderConfig:
        syn = self.synthetic()
        return EncoderConfig(syn.vocab(), max_len=syn.max_len, **self.section("model"))

    def finetune_config(self) -> FinetuneConfig:
        ft = self.section("finetune")
        return FinetuneConfig(**{f.name: ft[f.name] for f in fields(FinetuneConfig)})

    def model(self) -> ModelConfig:
        return ModelConfig(self.encoder(), self.finetune_config())

    def train_spec(self, phase: str, out_dir=None) -> TrainRunSpec:
        sec = self.section(phase)
        kw = {k: sec[k] for k in _TRAIN_KEYS}
        if phase == "pretrain":
            kw.update({k: sec[k] for k in ("item_mask_ratio", "behavior_mask_ratio", "behavior_loss_weight")})
        else:
            kw["finetune"] = self.finetune_config()
        return TrainRunSpec(
            phase=phase,
            seed=int(self["seed"]),
            val_fraction=float(self["val_fraction"]),
            split_seed=int(self["split_seed"]),
            out_dir=str(out_dir) if out_dir is not None else None,
            **kw,
        )

    def to_text(self) -> str:
        return "".join(f"{k} = {_format(v)}\n" for k, v in self.values.items())


def _format(value: object) -> str:
    if isinstance(value, bool):
        return str(value).lower()
    return str(value)


def describe_keys() -> str:
    width = max(map(len, DEFAULTS))
    return "\n".join(f"  {k:<{width}}  {_format(v)}" for k, v in DEFAULTS.items())
