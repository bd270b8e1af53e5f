from __future__ import annotations

from dataclasses import dataclass, field, replace

from ..data.types import Vocab


class ModelConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    vocab: Vocab
    num_layers: int = 2
    d_model: int = 64
    num_heads: int = 2
    ffn_multiplier: int = 4
    max_len: int = 50

    def __post_init__(self):
        if self.num_layers < 0:
            raise ModelConfigError("num_layers must be non-negative")
        if self.d_model < 2 or self.num_heads < 1 or self.d_model % self.num_heads:
            raise ModelConfigError(f"d_model={self.d_model} must be divisible by num_heads={self.num_heads}")
        if self.max_len < 1:
            raise ModelConfigError("max_len must be positive")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.num_heads

    @property
    def ffn_dim(self) -> int:
        return self.ffn_multiplier * self.d_model


@dataclass(frozen=True)
class FinetuneConfig:
    """Fine-tuning architecture and ablation switches.

    The defaults give the full model.  ``from_scratch`` skips loading a
    pre-trained encoder; ``baseline_mp`` selects the frozen-encoder
    model-patch baseline instead.
    """

    use_uni_attn: bool = True
    use_qformer: bool = True
    tie_uni_attn: bool = False
    from_scratch: bool = False
    freeze_encoder: bool = False
    baseline_mp: bool = False
    n_queries: int = 4
    head_hidden: int = 64
    use_context: bool = True

    def __post_init__(self):
        if self.baseline_mp and (self.use_uni_attn or self.use_qformer):
            raise ModelConfigError("baseline_mp excludes use_uni_attn and use_qformer")
        if self.baseline_mp and not self.freeze_encoder:
            raise ModelConfigError("baseline_mp requires a frozen encoder")
        if self.tie_uni_attn and not self.use_uni_attn:
            raise ModelConfigError("tie_uni_attn needs use_uni_attn")
        if self.n_queries < 1 or self.head_hidden < 1:
            raise ModelConfigError("n_queries and head_hidden must be positive")

    @classmethod
    def mp_baseline(cls, **kw) -> "FinetuneConfig":
        return cls(use_uni_attn=False, use_qformer=False, freeze_encoder=True, baseline_mp=True, **kw)


ABLATIONS: dict[str, dict] = {
    "full": {},
    "scratch": {"from_scratch": True},
    "no_uni_attn_no_qformer": {"use_uni_attn": False, "use_qformer": False},
    "no_uni_attn": {"use_uni_attn": False},
    "no_qformer": {"use_qformer": False},
    "tied_uni_attn": {"tie_uni_attn": True},
    "mp": {"use_uni_attn": False, "use_qformer": False, "freeze_encoder": True, "baseline_mp": True},
}


def ablation(name: str, base: FinetuneConfig | None = None) -> FinetuneConfig:
    try:
        changes = ABLATIONS[name]
    except KeyError:
        raise ModelConfigError(f"unknown variant {name!r}; choose from {sorted(ABLATIONS)}") from None
    return replace(base or FinetuneConfig(), **changes)


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)

    def __post_init__(self):
        ft = self.finetune
        if ft.use_qformer and ft.n_queries >= self.encoder.max_len:
            raise ModelConfigError(f"n_queries={ft.n_queries} must be below L={self.encoder.max_len}")
