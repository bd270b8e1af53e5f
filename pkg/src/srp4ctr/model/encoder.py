"""FG-BERT: bidirectional encoder over fused item/behavior event embeddings,
trained with separate item and behavior mask-prediction heads."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..data.masking import MaskPlan
from ..data.types import InteractionSequence, SequenceBatch, pack_sequences
from ..numerics import ParameterStore, Tensor, add, cross_entropy, getitem, mul, take, truncated_normal
from .config import EncoderConfig
from .layers import (
    attend,
    ffn,
    init_ffn,
    init_linear,
    init_norm,
    key_mask,
    linear,
    merge_heads,
    norm,
    split_heads,
)


@dataclass
class EncoderOutput:
    """Everything downstream blocks need from one encoder pass.

    ``keys``/``values`` are the head-split K/V each layer computed for its own
    self-attention; the uni cross-attention reuses them through its shared
    K/V projections.
    """

    layer_outputs: list[Tensor]
    keys: list[Tensor]
    values: list[Tensor]
    hidden: Tensor  # final-normed last layer, [B, L, d]
    mask: np.ndarray  # additive key mask [B, 1, 1, L]
    valid: np.ndarray  # [B, L]


@dataclass
class PretrainLossBreakdown:
    item_loss: Tensor
    behavior_loss: Tensor
    total: Tensor

    def as_floats(self) -> dict[str, float]:
        return {"item_loss": self.item_loss.item(), "behavior_loss": self.behavior_loss.item(), "total": self.total.item()}


def init_encoder_params(cfg: EncoderConfig, store: ParameterStore, rng: np.random.Generator) -> None:
    d = cfg.d_model
    dt = store.dtype
    for m, size in enumerate(cfg.vocab.item_sizes):
        store.add(f"emb/item/{m}", truncated_normal(rng, (size, d), dtype=dt))
    for n, size in enumerate(cfg.vocab.behavior_sizes):
        store.add(f"emb/behavior/{n}", truncated_normal(rng, (size, d), dtype=dt))
    store.add("emb/position", truncated_normal(rng, (cfg.max_len, d), dtype=dt))
    store.add("emb/mask_item", truncated_normal(rng, (d,), dtype=dt))
    store.add("emb/mask_behavior", truncated_normal(rng, (d,), dtype=dt))
    for layer in range(cfg.num_layers):
        pre = f"enc/{layer}"
        init_norm(store, f"{pre}/ln1", d)
        for proj in ("q", "k", "v", "o"):
            init_linear(store, f"{pre}/attn/{proj}", d, d, rng)
        init_norm(store, f"{pre}/ln2", d)
        init_ffn(store, f"{pre}/ffn", d, cfg.ffn_dim, rng)
    init_norm(store, "enc/final_ln", d)


def init_pretrain_heads(cfg: EncoderConfig, store: ParameterStore, rng: np.random.Generator) -> None:
    d = cfg.d_model
    init_linear(store, "head/item", d, cfg.vocab.item_sizes[0], rng)
    for n, size in enumerate(cfg.vocab.behavior_sizes):
        init_linear(store, f"head/behavior/{n}", d, size, rng)


def sum_embeddings(p: ParameterStore, kind: str, ids: np.ndarray) -> Tensor:
    """Sum of per-feature embeddings; ``ids`` has the feature axis last."""
    out = take(p[f"emb/{kind}/0"], ids[..., 0])
    for f in range(1, ids.shape[-1]):
        out = add(out, take(p[f"emb/{kind}/{f}"], ids[..., f]))
    return out


def _replace_rows(x: Tensor, mask: np.ndarray, vec: Tensor) -> Tensor:
    m = mask.astype(x.dtype)[..., None]
    return add(mul(x, 1.0 - m), mul(vec, m))


class FGBert:
    """Parameters plus forward passes of the pre-training encoder."""

    def __init__(self, cfg: EncoderConfig, params: ParameterStore | None = None, seed: int = 0, dtype=np.float32, heads: bool = True):
        self.cfg = cfg
        if params is None:
            params = ParameterStore(dtype)
            rng = np.random.default_rng(seed)
            init_encoder_params(cfg, params, rng)
            if heads:
                init_pretrain_heads(cfg, params, rng)
        self.params = params

    def encoder_names(self) -> list[str]:
        return [n for n in self.params if n.startswith(("emb/", "enc/"))]

    # -- forward ----------------------------------------------------------

    def embed(
        self,
        batch: SequenceBatch,
        item_mask: np.ndarray | None = None,
        behavior_mask: np.ndarray | None = None,
    ) -> Tensor:
        """``x_i + s_i + pos_i`` with masked components swapped for mask vectors."""
        p = self.params
        length = batch.items.shape[1]
        if length > self.cfg.max_len:
            raise ValueError(f"sequence length {length} exceeds L={self.cfg.max_len}")
        x = sum_embeddings(p, "item", batch.items)
        s = sum_embeddings(p, "behavior", batch.behaviors)
        if item_mask is not None and item_mask.any():
            x = _replace_rows(x, item_mask, p["emb/mask_item"])
        if behavior_mask is not None and behavior_mask.any():
            s = _replace_rows(s, behavior_mask, p["emb/mask_behavior"])
        pos = p["emb/position"] if length == self.cfg.max_len else p["emb/position"][:length]
        return add(add(x, s), pos)

    def encode(self, inputs: Tensor, valid: np.ndarray) -> EncoderOutput:
        """Pre-norm transformer stack: ``h += MHSA(LN(h)); h += FFN(LN(h))``."""
        p, cfg = self.params, self.cfg
        mask = key_mask(valid, inputs.dtype)
        h = inputs
        outs, keys, values = [], [], []
        for layer in range(cfg.num_layers):
            pre = f"enc/{layer}"
            a = norm(p, f"{pre}/ln1", h)
            q = split_heads(linear(p, f"{pre}/attn/q", a), cfg.num_heads)
            k = split_heads(linear(p, f"{pre}/attn/k", a), cfg.num_heads)
            v = split_heads(linear(p, f"{pre}/attn/v", a), cfg.num_heads)
            keys.append(k)
            values.append(v)
            h = add(h, linear(p, f"{pre}/attn/o", merge_heads(attend(q, k, v, mask))))
            h = add(h, ffn(p, f"{pre}/ffn", norm(p, f"{pre}/ln2", h)))
            outs.append(h)
        return EncoderOutput(outs, keys, values, norm(p, "enc/final_ln", h), mask, valid)

    def forward(self, batch: SequenceBatch, item_mask=None, behavior_mask=None) -> EncoderOutput:
        return self.encode(self.embed(batch, item_mask, behavior_mask), batch.valid)

    def item_logits(self, hidden_rows: Tensor) -> Tensor:
        return linear(self.params, "head/item", hidden_rows)

    def pretrain_loss(
        self,
        hidden: Tensor,
        batch: SequenceBatch,
        item_mask: np.ndarray,
        behavior_mask: np.ndarray,
        behavior_weight: float = 1.0,
    ) -> PretrainLossBreakdown:
        """Multi-task CE: primary item id at item-masked positions, every behavior
        attribute at behavior-masked positions, each averaged over its mask set."""
        if not item_mask.any() or not behavior_mask.any():
            raise ValueError("both mask sets must be non-empty")
        p = self.params
        ib, il = np.nonzero(item_mask)
        item_loss = cross_entropy(self.item_logits(getitem(hidden, (ib, il), unique=True)), batch.items[ib, il, 0])
        bb, bl = np.nonzero(behavior_mask)
        rows = getitem(hidden, (bb, bl), unique=True)
        n_beh = batch.behaviors.shape[-1]
        logits = [linear(p, f"head/behavior/{n}", rows) for n in range(n_beh)]
        # mean over (position, attribute) pairs
        behavior_loss = cross_entropy(logits[0], batch.behaviors[bb, bl, 0])
        for n in range(1, n_beh):
            behavior_loss = add(behavior_loss, cross_entropy(logits[n], batch.behaviors[bb, bl, n]))
        behavior_loss = mul(behavior_loss, 1.0 / n_beh)
        total = add(item_loss, mul(behavior_loss, behavior_weight))
        return PretrainLossBreakdown(item_loss, behavior_loss, total)


# -- single-sequence conveniences -------------------------------------------


def plan_masks(plan: MaskPlan | None, seq: InteractionSequence, length: int) -> tuple[np.ndarray | None, np.ndarray | None]:
    if plan is None:
        return None, None
    for pos in plan.item_mask_positions + plan.behavior_mask_positions:
        if not 0 <= pos < seq.true_length:
            raise ValueError(f"mask position {pos} outside the {seq.true_length} real events")
    item, beh = plan.as_arrays(length)
    return item[None], beh[None]


def embed_sequence(model: FGBert, seq: InteractionSequence, plan: MaskPlan | None = None) -> Tensor:
    """``[L, d]`` fused input embedding of one sequence."""
    batch = pack_sequences([seq], model.cfg.max_len)
    item, beh = plan_masks(plan, seq, model.cfg.max_len)
    return model.embed(batch, item, beh)[0]


def encode_sequence(model: FGBert, seq: InteractionSequence) -> EncoderOutput:
    return model.forward(pack_sequences([seq], model.cfg.max_len))


def pretrain_loss(model: FGBert, seq: InteractionSequence, plan: MaskPlan, behavior_weight: float = 1.0) -> PretrainLossBreakdown:
    batch = pack_sequences([seq], model.cfg.max_len)
    item, beh = plan_masks(plan, seq, model.cfg.max_len)
    out = model.forward(batch, item, beh)
    return model.pretrain_loss(out.hidden, batch, item, beh, behavior_weight)
