"""CTR fine-tuning: uni cross-attention, querying transformer, fusion head and
the model-patch baseline.

The forward pass is split in two so the same code serves folded inference:
:meth:`SRP4CTR.encode_user` touches only user-side inputs (sequence and
context) and :meth:`SRP4CTR.score` adds the candidate.  When a single user
state is scored against many candidates the user tensors broadcast.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..data.types import CtrBatch, CtrExample, SequenceBatch, pack_examples
from ..numerics import (
    CheckpointError,
    ParameterStore,
    Tensor,
    add,
    broadcast_to,
    concat,
    gelu,
    mul,
    no_grad,
    reshape,
    sigmoid,
    stage,
    sum_,
    take,
    truncated_normal,
)
from .config import ModelConfig, ModelConfigError
from .encoder import EncoderOutput, FGBert, init_encoder_params, sum_embeddings
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

SEQUENCE_ENCODER = "sequence_encoder"
UNI_CROSS_ATTN = "uni_cross_attn"
QFORMER = "qformer"
HEAD = "head"
STAGES = (SEQUENCE_ENCODER, UNI_CROSS_ATTN, QFORMER, HEAD)
FOLDABLE = {SEQUENCE_ENCODER: True, QFORMER: True, UNI_CROSS_ATTN: False, HEAD: False}


@dataclass
class UserState:
    """Candidate-independent part of the forward pass (cacheable per request)."""

    encoded: EncoderOutput
    pooled: Tensor  # [U, d]
    context: Tensor | None  # [U, d]
    queries: Tensor | None  # [U, K, d]


def head_input_width(cfg: ModelConfig) -> int:
    d = cfg.encoder.d_model
    ft = cfg.finetune
    if ft.baseline_mp:
        return 2 * d
    width = 2 * d  # pooled sequence + target
    if ft.use_uni_attn:
        width += d
    if ft.use_qformer:
        width += ft.n_queries * d
    if ft.use_context and cfg.encoder.vocab.num_context_features:
        width += d
    return width


class SRP4CTR:
    def __init__(self, cfg: ModelConfig, params: ParameterStore | None = None, seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        if params is None:
            params = self._init_params(np.random.default_rng(seed))
        self.params = params
        self.encoder = FGBert(cfg.encoder, params)
        self.set_encoder_trainable(not cfg.finetune.freeze_encoder)

    # -- parameters -------------------------------------------------------

    def _init_params(self, rng: np.random.Generator) -> ParameterStore:
        enc, ft = self.cfg.encoder, self.cfg.finetune
        d = enc.d_model
        store = ParameterStore(self.dtype)
        init_encoder_params(enc, store, rng)
        if ft.use_context:
            for c, size in enumerate(enc.vocab.context_sizes):
                store.add(f"ctx/emb/{c}", truncated_normal(rng, (size, d), dtype=self.dtype))
        if ft.use_uni_attn:
            store.add("uni/target_position", truncated_normal(rng, (d,), dtype=self.dtype))
            for layer in range(enc.num_layers):
                pre, src = f"uni/{layer}", f"enc/{layer}/attn"
                init_norm(store, f"{pre}/ln1", d)
                for proj in ("k", "v"):
                    for part in ("w", "b"):
                        store.alias(f"{pre}/attn/{proj}/{part}", store[f"{src}/{proj}/{part}"])
                for proj in ("q", "o"):
                    if ft.tie_uni_attn:
                        for part in ("w", "b"):
                            store.alias(f"{pre}/attn/{proj}/{part}", store[f"{src}/{proj}/{part}"])
                    else:
                        init_linear(store, f"{pre}/attn/{proj}", d, d, rng)
                init_norm(store, f"{pre}/ln2", d)
                init_ffn(store, f"{pre}/ffn", d, enc.ffn_dim, rng)
            init_norm(store, "uni/final_ln", d)
        if ft.use_qformer:
            k = ft.n_queries
            store.add("qf/queries", truncated_normal(rng, (k, d), dtype=self.dtype))
            if ft.use_context and enc.vocab.num_context_features:
                init_linear(store, "qf/context_proj", d, k * d, rng, bias=False)
            init_norm(store, "qf/ln1", d)
            for proj in ("q", "k", "v", "o"):
                init_linear(store, f"qf/attn/{proj}", d, d, rng)
            init_norm(store, "qf/ln2", d)
            init_ffn(store, "qf/ffn", d, enc.ffn_dim, rng)
            init_norm(store, "qf/final_ln", d)
        if ft.baseline_mp:
            store.add("mp/adapter", np.zeros(d))
        init_linear(store, "head/fc1", head_input_width(self.cfg), ft.head_hidden, rng)
        init_linear(store, "head/fc2", ft.head_hidden, 1, rng)
        return store

    def encoder_names(self) -> list[str]:
        return [n for n in self.params if n.startswith(("emb/", "enc/"))]

    def set_encoder_trainable(self, trainable: bool) -> None:
        for name in self.encoder_names():
            self.params[name].requires_grad = trainable

    def load_encoder(self, state: dict[str, np.ndarray]) -> None:
        """Copy pre-trained ``emb/*`` and ``enc/*`` tensors; every one must be present."""
        for name in self.encoder_names():
            if name not in state:
                raise CheckpointError(f"pre-trained checkpoint lacks tensor {name!r}")
            t = self.params[name]
            if state[name].shape != t.shape:
                raise CheckpointError(
                    f"tensor {name!r}: checkpoint shape {state[name].shape} does not match model shape {t.shape}"
                )
            t.data = np.asarray(state[name], dtype=t.dtype).copy()
        ft = self.cfg.finetune
        if ft.use_uni_attn and not ft.tie_uni_attn:
            # untied query/output projections start from a copy of the encoder's
            for layer in range(self.cfg.encoder.num_layers):
                for proj in ("q", "o"):
                    for part in ("w", "b"):
                        src = self.params[f"enc/{layer}/attn/{proj}/{part}"]
                        self.params[f"uni/{layer}/attn/{proj}/{part}"].data = src.data.copy()

    # -- user side (foldable) ---------------------------------------------

    def context_embedding(self, context: np.ndarray) -> Tensor | None:
        ft, vocab = self.cfg.finetune, self.cfg.encoder.vocab
        if not (ft.use_context and vocab.num_context_features):
            return None
        out = take(self.params["ctx/emb/0"], context[:, 0])
        for c in range(1, vocab.num_context_features):
            out = add(out, take(self.params[f"ctx/emb/{c}"], context[:, c]))
        return out

    def qformer(self, hidden: Tensor, mask: np.ndarray, context: Tensor | None) -> Tensor:
        """K learnable queries (offset by a projection of the context) cross-attend
        over the final sequence states; one attention + FFN block."""
        p, cfg = self.params, self.cfg
        k, d = cfg.finetune.n_queries, cfg.encoder.d_model
        u = hidden.shape[0]
        queries = broadcast_to(p["qf/queries"], (u, k, d))
        if context is not None and "qf/context_proj/w" in p:
            queries = add(queries, reshape(linear(p, "qf/context_proj", context), (u, k, d)))
        h = cfg.encoder.num_heads
        q = split_heads(linear(p, "qf/attn/q", norm(p, "qf/ln1", queries)), h)
        kk = split_heads(linear(p, "qf/attn/k", hidden), h)
        v = split_heads(linear(p, "qf/attn/v", hidden), h)
        x = add(queries, linear(p, "qf/attn/o", merge_heads(attend(q, kk, v, mask))))
        x = add(x, ffn(p, "qf/ffn", norm(p, "qf/ln2", x)))
        return norm(p, "qf/final_ln", x)

    def encode_user(self, seqs: SequenceBatch, context: np.ndarray) -> UserState:
        with stage(SEQUENCE_ENCODER):
            encoded = self.encoder.forward(seqs)
            valid = seqs.valid.astype(self.dtype)
            pooled = mul(
                sum_(mul(encoded.hidden, valid[..., None]), axis=1),
                (1.0 / seqs.lengths.astype(self.dtype))[:, None],
            )
        ctx = self.context_embedding(context)
        queries = None
        if self.cfg.finetune.use_qformer:
            with stage(QFORMER):
                queries = self.qformer(encoded.hidden, encoded.mask, ctx)
        return UserState(encoded, pooled, ctx, queries)

    # -- candidate side ---------------------------------------------------

    def target_embedding(self, targets: np.ndarray) -> Tensor:
        return sum_embeddings(self.params, "item", targets)

    def uni_cross_attention(self, target: Tensor, encoded: EncoderOutput) -> Tensor:
        """Target-as-query attention over each layer's cached K/V.

        ``target`` is ``[B, d]``.  The sequence tensors are only read, so the
        result for one candidate never depends on any other.
        """
        p, cfg = self.params, self.cfg.encoder
        b = target.shape[0]
        t = reshape(add(target, p["uni/target_position"]), (b, 1, cfg.d_model))
        if len(encoded.keys) != cfg.num_layers:
            raise ModelConfigError(f"uni cross-attention has {cfg.num_layers} layers, encoder output has {len(encoded.keys)}")
        for layer in range(cfg.num_layers):
            pre = f"uni/{layer}"
            q = split_heads(linear(p, f"{pre}/attn/q", norm(p, f"{pre}/ln1", t)), cfg.num_heads)
            ctx = attend(q, encoded.keys[layer], encoded.values[layer], encoded.mask)
            t = add(t, linear(p, f"{pre}/attn/o", merge_heads(ctx)))
            t = add(t, ffn(p, f"{pre}/ffn", norm(p, f"{pre}/ln2", t)))
        return reshape(norm(p, "uni/final_ln", t), (b, cfg.d_model))

    def score(self, user: UserState, targets: np.ndarray) -> Tensor:
        """Logits ``[B]`` for ``B`` candidates.

        The user state holds either one user (broadcast over all candidates) or
        exactly ``B`` users (row-aligned).
        """
        ft, d = self.cfg.finetune, self.cfg.encoder.d_model
        b = len(targets)
        u = user.pooled.shape[0]
        if u not in (1, b):
            raise ValueError(f"user state holds {u} users for {b} candidates")

        def tile(x: Tensor) -> Tensor:
            return x if u == b else broadcast_to(x, (b,) + x.shape[1:])

        target = self.target_embedding(targets)
        parts: list[Tensor] = []
        if ft.baseline_mp:
            parts = [tile(add(user.pooled, self.params["mp/adapter"])), target]
        else:
            if ft.use_uni_attn:
                with stage(UNI_CROSS_ATTN):
                    parts.append(self.uni_cross_attention(target, user.encoded))
            if ft.use_qformer:
                parts.append(tile(reshape(user.queries, (u, ft.n_queries * d))))
            parts.append(tile(user.pooled))
            parts.append(target)
            if user.context is not None:
                parts.append(tile(user.context))
        with stage(HEAD):
            x = concat(parts, axis=-1)
            logit = linear(self.params, "head/fc2", gelu(linear(self.params, "head/fc1", x)))
        return reshape(logit, (b,))

    def logits(self, batch: CtrBatch) -> Tensor:
        user = self.encode_user(batch.sequences, batch.context)
        return self.score(user, batch.targets)

    def predict_proba(self, batch: CtrBatch) -> np.ndarray:
        with no_grad():
            return sigmoid(self.logits(batch)).data


def ctr_forward(model: SRP4CTR, example: CtrExample) -> float:
    """Click probability of a single example (joint, un-folded path)."""
    batch = pack_examples([example], model.cfg.encoder.max_len)
    return float(model.predict_proba(batch)[0])


def mp_baseline_forward(model: SRP4CTR, example: CtrExample) -> float:
    if not model.cfg.finetune.baseline_mp:
        raise ModelConfigError("model is not configured as the MP baseline")
    return ctr_forward(model, example)


def binary_ce_loss(p, label, eps: float = 1e-7):
    """``-y ln p - (1-y) ln(1-p)`` with ``p`` clamped away from 0 and 1."""
    p = np.clip(np.asarray(p, dtype=np.float64), eps, 1.0 - eps)
    y = np.asarray(label, dtype=np.float64)
    out = -(y * np.log(p) + (1.0 - y) * np.log1p(-p))
    return float(out) if out.ndim == 0 else out
