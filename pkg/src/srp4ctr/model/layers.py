"""Shared transformer building blocks over :mod:`srp4ctr.numerics`."""

from __future__ import annotations

import numpy as np

from ..numerics import (
    ParameterStore,
    Tensor,
    gelu,
    layer_norm,
    matmul,
    mul,
    reshape,
    softmax,
    transpose,
    truncated_normal,
)

NEG_INF = -1e9


def init_linear(store: ParameterStore, prefix: str, d_in: int, d_out: int, rng, bias: bool = True) -> None:
    store.add(f"{prefix}/w", truncated_normal(rng, (d_in, d_out), dtype=store.dtype))
    if bias:
        store.add(f"{prefix}/b", np.zeros(d_out))


def init_norm(store: ParameterStore, prefix: str, d: int) -> None:
    store.add(f"{prefix}/g", np.ones(d))
    store.add(f"{prefix}/b", np.zeros(d))


def init_ffn(store: ParameterStore, prefix: str, d: int, hidden: int, rng) -> None:
    init_linear(store, f"{prefix}/fc1", d, hidden, rng)
    init_linear(store, f"{prefix}/fc2", hidden, d, rng)


def linear(p: ParameterStore, prefix: str, x: Tensor) -> Tensor:
    out = matmul(x, p[f"{prefix}/w"])
    bias = f"{prefix}/b"
    return out + p[bias] if bias in p else out


def norm(p: ParameterStore, prefix: str, x: Tensor) -> Tensor:
    return layer_norm(x, p[f"{prefix}/g"], p[f"{prefix}/b"])


def ffn(p: ParameterStore, prefix: str, x: Tensor) -> Tensor:
    return linear(p, f"{prefix}/fc2", gelu(linear(p, f"{prefix}/fc1", x)))


def split_heads(x: Tensor, num_heads: int) -> Tensor:
    """[B, T, d] -> [B, h, T, d/h]"""
    b, t, d = x.shape
    return transpose(reshape(x, (b, t, num_heads, d // num_heads)), (0, 2, 1, 3))


def merge_heads(x: Tensor) -> Tensor:
    """[B, h, T, dh] -> [B, T, h*dh]"""
    b, h, t, dh = x.shape
    return reshape(transpose(x, (0, 2, 1, 3)), (b, t, h * dh))


def key_mask(valid: np.ndarray, dtype) -> np.ndarray:
    """Additive attention mask [B, 1, 1, L] that removes padded keys."""
    return np.where(valid, 0.0, NEG_INF).astype(dtype)[:, None, None, :]


def attention_weights(q: Tensor, k: Tensor, mask: np.ndarray | None) -> Tensor:
    dh = q.shape[-1]
    scores = mul(matmul(q, transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
    return softmax(scores, axis=-1, additive_mask=mask)


def attend(q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray | None) -> Tensor:
    """Scaled dot-product attention over head-split ``[B, h, T, dh]`` operands."""
    return matmul(attention_weights(q, k, mask), v)
