from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

PAD_ID = 0


class ValidationError(ValueError):
    """A record violates its vocabulary or shape contract."""


@dataclass(frozen=True)
class Vocab:
    """Vocabulary size (including the reserved padding id 0) of every categorical field."""

    item_sizes: tuple[int, ...]
    behavior_sizes: tuple[int, ...]
    context_sizes: tuple[int, ...] = ()

    @property
    def num_item_features(self) -> int:
        return len(self.item_sizes)

    @property
    def num_behavior_features(self) -> int:
        return len(self.behavior_sizes)

    @property
    def num_context_features(self) -> int:
        return len(self.context_sizes)


@dataclass(frozen=True)
class InteractionEvent:
    item_features: tuple[int, ...]
    behavior_features: tuple[int, ...]


@dataclass(frozen=True)
class InteractionSequence:
    user_id: int
    events: tuple[InteractionEvent, ...]

    @property
    def true_length(self) -> int:
        return len(self.events)

    def item_array(self) -> np.ndarray:
        return np.array([e.item_features for e in self.events], dtype=np.int64)

    def behavior_array(self) -> np.ndarray:
        return np.array([e.behavior_features for e in self.events], dtype=np.int64)


@dataclass(frozen=True)
class CtrExample:
    sequence: InteractionSequence
    target_item: tuple[int, ...]
    context_features: tuple[int, ...]
    label: int

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValidationError(f"label must be 0 or 1, got {self.label!r}")


def _check_ids(ids: Sequence[int], sizes: Sequence[int], what: str) -> None:
    if len(ids) != len(sizes):
        raise ValidationError(f"{what}: expected {len(sizes)} ids, got {len(ids)}")
    for i, (v, n) in enumerate(zip(ids, sizes)):
        if not 0 < v < n:
            raise ValidationError(f"{what}[{i}] = {v} outside vocabulary [1, {n})")


def validate_sequence(seq: InteractionSequence, vocab: Vocab, max_len: int | None = None) -> None:
    if seq.true_length < 1:
        raise ValidationError(f"user {seq.user_id}: empty sequence")
    if max_len is not None and seq.true_length > max_len:
        raise ValidationError(f"user {seq.user_id}: length {seq.true_length} exceeds L={max_len}")
    for ev in seq.events:
        _check_ids(ev.item_features, vocab.item_sizes, "item_features")
        _check_ids(ev.behavior_features, vocab.behavior_sizes, "behavior_features")


def validate_example(ex: CtrExample, vocab: Vocab, max_len: int | None = None) -> None:
    validate_sequence(ex.sequence, vocab, max_len)
    _check_ids(ex.target_item, vocab.item_sizes, "target_item")
    _check_ids(ex.context_features, vocab.context_sizes, "context_features")


@dataclass
class SequenceBatch:
    """Right-padded id arrays for a batch of sequences."""

    items: np.ndarray  # [B, L, M]
    behaviors: np.ndarray  # [B, L, N]
    lengths: np.ndarray  # [B]

    @property
    def valid(self) -> np.ndarray:
        return np.arange(self.items.shape[1])[None, :] < self.lengths[:, None]

    def take(self, idx) -> "SequenceBatch":
        return SequenceBatch(self.items[idx], self.behaviors[idx], self.lengths[idx])


@dataclass
class CtrBatch:
    sequences: SequenceBatch
    targets: np.ndarray  # [B, M]
    context: np.ndarray  # [B, C]
    labels: np.ndarray  # [B]

    def take(self, idx) -> "CtrBatch":
        return CtrBatch(self.sequences.take(idx), self.targets[idx], self.context[idx], self.labels[idx])

    def __len__(self) -> int:
        return len(self.labels)


def pack_sequences(seqs: Sequence[InteractionSequence], max_len: int) -> SequenceBatch:
    """Pad to ``max_len``; longer sequences keep their most recent ``max_len`` events."""
    if not seqs:
        raise ValueError("cannot pack an empty list of sequences")
    m = len(seqs[0].events[0].item_features)
    n = len(seqs[0].events[0].behavior_features)
    items = np.zeros((len(seqs), max_len, m), dtype=np.int64)
    behaviors = np.zeros((len(seqs), max_len, n), dtype=np.int64)
    lengths = np.zeros(len(seqs), dtype=np.int64)
    for b, seq in enumerate(seqs):
        events = seq.events[-max_len:]
        t = len(events)
        items[b, :t] = [e.item_features for e in events]
        behaviors[b, :t] = [e.behavior_features for e in events]
        lengths[b] = t
    return SequenceBatch(items, behaviors, lengths)


def pack_examples(examples: Sequence[CtrExample], max_len: int) -> CtrBatch:
    # examples sharing one sequence object are packed once
    cache: dict[int, int] = {}
    uniq: list[InteractionSequence] = []
    rows = []
    for ex in examples:
        key = id(ex.sequence)
        if key not in cache:
            cache[key] = len(uniq)
            uniq.append(ex.sequence)
        rows.append(cache[key])
    packed = pack_sequences(uniq, max_len).take(np.array(rows, dtype=np.int64))
    return CtrBatch(
        packed,
        np.array([ex.target_item for ex in examples], dtype=np.int64),
        np.array([ex.context_features for ex in examples], dtype=np.int64).reshape(len(examples), -1),
        np.array([ex.label for ex in examples], dtype=np.int64),
    )
