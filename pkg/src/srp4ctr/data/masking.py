"""Dual item/behavior mask sampling for masked pre-training."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .types import InteractionSequence


class SequenceTooShortError(ValueError):
    pass


class RatioConflictError(ValueError):
    pass


@dataclass(frozen=True)
class MaskPlan:
    item_mask_positions: tuple[int, ...]
    behavior_mask_positions: tuple[int, ...]
    item_targets: tuple[tuple[int, ...], ...] = ()
    behavior_targets: tuple[tuple[int, ...], ...] = ()

    @property
    def is_empty(self) -> bool:
        return not self.item_mask_positions and not self.behavior_mask_positions

    def as_arrays(self, length: int) -> tuple[np.ndarray, np.ndarray]:
        item = np.zeros(length, dtype=bool)
        beh = np.zeros(length, dtype=bool)
        item[list(self.item_mask_positions)] = True
        beh[list(self.behavior_mask_positions)] = True
        return item, beh


def _check_ratios(item_ratio: float, behavior_ratio: float) -> None:
    for name, r in (("item_ratio", item_ratio), ("behavior_ratio", behavior_ratio)):
        if not 0.0 < r < 1.0:
            raise RatioConflictError(
                f"{name}={r} leaves no room for both mask types; ratios must lie in (0, 1)"
            )


def draw_masks(
    true_length: int, item_ratio: float, behavior_ratio: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Boolean item/behavior masks over the first ``true_length`` positions.

    Each position is item-masked with probability ``item_ratio``; otherwise it
    is behavior-masked with probability ``behavior_ratio``.  An empty set is
    filled by one uniformly chosen position, taken from the other set only when
    no unmasked position is left.
    """
    if true_length < 2:
        raise SequenceTooShortError(f"need at least 2 events to place both mask types, got {true_length}")
    _check_ratios(item_ratio, behavior_ratio)
    u = rng.random((2, true_length))
    item = u[0] < item_ratio
    beh = ~item & (u[1] < behavior_ratio)
    if not item.any():
        free = np.flatnonzero(~beh)
        pos = rng.choice(free) if free.size else rng.choice(np.flatnonzero(beh))
        item[pos], beh[pos] = True, False
    if not beh.any():
        free = np.flatnonzero(~item)
        pos = rng.choice(free) if free.size else rng.choice(np.flatnonzero(item))
        beh[pos], item[pos] = True, False
    return item, beh


def sample_mask_plan(
    seq: InteractionSequence,
    item_ratio: float = 0.2,
    behavior_ratio: float = 0.2,
    rng_seed: int | np.random.Generator | None = 0,
) -> MaskPlan:
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    item, beh = draw_masks(seq.true_length, item_ratio, behavior_ratio, rng)
    ipos = tuple(int(i) for i in np.flatnonzero(item))
    bpos = tuple(int(i) for i in np.flatnonzero(beh))
    return MaskPlan(
        ipos,
        bpos,
        tuple(seq.events[i].item_features for i in ipos),
        tuple(seq.events[i].behavior_features for i in bpos),
    )


def draw_batch_masks(
    lengths: np.ndarray, max_len: int, item_ratio: float, behavior_ratio: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Stack :func:`draw_masks` over a batch into ``[B, max_len]`` boolean arrays."""
    item = np.zeros((len(lengths), max_len), dtype=bool)
    beh = np.zeros_like(item)
    for b, t in enumerate(lengths):
        item[b, :t], beh[b, :t] = draw_masks(int(t), item_ratio, behavior_ratio, rng)
    return item, beh
