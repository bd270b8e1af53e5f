"""Input checks shared by the estimator API and the CLI."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .data.types import CtrExample, InteractionSequence, ValidationError, Vocab, validate_example, validate_sequence


def infer_vocab(records: Sequence) -> Vocab:
    """Smallest vocabulary (``max id + 1`` per feature) that covers ``records``."""
    seqs = [r.sequence if isinstance(r, CtrExample) else r for r in records]
    events = [e for s in seqs for e in s.events]
    if not events:
        raise ValidationError("cannot infer a vocabulary from empty input")
    item = np.max([e.item_features for e in events], axis=0)
    beh = np.max([e.behavior_features for e in events], axis=0)
    ctx: tuple[int, ...] = ()
    examples = [r for r in records if isinstance(r, CtrExample)]
    if examples:
        item = np.maximum(item, np.max([ex.target_item for ex in examples], axis=0))
        if examples[0].context_features:
            ctx = tuple(int(v) + 1 for v in np.max([ex.context_features for ex in examples], axis=0))
    return Vocab(tuple(int(v) + 1 for v in item), tuple(int(v) + 1 for v in beh), ctx)


def check_sequences(X, vocab: Vocab | None = None, max_len: int | None = None) -> list[InteractionSequence]:
    if isinstance(X, InteractionSequence):
        raise ValidationError("expected a collection of sequences, got a single sequence")
    seqs = list(X)
    if not seqs:
        raise ValidationError("no sequences given")
    for i, s in enumerate(seqs):
        if not isinstance(s, InteractionSequence):
            raise ValidationError(f"element {i} is {type(s).__name__}, not InteractionSequence")
        if vocab is not None:
            validate_sequence(s, vocab)
    return seqs


def check_examples(X, y=None, vocab: Vocab | None = None) -> list[CtrExample]:
    """Validate examples; ``y``, when given, replaces their labels."""
    if isinstance(X, CtrExample):
        raise ValidationError("expected a collection of examples, got a single example")
    examples = list(X)
    if not examples:
        raise ValidationError("no examples given")
    for i, ex in enumerate(examples):
        if not isinstance(ex, CtrExample):
            raise ValidationError(f"element {i} is {type(ex).__name__}, not CtrExample")
        if vocab is not None:
            validate_example(ex, vocab)
    if y is not None:
        labels = np.asarray(y).reshape(-1)
        if len(labels) != len(examples):
            raise ValidationError(f"{len(labels)} labels for {len(examples)} examples")
        if not np.isin(labels, (0, 1)).all():
            raise ValidationError("labels must be 0 or 1")
        examples = [CtrExample(ex.sequence, ex.target_item, ex.context_features, int(l)) for ex, l in zip(examples, labels)]
    return examples


def check_binary_labels(examples: Sequence[CtrExample]) -> None:
    labels = {ex.label for ex in examples}
    if labels != {0, 1}:
        raise ValidationError(f"training needs both classes, got {sorted(labels)}")
