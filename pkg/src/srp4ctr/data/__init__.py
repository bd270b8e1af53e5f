from .io import ParseError, format_record, load_dataset, parse_line, save_dataset
from .masking import (
    MaskPlan,
    RatioConflictError,
    SequenceTooShortError,
    draw_batch_masks,
    draw_masks,
    sample_mask_plan,
)
from .synthetic import (
    ConfigError,
    SyntheticConfig,
    corpus_digest,
    generate_synthetic,
    item_frequencies,
    tail_items,
)
from .types import (
    PAD_ID,
    CtrBatch,
    CtrExample,
    InteractionEvent,
    InteractionSequence,
    SequenceBatch,
    ValidationError,
    Vocab,
    pack_examples,
    pack_sequences,
    validate_example,
    validate_sequence,
)

__all__ = [
    "PAD_ID",
    "ConfigError",
    "CtrBatch",
    "CtrExample",
    "InteractionEvent",
    "InteractionSequence",
    "MaskPlan",
    "ParseError",
    "RatioConflictError",
    "SequenceBatch",
    "SequenceTooShortError",
    "SyntheticConfig",
    "ValidationError",
    "Vocab",
    "corpus_digest",
    "draw_batch_masks",
    "draw_masks",
    "format_record",
    "generate_synthetic",
    "item_frequencies",
    "load_dataset",
    "pack_examples",
    "pack_sequences",
    "parse_line",
    "sample_mask_plan",
    "save_dataset",
    "tail_items",
    "validate_example",
    "validate_sequence",
]
