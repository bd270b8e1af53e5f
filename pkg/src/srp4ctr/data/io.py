"""Line-oriented dataset files.

Pre-training line::

    user_id<TAB>f1,...,fM|b1,...,bN;f1,...,fM|b1,...,bN;...

Fine-tuning lines append ``<TAB>t1,...,tM<TAB>c1,...,cC<TAB>label``.
"""

from __future__ import annotations

from pathlib import Path
from typing import Iterable, Union

from .types import (
    CtrExample,
    InteractionEvent,
    InteractionSequence,
    ValidationError,
    Vocab,
    validate_example,
    validate_sequence,
)

Record = Union[InteractionSequence, CtrExample]


class ParseError(ValueError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


def _ids(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",")) if text else ()


def format_sequence(seq: InteractionSequence) -> str:
    events = ";".join(
        ",".join(map(str, e.item_features)) + "|" + ",".join(map(str, e.behavior_features)) for e in seq.events
    )
    return f"{seq.user_id}\t{events}"


def format_record(rec: Record) -> str:
    if isinstance(rec, CtrExample):
        return "\t".join(
            [
                format_sequence(rec.sequence),
                ",".join(map(str, rec.target_item)),
                ",".join(map(str, rec.context_features)),
                str(rec.label),
            ]
        )
    return format_sequence(rec)


def parse_line(line: str, lineno: int = 1) -> Record:
    fields = line.rstrip("\n").split("\t")
    if len(fields) not in (2, 5):
        raise ParseError(lineno, f"expected 2 or 5 tab-separated fields, got {len(fields)}")
    try:
        user_id = int(fields[0])
        events = []
        for chunk in fields[1].split(";"):
            item, sep, beh = chunk.partition("|")
            if not sep:
                raise ParseError(lineno, f"event {chunk!r} lacks the '|' separator")
            events.append(InteractionEvent(_ids(item), _ids(beh)))
        seq = InteractionSequence(user_id, tuple(events))
        if len(fields) == 2:
            return seq
        label = int(fields[4])
        return CtrExample(seq, _ids(fields[2]), _ids(fields[3]), label)
    except ParseError:
        raise
    except ValueError as exc:
        raise ParseError(lineno, str(exc)) from None


def save_dataset(records: Iterable[Record], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(format_record(rec))
            fh.write("\n")


def load_dataset(path, vocab: Vocab | None = None, max_len: int | None = None) -> list[Record]:
    """Parse a dataset file.

    Consecutive fine-tuning lines with an identical sequence field share one
    :class:`InteractionSequence` object.  With ``vocab`` every id is range-checked.
    """
    records: list[Record] = []
    kind = None
    last_key, last_seq = None, None
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        rec = parse_line(line, lineno)
        this_kind = type(rec)
        if kind is None:
            kind = this_kind
        elif kind is not this_kind:
            raise ParseError(lineno, "mixes pre-training and fine-tuning records")
        if isinstance(rec, CtrExample):
            key = line.split("\t", 2)[:2]
            if key == last_key:
                rec = CtrExample(last_seq, rec.target_item, rec.context_features, rec.label)
            last_key, last_seq = key, rec.sequence
        if vocab is not None:
            try:
                if isinstance(rec, CtrExample):
                    validate_example(rec, vocab, max_len)
                else:
                    validate_sequence(rec, vocab, max_len)
            except ValidationError as exc:
                raise ValidationError(f"line {lineno}: {exc}") from None
        records.append(rec)
    return records
