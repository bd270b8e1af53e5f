"""Instrumented matmul FLOPs counter.

Every forward ``matmul`` reports ``2*m*k*n`` (times the broadcast batch extent)
to the innermost active :class:`FlopCounter`, attributed to the current stage
label.  Element-wise ops, softmax and norms are not counted.
"""

from __future__ import annotations

import contextlib
from collections import defaultdict
from typing import Iterator

_ACTIVE: list["FlopCounter"] = []
_STAGE: list[str] = []


class FlopCounter:
    def __init__(self) -> None:
        self.by_stage: dict[str, int] = defaultdict(int)
        self.calls = 0

    @property
    def total(self) -> int:
        return sum(self.by_stage.values())

    def add(self, flops: int) -> None:
        stage = _STAGE[-1] if _STAGE else "unlabelled"
        self.by_stage[stage] += int(flops)
        self.calls += 1

    def __enter__(self) -> "FlopCounter":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)


@contextlib.contextmanager
def stage(name: str) -> Iterator[None]:
    """Attribute matmuls issued inside the block to ``name``."""
    _STAGE.append(name)
    try:
        yield
    finally:
        _STAGE.pop()


def record_matmul(flops: int) -> None:
    for counter in _ACTIVE:
        counter.add(flops)
