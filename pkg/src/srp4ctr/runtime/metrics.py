from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from ..data.synthetic import tail_items


class UndefinedMetricError(ValueError):
    pass


def auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Mann-Whitney AUC with tied scores counted as one half.

    Uses mid-ranks, so the cost is one sort.
    """
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos + n_neg != y.size:
        raise ValueError("labels must be 0 or 1")
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs at least one positive and one negative")
    order = np.argsort(s, kind="mergesort")
    sorted_s = s[order]
    starts = np.flatnonzero(np.r_[True, sorted_s[1:] != sorted_s[:-1]])
    ends = np.r_[starts[1:], s.size]
    # mid-rank (1-based) of each tie group
    mid = (starts + ends + 1) / 2.0
    ranks = np.empty(s.size)
    ranks[order] = np.repeat(mid, ends - starts)
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def longtail_report(
    scores: Sequence[float],
    labels: Sequence[int],
    item_ids: Sequence[int],
    frequency: Mapping[int, int],
    fraction: float = 0.2,
) -> dict:
    """Overall AUC, AUC restricted to the least frequent ``fraction`` of items, and their difference.

    ``tail_auc`` and ``diff`` are ``None`` when the tail subset holds a single class.
    """
    ids = np.asarray(item_ids)
    missing = set(np.unique(ids).tolist()) - set(frequency)
    if missing:
        raise ValueError(f"frequency table lacks ids {sorted(missing)[:5]}")
    tail = tail_items(dict(frequency), fraction)
    in_tail = np.isin(ids, np.fromiter(tail, dtype=ids.dtype))
    if not in_tail.any():
        raise ValueError("no scored example falls in the tail subset")
    overall = auc(scores, labels)
    s = np.asarray(scores)[in_tail]
    y = np.asarray(labels)[in_tail]
    try:
        tail_auc = auc(s, y)
    except UndefinedMetricError:
        return {"overall_auc": overall, "tail_auc": None, "diff": None, "tail_count": int(in_tail.sum())}
    return {"overall_auc": overall, "tail_auc": tail_auc, "diff": tail_auc - overall, "tail_count": int(in_tail.sum())}
