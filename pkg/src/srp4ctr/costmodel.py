"""Closed-form FLOPs accounting and the folded / naive serving simulators.

Convention: a matmul of ``[m, k] @ [k, n]`` costs ``2*m*k*n`` FLOPs; element-wise
ops, softmax, norms and embedding lookups cost nothing.  The simulators run the
real model under a :class:`~srp4ctr.numerics.FlopCounter`, so analytic and
measured numbers are directly comparable.

* efficiency-FLOPs: every stage once (inference batch size one).
* inference-FLOPs: foldable stages once plus ``B`` times the per-candidate
  stages, for a request scoring ``B`` candidates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .data.types import InteractionSequence, pack_sequences
from .model.config import ModelConfig
from .model.finetune import FOLDABLE, HEAD, QFORMER, SEQUENCE_ENCODER, STAGES, UNI_CROSS_ATTN, SRP4CTR, head_input_width
from .numerics import FlopCounter, no_grad, sigmoid

DEFAULT_BATCH = 100


@dataclass(frozen=True)
class StageCost:
    name: str
    flops: int
    foldable: bool


@dataclass(frozen=True)
class CostReport:
    stages: tuple[StageCost, ...]
    batch: int = DEFAULT_BATCH

    def __post_init__(self):
        if self.batch < 1:
            raise ValueError("batch must be at least 1")

    @property
    def efficiency_flops(self) -> int:
        return sum(s.flops for s in self.stages)

    @property
    def inference_flops(self) -> int:
        folded = sum(s.flops for s in self.stages if s.foldable)
        per_candidate = sum(s.flops for s in self.stages if not s.foldable)
        return folded + self.batch * per_candidate

    @property
    def ratio(self) -> float:
        return metric_ratio(self.efficiency_flops, self.inference_flops)

    def stage(self, name: str) -> StageCost:
        for s in self.stages:
            if s.name == name:
                return s
        raise KeyError(name)

    def restrict(self, names: Iterable[str]) -> "CostReport":
        keep = set(names)
        return CostReport(tuple(s for s in self.stages if s.name in keep), self.batch)

    def with_batch(self, batch: int) -> "CostReport":
        return CostReport(self.stages, batch)

    def to_tsv(self) -> str:
        return "".join(f"{s.name}\t{s.flops}\t{str(s.foldable).lower()}\n" for s in self.stages)

    def to_table(self) -> str:
        width = max(len(s.name) for s in self.stages) if self.stages else 5
        lines = [f"{'stage':<{width}}  {'FLOPs':>14}  {'MFLOPs':>10}  foldable"]
        for s in self.stages:
            lines.append(f"{s.name:<{width}}  {s.flops:>14,d}  {s.flops / 1e6:>10.2f}  {'yes' if s.foldable else 'no'}")
        lines += [
            "",
            f"efficiency-FLOPs (batch 1):             {self.efficiency_flops / 1e6:.2f} M",
            f"inference-FLOPs (folded, batch {self.batch}):  {self.inference_flops / 1e6:.2f} M",
            f"inference-FLOPs / efficiency-FLOPs:     {self.ratio:.2f}",
        ]
        return "\n".join(lines) + "\n"


def metric_ratio(efficiency: float, inference: float) -> float:
    """inference-FLOPs divided by efficiency-FLOPs."""
    if efficiency <= 0:
        raise ValueError("efficiency-FLOPs must be positive")
    return inference / efficiency


def _attention_block(q_rows: int, kv_rows: int, d: int, ffn: int, project_kv: bool) -> int:
    flops = 2 * 2 * q_rows * d * d  # query and output projections
    if project_kv:
        flops += 2 * 2 * kv_rows * d * d
    flops += 2 * 2 * q_rows * kv_rows * d  # scores and weighted values, summed over heads
    flops += 2 * 2 * q_rows * d * ffn
    return flops


def count_flops(cfg: ModelConfig, batch: int = DEFAULT_BATCH) -> CostReport:
    enc, ft = cfg.encoder, cfg.finetune
    d, L, f = enc.d_model, enc.max_len, enc.ffn_dim
    encoder = enc.num_layers * _attention_block(L, L, d, f, project_kv=True)
    # K/V come from the encoder's cache, so only the target row is projected
    uni = enc.num_layers * _attention_block(1, L, d, f, project_kv=False) if ft.use_uni_attn and not ft.baseline_mp else 0
    qformer = 0
    if ft.use_qformer and not ft.baseline_mp:
        k = ft.n_queries
        qformer = _attention_block(k, L, d, f, project_kv=True)
        if ft.use_context and enc.vocab.num_context_features:
            qformer += 2 * d * k * d
    head = 2 * head_input_width(cfg) * ft.head_hidden + 2 * ft.head_hidden
    flops = {SEQUENCE_ENCODER: encoder, UNI_CROSS_ATTN: uni, QFORMER: qformer, HEAD: head}
    return CostReport(tuple(StageCost(s, flops[s], FOLDABLE[s]) for s in STAGES), batch)


def report_from_counter(counter: FlopCounter, batch: int, per_candidate_divisor: int = 1) -> CostReport:
    """Turn a counter from a batch-one forward pass into a report."""
    return CostReport(
        tuple(StageCost(s, int(counter.by_stage.get(s, 0)) // per_candidate_divisor, FOLDABLE[s]) for s in STAGES),
        batch,
    )


# ---------------------------------------------------------------------------
# serving simulation


@dataclass
class ServingRequest:
    sequence: InteractionSequence
    context: tuple[int, ...]
    candidates: Sequence[tuple[int, ...]]

    def __post_init__(self):
        if len(self.candidates) < 1:
            raise ValueError("a request needs at least one candidate")


@dataclass
class ServingResult:
    scores: np.ndarray
    flops_by_stage: dict[str, int] = field(default_factory=dict)

    @property
    def total_flops(self) -> int:
        return sum(self.flops_by_stage.values())


def _request_arrays(request: ServingRequest, model: SRP4CTR):
    seqs = pack_sequences([request.sequence], model.cfg.encoder.max_len)
    context = np.asarray(request.context, dtype=np.int64).reshape(1, -1)
    targets = np.asarray(request.candidates, dtype=np.int64)
    return seqs, context, targets


def serve_folded(request: ServingRequest, model: SRP4CTR) -> ServingResult:
    """Encode the user once, then score all candidates against the cached state."""
    seqs, context, targets = _request_arrays(request, model)
    with no_grad(), FlopCounter() as counter:
        user = model.encode_user(seqs, context)
        scores = sigmoid(model.score(user, targets)).data
    return ServingResult(scores, dict(counter.by_stage))


def serve_naive(request: ServingRequest, model: SRP4CTR) -> ServingResult:
    """Run the whole stack once per candidate, sharing nothing between them."""
    seqs, context, targets = _request_arrays(request, model)
    b = len(targets)
    rows = np.zeros(b, dtype=np.int64)
    with no_grad(), FlopCounter() as counter:
        # one independent copy of the user per candidate
        user = model.encode_user(seqs.take(rows), context[rows])
        scores = sigmoid(model.score(user, targets)).data
    return ServingResult(scores, dict(counter.by_stage))


def amortization_curve(request_factory, model: SRP4CTR, batches: Sequence[int] = (1, 2, 5, 10, 50, 100)) -> list[tuple[int, int, int]]:
    """``(B, folded_flops, naive_flops)`` measured for each candidate count."""
    out = []
    for b in batches:
        req = request_factory(b)
        out.append((b, serve_folded(req, model).total_flops, serve_naive(req, model).total_flops))
    return out
