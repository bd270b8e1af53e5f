"""Pre-training and fine-tuning loops.

Batches for step ``t`` are drawn from ``default_rng([seed, t])`` so a run
resumed from a checkpoint sees exactly the batches an uninterrupted run would.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..data.masking import draw_batch_masks
from ..data.types import CtrBatch, CtrExample, InteractionSequence, SequenceBatch, pack_examples, pack_sequences
from ..model.config import EncoderConfig, FinetuneConfig, ModelConfig
from ..model.encoder import FGBert
from ..model.finetune import SRP4CTR
from ..numerics import (
    NonFiniteError,
    OptimizerState,
    ParameterStore,
    adam_step,
    backward,
    bce_with_logits,
    no_grad,
    read_checkpoint,
    write_checkpoint,
)
from .metrics import auc

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainRunSpec:
    phase: str = "pretrain"
    steps: int = 2000
    batch_size: int = 64
    lr: float = 1e-3
    lr_end: float = 1e-5
    decay_power: float = 1.0
    eval_every: int = 200
    seed: int = 0
    item_mask_ratio: float = 0.2
    behavior_mask_ratio: float = 0.2
    behavior_loss_weight: float = 1.0
    val_fraction: float = 0.1
    split_seed: int = 0
    out_dir: str | None = None
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)

    def __post_init__(self):
        if self.phase not in ("pretrain", "finetune"):
            raise ValueError(f"unknown phase {self.phase!r}")
        if self.steps <= 0:
            raise ValueError("steps must be positive")
        if self.batch_size <= 0 or self.eval_every <= 0:
            raise ValueError("batch_size and eval_every must be positive")
        if not 0 <= self.val_fraction < 1:
            raise ValueError("val_fraction must lie in [0, 1)")

    def optimizer(self) -> OptimizerState:
        return OptimizerState(lr_initial=self.lr, lr_end=self.lr_end, total_steps=self.steps, decay_power=self.decay_power)

    def eval_steps(self) -> list[int]:
        # the last step is always evaluated, so a cadence that does not divide truncates cleanly
        steps = list(range(self.eval_every, self.steps + 1, self.eval_every))
        if not steps or steps[-1] != self.steps:
            steps.append(self.steps)
        return steps


def split_users(user_ids: Sequence[int], val_fraction: float, seed: int = 0) -> set[int]:
    """Deterministic validation-user subset."""
    users = np.array(sorted(set(int(u) for u in user_ids)))
    n_val = int(round(val_fraction * len(users)))
    return set(np.random.default_rng(seed).permutation(users)[:n_val].tolist())


class RunDir:
    """``runs/<name>/{config, checkpoints/, metrics.tsv}``"""

    def __init__(self, root):
        self.root = Path(root)
        self.checkpoints = self.root / "checkpoints"
        self.checkpoints.mkdir(parents=True, exist_ok=True)
        self.metrics = self.root / "metrics.tsv"
        self.metrics.write_text("")

    def write_config(self, payload: dict) -> None:
        (self.root / "config").write_text(json.dumps(payload, indent=2, sort_keys=True, default=str) + "\n")

    def log_metric(self, step: int, name: str, value: float) -> None:
        with self.metrics.open("a") as fh:
            fh.write(f"{step}\t{name}\t{value:.6f}\n")


def save_training_state(params: ParameterStore, opt: OptimizerState | None, path) -> None:
    arrays = params.state_dict()
    if opt is not None:
        arrays.update(opt.to_arrays())
    write_checkpoint(arrays, path)


def load_training_state(params: ParameterStore, opt: OptimizerState | None, path) -> None:
    arrays = read_checkpoint(path)
    params.load_state_dict({k: v for k, v in arrays.items() if not k.startswith("__adam__/")})
    if opt is not None and "__adam__/step" in arrays:
        opt.load_arrays(arrays)


def _guard(loss_value: float, step: int, what: str) -> None:
    if not np.isfinite(loss_value):
        raise TrainingDiverged(f"non-finite {what} at step {step}: {loss_value}")


# ---------------------------------------------------------------------------
# pre-training


@dataclass
class PretrainResult:
    model: FGBert
    curve: list[tuple[int, str, float]]
    checkpoint: Path | None
    initial_item_loss: float
    final_item_loss: float


def _pretrain_eval(model: FGBert, batch: SequenceBatch, spec: TrainRunSpec) -> dict[str, float]:
    rng = np.random.default_rng([spec.seed, 2**31 - 1])
    item, beh = draw_batch_masks(batch.lengths, batch.items.shape[1], spec.item_mask_ratio, spec.behavior_mask_ratio, rng)
    with no_grad():
        out = model.forward(batch, item, beh)
        losses = model.pretrain_loss(out.hidden, batch, item, beh, spec.behavior_loss_weight)
        ib, il = np.nonzero(item)
        logits = model.item_logits(out.hidden[ib, il]).data
    metrics = losses.as_floats()
    metrics["item_top1"] = float((logits.argmax(-1) == batch.items[ib, il, 0]).mean())
    return metrics


def run_pretrain(
    spec: TrainRunSpec,
    corpus: Sequence[InteractionSequence],
    encoder_cfg: EncoderConfig,
    *,
    resume_from=None,
    stop_after: int | None = None,
) -> PretrainResult:
    """Masked multi-attribute pre-training of an FG-BERT encoder.

    ``stop_after`` ends the run early (used to test resumption) without
    changing the learning-rate schedule.
    """
    if not corpus:
        raise ValueError("pre-training corpus is empty")
    if spec.phase != "pretrain":
        raise ValueError("spec is not a pre-training spec")
    val_users = split_users([s.user_id for s in corpus], spec.val_fraction, spec.split_seed)
    train = [s for s in corpus if s.user_id not in val_users and s.true_length >= 2]
    val = [s for s in corpus if s.user_id in val_users and s.true_length >= 2][:512] or train[:512]
    if not train:
        raise ValueError("no training sequences with at least two events")
    L = encoder_cfg.max_len
    data = pack_sequences(train, L)
    val_batch = pack_sequences(val, L)

    model = FGBert(encoder_cfg, seed=spec.seed)
    opt = spec.optimizer()
    if resume_from is not None:
        load_training_state(model.params, opt, resume_from)
    run = RunDir(spec.out_dir) if spec.out_dir else None
    if run:
        run.write_config({"spec": asdict(spec), "encoder": asdict(encoder_cfg)})

    curve: list[tuple[int, str, float]] = []

    def record(step: int, metrics: dict[str, float]) -> None:
        for name, value in metrics.items():
            curve.append((step, name, value))
            if run:
                run.log_metric(step, name, value)

    initial = _pretrain_eval(model, val_batch, spec)
    record(opt.step, initial)
    eval_at = set(spec.eval_steps())
    last = spec.steps if stop_after is None else min(spec.steps, stop_after)
    n = len(train)
    while opt.step < last:
        t = opt.step
        rng = np.random.default_rng([spec.seed, t])
        idx = rng.choice(n, size=min(spec.batch_size, n), replace=False)
        batch = data.take(idx)
        item, beh = draw_batch_masks(batch.lengths, L, spec.item_mask_ratio, spec.behavior_mask_ratio, rng)
        try:
            out = model.forward(batch, item, beh)
            losses = model.pretrain_loss(out.hidden, batch, item, beh, spec.behavior_loss_weight)
            _guard(losses.total.item(), t, "pre-training loss")
            backward(losses.total)
        except NonFiniteError as exc:
            raise TrainingDiverged(f"step {t}: {exc}; last losses {curve[-3:]}") from exc
        adam_step(opt, model.params)
        if opt.step in eval_at:
            metrics = _pretrain_eval(model, val_batch, spec)
            record(opt.step, metrics)
            log.info("pretrain step %d: %s", opt.step, metrics)

    ckpt = None
    if run:
        ckpt = run.checkpoints / "final.srpc"
        save_training_state(model.params, opt, ckpt)
    final = _pretrain_eval(model, val_batch, spec)
    return PretrainResult(model, curve, ckpt, initial["item_loss"], final["item_loss"])


# ---------------------------------------------------------------------------
# fine-tuning


@dataclass
class FinetuneResult:
    model: SRP4CTR
    best_auc: float
    best_step: int
    curve: list[tuple[int, str, float]]
    checkpoint: Path | None
    val_batch: CtrBatch
    train_batch: CtrBatch


def predict_batches(model: SRP4CTR, batch: CtrBatch, chunk: int = 512) -> np.ndarray:
    out = [model.predict_proba(batch.take(np.arange(i, min(i + chunk, len(batch))))) for i in range(0, len(batch), chunk)]
    return np.concatenate(out)


def split_examples(examples: Sequence[CtrExample], spec: TrainRunSpec):
    val_users = split_users([e.sequence.user_id for e in examples], spec.val_fraction, spec.split_seed)
    train = [e for e in examples if e.sequence.user_id not in val_users]
    val = [e for e in examples if e.sequence.user_id in val_users]
    return train, val


def run_finetune(
    spec: TrainRunSpec,
    pretrained,
    corpus: Sequence[CtrExample],
    encoder_cfg: EncoderConfig,
) -> FinetuneResult:
    """Train the CTR model, tracking the best validation AUC.

    ``pretrained`` is a checkpoint path, a name -> array mapping, or ``None``;
    it is ignored when ``spec.finetune.from_scratch`` is set.  The returned
    model carries the best checkpoint's parameters.
    """
    if spec.phase != "finetune":
        raise ValueError("spec is not a fine-tuning spec")
    if not corpus:
        raise ValueError("fine-tuning corpus is empty")
    ft = spec.finetune
    cfg = ModelConfig(encoder_cfg, ft)
    model = SRP4CTR(cfg, seed=spec.seed)
    if not ft.from_scratch:
        if pretrained is None:
            raise ValueError("a pre-trained checkpoint is required unless from_scratch is set")
        state = read_checkpoint(pretrained) if isinstance(pretrained, (str, Path)) else pretrained
        model.load_encoder(state)

    train, val = split_examples(corpus, spec)
    if not val:
        train, val = train, train
    L = encoder_cfg.max_len
    train_batch = pack_examples(train, L)
    val_batch = pack_examples(val, L)

    opt = spec.optimizer()
    run = RunDir(spec.out_dir) if spec.out_dir else None
    if run:
        run.write_config({"spec": asdict(spec), "encoder": asdict(encoder_cfg)})

    curve: list[tuple[int, str, float]] = []
    best_auc, best_step, best_state = -1.0, 0, model.params.state_dict()
    eval_at = set(spec.eval_steps())
    n = len(train_batch)
    running = []
    for t in range(spec.steps):
        rng = np.random.default_rng([spec.seed, t])
        idx = rng.choice(n, size=min(spec.batch_size, n), replace=False)
        batch = train_batch.take(idx)
        try:
            loss = bce_with_logits(model.logits(batch), batch.labels)
            _guard(loss.item(), t, "CTR loss")
            backward(loss)
        except NonFiniteError as exc:
            raise TrainingDiverged(f"step {t}: {exc}") from exc
        running.append(loss.item())
        adam_step(opt, model.params)
        if opt.step in eval_at:
            score = auc(predict_batches(model, val_batch), val_batch.labels)
            entries = [(opt.step, "train_loss", float(np.mean(running))), (opt.step, "val_auc", score)]
            running = []
            for entry in entries:
                curve.append(entry)
                if run:
                    run.log_metric(*entry)
            log.info("finetune step %d: val_auc %.4f", opt.step, score)
            if score > best_auc:
                best_auc, best_step, best_state = score, opt.step, model.params.state_dict()
                if run:
                    save_training_state(model.params, None, run.checkpoints / "best.srpc")

    model.params.load_state_dict(best_state)
    ckpt = run.checkpoints / "best.srpc" if run else None
    return FinetuneResult(model, best_auc, best_step, curve, ckpt, val_batch, train_batch)
