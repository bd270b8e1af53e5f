"""scikit-learn style wrappers around the training loops.

``FGBertPretrainer`` fits on interaction sequences and transforms them into
pooled user vectors; ``SRP4CTRClassifier`` fits on CTR examples and exposes
``predict_proba``/``predict``, with ``score`` returning AUC.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .data.types import Vocab, pack_examples, pack_sequences, validate_example
from .model.config import EncoderConfig, FinetuneConfig
from .numerics import no_grad
from .runtime.metrics import auc
from .runtime.train import TrainRunSpec, predict_batches, run_finetune, run_pretrain
from .validation import check_binary_labels, check_examples, check_sequences, infer_vocab


def _encoder_config(est, vocab: Vocab) -> EncoderConfig:
    return EncoderConfig(
        vocab,
        num_layers=est.num_layers,
        d_model=est.d_model,
        num_heads=est.num_heads,
        ffn_multiplier=est.ffn_multiplier,
        max_len=est.max_len,
    )


class FGBertPretrainer(TransformerMixin, BaseEstimator):
    def __init__(
        self,
        num_layers=2,
        d_model=64,
        num_heads=2,
        ffn_multiplier=4,
        max_len=50,
        steps=2000,
        batch_size=64,
        lr=1e-3,
        lr_end=1e-5,
        item_mask_ratio=0.2,
        behavior_mask_ratio=0.2,
        behavior_loss_weight=1.0,
        val_fraction=0.1,
        vocab=None,
        random_state=0,
    ):
        self.num_layers = num_layers
        self.d_model = d_model
        self.num_heads = num_heads
        self.ffn_multiplier = ffn_multiplier
        self.max_len = max_len
        self.steps = steps
        self.batch_size = batch_size
        self.lr = lr
        self.lr_end = lr_end
        self.item_mask_ratio = item_mask_ratio
        self.behavior_mask_ratio = behavior_mask_ratio
        self.behavior_loss_weight = behavior_loss_weight
        self.val_fraction = val_fraction
        self.vocab = vocab
        self.random_state = random_state

    def fit(self, X, y=None):
        seqs = check_sequences(X, self.vocab)
        self.vocab_ = self.vocab or infer_vocab(seqs)
        spec = TrainRunSpec(
            steps=self.steps,
            batch_size=self.batch_size,
            lr=self.lr,
            lr_end=self.lr_end,
            eval_every=max(1, self.steps // 10),
            seed=self.random_state,
            item_mask_ratio=self.item_mask_ratio,
            behavior_mask_ratio=self.behavior_mask_ratio,
            behavior_loss_weight=self.behavior_loss_weight,
            val_fraction=self.val_fraction,
        )
        result = run_pretrain(spec, seqs, _encoder_config(self, self.vocab_))
        self.model_ = result.model
        self.curve_ = result.curve
        self.initial_item_loss_ = result.initial_item_loss
        self.final_item_loss_ = result.final_item_loss
        return self

    def encoder_state(self) -> dict[str, np.ndarray]:
        check_is_fitted(self, "model_")
        return self.model_.params.state_dict()

    def transform(self, X):
        """Mean of the final hidden states over real positions, ``[n, d_model]``."""
        check_is_fitted(self, "model_")
        seqs = check_sequences(X, self.vocab_)
        out = []
        for i in range(0, len(seqs), 256):
            batch = pack_sequences(seqs[i : i + 256], self.max_len)
            with no_grad():
                hidden = self.model_.forward(batch).hidden.data
            valid = batch.valid[..., None]
            out.append((hidden * valid).sum(1) / batch.lengths[:, None])
        return np.concatenate(out)


class SRP4CTRClassifier(ClassifierMixin, BaseEstimator):
    """CTR model fine-tuned from a fitted :class:`FGBertPretrainer` (or from scratch
    when ``pretrained`` is None).  Encoder shape parameters are taken from the
    pre-trainer when one is given."""

    def __init__(
        self,
        pretrained=None,
        use_uni_attn=True,
        use_qformer=True,
        tie_uni_attn=False,
        freeze_encoder=False,
        baseline_mp=False,
        n_queries=4,
        head_hidden=64,
        use_context=True,
        num_layers=2,
        d_model=64,
        num_heads=2,
        ffn_multiplier=4,
        max_len=50,
        steps=2000,
        batch_size=64,
        lr=1e-3,
        lr_end=1e-5,
        eval_every=200,
        val_fraction=0.1,
        random_state=0,
    ):
        self.pretrained = pretrained
        self.use_uni_attn = use_uni_attn
        self.use_qformer = use_qformer
        self.tie_uni_attn = tie_uni_attn
        self.freeze_encoder = freeze_encoder
        self.baseline_mp = baseline_mp
        self.n_queries = n_queries
        self.head_hidden = head_hidden
        self.use_context = use_context
        self.num_layers = num_layers
        self.d_model = d_model
        self.num_heads = num_heads
        self.ffn_multiplier = ffn_multiplier
        self.max_len = max_len
        self.steps = steps
        self.batch_size = batch_size
        self.lr = lr
        self.lr_end = lr_end
        self.eval_every = eval_every
        self.val_fraction = val_fraction
        self.random_state = random_state

    def _finetune_config(self) -> FinetuneConfig:
        return FinetuneConfig(
            use_uni_attn=self.use_uni_attn,
            use_qformer=self.use_qformer,
            tie_uni_attn=self.tie_uni_attn,
            from_scratch=self.pretrained is None,
            freeze_encoder=self.freeze_encoder,
            baseline_mp=self.baseline_mp,
            n_queries=self.n_queries,
            head_hidden=self.head_hidden,
            use_context=self.use_context,
        )

    def fit(self, X, y=None):
        examples = check_examples(X, y)
        check_binary_labels(examples)
        ft = self._finetune_config()
        inferred = infer_vocab(examples)
        if self.pretrained is not None:
            check_is_fitted(self.pretrained, "model_")
            enc = replace(self.pretrained.model_.cfg, vocab=replace(self.pretrained.vocab_, context_sizes=inferred.context_sizes))
            state = self.pretrained.encoder_state()
        else:
            enc = _encoder_config(self, inferred)
            state = None
        for ex in examples:
            validate_example(ex, enc.vocab)
        spec = TrainRunSpec(
            phase="finetune",
            steps=self.steps,
            batch_size=self.batch_size,
            lr=self.lr,
            lr_end=self.lr_end,
            eval_every=min(self.eval_every, self.steps),
            seed=self.random_state,
            val_fraction=self.val_fraction,
            finetune=ft,
        )
        result = run_finetune(spec, state, examples, enc)
        self.model_ = result.model
        self.best_auc_ = result.best_auc
        self.best_step_ = result.best_step
        self.curve_ = result.curve
        self.classes_ = np.array([0, 1])
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        examples = check_examples(X, vocab=self.model_.cfg.encoder.vocab)
        p = predict_batches(self.model_, pack_examples(examples, self.model_.cfg.encoder.max_len))
        return np.stack([1.0 - p, p], axis=1)

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] > 0.5).astype(np.int64)

    def score(self, X, y=None, sample_weight=None):
        """AUC rather than accuracy: click data is ranked, not thresholded."""
        if sample_weight is not None:
            raise ValueError("sample weights are not supported")
        examples = check_examples(X, y)
        return auc(self.predict_proba(examples)[:, 1], [ex.label for ex in examples])
