import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from srp4ctr.data import InteractionEvent, InteractionSequence, SyntheticConfig, Vocab, generate_synthetic
from srp4ctr.model.config import EncoderConfig, FinetuneConfig, ablation
from srp4ctr.model.encoder import FGBert
from srp4ctr.numerics import read_checkpoint
from srp4ctr.runtime import (
    TrainingDiverged,
    TrainRunSpec,
    UndefinedMetricError,
    auc,
    longtail_report,
    run_finetune,
    run_pretrain,
    split_users,
)

SMALL = SyntheticConfig(n_users=80, n_items=60, n_categories=6, max_len=10, min_len=4, candidates_per_user=6)


def pairwise_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for p, n in itertools.product(pos, neg):
        total += 1.0 if p > n else 0.5 if p == n else 0.0
    return total / (len(pos) * len(neg))


def small_encoder(syn=SMALL, **kw):
    base = dict(num_layers=1, d_model=16, num_heads=2, max_len=syn.max_len)
    base.update(kw)
    return EncoderConfig(syn.vocab(), **base)


@pytest.fixture(scope="module")
def small_corpus():
    return generate_synthetic(SMALL, 0)


class TestAuc:
    def test_perfect(self):
        assert auc([0.9, 0.1], [1, 0]) == 1.0

    def test_all_ties(self):
        assert auc([0.3] * 6, [1, 0, 1, 0, 0, 1]) == 0.5

    def test_single_class(self):
        with pytest.raises(UndefinedMetricError):
            auc([0.1, 0.2], [1, 1])

    def test_pairwise_oracle_with_ties(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            n = int(rng.integers(2, 80))
            scores = rng.integers(0, 6, n) / 5.0
            labels = rng.integers(0, 2, n)
            labels[0], labels[1] = 0, 1
            assert auc(scores, labels) == pairwise_auc(scores, labels)

    @given(st.lists(st.tuples(st.integers(-500, 500), st.integers(0, 1)), min_size=2, max_size=60))
    @settings(max_examples=200, deadline=None)
    def test_monotone_invariance(self, pairs):
        scores = np.array([p[0] for p in pairs]) / 100.0
        labels = np.array([p[1] for p in pairs])
        if labels.min() == labels.max():
            return
        assert auc(scores, labels) == auc(np.exp(scores) * 3 + 1, labels)


class TestLongtail:
    def test_uniform_frequencies(self):
        rng = np.random.default_rng(1)
        ids = np.repeat(np.arange(1, 11), 20)
        labels = np.tile([0, 1], 100)
        scores = rng.random(200)
        rep = longtail_report(scores, labels, ids, {i: 5 for i in range(1, 11)})
        assert rep["tail_count"] == 40
        assert rep["diff"] == rep["tail_auc"] - rep["overall_auc"]

    def test_degenerate_table(self):
        with pytest.raises(ValueError):
            longtail_report([0.1, 0.9], [0, 1], [1, 2], {1: 3, 2: 3}, fraction=0.2)

    def test_single_class_tail(self):
        rep = longtail_report([0.1, 0.9, 0.5, 0.4, 0.3], [0, 1, 1, 0, 1], [1, 2, 3, 4, 5], {1: 1, 2: 9, 3: 9, 4: 9, 5: 9})
        assert rep["tail_auc"] is None and rep["diff"] is None

    def test_missing_id(self):
        with pytest.raises(ValueError):
            longtail_report([0.1, 0.9], [0, 1], [1, 7], {1: 1, 2: 2})


class TestSpec:
    def test_rejects_zero_steps(self):
        with pytest.raises(ValueError):
            TrainRunSpec(steps=0)

    def test_eval_cadence_truncates(self):
        assert TrainRunSpec(steps=500, eval_every=200).eval_steps() == [200, 400, 500]

    def test_split_is_deterministic(self):
        assert split_users(range(100), 0.1, 3) == split_users(range(100), 0.1, 3)
        assert len(split_users(range(100), 0.1, 3)) == 10


class TestPretrain:
    def test_zero_lr_keeps_parameters(self, small_corpus):
        pre, _ = small_corpus
        spec = TrainRunSpec(steps=5, lr=0.0, lr_end=0.0, eval_every=1, batch_size=8)
        before = FGBert(small_encoder(), seed=0).params.digest()
        result = run_pretrain(spec, pre, small_encoder())
        assert result.model.params.digest() == before
        losses = [v for _, k, v in result.curve if k == "item_loss"]
        assert max(losses) == min(losses)

    def test_toy_deterministic_corpus_halves_loss(self):
        # every user walks the same 12-cycle from a random start
        rng = np.random.default_rng(0)
        n_items = 12
        corpus = []
        for u in range(200):
            start = int(rng.integers(n_items))
            corpus.append(
                InteractionSequence(
                    u, tuple(InteractionEvent(((start + t) % n_items + 1,), (1 + t % 2,)) for t in range(10))
                )
            )
        enc = EncoderConfig(Vocab((n_items + 1,), (3,)), num_layers=1, d_model=16, num_heads=2, max_len=10)
        spec = TrainRunSpec(steps=2000, batch_size=32, eval_every=500, lr=3e-3)
        result = run_pretrain(spec, corpus, enc)
        assert result.final_item_loss <= 0.5 * result.initial_item_loss

    def test_resume_matches_uninterrupted(self, small_corpus, tmp_path):
        pre, _ = small_corpus
        full = run_pretrain(TrainRunSpec(steps=6, eval_every=3, batch_size=8, out_dir=str(tmp_path / "a")), pre, small_encoder())
        half = run_pretrain(
            TrainRunSpec(steps=6, eval_every=3, batch_size=8, out_dir=str(tmp_path / "b")), pre, small_encoder(), stop_after=3
        )
        resumed = run_pretrain(
            TrainRunSpec(steps=6, eval_every=3, batch_size=8, out_dir=str(tmp_path / "c")),
            pre,
            small_encoder(),
            resume_from=half.checkpoint,
        )
        a = read_checkpoint(full.checkpoint)
        c = read_checkpoint(resumed.checkpoint)
        assert a.keys() == c.keys()
        assert all(a[k].tobytes() == c[k].tobytes() for k in a)

    def test_run_directory_layout(self, small_corpus, tmp_path):
        pre, _ = small_corpus
        run_pretrain(TrainRunSpec(steps=4, eval_every=2, batch_size=8, out_dir=str(tmp_path)), pre, small_encoder())
        assert (tmp_path / "config").exists() and (tmp_path / "checkpoints" / "final.srpc").exists()
        rows = [line.split("\t") for line in (tmp_path / "metrics.tsv").read_text().splitlines()]
        assert {r[1] for r in rows} == {"item_loss", "behavior_loss", "total", "item_top1"}
        assert sorted({int(r[0]) for r in rows}) == [0, 2, 4]

    def test_empty_corpus(self):
        with pytest.raises(ValueError):
            run_pretrain(TrainRunSpec(steps=1), [], small_encoder())

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_is_reported(self, small_corpus):
        pre, _ = small_corpus
        with pytest.raises(TrainingDiverged):
            run_pretrain(TrainRunSpec(steps=200, lr=1e9, lr_end=1e9, batch_size=8, eval_every=200), pre, small_encoder())


class TestFinetune:
    def test_scratch_ignores_checkpoint(self, small_corpus):
        _, ft = small_corpus
        spec = TrainRunSpec(phase="finetune", steps=3, eval_every=3, batch_size=8, finetune=ablation("scratch"))
        result = run_finetune(spec, "/definitely/not/a/file", ft, small_encoder())
        assert 0.0 <= result.best_auc <= 1.0

    def test_needs_checkpoint_otherwise(self, small_corpus):
        _, ft = small_corpus
        with pytest.raises(ValueError):
            run_finetune(TrainRunSpec(phase="finetune", steps=3), None, ft, small_encoder())

    def test_frozen_encoder_digest(self, small_corpus, tmp_path):
        pre, ft = small_corpus
        pt = run_pretrain(TrainRunSpec(steps=2, eval_every=2, batch_size=8, out_dir=str(tmp_path / "pt")), pre, small_encoder())
        spec = TrainRunSpec(phase="finetune", steps=100, eval_every=50, batch_size=8, finetune=ablation("mp"))
        result = run_finetune(spec, pt.checkpoint, ft, small_encoder())
        want = {k: v for k, v in read_checkpoint(pt.checkpoint).items() if k.startswith(("emb/", "enc/"))}
        assert all(result.model.params[k].data.tobytes() == v.tobytes() for k, v in want.items())

    def test_best_checkpoint_tracked(self, small_corpus, tmp_path):
        _, ft = small_corpus
        spec = TrainRunSpec(
            phase="finetune", steps=20, eval_every=5, batch_size=16, out_dir=str(tmp_path), finetune=ablation("scratch")
        )
        result = run_finetune(spec, None, ft, small_encoder())
        aucs = {s: v for s, k, v in result.curve if k == "val_auc"}
        assert result.best_auc == max(aucs.values()) and aucs[result.best_step] == result.best_auc
        assert result.checkpoint.exists()

    def test_reproducible(self, small_corpus, tmp_path):
        _, ft = small_corpus
        outs = []
        for name in ("a", "b"):
            spec = TrainRunSpec(
                phase="finetune", steps=10, eval_every=5, batch_size=8, out_dir=str(tmp_path / name), finetune=FinetuneConfig(from_scratch=True)
            )
            run_finetune(spec, None, ft, small_encoder())
            outs.append(((tmp_path / name / "checkpoints" / "best.srpc").read_bytes(), (tmp_path / name / "metrics.tsv").read_text()))
        assert outs[0] == outs[1]
