import re

import pytest

from srp4ctr import cli
from srp4ctr.config import DEFAULTS, ConfigKeyError, RunConfig, parse_config_text

SMALL = [
    "--set", "data.n_users=40",
    "--set", "data.n_items=50",
    "--set", "data.n_categories=5",
    "--set", "data.max_len=10",
    "--set", "data.min_len=4",
    "--set", "data.candidates_per_user=4",
    "--set", "model.d_model=16",
]  # fmt: skip


def run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


class TestConfig:
    def test_file_then_overrides_then_flags(self, tmp_path):
        (tmp_path / "r.cfg").write_text("# comment\nseed = 3\npretrain.lr = 0.01  # trailing\n\n")
        cfg = RunConfig.load(tmp_path / "r.cfg", ["seed=5"], {"seed": 9})
        assert cfg["seed"] == 9 and cfg["pretrain.lr"] == 0.01
        assert RunConfig.load(tmp_path / "r.cfg", ["seed=5"])["seed"] == 5

    def test_unknown_key(self):
        with pytest.raises(ConfigKeyError, match="line 1"):
            parse_config_text("bogus = 1\n")

    def test_types(self):
        assert parse_config_text("finetune.tie_uni_attn = true")["finetune.tie_uni_attn"] is True
        with pytest.raises(ConfigKeyError):
            parse_config_text("data.n_users = many")

    def test_round_trip(self):
        cfg = RunConfig.load(overrides=["data.n_users=7", "finetune.use_qformer=false"])
        assert parse_config_text(cfg.to_text()) == cfg.values


class TestCommands:
    def test_help_lists_every_key(self, capsys):
        code, out, _ = run(["flops", "--help"], capsys)
        assert code == 0
        for key, value in DEFAULTS.items():
            assert re.search(rf"^\s+{re.escape(key)}\s+\S", out, re.M), key

    def test_gen_data_is_deterministic(self, tmp_path, capsys):
        (tmp_path / "ref.cfg").write_text("\n".join(a for a in SMALL if a != "--set") + "\n")
        digests = []
        for name in ("a", "b", "a"):
            code, out, _ = run(["gen-data", "--config", str(tmp_path / "ref.cfg"), "--seed", "7", "--out", str(tmp_path / name)], capsys)
            assert code == 0
            digests.append(out)
        assert digests[0] == digests[1] == digests[2]
        assert (tmp_path / "a" / "pretrain.tsv").exists()

    def test_flops_ratio_field(self, tmp_path, capsys):
        code, out, _ = run(["flops", "--batch", "100", "--out", str(tmp_path)], capsys)
        assert code == 0
        eff = float(re.search(r"efficiency-FLOPs.*?([\d.]+) M", out).group(1))
        inf = float(re.search(r"inference-FLOPs \(folded.*?([\d.]+) M", out).group(1))
        ratio = float(re.search(r"/ efficiency-FLOPs:\s+([\d.]+)", out).group(1))
        assert round(inf / eff, 2) == ratio
        rows = (tmp_path / "flops.tsv").read_text().splitlines()
        assert len(rows) == 4

    def test_serve_sim_both(self, tmp_path, capsys):
        code, out, _ = run(["serve-sim", "--mode", "both", "--requests", "3", "--out", str(tmp_path)] + SMALL, capsys)
        assert code == 0
        dev = float(re.search(r"max_score_deviation\t(\S+)", out).group(1))
        assert dev <= 1e-5

    def test_train_and_eval(self, tmp_path, capsys):
        common = SMALL + ["--set", "pretrain.steps=4", "--set", "finetune.steps=4", "--set", "finetune.eval_every=2"]
        assert run(["gen-data", "--out", str(tmp_path / "data")] + common, capsys)[0] == 0
        code, _, _ = run(["pretrain", "--data", str(tmp_path / "data"), "--out", str(tmp_path / "pt")] + common, capsys)
        assert code == 0
        ckpt = tmp_path / "pt" / "checkpoints" / "final.srpc"
        code, out, _ = run(["finetune", "--data", str(tmp_path / "data"), "--pretrained", str(ckpt), "--out", str(tmp_path / "ft")] + common, capsys)
        assert code == 0 and "best_val_auc" in out
        code, out, _ = run(
            ["eval", "--data", str(tmp_path / "data"), "--checkpoint", str(tmp_path / "ft" / "checkpoints" / "best.srpc"), "--out", str(tmp_path / "ev")]
            + common,
            capsys,
        )
        assert code == 0 and "overall_auc" in out

    def test_validation_errors_exit_1(self, tmp_path, capsys):
        code, _, err = run(["flops", "--set", "nope=1", "--out", str(tmp_path)], capsys)
        assert code == 1 and "nope" in err
        code, _, err = run(["flops", "--set", "model.num_heads=3", "--out", str(tmp_path)], capsys)
        assert code == 1
        code, _, _ = run(["no-such-command"], capsys)
        assert code == 1
        code, _, err = run(["finetune", "--out", str(tmp_path)] + SMALL, capsys)
        assert code == 1 and "--pretrained" in err
        code, _, _ = run(["eval", "--checkpoint", str(tmp_path / "missing"), "--out", str(tmp_path)] + SMALL, capsys)
        assert code == 1

    def test_runtime_failure_exits_2(self, tmp_path, capsys, monkeypatch):
        def boom(*_):
            raise RuntimeError("disk on fire")

        monkeypatch.setitem(cli.HANDLERS, "flops", boom)
        code, _, err = run(["flops", "--out", str(tmp_path)], capsys)
        assert code == 2 and "disk on fire" in err
