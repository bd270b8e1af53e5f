"""``srp4ctr`` command-line entry point.

Exit codes: 0 success, 1 invalid input or configuration, 2 runtime failure.
Every output lands under ``--out`` and is overwritten on re-runs.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigKeyError, RunConfig, describe_keys
from .costmodel import ServingRequest, count_flops, serve_folded, serve_naive
from .data.io import ParseError, load_dataset, save_dataset
from .data.synthetic import ConfigError, corpus_digest, generate_synthetic, item_frequencies
from .data.types import InteractionEvent, InteractionSequence, ValidationError, pack_examples
from .model.config import ModelConfigError
from .model.finetune import SRP4CTR
from .numerics import CheckpointError, read_checkpoint
from .runtime.metrics import UndefinedMetricError, longtail_report
from .runtime.train import predict_batches, run_finetune, run_pretrain, split_examples

log = logging.getLogger("srp4ctr")

USER_ERRORS = (ConfigKeyError, ConfigError, ModelConfigError, ValidationError, ParseError, CheckpointError, FileNotFoundError)

COMMANDS = ("gen-data", "pretrain", "finetune", "eval", "flops", "serve-sim")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def build_parser() -> argparse.ArgumentParser:
    epilog = "config keys (default):\n" + describe_keys()
    parser = _Parser(prog="srp4ctr", formatter_class=argparse.RawDescriptionHelpFormatter, epilog=epilog)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name: str, help: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help, epilog=epilog, formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("--config", help="key = value file")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
        p.add_argument("--out", default="runs/default", help="output directory")
        p.add_argument("--seed", type=int, help="overrides the seed key")
        return p

    p = command("gen-data", "write the synthetic pre-training and fine-tuning corpora")
    p = command("pretrain", "masked pre-training of the sequence encoder")
    p.add_argument("--data", help="directory holding pretrain.tsv (generated when omitted)")
    p = command("finetune", "fine-tune the CTR model")
    p.add_argument("--data", help="directory holding finetune.tsv (generated when omitted)")
    p.add_argument("--pretrained", help="pre-training checkpoint")
    p = command("eval", "AUC and long-tail report of a fine-tuned checkpoint on the validation users")
    p.add_argument("--data", help="directory holding pretrain.tsv and finetune.tsv")
    p.add_argument("--checkpoint", required=True)
    p = command("flops", "analytic FLOPs report")
    p.add_argument("--batch", type=int, help="candidates per request")
    p = command("serve-sim", "score random requests through the folded and naive paths")
    p.add_argument("--mode", choices=("folded", "naive", "both"), default="both")
    p.add_argument("--requests", type=int)
    p.add_argument("--candidates", type=int)
    return parser


def _corpora(cfg: RunConfig, data_dir):
    if data_dir is None:
        return generate_synthetic(cfg.synthetic(), int(cfg["seed"]))
    vocab, max_len = cfg.encoder().vocab, None
    root = Path(data_dir)
    pre = load_dataset(root / "pretrain.tsv", vocab, max_len) if (root / "pretrain.tsv").exists() else []
    ft = load_dataset(root / "finetune.tsv", vocab, max_len) if (root / "finetune.tsv").exists() else []
    if not pre and not ft:
        raise FileNotFoundError(f"no pretrain.tsv or finetune.tsv under {root}")
    return pre, ft


def _gen_data(args, cfg: RunConfig, out: Path) -> None:
    pre, ft = generate_synthetic(cfg.synthetic(), int(cfg["seed"]))
    save_dataset(pre, out / "pretrain.tsv")
    save_dataset(ft, out / "finetune.tsv")
    digests = {"pretrain": corpus_digest(pre), "finetune": corpus_digest(ft)}
    (out / "digest.txt").write_text("".join(f"{k}\t{v}\n" for k, v in digests.items()))
    for k, v in digests.items():
        print(f"{k}\t{v}")


def _pretrain(args, cfg: RunConfig, out: Path) -> None:
    pre, _ = _corpora(cfg, args.data)
    result = run_pretrain(cfg.train_spec("pretrain", out), pre, cfg.encoder())
    print(f"item_loss\t{result.initial_item_loss:.6f}\t->\t{result.final_item_loss:.6f}")
    print(f"checkpoint\t{result.checkpoint}")


def _finetune(args, cfg: RunConfig, out: Path) -> None:
    _, ft = _corpora(cfg, args.data)
    spec = cfg.train_spec("finetune", out)
    if not spec.finetune.from_scratch and args.pretrained is None:
        raise ConfigKeyError("--pretrained is required unless finetune.from_scratch = true")
    result = run_finetune(spec, args.pretrained, ft, cfg.encoder())
    print(f"best_val_auc\t{result.best_auc:.6f}\tstep\t{result.best_step}")
    print(f"checkpoint\t{result.checkpoint}")


def _eval(args, cfg: RunConfig, out: Path) -> None:
    pre, ft = _corpora(cfg, args.data)
    model = SRP4CTR(cfg.model())
    state = {k: v for k, v in read_checkpoint(args.checkpoint).items() if not k.startswith("__adam__/")}
    model.params.load_state_dict(state)
    _, val = split_examples(ft, cfg.train_spec("finetune"))
    batch = pack_examples(val, cfg.encoder().max_len)
    scores = predict_batches(model, batch)
    freq = item_frequencies(pre)
    ids = batch.targets[:, 0]
    table = {int(i): freq.get(int(i), 0) for i in set(freq) | set(ids.tolist())}
    report = longtail_report(scores, batch.labels, ids, table)
    lines = [f"{k}\t{'' if v is None else v}" for k, v in report.items()]
    (out / "eval.tsv").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))


def _flops(args, cfg: RunConfig, out: Path) -> None:
    report = count_flops(cfg.model(), int(cfg["flops.batch"]))
    (out / "flops.tsv").write_text(report.to_tsv())
    print(report.to_table(), end="")


def random_request(rng: np.random.Generator, vocab, max_len: int, candidates: int) -> ServingRequest:
    length = int(rng.integers(2, max_len + 1))
    events = tuple(
        InteractionEvent(
            tuple(int(rng.integers(1, n)) for n in vocab.item_sizes),
            tuple(int(rng.integers(1, n)) for n in vocab.behavior_sizes),
        )
        for _ in range(length)
    )
    cands = [tuple(int(rng.integers(1, n)) for n in vocab.item_sizes) for _ in range(candidates)]
    context = tuple(int(rng.integers(1, n)) for n in vocab.context_sizes)
    return ServingRequest(InteractionSequence(0, events), context, cands)


def _serve_sim(args, cfg: RunConfig, out: Path) -> None:
    mcfg = cfg.model()
    model = SRP4CTR(mcfg, seed=int(cfg["seed"]))
    rng = np.random.default_rng(int(cfg["seed"]))
    n, b = int(cfg["serve.requests"]), int(cfg["serve.candidates"])
    worst, flops = 0.0, {"folded": 0, "naive": 0}
    for _ in range(n):
        req = random_request(rng, mcfg.encoder.vocab, mcfg.encoder.max_len, b)
        results = {}
        if args.mode in ("folded", "both"):
            results["folded"] = serve_folded(req, model)
        if args.mode in ("naive", "both"):
            results["naive"] = serve_naive(req, model)
        for k, r in results.items():
            flops[k] += r.total_flops
        if len(results) == 2:
            worst = max(worst, float(np.max(np.abs(results["folded"].scores - results["naive"].scores))))
    lines = [f"requests\t{n}", f"candidates\t{b}"]
    lines += [f"{k}_flops_per_request\t{v // n}" for k, v in flops.items() if v]
    if args.mode == "both":
        lines.append(f"max_score_deviation\t{worst:.3e}")
    (out / "serve.tsv").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))


HANDLERS = {
    "gen-data": _gen_data,
    "pretrain": _pretrain,
    "finetune": _finetune,
    "eval": _eval,
    "flops": _flops,
    "serve-sim": _serve_sim,
}


def _flags(args) -> dict:
    flags = {"seed": args.seed}
    if args.command == "flops":
        flags["flops.batch"] = args.batch
    if args.command == "serve-sim":
        flags["serve.requests"] = args.requests
        flags["serve.candidates"] = args.candidates
    return flags


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = RunConfig.load(args.config, args.overrides, _flags(args))
        cfg.synthetic().validate()
        cfg.model()
        cfg.train_spec("pretrain")
        cfg.train_spec("finetune")
        if int(cfg["flops.batch"]) < 1 or int(cfg["serve.requests"]) < 1 or int(cfg["serve.candidates"]) < 1:
            raise ConfigKeyError("flops.batch, serve.requests and serve.candidates must be positive")
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "resolved.cfg").write_text(cfg.to_text())
        HANDLERS[args.command](args, cfg, out)
    except USER_ERRORS + (UndefinedMetricError,) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - the exit code is the contract
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
