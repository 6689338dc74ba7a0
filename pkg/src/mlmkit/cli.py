"""Command-line entry point: ``mlmkit <stage> ...``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .bpe import BpeVocab, MergeTable, apply_bpe, learn_bpe
from .checkpoint import CheckpointError, load_checkpoint, read_tensors
from .config import ConfigError, PipelineConfig, parse_config, write_provenance
from .corpus import DecodingError, read_clean_corpus, write_corpus
from .flue import TASKS, BenchmarkConfig, DataError, run_benchmark
from .masking import make_batches, pack_sequences
from .pretrain import NumericalError, train_mlm
from .transformer import count_parameters

logger = logging.getLogger("mlmkit")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _overrides(pairs: list[str]) -> dict[str, str]:
    out = {}
    for item in pairs or []:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise UsageError(f"--set expects section.key=value, got {item!r}")
        out[key.strip()] = value.strip()
    return out


def _config(args, **flags) -> PipelineConfig:
    """File values, then ``--set`` overrides, then dedicated flags."""
    overrides = _overrides(getattr(args, "set", None))
    overrides.update({k: str(v) for k, v in flags.items() if v is not None})
    return parse_config(getattr(args, "config", None), overrides)


def _csv_ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated integers, got {text!r}") from None


def read_bpe_corpus(path: Path, vocab: BpeVocab) -> list[list[int]]:
    """Sub-word lines (symbols separated by spaces) to id lists."""
    out = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            symbols = line.split()
            if symbols:
                out.append([vocab.id_of.get(s, 1) for s in symbols])
    return out


# ---------------------------------------------------------------- stages


def cmd_clean(args) -> int:
    cfg = _config(args, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stats = write_corpus(args.inputs, cfg.cleaning, out / "corpus.txt", workers=args.workers)
    (out / "stats.json").write_text(stats.to_json() + "\n", encoding="utf-8")
    write_provenance(out, "clean", cfg, args.inputs, {"stats": stats.to_dict()})
    print(stats.to_json())
    if stats.shard_errors:
        return EXIT_DATA
    return EXIT_OK


def cmd_learn_bpe(args) -> int:
    cfg = _config(args, **{"bpe.num_merges": args.num_merges})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    corpus = list(read_clean_corpus(args.corpus))
    if not corpus:
        raise DataError(f"{args.corpus}: empty corpus")
    table, vocab = learn_bpe(corpus, cfg.bpe.num_merges)
    table.save(out / "merges.txt")
    vocab.save(out / "vocab.txt")
    _write_bpe_corpus(corpus, table, out / "train.bpe")
    write_provenance(out, "learn-bpe", cfg, [args.corpus],
                     {"merges": len(table), "vocab_size": len(vocab), "vocab_hash": vocab.hash()})
    print(json.dumps({"merges": len(table), "vocab_size": len(vocab)}))
    return EXIT_OK


def _write_bpe_corpus(corpus, table: MergeTable, path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for tokens in corpus:
            f.write(" ".join(s for w in tokens for s in apply_bpe(w, table)) + "\n")


def cmd_apply_bpe(args) -> int:
    table = MergeTable.load(args.merges)
    _write_bpe_corpus(read_clean_corpus(args.input), table, Path(args.output))
    return EXIT_OK


def cmd_pretrain(args) -> int:
    cfg = _config(args, seed=args.seed)
    data = Path(args.data)
    vocab = BpeVocab.load(data / "vocab.txt")
    table = MergeTable.load(data / "merges.txt")
    model_cfg = replace(cfg.model, vocab_size=len(vocab))
    if cfg.masking.max_len > model_cfg.max_positions:
        raise ConfigError(f"masking.max_len {cfg.masking.max_len} exceeds model.max_positions {model_cfg.max_positions}")
    sequences = list(pack_sequences(read_bpe_corpus(data / "train.bpe", vocab), cfg.masking.max_len))
    sequences = [s for s in sequences if len(s) > 2]
    if not sequences:
        raise DataError(f"{data / 'train.bpe'}: no training sequences")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table.save(out / "merges.txt")
    vocab.save(out / "vocab.txt")
    write_provenance(out, "pretrain", cfg, [data / "vocab.txt", data / "merges.txt", data / "train.bpe"],
                     {"vocab_hash": vocab.hash(), "model": model_cfg.to_dict(),
                      "effective_batch": cfg.adam.effective_batch})
    if args.dump_batch:
        batch = next(make_batches(sequences, cfg.adam.micro_batch, cfg.masking, len(vocab)))
        Path(args.dump_batch).write_text(json.dumps(batch.to_json()) + "\n", encoding="utf-8")
    print(f"effective batch {cfg.adam.effective_batch} "
          f"(micro-batch {cfg.adam.micro_batch} x accumulation {cfg.adam.accumulation})", flush=True)

    def report(step, lr, loss):
        if step % args.log_every == 0 or step == cfg.adam.total_steps:
            print(f"step {step} lr {lr:.3e} loss {loss:.4f}", flush=True)

    result = train_mlm(sequences, model_cfg, cfg.adam, cfg.masking, cfg.seed, out_dir=out,
                       resume=args.resume, vocab_hash=vocab.hash(), on_step=report)
    if result.checkpoints:
        shutil.copyfile(result.checkpoints[-1], out / "model.mlmf")
    return EXIT_OK


def _bench_config(args) -> BenchmarkConfig:
    cfg = _config(args)
    return BenchmarkConfig(grid=cfg.grid, cleaning=cfg.cleaning, strict=getattr(args, "strict", False))


def _emit(result, args) -> int:
    text = result.to_jsonl()
    if getattr(args, "out", None):
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    if any(f.kind == "numeric" for f in result.failures):
        return EXIT_NUMERIC
    return EXIT_OK if result.ok else EXIT_DATA


def cmd_finetune(args) -> int:
    result = run_benchmark(args.ckpt, [args.task], [args.seed], args.data, _bench_config(args))
    return _emit(result, args)


def cmd_wsd(args) -> int:
    result = run_benchmark(args.ckpt, [f"wsd-{args.task}"], [args.seed], args.data, _bench_config(args))
    return _emit(result, args)


def cmd_flue_run(args) -> int:
    tasks = [t for t in args.tasks.split(",") if t.strip()]
    result = run_benchmark(args.ckpt, tasks, _csv_ints(args.seeds), args.data, _bench_config(args),
                           parallel=args.parallel)
    code = _emit(result, args)
    if args.out:
        write_provenance(Path(args.out).parent, "flue-run", _config(args), [args.ckpt],
                         {"tasks": tasks, "seeds": _csv_ints(args.seeds), "report": Path(args.out).name})
    return code


def cmd_inspect_ckpt(args) -> int:
    header, tensors = read_tensors(args.ckpt)
    info = {"header": header, "tensors": {k: list(v.shape) for k, v in tensors.items()}}
    if header.get("kind") == "model":
        params, _ = load_checkpoint(args.ckpt)
        info["parameters"] = count_parameters(params.cfg)
    print(json.dumps(info, indent=2))
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mlmkit", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def with_config(sp):
        sp.add_argument("--config", help="INI config file (defaults when omitted)")
        sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                        help="override a config value; wins over the file")
        return sp

    sp = with_config(sub.add_parser("clean", help="filter, normalize and tokenize raw text shards"))
    sp.add_argument("inputs", nargs="+")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_clean)

    sp = with_config(sub.add_parser("learn-bpe", help="learn merges and vocabulary from a clean corpus"))
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--num-merges", type=int)
    sp.set_defaults(func=cmd_learn_bpe)

    sp = sub.add_parser("apply-bpe", help="segment a clean corpus into sub-words")
    sp.add_argument("--merges", required=True)
    sp.add_argument("--input", required=True)
    sp.add_argument("--output", required=True)
    sp.set_defaults(func=cmd_apply_bpe)

    sp = with_config(sub.add_parser("pretrain", help="train the MLM"))
    sp.add_argument("--data", required=True, help="directory with merges.txt, vocab.txt, train.bpe")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--resume", help="model checkpoint to continue from")
    sp.add_argument("--log-every", type=int, default=10)
    sp.add_argument("--dump-batch", metavar="FILE", help="write the first masked batch as JSON")
    sp.set_defaults(func=cmd_pretrain)

    sp = with_config(sub.add_parser("finetune", help="fine-tune and test one classification task"))
    sp.add_argument("--task", required=True, choices=["cls", "pawsx", "xnli"])
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", help="report file (stdout when omitted)")
    sp.set_defaults(func=cmd_finetune)

    sp = with_config(sub.add_parser("wsd", help="run a word-sense disambiguation task"))
    sp.add_argument("--task", required=True, choices=["verb", "noun"])
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_wsd)

    flue = sub.add_parser("flue", help="benchmark harness")
    flue_sub = flue.add_subparsers(dest="flue_command", required=True, parser_class=_Parser)
    sp = with_config(flue_sub.add_parser("run", help="run tasks for each seed"))
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--tasks", required=True, help=f"comma-separated; known: cls, {', '.join(TASKS)}")
    sp.add_argument("--data", required=True)
    sp.add_argument("--seeds", default="0")
    sp.add_argument("--strict", action="store_true", help="fail on split sizes that differ from full scale")
    sp.add_argument("--parallel", action="store_true")
    sp.add_argument("--out", help="JSONL report file (stdout when omitted)")
    sp.set_defaults(func=cmd_flue_run)

    sp = sub.add_parser("inspect-ckpt", help="print a checkpoint header and tensor inventory")
    sp.add_argument("ckpt")
    sp.set_defaults(func=cmd_inspect_ckpt)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"mlmkit: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, DecodingError, CheckpointError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"mlmkit: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"mlmkit: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:  # malformed merges/vocab files and similar
        print(f"mlmkit: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
