"""Command-line entry point: ``dglstm {train,eval,gradcheck,sample}``.

Settings resolve as built-in defaults, then a ``key=value`` config file
(``--config``), then command-line flags, later sources winning.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, atomic_write_text, format_checkpoint, load_checkpoint
from .data import Vocabulary, build_vocab, decode, load_corpus, make_corpus, read_lines, EOS_ID
from .grad import grad_check
from .network import NetworkSpec, UsageError, param_shapes, random_params, sample_tokens
from .train import TrainConfig, TrainingDiverged, evaluate_perplexity, train

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4

MAX_GRADCHECK_PARAMS = 20_000

DEFAULTS = {
    "cell": "dglstm", "depth": "2", "hidden": "32", "embed": "16", "level": "char",
    "lr": "1.0", "clip": "5.0", "epochs": "10", "bptt": "35", "seed": "0",
    "tie_forget": "true", "peephole": "diag", "untie_first_layer_proj": "false",
    "first_layer_gate": "true", "interlayer_affine": "false",
    "lr_decay": "0.5", "decay_patience": "1", "eval_every": "0", "batch_size": "16",
    "min_count": "1", "max_vocab": "0",
}

log = logging.getLogger("dglstm")


class ConfigError(Exception):
    """A setting failed to parse or validate."""


class DataError(Exception):
    """An input file is missing or unreadable."""


def read_config_file(path) -> dict[str, str]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read config file {path}: {exc.strerror}") from None
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{n}: expected key=value, got {raw!r}")
        key = key.strip().replace("-", "_")
        if key not in DEFAULTS:
            raise ConfigError(f"{path}:{n}: unknown setting {key!r}")
        out[key] = value.strip()
    return out


def resolve(args: argparse.Namespace) -> dict[str, str]:
    settings = dict(DEFAULTS)
    if getattr(args, "config", None):
        settings.update(read_config_file(args.config))
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = str(value)
    return settings


def _bool(key: str, value: str) -> bool:
    v = value.strip().lower()
    if v in ("true", "1", "yes", "on"):
        return True
    if v in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"{key} must be true or false, got {value!r}")


def _num(key: str, value: str, kind):
    try:
        return kind(value)
    except ValueError:
        raise ConfigError(f"{key} must be {'an integer' if kind is int else 'a number'}, got {value!r}") from None


def build_spec(s: dict[str, str], vocab_size: int) -> NetworkSpec:
    depth = _num("depth", s["depth"], int)
    if depth < 1:
        raise ConfigError(f"depth must be >= 1, got {depth}")
    hidden = [_num("hidden", h, int) for h in s["hidden"].split(",")]
    if len(hidden) == 1:
        hidden = hidden * depth
    try:
        return NetworkSpec(
            s["cell"], depth, _num("embed", s["embed"], int), tuple(hidden), vocab_size,
            interlayer_affine=_bool("interlayer_affine", s["interlayer_affine"]),
            tie_forget=_bool("tie_forget", s["tie_forget"]),
            peephole=s["peephole"],
            untie_first_layer_proj=_bool("untie_first_layer_proj", s["untie_first_layer_proj"]),
            first_layer_gate=_bool("first_layer_gate", s["first_layer_gate"]),
            level=s["level"],
        )
    except (UsageError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def build_train_config(s: dict[str, str], spec: NetworkSpec) -> TrainConfig:
    try:
        return TrainConfig(
            spec,
            lr=_num("lr", s["lr"], float),
            clip_norm=_num("clip", s["clip"], float),
            epochs=_num("epochs", s["epochs"], int),
            bptt_len=_num("bptt", s["bptt"], int),
            lr_decay=_num("lr_decay", s["lr_decay"], float),
            decay_patience=_num("decay_patience", s["decay_patience"], int),
            seed=_num("seed", s["seed"], int),
            eval_every=_num("eval_every", s["eval_every"], int),
            batch_size=_num("batch_size", s["batch_size"], int),
        )
    except UsageError as exc:
        raise ConfigError(str(exc)) from None


def _read_lines(path) -> list[str]:
    try:
        return read_lines(path)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    except UnicodeDecodeError:
        raise DataError(f"{path} is not valid UTF-8") from None


# ---------------------------------------------------------------------------
# subcommands


def cmd_train(args) -> int:
    s = resolve(args)
    # validate everything that does not need the corpus before touching files
    level = s["level"]
    build_spec(s, vocab_size=3)
    build_train_config(s, build_spec(s, vocab_size=3))
    min_count = _num("min_count", s["min_count"], int)
    max_vocab = _num("max_vocab", s["max_vocab"], int)
    if min_count < 1:
        raise ConfigError("min_count must be >= 1")

    train_lines = _read_lines(args.train)
    valid_lines = _read_lines(args.valid)
    test_lines = _read_lines(args.test) if args.test else None
    if not train_lines:
        raise DataError(f"training corpus {args.train} is empty")
    if not valid_lines:
        raise DataError(f"validation corpus {args.valid} is empty")
    try:
        vocab = build_vocab(train_lines, level, min_count, max_vocab or None)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    spec = build_spec(s, len(vocab))
    config = build_train_config(s, spec)
    train_c = make_corpus(train_lines, vocab, level)
    valid_c = make_corpus(valid_lines, vocab, level)
    test_c = make_corpus(test_lines, vocab, level) if test_lines else None

    def show(rec):
        print(rec.line(), flush=True)

    params, report = train(config, train_c, valid_c, test_c, on_epoch=show)

    out = Path(args.out)
    atomic_write_text(out, format_checkpoint(spec, params))
    vocab_text = "".join(tok + "\n" for tok in vocab.tokens)
    atomic_write_text(out.with_name(out.name + ".vocab"), vocab_text)
    atomic_write_text(out.with_name(out.name + ".report"), "".join(line + "\n" for line in report.lines()))
    summary = report.summary()
    atomic_write_text(out.with_name(out.name + ".summary"),
                      "".join(f"{k}={summary[k]}\n" for k in sorted(summary)))
    print(f"final valid_ppl={report.final_valid_ppl:#.6g}")
    if report.test_ppl is not None:
        print(f"test_ppl={report.test_ppl:#.6g}")
    return EXIT_OK


def _load_model(ckpt_path, vocab_path=None):
    try:
        spec, params = load_checkpoint(ckpt_path)
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {ckpt_path}: {exc.strerror}") from None
    vocab_path = vocab_path or f"{ckpt_path}.vocab"
    try:
        vocab = Vocabulary.load(vocab_path)
    except OSError as exc:
        raise DataError(f"cannot read vocabulary {vocab_path}: {exc.strerror}") from None
    except ValueError as exc:
        raise DataError(f"bad vocabulary {vocab_path}: {exc}") from None
    if len(vocab) != spec.vocab_size:
        raise DataError(f"vocabulary {vocab_path} has {len(vocab)} tokens, checkpoint expects {spec.vocab_size}")
    return spec, params, vocab


def cmd_eval(args) -> int:
    spec, params, vocab = _load_model(args.checkpoint, args.vocab)
    lines = _read_lines(args.corpus)
    if not lines:
        raise DataError(f"corpus {args.corpus} is empty")
    corpus = make_corpus(lines, vocab, spec.level)
    ppl = evaluate_perplexity(params, spec, corpus, args.bptt)
    print(f"ppl={ppl:#.6g}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    s = resolve(args)
    spec = build_spec(s, _num("vocab_size", str(args.vocab_size), int))
    n_params = sum(r * c for r, c in param_shapes(spec).values())
    if n_params > MAX_GRADCHECK_PARAMS:
        raise ConfigError(f"model has {n_params} parameters, more than the {MAX_GRADCHECK_PARAMS} "
                          f"a finite-difference check allows; use a smaller --hidden, --embed or --depth")
    if args.tol <= 0 or args.epsilon <= 0:
        raise ConfigError("--tol and --epsilon must be positive")
    if args.seq_len < 1:
        raise ConfigError("--seq-len must be >= 1")
    seed = _num("seed", s["seed"], int)
    params = random_params(spec, seed)
    rng = np.random.default_rng([seed, 1])
    tokens = rng.integers(0, spec.vocab_size, args.seq_len)
    targets = rng.integers(0, spec.vocab_size, args.seq_len)
    report = grad_check(params, spec, tokens, targets, args.tol, args.epsilon)
    for line in report.lines():
        print(line)
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_sample(args) -> int:
    spec, params, vocab = _load_model(args.checkpoint, args.vocab)
    if args.length < 0:
        raise ConfigError("--length must be >= 0")
    if args.temperature < 0:
        raise ConfigError("--temperature must be >= 0")
    ids = sample_tokens(params, spec, args.length, args.seed, args.temperature)
    sep = "" if spec.level == "char" else " "
    text = sep.join("\n" if i == EOS_ID else vocab.tokens[i] for i in ids)
    sys.stdout.write(text + ("" if text.endswith("\n") else "\n"))
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def _model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="key=value settings file")
    p.add_argument("--cell", choices=["rnn", "gru", "lstm", "dglstm"])
    p.add_argument("--depth", help="number of stacked layers")
    p.add_argument("--hidden", help="hidden width, or a comma list with one width per layer")
    p.add_argument("--embed", help="embedding width")
    p.add_argument("--seed")
    p.add_argument("--tie-forget", dest="tie_forget", choices=["true", "false"])
    p.add_argument("--peephole", choices=["diag", "full", "none"])
    p.add_argument("--untie-first-layer-proj", dest="untie_first_layer_proj", action="store_const", const="true")
    p.add_argument("--no-first-layer-gate", dest="first_layer_gate", action="store_const", const="false",
                   help="first DGLSTM layer becomes a plain LSTM cell")
    p.add_argument("--interlayer-affine", dest="interlayer_affine", action="store_const", const="true")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dglstm", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a language model")
    _model_flags(p)
    p.add_argument("--train", required=True, metavar="PATH")
    p.add_argument("--valid", required=True, metavar="PATH")
    p.add_argument("--test", metavar="PATH")
    p.add_argument("--out", default="model.ckpt", metavar="PATH")
    p.add_argument("--level", choices=["char", "word"])
    p.add_argument("--lr")
    p.add_argument("--clip")
    p.add_argument("--epochs")
    p.add_argument("--bptt")
    p.add_argument("--lr-decay", dest="lr_decay")
    p.add_argument("--decay-patience", dest="decay_patience")
    p.add_argument("--eval-every", dest="eval_every")
    p.add_argument("--batch-size", dest="batch_size")
    p.add_argument("--min-count", dest="min_count")
    p.add_argument("--max-vocab", dest="max_vocab", help="vocabulary cap including reserved ids; 0 = none")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="perplexity of a checkpoint on a corpus")
    p.add_argument("--checkpoint", required=True, metavar="PATH")
    p.add_argument("--corpus", required=True, metavar="PATH")
    p.add_argument("--vocab", metavar="PATH", help="defaults to CHECKPOINT.vocab")
    p.add_argument("--bptt", type=int, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="compare backprop against finite differences")
    _model_flags(p)
    p.add_argument("--vocab-size", dest="vocab_size", type=int, default=5)
    p.add_argument("--seq-len", dest="seq_len", type=int, default=4)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--epsilon", type=float, default=1e-5)
    p.set_defaults(func=cmd_gradcheck, embed="3")

    p = sub.add_parser("sample", help="sample text from a checkpoint")
    p.add_argument("--checkpoint", required=True, metavar="PATH")
    p.add_argument("--vocab", metavar="PATH")
    p.add_argument("--length", type=int, default=200)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--temperature", type=float, default=1.0, help="0 selects greedy decoding")
    p.set_defaults(func=cmd_sample)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"dglstm {args.command}: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CheckpointError as exc:
        print(f"dglstm {args.command}: corrupt checkpoint: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DataError as exc:
        print(f"dglstm {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDiverged as exc:
        print(f"dglstm {args.command}: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
