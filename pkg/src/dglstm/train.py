"""SGD training with global-norm clipping and plateau learning-rate decay."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .data import Corpus, make_minibatches
from .grad import backward
from .network import NetworkSpec, Params, UsageError, forward, init_params, token_nll, zero_states

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    """Raised when the training loss stops being finite."""


@dataclass(frozen=True)
class TrainConfig:
    spec: NetworkSpec
    lr: float = 1.0
    clip_norm: float = 5.0
    epochs: int = 10
    bptt_len: int = 35
    lr_decay: float = 0.5
    decay_patience: int = 1
    seed: int = 0
    eval_every: int = 0
    batch_size: int = 16

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        checks = [
            (self.lr > 0 and math.isfinite(self.lr), f"lr must be positive, got {self.lr}"),
            (self.clip_norm > 0, f"clip_norm must be positive, got {self.clip_norm}"),
            (self.epochs >= 0, f"epochs must be >= 0, got {self.epochs}"),
            (self.bptt_len >= 1, f"bptt_len must be >= 1, got {self.bptt_len}"),
            (0 < self.lr_decay <= 1, f"lr_decay must be in (0, 1], got {self.lr_decay}"),
            (self.decay_patience >= 1, f"decay_patience must be >= 1, got {self.decay_patience}"),
            (self.eval_every >= 0, f"eval_every must be >= 0, got {self.eval_every}"),
            (self.batch_size >= 1, f"batch_size must be >= 1, got {self.batch_size}"),
        ]
        for ok, msg in checks:
            if not ok:
                raise UsageError(msg)


@dataclass
class EpochRecord:
    epoch: int
    train_nll: float
    valid_nll: float
    valid_ppl: float
    lr: float
    wall_time: float = field(default=0.0, compare=False)

    def line(self) -> str:
        return (f"epoch={self.epoch} train_nll={self.train_nll:.17g} valid_ppl={self.valid_ppl:.17g} "
                f"lr={self.lr:.17g}")


@dataclass
class TrainReport:
    epochs: list[EpochRecord] = field(default_factory=list)
    first_train_nll: float = math.nan
    initial_valid_ppl: float = math.nan
    steps: int = 0
    test_ppl: float | None = None

    @property
    def final_valid_ppl(self) -> float:
        return self.epochs[-1].valid_ppl if self.epochs else self.initial_valid_ppl

    def lines(self) -> list[str]:
        return [rec.line() for rec in self.epochs]

    def summary(self) -> dict[str, str]:
        out = {
            "epochs": str(len(self.epochs)),
            "first_train_nll": f"{self.first_train_nll:.17g}",
            "initial_valid_ppl": f"{self.initial_valid_ppl:.17g}",
            "final_valid_ppl": f"{self.final_valid_ppl:.17g}",
            "steps": str(self.steps),
        }
        if self.epochs:
            out["final_train_nll"] = f"{self.epochs[-1].train_nll:.17g}"
            out["final_lr"] = f"{self.epochs[-1].lr:.17g}"
        if self.test_ppl is not None:
            out["test_ppl"] = f"{self.test_ppl:.17g}"
        return out


def global_norm(g: Params) -> float:
    return math.sqrt(sum(float(np.vdot(v, v)) for v in g.values()))


def clip_gradients(g: Params, clip_norm: float) -> Params:
    """Rescale all tensors together when their joint L2 norm exceeds ``clip_norm``."""
    if clip_norm <= 0:
        raise ValueError("clip_norm must be positive")
    norm = global_norm(g)
    if norm <= clip_norm:
        return dict(g)
    scale = clip_norm / norm
    return {name: v * scale for name, v in g.items()}


def sgd_step(params: Params, g: Params, lr: float) -> Params:
    if lr <= 0:
        raise ValueError("lr must be positive")
    if set(params) != set(g):
        raise UsageError("gradient names do not match parameters")
    out = {}
    for name, value in params.items():
        if g[name].shape != value.shape:
            raise UsageError(f"gradient for {name} has shape {g[name].shape}, expected {value.shape}")
        out[name] = value - lr * g[name]
    return out


def corpus_nll(params: Params, spec: NetworkSpec, corpus: Corpus, bptt_len: int | None = None,
               batch_size: int = 64) -> tuple[float, int]:
    """Total negative log-likelihood and predicted-token count over ``corpus``.

    State carries across windows of a sequence and resets between sequences,
    so the result does not depend on ``bptt_len``.
    """
    if len(corpus) == 0:
        raise UsageError("cannot evaluate an empty corpus")
    window = bptt_len or max(len(s) for s in corpus.sequences)
    total, count = 0.0, 0
    states = None
    for batch in make_minibatches(corpus, window, batch_size):
        if not batch.carry:
            states = zero_states(spec, batch.inputs.shape[1])
        tape = forward(params, spec, batch.inputs, states)
        states = tape.final_states
        total += float((token_nll(tape, batch.targets) * batch.mask).sum())
        count += int(batch.mask.sum())
    return total, count


def evaluate_perplexity(params: Params, spec: NetworkSpec, corpus: Corpus, bptt_len: int | None = None) -> float:
    total, count = corpus_nll(params, spec, corpus, bptt_len)
    return math.exp(total / count)


def train(config: TrainConfig, train_corpus: Corpus, valid_corpus: Corpus, test_corpus: Corpus | None = None,
          params: Params | None = None, on_epoch: Callable[[EpochRecord], None] | None = None):
    """Run chunked-BPTT SGD; returns ``(params, report)``.

    Everything is a function of ``config`` and the corpora: initialisation and
    per-epoch shuffles are both seeded from ``config.seed``.
    """
    spec = config.spec
    for corpus in (train_corpus, valid_corpus):
        if corpus.vocab_size != spec.vocab_size:
            raise UsageError(f"corpus vocabulary {corpus.vocab_size} != model vocabulary {spec.vocab_size}")
    if params is None:
        params = init_params(spec, config.seed)
    report = TrainReport()
    report.initial_valid_ppl = evaluate_perplexity(params, spec, valid_corpus)
    best = report.initial_valid_ppl
    bad_evals = 0
    lr = config.lr
    step = 0

    def validate() -> tuple[float, float]:
        nonlocal best, bad_evals, lr
        total, count = corpus_nll(params, spec, valid_corpus)
        nll = total / count
        ppl = math.exp(nll)
        if ppl < best:
            best, bad_evals = ppl, 0
        else:
            bad_evals += 1
            if bad_evals >= config.decay_patience:
                lr *= config.lr_decay
                bad_evals = 0
                log.info("validation perplexity %.4f did not improve; lr -> %g", ppl, lr)
        return nll, ppl

    for epoch in range(1, config.epochs + 1):
        started = time.perf_counter()
        lr_used = lr
        epoch_nll, epoch_tokens = 0.0, 0
        states = None
        for batch in make_minibatches(train_corpus, config.bptt_len, config.batch_size, config.seed, epoch):
            if not batch.carry:
                states = zero_states(spec, batch.inputs.shape[1])
            tape = forward(params, spec, batch.inputs, states)
            states = tape.final_states
            n_tok = batch.mask.sum()
            chunk_nll = float((token_nll(tape, batch.targets) * batch.mask).sum())
            step += 1
            if not math.isfinite(chunk_nll):
                raise TrainingDiverged(f"training loss became {chunk_nll} at step {step} (epoch {epoch})")
            if math.isnan(report.first_train_nll):
                report.first_train_nll = chunk_nll / n_tok
            epoch_nll += chunk_nll
            epoch_tokens += int(n_tok)
            grads = backward(params, spec, tape, batch.targets, batch.mask)
            params = sgd_step(params, clip_gradients(grads, config.clip_norm), lr)
            if config.eval_every and step % config.eval_every == 0:
                validate()
        valid_nll, valid_ppl = validate()
        rec = EpochRecord(epoch, epoch_nll / epoch_tokens, valid_nll, valid_ppl, lr_used,
                          time.perf_counter() - started)
        report.epochs.append(rec)
        log.info(rec.line())
        if on_epoch is not None:
            on_epoch(rec)
    report.steps = step
    if test_corpus is not None:
        report.test_ppl = evaluate_perplexity(params, spec, test_corpus)
    return params, report
