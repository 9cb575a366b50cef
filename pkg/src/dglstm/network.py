"""Stacked recurrent language model: embedding, a depth-D cell stack, softmax output.

Parameters live in a flat ``dict`` mapping names such as ``"embedding"``,
``"layer1.W_xi"`` or ``"W_out"`` to float64 matrices. The order of
:func:`param_shapes` is canonical and is used for initialisation, checkpoints
and gradient checking.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import Sequence

import numpy as np

from .cells import CellConfig, CellKind, CellParams, LayerState, cell_forward, PEEPHOLE_MODES
from .numerics import Tensor, log_softmax

Params = dict[str, np.ndarray]

LEVELS = ("char", "word")


class UsageError(ValueError):
    """Raised on inconsistent arguments to network, gradient or training routines."""


@dataclass(frozen=True)
class NetworkSpec:
    cell_kind: CellKind
    depth: int
    embed_dim: int
    hidden_dims: tuple[int, ...]
    vocab_size: int
    interlayer_affine: bool = False
    tie_forget: bool = True
    peephole: str = "diag"
    untie_first_layer_proj: bool = False
    first_layer_gate: bool = True
    level: str = "char"

    def __post_init__(self):
        object.__setattr__(self, "cell_kind", CellKind(self.cell_kind))
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.depth < 1:
            raise UsageError(f"depth must be >= 1, got {self.depth}")
        if len(self.hidden_dims) != self.depth:
            raise UsageError(f"need {self.depth} hidden sizes, got {len(self.hidden_dims)}")
        if min(self.hidden_dims) < 1 or self.embed_dim < 1 or self.vocab_size < 1:
            raise UsageError("all dimensions must be >= 1")
        if self.peephole not in PEEPHOLE_MODES:
            raise UsageError(f"peephole must be one of {PEEPHOLE_MODES}, got {self.peephole!r}")
        if self.level not in LEVELS:
            raise UsageError(f"level must be one of {LEVELS}, got {self.level!r}")
        if len(set(self.hidden_dims)) > 1:
            object.__setattr__(self, "interlayer_affine", True)

    @classmethod
    def uniform(cls, cell_kind, depth: int, hidden: int, embed: int, vocab_size: int, **kw) -> "NetworkSpec":
        return cls(cell_kind, depth, embed, (hidden,) * depth, vocab_size, **kw)

    def layer_configs(self) -> list[CellConfig]:
        configs = []
        for l, h in enumerate(self.hidden_dims):
            input_dim = self.embed_dim if l == 0 else (h if self.interlayer_affine else self.hidden_dims[l - 1])
            lower = self.hidden_dims[l - 1] if (l > 0 and self.cell_kind is CellKind.DGLSTM) else None
            configs.append(CellConfig(
                self.cell_kind, input_dim, h, lower_dim=lower, tie_forget=self.tie_forget,
                peephole=self.peephole, first_layer_gate=self.first_layer_gate,
                untie_first_layer_proj=self.untie_first_layer_proj,
            ))
        return configs

    def to_kv(self) -> str:
        """Single-line ``key=value`` rendering with sorted keys."""
        items = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, CellKind):
                v = v.value
            elif isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            items[f.name] = str(v)
        return " ".join(f"{k}={items[k]}" for k in sorted(items))

    @classmethod
    def from_kv(cls, line: str) -> "NetworkSpec":
        raw = {}
        for tok in line.split():
            key, sep, value = tok.partition("=")
            if not sep:
                raise ValueError(f"expected key=value, got {tok!r}")
            raw[key] = value
        known = {f.name: f for f in fields(cls)}
        unknown = set(raw) - set(known)
        if unknown:
            raise ValueError(f"unknown spec keys {sorted(unknown)}")
        kw = {}
        for key, value in raw.items():
            if key == "hidden_dims":
                kw[key] = tuple(int(x) for x in value.split(","))
            elif key in ("depth", "embed_dim", "vocab_size"):
                kw[key] = int(value)
            elif key in ("cell_kind", "peephole", "level"):
                kw[key] = value
            else:
                if value not in ("true", "false"):
                    raise ValueError(f"{key} must be true or false, got {value!r}")
                kw[key] = value == "true"
        return cls(**kw)


def param_shapes(spec: NetworkSpec) -> dict[str, tuple[int, int]]:
    shapes = {"embedding": (spec.embed_dim, spec.vocab_size)}
    for l, cfg in enumerate(spec.layer_configs()):
        if l > 0 and spec.interlayer_affine:
            shapes[f"layer{l}.W_in"] = (spec.hidden_dims[l], spec.hidden_dims[l - 1])
            shapes[f"layer{l}.b_in"] = (spec.hidden_dims[l], 1)
        for name, shape in cfg.shapes().items():
            shapes[f"layer{l}.{name}"] = shape
    shapes["W_out"] = (spec.vocab_size, spec.hidden_dims[-1])
    shapes["b_out"] = (spec.vocab_size, 1)
    return shapes


def is_bias(name: str) -> bool:
    return name.rsplit(".", 1)[-1].startswith("b_")


def init_params(spec: NetworkSpec, seed: int) -> Params:
    """Uniform ``[-s, s]`` weights with ``s = 1/sqrt(fan_in)``, zero biases.

    ``fan_in`` is the column count of each tensor. Tensors are drawn in
    canonical order from one generator, so the result depends only on
    ``(spec, seed)``.
    """
    rng = np.random.default_rng(seed)
    params = {}
    for name, (rows, cols) in param_shapes(spec).items():
        if is_bias(name):
            params[name] = np.zeros((rows, cols))
        else:
            s = 1.0 / np.sqrt(cols)
            params[name] = rng.uniform(-s, s, size=(rows, cols))
    return params


def zero_params(spec: NetworkSpec) -> Params:
    return {name: np.zeros(shape) for name, shape in param_shapes(spec).items()}


def check_params(spec: NetworkSpec, params: Params) -> None:
    shapes = param_shapes(spec)
    if set(params) != set(shapes):
        raise UsageError(f"parameter names do not match the network: "
                         f"missing {sorted(set(shapes) - set(params))}, extra {sorted(set(params) - set(shapes))}")
    for name, shape in shapes.items():
        if params[name].shape != shape:
            raise UsageError(f"{name} has shape {params[name].shape}, expected {shape}")


def layer_params(spec: NetworkSpec, params: Params) -> list[CellParams]:
    out = []
    for l, cfg in enumerate(spec.layer_configs()):
        prefix = f"layer{l}."
        out.append(CellParams(cfg, {name: params[prefix + name] for name in cfg.shapes()}))
    return out


def zero_states(spec: NetworkSpec, batch: int = 1) -> list[LayerState]:
    return [LayerState.zeros(cfg, batch) for cfg in spec.layer_configs()]


@dataclass
class UnrolledTape:
    """Everything the forward pass computed, kept for the backward pass.

    ``caches[t][l]`` holds layer ``l``'s step-``t`` activations; ``below[t][l]``
    is the raw output of layer ``l - 1`` before any inter-layer affine map.
    """

    tokens: np.ndarray
    init_states: list[LayerState]
    caches: list[list[dict]] = field(default_factory=list)
    below: list[list[Tensor | None]] = field(default_factory=list)
    tops: list[Tensor] = field(default_factory=list)
    logits: list[Tensor] = field(default_factory=list)
    final_states: list[LayerState] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.logits)

    @property
    def depth(self) -> int:
        return len(self.init_states)


def as_token_matrix(tokens) -> np.ndarray:
    arr = np.asarray(tokens, dtype=np.int64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise UsageError(f"tokens must be a sequence or a (steps, batch) array, got shape {arr.shape}")
    return arr


def forward(params: Params, spec: NetworkSpec, tokens, init_states: Sequence[LayerState] | None = None) -> UnrolledTape:
    """Run the stack over ``tokens``, which is a 1-D id sequence or a ``(steps, batch)`` array."""
    tok = as_token_matrix(tokens)
    T, B = tok.shape
    if tok.size and (tok.min() < 0 or tok.max() >= spec.vocab_size):
        bad = int(tok.max() if tok.max() >= spec.vocab_size else tok.min())
        raise IndexError(f"token id {bad} out of range for vocabulary of {spec.vocab_size}")
    if init_states is None:
        init_states = zero_states(spec, B)
    if len(init_states) != spec.depth:
        raise UsageError(f"need {spec.depth} initial states, got {len(init_states)}")
    cells = layer_params(spec, params)
    affine = spec.interlayer_affine

    tape = UnrolledTape(tok, list(init_states))
    E, W_out, b_out = params["embedding"], params["W_out"], params["b_out"]
    states = list(init_states)
    for t in range(T):
        x = E[:, tok[t]]
        step_caches, step_below = [], []
        lower = None
        for l, p in enumerate(cells):
            below = None
            if l > 0:
                below = lower.h
                x = params[f"layer{l}.W_in"] @ below + params[f"layer{l}.b_in"] if affine else below
            lower_c = lower.c if p.config.is_upper else None
            state, cache = cell_forward(p, x, states[l], lower_c)
            states[l] = state
            step_caches.append(cache)
            step_below.append(below)
            lower = state
            x = state.h
        tape.caches.append(step_caches)
        tape.below.append(step_below)
        tape.tops.append(x)
        tape.logits.append(W_out @ x + b_out)
    tape.final_states = list(states)
    return tape


def token_nll(tape: UnrolledTape, targets) -> np.ndarray:
    """Per-step, per-column negative log-likelihood, shape ``(steps, batch)``."""
    tgt = as_token_matrix(targets)
    if tgt.shape != tape.tokens.shape:
        raise UsageError(f"targets shape {tgt.shape} does not match inputs {tape.tokens.shape}")
    cols = np.arange(tgt.shape[1])
    out = np.empty(tgt.shape)
    for t, logits in enumerate(tape.logits):
        out[t] = -log_softmax(logits)[tgt[t], cols]
    return out


def sequence_loss(tape: UnrolledTape, targets, mask=None) -> float:
    """Mean cross-entropy over the (unmasked) predicted tokens."""
    nll = token_nll(tape, targets)
    if mask is None:
        return float(nll.sum() / nll.size)
    mask = as_mask(mask, nll.shape)
    return float((nll * mask).sum() / mask.sum())


def as_mask(mask, shape) -> np.ndarray:
    m = np.asarray(mask, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(-1, 1)
    if m.shape != shape:
        raise UsageError(f"mask shape {m.shape} does not match {shape}")
    if m.sum() <= 0:
        raise UsageError("mask selects no tokens")
    return m


def loss(params: Params, spec: NetworkSpec, tokens, targets, init_states=None, mask=None) -> float:
    return sequence_loss(forward(params, spec, tokens, init_states), targets, mask)


def random_params(spec: NetworkSpec, seed: int, scale: float = 1.0) -> Params:
    """Every tensor, biases included, drawn uniform in ``[-scale, scale]``.

    Used for gradient checks, where zero biases would leave part of the
    parameter space untested.
    """
    rng = np.random.default_rng(seed)
    return {name: rng.uniform(-scale, scale, size=shape) for name, shape in param_shapes(spec).items()}


def sample_tokens(params: Params, spec: NetworkSpec, length: int, seed: int | None = None,
                  temperature: float = 1.0, start: int = 1) -> list[int]:
    """Draw ``length`` ids autoregressively, starting from ``start``.

    ``temperature == 0`` means greedy argmax decoding, which ignores ``seed``.
    """
    if length < 0:
        raise UsageError("length must be >= 0")
    if temperature < 0:
        raise UsageError("temperature must be >= 0")
    rng = np.random.default_rng(seed)
    states = zero_states(spec)
    token = start
    out = []
    for _ in range(length):
        tape = forward(params, spec, [token], states)
        states = tape.final_states
        logits = tape.logits[0][:, 0]
        if temperature == 0:
            token = int(np.argmax(logits))
        else:
            logp = log_softmax((logits / temperature).reshape(-1, 1))[:, 0]
            probs = np.exp(logp)
            token = int(rng.choice(len(probs), p=probs / probs.sum()))
        out.append(token)
    return out
