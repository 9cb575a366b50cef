"""Single-step recurrent cells: simple RNN, GRU, peephole LSTM and depth-gated LSTM.

Every step function maps ``(params, x, prev_state[, lower_c])`` to a new
:class:`LayerState`. Inputs and states are ``(dim, batch)`` float64 matrices;
batch size 1 is the ordinary column-vector case.

The ``*_forward`` variants additionally return a cache of gate activations,
which :mod:`dglstm.grad` consumes to run the step in reverse.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping

import numpy as np

from .numerics import DimensionError, Tensor, sigmoid


class CellKind(str, Enum):
    RNN = "rnn"
    GRU = "gru"
    LSTM = "lstm"
    DGLSTM = "dglstm"


PEEPHOLE_MODES = ("diag", "full", "none")


class CellUsageError(ValueError):
    """Raised when a cell is called in a way its layer position forbids."""


@dataclass(frozen=True)
class CellConfig:
    """Structural description of one layer's cell.

    ``lower_dim`` is the memory width of the layer below and is set only for
    depth-gated layers above the first. ``first_layer_gate`` controls whether a
    first-layer DGLSTM gets the gated linear input path at all; without it the
    cell is a plain LSTM.
    """

    kind: CellKind
    input_dim: int
    hidden_dim: int
    lower_dim: int | None = None
    tie_forget: bool = True
    peephole: str = "diag"
    first_layer_gate: bool = True
    untie_first_layer_proj: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kind", CellKind(self.kind))
        if self.input_dim < 1 or self.hidden_dim < 1:
            raise ValueError("cell dimensions must be >= 1")
        if self.peephole not in PEEPHOLE_MODES:
            raise ValueError(f"peephole must be one of {PEEPHOLE_MODES}, got {self.peephole!r}")
        if self.lower_dim is not None and self.kind is not CellKind.DGLSTM:
            raise ValueError("only depth-gated cells take a lower memory cell")

    @property
    def is_gated_memory(self) -> bool:
        return self.kind in (CellKind.LSTM, CellKind.DGLSTM)

    @property
    def has_depth_gate(self) -> bool:
        if self.kind is not CellKind.DGLSTM:
            return False
        return self.lower_dim is not None or self.first_layer_gate

    @property
    def is_upper(self) -> bool:
        return self.lower_dim is not None

    def peephole_name(self, gate: str) -> str | None:
        if self.peephole == "none":
            return None
        return ("w_c" if self.peephole == "diag" else "W_c") + gate

    @property
    def lower_name(self) -> str:
        return "w_ld" if self.lower_dim == self.hidden_dim else "W_ld"

    def shapes(self) -> dict[str, tuple[int, int]]:
        """Names and shapes of every tensor this cell owns, in canonical order."""
        n, h = self.input_dim, self.hidden_dim
        if self.kind is CellKind.RNN:
            return {"W_xh": (h, n), "W_hh": (h, h), "b_h": (h, 1)}
        if self.kind is CellKind.GRU:
            out = {}
            for g in "zrn":
                out[f"W_x{g}"] = (h, n)
                out[f"W_h{g}"] = (h, h)
                out[f"b_{g}"] = (h, 1)
            return out

        peep = (h, 1) if self.peephole == "diag" else (h, h)
        gates = "icfo" if not self.tie_forget else "ico"
        out = {}
        for g in gates:
            out[f"W_x{g}"] = (h, n)
        for g in gates:
            out[f"W_h{g}"] = (h, h)
        for g in gates:
            name = self.peephole_name(g)
            if g != "c" and name is not None:
                out[name] = peep
        for g in gates:
            out[f"b_{g}"] = (h, 1)
        if self.has_depth_gate:
            out["W_xd"] = (h, n)
            name = self.peephole_name("d")
            if name is not None:
                out[name] = peep
            out["b_d"] = (h, 1)
            if self.is_upper:
                if self.lower_dim == h:
                    out["w_ld"] = (h, 1)
                else:
                    out["W_ld"] = (h, self.lower_dim)
                    out["W_lc"] = (h, self.lower_dim)
            elif self.untie_first_layer_proj:
                out["W_xp"] = (h, n)
        return out


@dataclass(frozen=True)
class CellParams:
    """A cell's configuration together with its weight tensors.

    The tensor mapping must contain exactly the names listed by
    ``config.shapes()`` with matching shapes.
    """

    config: CellConfig
    tensors: Mapping[str, Tensor]

    def __post_init__(self):
        expected = self.config.shapes()
        if set(expected) != set(self.tensors):
            missing = sorted(set(expected) - set(self.tensors))
            extra = sorted(set(self.tensors) - set(expected))
            raise ValueError(f"{self.config.kind.value} cell tensors: missing {missing}, unexpected {extra}")
        for name, shape in expected.items():
            if self.tensors[name].shape != shape:
                raise DimensionError(f"{name} must have shape {shape}, got {self.tensors[name].shape}")

    @property
    def cell_kind(self) -> CellKind:
        return self.config.kind

    @property
    def input_dim(self) -> int:
        return self.config.input_dim

    @property
    def hidden_dim(self) -> int:
        return self.config.hidden_dim

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def get(self, name: str | None) -> Tensor | None:
        if name is None:
            return None
        return self.tensors.get(name)


@dataclass
class LayerState:
    """Recurrent state of one layer: output ``h`` and, for LSTM-type cells, memory ``c``."""

    h: Tensor
    c: Tensor | None = None

    @classmethod
    def zeros(cls, config: CellConfig, batch: int = 1) -> "LayerState":
        h = np.zeros((config.hidden_dim, batch))
        return cls(h, np.zeros_like(h) if config.is_gated_memory else None)


def _check_inputs(p: CellParams, x: Tensor, prev: LayerState) -> None:
    cfg = p.config
    if x.ndim != 2 or x.shape[0] != cfg.input_dim:
        raise DimensionError(f"input must have {cfg.input_dim} rows, got shape {x.shape}")
    want = (cfg.hidden_dim, x.shape[1])
    if prev.h.shape != want:
        raise DimensionError(f"previous h must have shape {want}, got {prev.h.shape}")
    if cfg.is_gated_memory and (prev.c is None or prev.c.shape != want):
        got = None if prev.c is None else prev.c.shape
        raise DimensionError(f"previous c must have shape {want}, got {got}")


def peep(w: Tensor | None, c: Tensor) -> Tensor | float:
    """Peephole contribution: elementwise for a vector, matrix product otherwise."""
    if w is None:
        return 0.0
    # a (n, 1) weight against an n-row cell is diagonal; for n == 1 both readings agree
    if w.shape[1] == 1 and w.shape[0] == c.shape[0]:
        return w * c
    return w @ c


# ---------------------------------------------------------------------------
# simple RNN


def rnn_forward(p: CellParams, x: Tensor, prev: LayerState):
    h = np.tanh(p["W_hh"] @ prev.h + p["W_xh"] @ x + p["b_h"])
    return LayerState(h), {"x": x, "h_prev": prev.h, "h": h}


def rnn_step(p: CellParams, x: Tensor, prev: LayerState) -> LayerState:
    _check_inputs(p, x, prev)
    return rnn_forward(p, x, prev)[0]


# ---------------------------------------------------------------------------
# GRU


def gru_forward(p: CellParams, x: Tensor, prev: LayerState):
    h_p = prev.h
    z = sigmoid(p["W_xz"] @ x + p["W_hz"] @ h_p + p["b_z"])
    r = sigmoid(p["W_xr"] @ x + p["W_hr"] @ h_p + p["b_r"])
    rh = r * h_p
    n = np.tanh(p["W_xn"] @ x + p["W_hn"] @ rh + p["b_n"])
    h = (1.0 - z) * h_p + z * n
    cache = {"x": x, "h_prev": h_p, "z": z, "r": r, "rh": rh, "n": n}
    return LayerState(h), cache


def gru_step(p: CellParams, x: Tensor, prev: LayerState) -> LayerState:
    """Standard GRU: ``h' = (1 - z) * h + z * n`` with the reset gate inside the candidate."""
    _check_inputs(p, x, prev)
    return gru_forward(p, x, prev)[0]


# ---------------------------------------------------------------------------
# LSTM and depth-gated LSTM


def gated_forward(p: CellParams, x: Tensor, prev: LayerState, lower_c: Tensor | None = None):
    """Shared forward for LSTM and DGLSTM cells.

    The depth-gated memory update adds ``d * s`` to the usual LSTM cell, where
    ``s`` is the lower layer's memory cell for upper layers and a linear
    projection of the input for the first layer.
    """
    cfg = p.config
    h_p, c_p = prev.h, prev.c

    i = sigmoid(p["W_xi"] @ x + p["W_hi"] @ h_p + peep(p.get(cfg.peephole_name("i")), c_p) + p["b_i"])
    if cfg.tie_forget:
        f = 1.0 - i
    else:
        f = sigmoid(p["W_xf"] @ x + p["W_hf"] @ h_p + peep(p.get(cfg.peephole_name("f")), c_p) + p["b_f"])
    g = np.tanh(p["W_xc"] @ x + p["W_hc"] @ h_p + p["b_c"])
    c = f * c_p + i * g

    d = s = None
    if cfg.has_depth_gate:
        a_d = p["b_d"] + p["W_xd"] @ x + peep(p.get(cfg.peephole_name("d")), c_p)
        if cfg.is_upper:
            a_d = a_d + peep(p[cfg.lower_name], lower_c)
            # a narrower or wider lower cell is mapped to this layer's width first
            s = lower_c if cfg.lower_dim == cfg.hidden_dim else p["W_lc"] @ lower_c
        else:
            s = p["W_xp"] @ x if cfg.untie_first_layer_proj else p["W_xd"] @ x
        d = sigmoid(a_d)
        c = c + d * s

    o = sigmoid(p["W_xo"] @ x + p["W_ho"] @ h_p + peep(p.get(cfg.peephole_name("o")), c) + p["b_o"])
    tc = np.tanh(c)
    h = o * tc
    cache = {
        "x": x, "h_prev": h_p, "c_prev": c_p, "lower_c": lower_c,
        "i": i, "f": f, "g": g, "o": o, "d": d, "s": s, "c": c, "tc": tc,
    }
    return LayerState(h, c), cache


def lstm_step(p: CellParams, x: Tensor, prev: LayerState) -> LayerState:
    """Peephole LSTM step; the output gate peeks at the freshly updated cell."""
    if p.config.kind is not CellKind.LSTM:
        raise CellUsageError(f"lstm_step needs LSTM params, got {p.config.kind.value}")
    _check_inputs(p, x, prev)
    return gated_forward(p, x, prev)[0]


def _check_lower(cfg: CellConfig, lower_c: Tensor | None, batch: int) -> None:
    if cfg.is_upper:
        if lower_c is None:
            raise CellUsageError("upper depth-gated layer needs the lower layer's memory cell")
        if lower_c.shape != (cfg.lower_dim, batch):
            raise DimensionError(f"lower_c must have shape {(cfg.lower_dim, batch)}, got {lower_c.shape}")
    elif lower_c is not None:
        raise CellUsageError("first depth-gated layer has no lower memory cell")


def dglstm_step(p: CellParams, x: Tensor, prev: LayerState, lower_c: Tensor | None = None) -> LayerState:
    cfg = p.config
    if cfg.kind is not CellKind.DGLSTM:
        raise CellUsageError(f"dglstm_step needs DGLSTM params, got {cfg.kind.value}")
    _check_inputs(p, x, prev)
    _check_lower(cfg, lower_c, x.shape[1])
    return gated_forward(p, x, prev, lower_c)[0]


def cell_forward(p: CellParams, x: Tensor, prev: LayerState, lower_c: Tensor | None = None):
    """Dispatch to the right forward for ``p``; returns ``(state, cache)``."""
    kind = p.config.kind
    if kind is CellKind.RNN:
        return rnn_forward(p, x, prev)
    if kind is CellKind.GRU:
        return gru_forward(p, x, prev)
    return gated_forward(p, x, prev, lower_c)


def step(p: CellParams, x: Tensor, prev: LayerState, lower_c: Tensor | None = None) -> LayerState:
    kind = p.config.kind
    if kind is CellKind.RNN:
        return rnn_step(p, x, prev)
    if kind is CellKind.GRU:
        return gru_step(p, x, prev)
    if kind is CellKind.LSTM:
        return lstm_step(p, x, prev)
    return dglstm_step(p, x, prev, lower_c)
