"""Backpropagation through time for the cell stack, and a finite-difference oracle.

The reverse pass walks the tape from the last step to the first and, inside
each step, from the top layer down. A depth-gated memory cell therefore
collects error from two directions: from its own next step, and from the
layer above through that layer's depth gate and gated linear path.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .cells import CellKind, CellParams
from .network import (
    NetworkSpec, Params, UnrolledTape, UsageError, as_mask, as_token_matrix,
    check_params, forward, layer_params, loss,
)
from .numerics import softmax

REL_ERR_FLOOR = 1e-8


# ---------------------------------------------------------------------------
# per-cell reverse steps; each accumulates into ``g`` (the layer's gradient
# tensors, keyed by unprefixed name) and returns (dx, dh_prev, dc_prev, dlower_c)


def _peep_back(w, c, da, name, g):
    if w is None:
        return 0.0
    if w.shape[1] == 1 and w.shape[0] == c.shape[0]:
        g[name] += (da * c).sum(axis=1, keepdims=True)
        return w * da
    g[name] += da @ c.T
    return w.T @ da


def _rnn_backward(p: CellParams, cache, dh, dc, g):
    da = dh * (1.0 - cache["h"] ** 2)
    g["W_hh"] += da @ cache["h_prev"].T
    g["W_xh"] += da @ cache["x"].T
    g["b_h"] += da.sum(axis=1, keepdims=True)
    return p["W_xh"].T @ da, p["W_hh"].T @ da, None, None


def _gru_backward(p: CellParams, cache, dh, dc, g):
    x, h_p, z, r, rh, n = (cache[k] for k in ("x", "h_prev", "z", "r", "rh", "n"))
    dz = dh * (n - h_p)
    dh_p = dh * (1.0 - z)

    da_n = dh * z * (1.0 - n * n)
    g["W_xn"] += da_n @ x.T
    g["W_hn"] += da_n @ rh.T
    g["b_n"] += da_n.sum(axis=1, keepdims=True)
    drh = p["W_hn"].T @ da_n
    dh_p = dh_p + drh * r
    dx = p["W_xn"].T @ da_n

    da_r = drh * h_p * r * (1.0 - r)
    da_z = dz * z * (1.0 - z)
    for gate, da in (("r", da_r), ("z", da_z)):
        g[f"W_x{gate}"] += da @ x.T
        g[f"W_h{gate}"] += da @ h_p.T
        g[f"b_{gate}"] += da.sum(axis=1, keepdims=True)
        dx = dx + p[f"W_x{gate}"].T @ da
        dh_p = dh_p + p[f"W_h{gate}"].T @ da
    return dx, dh_p, None, None


def _gated_backward(p: CellParams, cache, dh, dc, g):
    cfg = p.config
    x, h_p, c_p = cache["x"], cache["h_prev"], cache["c_prev"]
    i, f, gc, o, c, tc = (cache[k] for k in ("i", "f", "g", "o", "c", "tc"))

    # h = o * tanh(c); the output gate peeks at the new c
    da_o = dh * tc * o * (1.0 - o)
    dc = dc + dh * o * (1.0 - tc * tc)
    name = cfg.peephole_name("o")
    dc = dc + _peep_back(p.get(name), c, da_o, name, g)

    di = dc * gc
    da_g = dc * i * (1.0 - gc * gc)
    df = dc * c_p
    dc_p = dc * f

    dx = 0.0
    dh_p = 0.0
    dlower = None
    if cfg.has_depth_gate:
        d, s = cache["d"], cache["s"]
        da_d = dc * s * d * (1.0 - d)
        ds = dc * d
        g["W_xd"] += da_d @ x.T
        g["b_d"] += da_d.sum(axis=1, keepdims=True)
        dx = p["W_xd"].T @ da_d
        name = cfg.peephole_name("d")
        dc_p = dc_p + _peep_back(p.get(name), c_p, da_d, name, g)
        if cfg.is_upper:
            lname = cfg.lower_name
            lower_c = cache["lower_c"]
            dlower = _peep_back(p[lname], lower_c, da_d, lname, g)
            if cfg.lower_dim == cfg.hidden_dim:
                dlower = dlower + ds
            else:
                g["W_lc"] += ds @ lower_c.T
                dlower = dlower + p["W_lc"].T @ ds
        else:
            proj = "W_xp" if cfg.untie_first_layer_proj else "W_xd"
            g[proj] += ds @ x.T
            dx = dx + p[proj].T @ ds

    if cfg.tie_forget:
        # f = 1 - i routes forget-gate error into the input gate with a minus sign
        di = di - df
        gates = (("i", di * i * (1.0 - i)), ("c", da_g), ("o", da_o))
    else:
        gates = (("i", di * i * (1.0 - i)), ("f", df * f * (1.0 - f)), ("c", da_g), ("o", da_o))

    for gate, da in gates:
        g[f"W_x{gate}"] += da @ x.T
        g[f"W_h{gate}"] += da @ h_p.T
        g[f"b_{gate}"] += da.sum(axis=1, keepdims=True)
        dx = dx + p[f"W_x{gate}"].T @ da
        dh_p = dh_p + p[f"W_h{gate}"].T @ da
        if gate in "if":
            name = cfg.peephole_name(gate)
            dc_p = dc_p + _peep_back(p.get(name), c_p, da, name, g)
    return dx, dh_p, dc_p, dlower


_BACKWARD = {
    CellKind.RNN: _rnn_backward,
    CellKind.GRU: _gru_backward,
    CellKind.LSTM: _gated_backward,
    CellKind.DGLSTM: _gated_backward,
}


def backward(params: Params, spec: NetworkSpec, tape: UnrolledTape, targets, mask=None) -> Params:
    """Exact gradient of :func:`dglstm.network.sequence_loss` for ``tape``.

    Returns a dict with the same names and shapes as ``params``.
    """
    check_params(spec, params)
    if tape.depth != spec.depth:
        raise UsageError(f"tape has {tape.depth} layers, network has {spec.depth}")
    tgt = as_token_matrix(targets)
    T, B = tape.tokens.shape
    if tgt.shape != (T, B) or len(tape) != T:
        raise UsageError(f"targets shape {tgt.shape} does not match tape of shape {(T, B)}")
    if tape.logits and tape.logits[0].shape != (spec.vocab_size, B):
        raise UsageError("tape was not produced with these parameters")
    m = np.ones((T, B)) if mask is None else as_mask(mask, (T, B))
    weight = m / m.sum()

    grads = {name: np.zeros_like(value) for name, value in params.items()}
    cells = layer_params(spec, params)
    layer_grads = [
        {name: grads[f"layer{l}.{name}"] for name in p.config.shapes()} for l, p in enumerate(cells)
    ]
    W_out = params["W_out"]
    cols = np.arange(B)

    dh_next = [np.zeros((p.hidden_dim, B)) for p in cells]
    dc_next = [np.zeros((p.hidden_dim, B)) if p.config.is_gated_memory else None for p in cells]
    for t in range(T - 1, -1, -1):
        dlogits = softmax(tape.logits[t])
        dlogits[tgt[t], cols] -= 1.0
        dlogits *= weight[t]
        grads["W_out"] += dlogits @ tape.tops[t].T
        grads["b_out"] += dlogits.sum(axis=1, keepdims=True)

        dh_above = W_out.T @ dlogits
        dc_above = None
        for l in range(spec.depth - 1, -1, -1):
            p = cells[l]
            dh = dh_next[l] + dh_above
            dc = None
            if dc_next[l] is not None:
                dc = dc_next[l] if dc_above is None else dc_next[l] + dc_above
            dx, dh_p, dc_p, dlower = _BACKWARD[p.config.kind](p, tape.caches[t][l], dh, dc, layer_grads[l])
            dh_next[l] = dh_p
            dc_next[l] = dc_p
            dc_above = dlower
            if l > 0:
                if spec.interlayer_affine:
                    grads[f"layer{l}.W_in"] += dx @ tape.below[t][l].T
                    grads[f"layer{l}.b_in"] += dx.sum(axis=1, keepdims=True)
                    dh_above = params[f"layer{l}.W_in"].T @ dx
                else:
                    dh_above = dx
            else:
                np.add.at(grads["embedding"].T, tape.tokens[t], dx.T)
    return grads


def loss_and_grad(params: Params, spec: NetworkSpec, tokens, targets, init_states=None, mask=None):
    from .network import sequence_loss

    tape = forward(params, spec, tokens, init_states)
    return sequence_loss(tape, targets, mask), backward(params, spec, tape, targets, mask), tape


# ---------------------------------------------------------------------------
# finite differences


def numeric_gradient(fn: Callable[[Params], float], params: Params, epsilon: float = 1e-5) -> Params:
    """Central differences of ``fn`` with respect to every coordinate of ``params``.

    Each coordinate is perturbed on a private copy and ``fn`` is re-evaluated
    from scratch, so the result does not depend on evaluation order.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    work = {name: np.array(value, dtype=np.float64, copy=True) for name, value in params.items()}
    out = {}
    for name, arr in work.items():
        grad = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = grad.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + epsilon
            up = fn(work)
            flat[k] = orig - epsilon
            down = fn(work)
            flat[k] = orig
            gflat[k] = (up - down) / (2.0 * epsilon)
        out[name] = grad
    return out


def fd_gradient(params: Params, spec: NetworkSpec, tokens, targets, epsilon: float = 1e-5,
                init_states=None, mask=None) -> Params:
    return numeric_gradient(lambda p: loss(p, spec, tokens, targets, init_states, mask), params, epsilon)


# ---------------------------------------------------------------------------
# gradient check report


def relative_error(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), REL_ERR_FLOOR)


@dataclass
class Mismatch:
    name: str
    index: tuple[int, int]
    analytic: float
    numeric: float
    rel_err: float

    def __str__(self):
        r, c = self.index
        return (f"{self.name}[{r},{c}] analytic={self.analytic:.10e} "
                f"numeric={self.numeric:.10e} rel_err={self.rel_err:.3e}")


@dataclass
class GradCheckReport:
    max_rel_err: float
    worst: str
    passed: bool
    tol: float
    failures: list[Mismatch] = field(default_factory=list)

    def lines(self) -> list[str]:
        out = [str(m) for m in self.failures]
        out.append(f"{'PASS' if self.passed else 'FAIL'} max_rel_err={self.max_rel_err:.3e}")
        return out

    def __str__(self):
        return "\n".join(self.lines())


def compare_gradients(analytic: Params, numeric: Params, tol: float) -> GradCheckReport:
    if tol <= 0:
        raise ValueError("tol must be positive")
    worst_err, worst = 0.0, ""
    failures = []
    for name, a in analytic.items():
        err = relative_error(a, numeric[name])
        for idx in zip(*np.nonzero(err > tol)):
            idx = tuple(int(v) for v in idx)
            failures.append(Mismatch(name, idx, float(a[idx]), float(numeric[name][idx]), float(err[idx])))
        if err.size:
            k = np.unravel_index(int(err.argmax()), err.shape)
            if not worst or err[k] > worst_err:
                worst_err = float(err[k])
                worst = f"{name}[{k[0]},{k[1]}]"
    return GradCheckReport(worst_err, worst, worst_err <= tol, tol, failures)


def grad_check(params: Params, spec: NetworkSpec, tokens, targets, tol: float = 1e-4,
               epsilon: float = 1e-5, analytic: Params | None = None) -> GradCheckReport:
    """Compare :func:`backward` against central differences coordinate by coordinate.

    Failures are reported, never raised. Pass ``analytic`` to check a
    precomputed gradient instead of a fresh backward pass.
    """
    if analytic is None:
        _, analytic, _ = loss_and_grad(params, spec, tokens, targets)
    numeric = fd_gradient(params, spec, tokens, targets, epsilon)
    return compare_gradients(analytic, numeric, tol)
