import numpy as np
import pytest

from dglstm.grad import (
    backward, compare_gradients, fd_gradient, grad_check, loss_and_grad, numeric_gradient, relative_error,
)
from dglstm.network import (
    NetworkSpec, UsageError, forward, init_params, param_shapes, random_params, zero_params,
)


def spec_of(kind="dglstm", depth=2, hidden=3, embed=3, vocab=5, **kw):
    return NetworkSpec.uniform(kind, depth, hidden, embed, vocab, **kw)


def assert_close_to_fd(params, spec, toks, tgts, mask=None):
    _, analytic, _ = loss_and_grad(params, spec, toks, tgts, mask=mask)
    numeric = fd_gradient(params, spec, toks, tgts, mask=mask)
    for name, a in analytic.items():
        err = relative_error(a, numeric[name])
        ok = (err <= 1e-4) | (np.abs(a - numeric[name]) <= 1e-9)
        assert ok.all(), f"{name}: max rel err {err.max():.2e}"


def test_numeric_gradient_quadratic():
    g = numeric_gradient(lambda p: float(p["theta"][0, 0]) ** 2, {"theta": np.array([[3.0]])})
    assert abs(g["theta"][0, 0] - 6.0) <= 1e-8


def test_numeric_gradient_leaves_input_untouched():
    params = {"a": np.array([[1.0, 2.0]])}
    numeric_gradient(lambda p: float(p["a"].sum() ** 2), params)
    assert np.array_equal(params["a"], [[1.0, 2.0]])


def test_output_bias_gradient_of_zero_model():
    spec = spec_of(vocab=6)
    params = zero_params(spec)
    _, g, _ = loss_and_grad(params, spec, [2], [4])
    expected = np.full((6, 1), 1 / 6)
    expected[4] -= 1.0
    assert np.max(np.abs(g["b_out"] - expected)) <= 1e-12
    fd = fd_gradient(params, spec, [2], [4])
    assert np.max(np.abs(fd["b_out"] - expected)) <= 1e-8


def test_unused_embedding_columns_get_zero_gradient():
    spec = spec_of(vocab=7)
    params = random_params(spec, 1)
    _, g, _ = loss_and_grad(params, spec, [1, 3, 1], [3, 6, 0])
    unused = [0, 2, 4, 5, 6]
    assert not g["embedding"][:, unused].any()
    assert g["embedding"][:, [1, 3]].any()


VARIANTS = [
    dict(kind="rnn"),
    dict(kind="gru"),
    dict(kind="lstm"),
    dict(kind="lstm", tie_forget=False),
    dict(kind="lstm", peephole="full"),
    dict(kind="lstm", peephole="none"),
    dict(kind="dglstm"),
    dict(kind="dglstm", tie_forget=False),
    dict(kind="dglstm", peephole="full"),
    dict(kind="dglstm", peephole="none"),
    dict(kind="dglstm", untie_first_layer_proj=True),
    dict(kind="dglstm", first_layer_gate=False),
    dict(kind="dglstm", interlayer_affine=True),
]


@pytest.mark.parametrize("variant", VARIANTS, ids=lambda v: "-".join(str(x) for x in v.values()))
def test_backward_matches_finite_differences(variant):
    variant = dict(variant)
    spec = spec_of(variant.pop("kind"), depth=3, **variant)
    rng = np.random.default_rng(7)
    toks, tgts = rng.integers(0, 5, 4), rng.integers(0, 5, 4)
    assert_close_to_fd(random_params(spec, 7), spec, toks, tgts)


@pytest.mark.parametrize("kind", ["lstm", "dglstm", "gru", "rnn"])
def test_mixed_widths_match_finite_differences(kind):
    spec = NetworkSpec(kind, 3, 2, (3, 5, 2), 4)
    rng = np.random.default_rng(2)
    assert_close_to_fd(random_params(spec, 2), spec, rng.integers(0, 4, 3), rng.integers(0, 4, 3))


def test_masked_batch_matches_finite_differences():
    spec = spec_of("dglstm")
    toks = np.array([[1, 2], [3, 0], [4, 0]])
    tgts = np.array([[3, 1], [4, 0], [2, 0]])
    mask = np.array([[1, 1], [1, 0], [1, 0]], dtype=float)
    assert_close_to_fd(random_params(spec, 5), spec, toks, tgts, mask)


def test_masked_batch_is_token_weighted_average():
    spec = spec_of("dglstm")
    params = random_params(spec, 8)
    seqs = [([1, 2, 3], [2, 3, 4]), ([4], [0])]
    toks = np.array([[1, 4], [2, 0], [3, 0]])
    tgts = np.array([[2, 0], [3, 0], [4, 0]])
    mask = np.array([[1, 1], [1, 0], [1, 0]], dtype=float)
    _, g, _ = loss_and_grad(params, spec, toks, tgts, mask=mask)
    parts = [loss_and_grad(params, spec, i, t)[1] for i, t in seqs]
    for name in g:
        expected = (3 * parts[0][name] + 1 * parts[1][name]) / 4
        assert np.max(np.abs(g[name] - expected)) <= 1e-12


def test_gradient_linearity_over_two_sequences():
    spec = spec_of("dglstm", depth=3)
    params = random_params(spec, 3)
    a, b = ([1, 2, 0], [2, 0, 4]), ([3, 3, 1], [1, 4, 4])
    toks = np.array([a[0], b[0]]).T
    tgts = np.array([a[1], b[1]]).T
    _, g, _ = loss_and_grad(params, spec, toks, tgts)
    ga = loss_and_grad(params, spec, *a)[1]
    gb = loss_and_grad(params, spec, *b)[1]
    for name in g:
        assert np.max(np.abs(g[name] - (ga[name] + gb[name]) / 2)) <= 1e-12


def test_backward_is_deterministic():
    spec = spec_of("dglstm", depth=3)
    params = random_params(spec, 0)
    tape = forward(params, spec, [1, 2, 3])
    g1 = backward(params, spec, tape, [2, 3, 4])
    g2 = backward(params, spec, tape, [2, 3, 4])
    assert all(np.array_equal(g1[n], g2[n]) for n in g1)
    assert list(g1) == list(param_shapes(spec))
    assert all(np.isfinite(v).all() for v in g1.values())


def test_backward_rejects_foreign_tape():
    spec = spec_of(depth=2)
    other = spec_of(depth=3)
    tape = forward(random_params(other, 0), other, [1, 2])
    with pytest.raises(UsageError):
        backward(random_params(spec, 0), spec, tape, [1, 2])
    tape = forward(random_params(spec, 0), spec, [1, 2])
    with pytest.raises(UsageError):
        backward(random_params(spec, 0), spec, tape, [1, 2, 3])


def test_grad_check_detects_corrupted_gradient():
    spec = spec_of("lstm", depth=2, hidden=4)
    params = random_params(spec, 1)
    rng = np.random.default_rng(1)
    toks, tgts = rng.integers(0, 5, 4), rng.integers(0, 5, 4)
    _, g, _ = loss_and_grad(params, spec, toks, tgts)
    bad = dict(g)
    bad["layer1.W_hc"] = g["layer1.W_hc"] * 1.01
    report = grad_check(params, spec, toks, tgts, 1e-4, analytic=bad)
    assert not report.passed
    assert "W_hc" in report.worst
    assert any(m.name == "layer1.W_hc" for m in report.failures)
    assert report.lines()[-1].startswith("FAIL max_rel_err=")
    assert report.lines()[0].startswith("layer1.W_hc[")


def test_grad_check_single_step_passes():
    spec = spec_of("dglstm", depth=2, hidden=3)
    report = grad_check(random_params(spec, 4), spec, [2], [3], tol=1e-4)
    assert report.passed, str(report)
    assert report.lines() == [f"PASS max_rel_err={report.max_rel_err:.3e}"]


def test_relative_error_floor():
    assert relative_error(0.0, 0.0) == 0.0
    assert relative_error(1e-12, 0.0) == pytest.approx(1e-4)
    assert relative_error(2.0, 1.0) == pytest.approx(0.5)


def test_closed_depth_gate_reduces_to_stacked_lstm_gradients():
    spec = spec_of("dglstm", depth=3, hidden=4)
    params = random_params(spec, 6)
    for name in params:
        if name.endswith(".b_d"):
            params[name] = np.full(params[name].shape, -50.0)
    lspec = NetworkSpec(**{**spec.__dict__, "cell_kind": "lstm"})
    lparams = {n: params[n] for n in param_shapes(lspec)}
    toks, tgts = [1, 0, 3, 2], [0, 3, 2, 4]
    _, g, _ = loss_and_grad(params, spec, toks, tgts)
    _, gl, _ = loss_and_grad(lparams, lspec, toks, tgts)
    for name in gl:
        assert np.max(np.abs(g[name] - gl[name])) <= 1e-6, name


def test_compare_gradients_needs_positive_tol():
    with pytest.raises(ValueError):
        compare_gradients({}, {}, 0.0)
