import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iva.autodiff import (
    AdamW, Parameter, Tensor, concat, cosine_lr, cross_entropy, embedding, exp, gelu, layer_norm,
    log, matmul, softmax, square, stack, tanh,
)
from iva.errors import DimensionError, DomainError, StateError

from conftest import numeric_grad, rel_err


# -- matmul ----------------------------------------------------------------------

def test_matmul_identity():
    v = np.array([[1.0], [-2.0], [0.5]])
    assert np.array_equal(matmul(Tensor(np.eye(3)), Tensor(v)).data, v)


def test_matmul_hand_example():
    out = matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[1.0], [1.0]]))
    assert np.array_equal(out.data, [[3.0], [7.0]])


def test_matmul_gradient_matches_finite_differences(rng):
    a = Parameter(rng.standard_normal((4, 5)))
    b = Parameter(rng.standard_normal((5, 2)))
    matmul(a, b).sum().backward()
    f = lambda: float((a.data @ b.data).sum())
    assert rel_err(a.grad, numeric_grad(f, a.data)) < 1e-7
    assert rel_err(b.grad, numeric_grad(f, b.data)) < 1e-7


def test_matmul_batched_broadcast_gradient(rng):
    a = Parameter(rng.standard_normal((3, 2, 4, 5)))
    w = Parameter(rng.standard_normal((5, 3)))
    c = rng.standard_normal((3, 2, 4, 3))
    (matmul(a, w) * c).sum().backward()
    f = lambda: float(((a.data @ w.data) * c).sum())
    assert rel_err(w.grad, numeric_grad(f, w.data)) < 1e-7
    assert rel_err(a.grad, numeric_grad(f, a.data)) < 1e-7


def test_matmul_shape_mismatch_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(4, 1\)"):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 1))))


# -- softmax ---------------------------------------------------------------------

def test_softmax_uniform():
    assert np.allclose(softmax(Tensor([0.0, 0.0, 0.0])).data, 1 / 3, atol=1e-15)


def test_softmax_temperature_closed_form():
    out = softmax(Tensor([2.0, 0.0]), temperature=0.5).data
    e4 = np.exp(4.0)
    assert np.allclose(out, [e4 / (e4 + 1), 1 / (e4 + 1)], rtol=1e-14)
    assert np.allclose(out, [0.9820, 0.0180], atol=5e-5)


@pytest.mark.parametrize("tau", [0.0, -1.0])
def test_softmax_rejects_nonpositive_temperature(tau):
    with pytest.raises(DomainError):
        softmax(Tensor([1.0, 2.0]), temperature=tau)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6), st.integers(1, 7), st.integers(0, 1), st.floats(0.05, 5.0),
       st.integers(0, 2 ** 32 - 1))
def test_softmax_rows_positive_and_normalized(rows, cols, axis, tau, seed):
    x = np.random.default_rng(seed).normal(0, 30, (rows, cols))
    out = softmax(Tensor(x), axis=axis, temperature=tau).data
    assert np.all(out > 0) or np.all(out >= 0) and np.isfinite(out).all()
    assert np.all(np.abs(out.sum(axis=axis) - 1) < 1e-12)


def test_softmax_is_stable_for_huge_logits():
    out = softmax(Tensor([1000.0, 0.0, -1000.0])).data
    assert np.isfinite(out).all() and out[0] == 1.0


@pytest.mark.parametrize("axis", [0, 1, -1])
def test_softmax_gradient(rng, axis):
    x = Parameter(rng.standard_normal((3, 4)))
    c = rng.standard_normal((3, 4))
    (softmax(x, axis=axis, temperature=0.7) * c).sum().backward()

    def f():
        z = x.data / 0.7
        e = np.exp(z - z.max(axis=axis, keepdims=True))
        return float((e / e.sum(axis=axis, keepdims=True) * c).sum())
    assert rel_err(x.grad, numeric_grad(f, x.data), floor=1e-5) < 1e-5


# -- layer norm -----------------------------------------------------------------

def test_layer_norm_constant_input_is_zero():
    out = layer_norm(Tensor(np.full((2, 5), 3.7)), np.ones(5), np.zeros(5)).data
    assert np.allclose(out, 0.0, atol=1e-12)


def test_layer_norm_two_values():
    out = layer_norm(Tensor([1.0, 3.0]), np.ones(2), np.zeros(2)).data
    # variance 1, eps 1e-5 -> 1/sqrt(1+1e-5)
    assert np.allclose(out, [-1.0, 1.0], atol=1e-4)
    assert np.allclose(out, [-1 / np.sqrt(1 + 1e-5), 1 / np.sqrt(1 + 1e-5)], rtol=1e-12)


def test_layer_norm_gradient(rng):
    x = Parameter(rng.standard_normal((3, 6)))
    g = Parameter(rng.standard_normal(6))
    b = Parameter(rng.standard_normal(6))
    c = rng.standard_normal((3, 6))
    (layer_norm(x, g, b) * c).sum().backward()

    def f():
        mu = x.data.mean(-1, keepdims=True)
        var = x.data.var(-1, keepdims=True)
        return float((((x.data - mu) / np.sqrt(var + 1e-5) * g.data + b.data) * c).sum())
    for p in (x, g, b):
        assert rel_err(p.grad, numeric_grad(f, p.data), floor=1e-5) < 1e-6


def test_layer_norm_zero_length_axis():
    with pytest.raises(DimensionError):
        layer_norm(Tensor(np.zeros((3, 0))), np.zeros(0), np.zeros(0))


def test_layer_norm_gain_shape_checked():
    with pytest.raises(DimensionError):
        layer_norm(Tensor(np.zeros((3, 4))), np.ones(3), np.zeros(4))


# -- every differentiable op against finite differences ------------------------

def _check(build, *arrays, tol=1e-5):
    params = [Parameter(a) for a in arrays]
    build(*params).backward()
    f = lambda: float(build(*[Tensor(p.data) for p in params]).data)
    for p in params:
        assert rel_err(p.grad, numeric_grad(f, p.data), floor=1e-5) < tol


OPS = {
    "add_sub_mul_div": lambda a, b: ((a + b) * (a - b) / (b * b + 1.0)).sum(),
    "broadcast": lambda a, b: (a * b[0] + b[1]).sum(),
    "exp_log_tanh": lambda a, b: (log(exp(a) + 1.0) * tanh(b)).sum(),
    "gelu": lambda a, b: (gelu(a) * b).sum(),
    "mean_axis": lambda a, b: (a.mean(axis=0) * b[0]).sum(),
    "reshape_transpose": lambda a, b: (a.reshape(4, 3).transpose(1, 0) @ b.transpose(1, 0)).sum(),
    "getitem": lambda a, b: (a[1:, ::2] * b[:2, :2]).sum(),
    "concat_stack": lambda a, b: (concat([a, b], axis=0) * stack([a, b], 0).reshape(6, 4)[:, :4]).sum(),
    "square": lambda a, b: (square(a) * b).sum(),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_op_gradients(rng, name):
    _check(OPS[name], rng.standard_normal((3, 4)), rng.standard_normal((3, 4)))


def test_cross_entropy_gradient_and_masking(rng):
    logits = Parameter(rng.standard_normal((5, 7)))
    t = rng.integers(0, 7, 5)
    w = np.array([1.0, 0.0, 2.0, 0.0, 1.0])
    cross_entropy(logits, t, w).backward()
    assert np.all(logits.grad[[1, 3]] == 0.0)

    def f():
        z = logits.data - logits.data.max(-1, keepdims=True)
        lp = z - np.log(np.exp(z).sum(-1, keepdims=True))
        return float(-(w * lp[np.arange(5), t]).sum() / w.sum())
    assert rel_err(logits.grad, numeric_grad(f, logits.data), floor=1e-5) < 1e-6


def test_embedding_gradient_accumulates_repeated_ids(rng):
    table = Parameter(rng.standard_normal((5, 3)))
    embedding(table, np.array([[1, 1, 4]])).sum().backward()
    assert np.array_equal(table.grad[:, 0], [0, 2, 0, 0, 1])


# -- accumulation and determinism -------------------------------------------------

def test_two_backward_passes_double_the_gradient(rng):
    a = Parameter(rng.standard_normal((3, 3)))
    b = rng.standard_normal((3, 3))
    (a @ b).sum().backward()
    once = a.grad.copy()
    (a @ b).sum().backward()
    assert np.array_equal(a.grad, 2 * once)


@pytest.mark.parametrize("k", [1, 2, 5])
def test_parameter_used_at_k_sites_sums_site_gradients(rng, k):
    w = Parameter(rng.standard_normal((4, 4)))
    xs = [rng.standard_normal((2, 4)) for _ in range(k)]
    h = None
    for x in xs:
        term = tanh(Tensor(x) @ w).sum()
        h = term if h is None else h + term
    h.backward()
    total = w.grad.copy()
    separate = np.zeros_like(total)
    for x in xs:
        w.zero_grad()
        tanh(Tensor(x) @ w).sum().backward()
        separate += w.grad
    assert np.allclose(total, separate, rtol=1e-13, atol=1e-14)


def test_forward_is_bit_deterministic():
    def run():
        rng = np.random.default_rng(11)
        x = Tensor(rng.standard_normal((4, 6)))
        w = Parameter(rng.standard_normal((6, 6)))
        return layer_norm(gelu(x @ w), np.ones(6), np.zeros(6)).data
    assert np.array_equal(run(), run())


def test_backward_needs_scalar_or_seed():
    with pytest.raises(DimensionError):
        Parameter(np.ones(3)).backward()


# -- optimizer ----------------------------------------------------------------------

def test_frozen_parameter_is_bitwise_unchanged():
    p = Parameter(np.array([1.5, -2.0]), name="p", frozen=True)
    p.grad = np.array([10.0, -3.0])
    before = p.data.copy()
    AdamW([p], lr=0.1, weight_decay=0.1).step()
    assert np.array_equal(p.data, before)


def test_adamw_converges_on_a_quadratic():
    p = Parameter(np.array([5.0]), name="x")
    opt = AdamW([p], lr=0.1)
    for _ in range(200):
        p.grad = 2 * (p.data - 1.25)
        opt.step()
    assert abs(p.data[0] - 1.25) < 1e-3


def test_adamw_missing_grad_is_a_state_error():
    p = Parameter(np.zeros(2), name="w")
    with pytest.raises(StateError, match="w"):
        AdamW([p]).step()


def test_adamw_decoupled_weight_decay():
    p = Parameter(np.array([2.0]), name="w")
    p.grad = np.zeros(1)
    AdamW([p], lr=0.1, weight_decay=0.5).step()
    assert np.allclose(p.data, 2.0 * (1 - 0.05))


def test_cosine_schedule_endpoints():
    assert cosine_lr(0, 100, 3e-4) == 3e-4
    assert cosine_lr(100, 100, 3e-4) == pytest.approx(0.0, abs=1e-20)
    assert cosine_lr(50, 100, 1.0) == pytest.approx(0.5)
    assert cosine_lr(0, 100, 1.0, warmup_steps=10) == pytest.approx(0.1)
