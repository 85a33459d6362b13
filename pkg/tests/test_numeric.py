import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from groundtalk.errors import DimensionError, TrainingDivergence
from groundtalk.numeric import (
    ParameterBlock,
    Tape,
    Tensor,
    _pykernels,
    adam_step,
    cross_entropy,
    dot_attention,
    embedding_lookup,
    finite_difference_check,
    matmul,
    recurrent_cell,
    relu,
    softmax,
    softmax_cross_entropy,
    tanh,
)
from groundtalk.numeric import tensor as T
from groundtalk.numeric.checkpoint import decode_checkpoint, encode_checkpoint

SEEDS = range(20)


def leaf(rng, *shape, scale=1.0):
    return Tensor(rng.normal(size=shape) * scale, requires_grad=True)


def fd_error(fn, params, tol):
    rep = finite_difference_check(fn, params, step=1e-5, tolerance=tol)
    return rep


# ---------------------------------------------------------------- matmul


def test_matmul_identity():
    out = matmul(Tensor(np.eye(2)), Tensor([[1, 2], [3, 4]]))
    assert out.data.tolist() == [[1, 2], [3, 4]]


def test_matmul_selection_row():
    out = matmul(Tensor([[1, 0]]), Tensor([[7.5], [-2.0]]))
    assert out.data.tolist() == [[7.5]]


def test_matmul_shape_error_names_shapes():
    with pytest.raises(DimensionError, match=r"\[3, 4\].*\[3, 2\]"):
        matmul(Tensor(np.zeros((3, 4))), Tensor(np.zeros((3, 2))))


@pytest.mark.parametrize("seed", SEEDS)
def test_matmul_gradient(seed):
    rng = np.random.default_rng(seed)
    a, b = leaf(rng, 3, 4), leaf(rng, 4, 2)
    w = rng.normal(size=(3, 2))
    rep = fd_error(lambda: T.sum(T.mul(matmul(a, b), w)), [a, b], 1e-6)
    assert rep.passed(1e-6), rep


# ---------------------------------------------------------------- softmax / cross entropy


def test_softmax_uniform():
    np.testing.assert_allclose(softmax(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3, rtol=0, atol=1e-15)


def test_softmax_stable_for_huge_logits():
    p = softmax(Tensor([1000.0, 0.0])).data
    assert np.all(np.isfinite(p))
    assert p[0] == pytest.approx(1.0)
    assert p[1] == pytest.approx(0.0, abs=1e-300)


def test_softmax_empty_raises():
    with pytest.raises(DimensionError):
        softmax(Tensor(np.zeros(0)))


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=12), st.randoms())
@settings(max_examples=200, deadline=None)
def test_softmax_sums_to_one_and_is_permutation_equivariant(xs, rnd):
    x = np.array(xs)
    perm = list(range(len(xs)))
    rnd.shuffle(perm)
    p = softmax(Tensor(x)).data
    assert abs(p.sum() - 1.0) <= 1e-9
    assert np.all(p > 0)
    np.testing.assert_allclose(softmax(Tensor(x[perm])).data, p[perm], rtol=1e-14, atol=0)


@pytest.mark.parametrize("seed", SEEDS)
def test_softmax_jacobian(seed):
    rng = np.random.default_rng(seed)
    x = leaf(rng, 6)
    w = rng.normal(size=6)
    rep = fd_error(lambda: T.sum(T.mul(softmax(x), w)), [x], 1e-6)
    assert rep.passed(1e-6), rep


def test_cross_entropy_of_certain_prediction_is_zero():
    assert cross_entropy(Tensor([0.0, 1.0, 0.0]), 1).item() == 0.0


def test_cross_entropy_uniform_is_log_n():
    for i in range(4):
        assert cross_entropy(Tensor([0.25] * 4), i).item() == pytest.approx(math.log(4), abs=1e-12)
    assert math.log(4) == pytest.approx(1.3863, abs=1e-4)


def test_cross_entropy_index_error():
    with pytest.raises(IndexError):
        cross_entropy(Tensor([0.5, 0.5]), 2)


@pytest.mark.parametrize("seed", SEEDS)
def test_cross_entropy_gradient_through_softmax(seed):
    rng = np.random.default_rng(seed)
    z = leaf(rng, 5)
    k = int(rng.integers(5))
    rep = fd_error(lambda: cross_entropy(softmax(z), k), [z], 1e-6)
    assert rep.passed(1e-6), rep
    # analytic form: softmax - onehot
    z.grad = np.zeros(5)
    with Tape() as tape:
        loss = cross_entropy(softmax(z), k)
    tape.backward(loss)
    expect = softmax(Tensor(z.data)).data.copy()
    expect[k] -= 1
    np.testing.assert_allclose(z.grad, expect, atol=1e-12)


@pytest.mark.parametrize("seed", SEEDS)
def test_fused_softmax_cross_entropy_gradient(seed):
    rng = np.random.default_rng(seed)
    z = leaf(rng, 4, 7)
    t = rng.integers(0, 7, 4)
    w = rng.normal(size=4)
    mask = np.ones((4, 7), dtype=bool)
    mask[:, 6] = False
    t = np.minimum(t, 5)
    rep = fd_error(lambda: softmax_cross_entropy(z, t, w, mask), [z], 1e-6)
    assert rep.passed(1e-6), rep


def test_fused_cross_entropy_matches_composite():
    rng = np.random.default_rng(3)
    z = rng.normal(size=(3, 5))
    t = [0, 4, 2]
    fused = softmax_cross_entropy(Tensor(z), t).item()
    composite = sum(cross_entropy(softmax(Tensor(z[i])), t[i]).item() for i in range(3))
    assert fused == pytest.approx(composite, abs=1e-12)


# ---------------------------------------------------------------- relu / tanh / embedding / cell


def test_relu_values():
    assert relu(Tensor([-1.0, 0.0, 2.0])).data.tolist() == [0, 0, 2]


def test_embedding_lookup_rows_and_range():
    table = Tensor(np.arange(12.0).reshape(4, 3))
    assert embedding_lookup(table, [2, 0]).data.tolist() == [[6, 7, 8], [0, 1, 2]]
    with pytest.raises(IndexError):
        embedding_lookup(table, [4])


def test_recurrent_cell_zero_fixed_point():
    H, I = 5, 3
    W, U, b = Tensor(np.zeros((I, 3 * H))), Tensor(np.zeros((H, 3 * H))), Tensor(np.zeros(3 * H))
    out = recurrent_cell(Tensor(np.zeros(H)), Tensor(np.zeros(I)), W, U, b)
    assert out.data.tolist() == [0.0] * H
    # holds for any weights as long as the biases are zero
    rng = np.random.default_rng(0)
    W, U = Tensor(rng.normal(size=(I, 3 * H))), Tensor(rng.normal(size=(H, 3 * H)))
    assert np.all(recurrent_cell(Tensor(np.zeros(H)), Tensor(np.zeros(I)), W, U, b).data == 0.0)


def test_recurrent_cell_shape_error():
    with pytest.raises(DimensionError):
        recurrent_cell(Tensor(np.zeros(4)), Tensor(np.zeros(3)), Tensor(np.zeros((3, 15))), Tensor(np.zeros((5, 15))), Tensor(np.zeros(15)))


def test_recurrent_cell_mask_keeps_state():
    rng = np.random.default_rng(1)
    h = Tensor(rng.normal(size=(3, 4)))
    x = Tensor(rng.normal(size=(3, 2)))
    W, U, b = Tensor(rng.normal(size=(2, 12))), Tensor(rng.normal(size=(4, 12))), Tensor(rng.normal(size=12))
    out = recurrent_cell(h, x, W, U, b, mask=[1, 0, 1]).data
    np.testing.assert_array_equal(out[1], h.data[1])
    assert not np.allclose(out[0], h.data[0])


@pytest.mark.parametrize("seed", SEEDS)
def test_unrolled_cell_gradient(seed):
    rng = np.random.default_rng(seed)
    H, I, B = 4, 3, 2
    W, U, b = leaf(rng, I, 3 * H, scale=0.5), leaf(rng, H, 3 * H, scale=0.5), leaf(rng, 3 * H, scale=0.5)
    xs = [leaf(rng, B, I) for _ in range(5)]
    h0 = leaf(rng, B, H)
    mask = [[1, 1], [1, 0], [1, 1], [0, 1], [1, 1]]
    w = rng.normal(size=(B, H))

    def f():
        h = h0
        for x, m in zip(xs, mask):
            h = recurrent_cell(h, x, W, U, b, mask=m)
        return T.sum(T.mul(tanh(h), w))

    rep = fd_error(f, [W, U, b, h0, *xs], 1e-4)
    assert rep.passed(1e-4), rep


# ---------------------------------------------------------------- attention


def test_attention_single_key_returns_value():
    rng = np.random.default_rng(0)
    v = rng.normal(size=(1, 4))
    for _ in range(3):
        out, w = dot_attention(Tensor(rng.normal(size=4)), Tensor(rng.normal(size=(1, 4))), Tensor(v))
        np.testing.assert_allclose(out.data, v[0], atol=1e-15)


def test_attention_orthogonal_query_averages_values():
    keys = Tensor([[1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [-3.0, 0.0, 0.0]])
    values = Tensor(np.arange(9.0).reshape(3, 3))
    out, w = dot_attention(Tensor([0.0, 1.0, 0.0]), keys, values)
    np.testing.assert_allclose(w, [1 / 3] * 3, atol=1e-15)
    np.testing.assert_allclose(out.data, values.data.mean(axis=0), atol=1e-12)


def test_attention_dimension_error():
    with pytest.raises(DimensionError):
        dot_attention(Tensor(np.zeros(3)), Tensor(np.zeros((2, 4))), Tensor(np.zeros((2, 4))))


@pytest.mark.parametrize("seed", SEEDS)
def test_attention_gradient(seed):
    rng = np.random.default_rng(seed)
    q, k, v = leaf(rng, 2, 4), leaf(rng, 2, 3, 4), leaf(rng, 2, 3, 4)
    mask = np.array([[True, True, False], [True, True, True]])
    w = rng.normal(size=(2, 4))
    rep = fd_error(lambda: T.sum(T.mul(dot_attention(q, k, v, mask)[0], w)), [q, k, v], 1e-6)
    assert rep.passed(1e-6), rep


# ---------------------------------------------------------------- tape


def test_backward_is_deterministic_and_repeatable():
    rng = np.random.default_rng(5)
    a = ParameterBlock("a", rng.normal(size=(4, 6)))
    x = Tensor(rng.normal(size=(3, 4)))
    with Tape() as tape:
        loss = T.sum(tanh(matmul(x, a)))
    tape.backward(loss)
    g1 = a.grad.copy()
    a.zero_grad()
    visited = tape.backward(loss)
    assert visited == len(tape)
    assert g1.tobytes() == a.grad.tobytes()


def test_no_tape_records_nothing():
    a = ParameterBlock("a", np.ones((2, 2)))
    out = matmul(Tensor(np.ones((1, 2))), a)
    assert not out.requires_grad


# ---------------------------------------------------------------- adam


def test_adam_first_step_moves_by_learning_rate():
    for g in (3.0, -0.2, 1e-3):
        p = ParameterBlock("p", [1.0, -1.0])
        p.grad[:] = g
        adam_step([p], 0.01)
        expect = 0.01 * g / (abs(g) + 1e-8)
        np.testing.assert_allclose(p.data, [1.0 - expect, -1.0 - expect], rtol=1e-12)
        assert np.all(p.grad == 0)


def test_adam_reference_learning_rate_example():
    p = ParameterBlock("p", [0.5])
    p.grad[:] = 1.0
    adam_step([p], 1e-4)
    assert p.data[0] == pytest.approx(0.4999, abs=1e-12)


def test_adam_zero_gradient_is_identity():
    p = ParameterBlock("p", np.linspace(-1, 1, 7))
    before = p.data.copy()
    for k in range(3):
        adam_step([p], 0.1)
        assert p.step == k + 1
    assert p.data.tobytes() == before.tobytes()


def test_adam_nan_gradient_names_parameter():
    p = ParameterBlock("decoder.W", [0.0])
    p.grad[:] = np.nan
    with pytest.raises(TrainingDivergence, match="decoder.W"):
        adam_step([p], 0.1)


# ---------------------------------------------------------------- finite differences


def test_gradcheck_quadratic():
    x = Tensor([3.0], requires_grad=True)
    rep = finite_difference_check(lambda: T.sum(T.mul(x, x)), [x], step=1e-5)
    assert rep.analytic == 6.0
    assert abs(rep.numeric - 6.0) < 1e-7


def test_gradcheck_zero_function():
    x = Tensor(np.ones(4), requires_grad=True)
    rep = finite_difference_check(lambda: T.sum(T.mul(x, 0.0)), [x])
    assert rep.max_rel_error == 0.0
    assert rep.analytic == 0.0 and rep.numeric == 0.0


def test_gradcheck_reports_offending_coordinate():
    x = Tensor(np.ones(3), requires_grad=True)

    # a node whose backward is wrong in coordinate 2 only
    def lying():
        y = T.sum(T.mul(x, x))
        return T._result(y.data, (x,), lambda g: (np.array([2.0, 2.0, 5.0]) * g,))

    rep = finite_difference_check(lying, [x])
    assert not rep.passed(1e-4)
    assert rep.worst == (0, 2)


# ---------------------------------------------------------------- kernels / checkpoint


def test_compiled_and_reference_kernels_agree():
    ck = pytest.importorskip("groundtalk.numeric._ckernels")
    rng = np.random.default_rng(0)
    B, I, H = 7, 5, 6
    args = (
        rng.normal(size=(B, I)),
        rng.normal(size=(B, H)),
        rng.normal(size=(I, 3 * H)),
        rng.normal(size=(H, 3 * H)),
        rng.normal(size=3 * H),
        (rng.random(B) > 0.3).astype(float),
    )
    o1, c1 = _pykernels.gru_forward(*args)
    o2, c2 = ck.gru_forward(*args)
    np.testing.assert_allclose(o1, o2, atol=1e-13)
    g = rng.normal(size=(B, H))
    for a, b in zip(_pykernels.gru_backward(g, c1), ck.gru_backward(g, c2)):
        np.testing.assert_allclose(a, b, atol=1e-12)
    z, t, w = rng.normal(size=(B, 9)), rng.integers(0, 9, B), rng.random(B)
    l1, p1 = _pykernels.softmax_xent_forward(z, t, w, None)
    l2, p2 = ck.softmax_xent_forward(z, t, w, None)
    assert l1 == pytest.approx(l2, abs=1e-12)
    np.testing.assert_allclose(
        _pykernels.softmax_xent_backward(1.5, p1, t, w), ck.softmax_xent_backward(1.5, p2, t, w), atol=1e-14
    )


def test_checkpoint_round_trip_is_bit_exact():
    rng = np.random.default_rng(0)
    blocks = [("emb", rng.normal(size=(5, 3))), ("b", rng.normal(size=7)), ("s", np.array(1.5))]
    buf = encode_checkpoint(blocks, {"hidden": 8, "vocab_hash": "abc"})
    header, out = decode_checkpoint(buf)
    assert header["hidden"] == 8 and header["format_version"] == 1
    for name, arr in blocks:
        assert out[name].tobytes() == arr.tobytes()
    assert encode_checkpoint(out.items(), header) == buf
