import math

import numpy as np
import pytest

from helpers import finite_difference, max_relative_error

from simpdefiner import autograd as ag
from simpdefiner.autograd import Parameter, ShapeError, Tensor


def test_matmul_identity():
    eye = Tensor(np.eye(2))
    assert np.array_equal(ag.matmul(eye, eye).data, np.eye(2))
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(ag.matmul(a, eye).data, a.data)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        ag.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_gradients_match_finite_differences():
    rng = np.random.default_rng(0)
    a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
    weight = rng.normal(size=(3, 2))  # makes the gradient non-uniform

    def loss_fn():
        return ag.tensor_sum(ag.mul(ag.matmul(a, b), Tensor(weight)))

    loss_fn().backward()
    fd_a, fd_b = finite_difference(loss_fn, [a, b])
    assert max_relative_error(a.grad, fd_a) < 1e-6
    assert max_relative_error(b.grad, fd_b) < 1e-6


def test_batched_matmul_gradients_match_finite_differences():
    rng = np.random.default_rng(1)
    a = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=(2, 4, 2)), requires_grad=True)

    def loss_fn():
        return ag.tensor_sum(ag.matmul(a, b))

    loss_fn().backward()
    fd_a, fd_b = finite_difference(loss_fn, [a, b])
    assert max_relative_error(a.grad, fd_a) < 1e-6
    assert max_relative_error(b.grad, fd_b) < 1e-6


def test_cross_entropy_uniform_logits_is_log_vocab():
    logits = Tensor(np.zeros((3, 4)), requires_grad=True)
    loss = ag.softmax_cross_entropy(logits, np.array([0, 1, 3]))
    assert loss.item() == pytest.approx(math.log(4), abs=1e-12)


def test_cross_entropy_certain_prediction_is_near_zero():
    logits = np.zeros((2, 5))
    logits[0, 2] = 1e3
    logits[1, 4] = 1e3
    loss = ag.softmax_cross_entropy(Tensor(logits), np.array([2, 4]))
    assert loss.item() == pytest.approx(0.0, abs=1e-9)


def test_cross_entropy_matches_scalar_log_sum_exp_oracle():
    rng = np.random.default_rng(2)
    raw = rng.normal(size=(2, 5))
    targets = np.array([3, 0])
    expected = 0.0
    for row, tgt in zip(raw, targets):
        m = max(row)
        logz = m + math.log(sum(math.exp(v - m) for v in row))
        expected += logz - row[tgt]
    expected /= 2
    loss = ag.softmax_cross_entropy(Tensor(raw), targets)
    assert loss.item() == pytest.approx(expected, rel=1e-12)


def test_cross_entropy_ignore_index_drops_positions():
    raw = np.array([[0.0, 2.0], [5.0, -1.0], [0.3, 0.4]])
    full = ag.softmax_cross_entropy(Tensor(raw[:2]), np.array([1, 0]))
    padded = ag.softmax_cross_entropy(Tensor(raw), np.array([1, 0, -1]), ignore_index=-1)
    assert padded.item() == pytest.approx(full.item(), rel=1e-12)


def test_cross_entropy_out_of_range_target_raises():
    with pytest.raises(IndexError, match="position 1"):
        ag.softmax_cross_entropy(Tensor(np.zeros((2, 4))), np.array([0, 7]))


def test_cross_entropy_gradients_match_finite_differences():
    rng = np.random.default_rng(3)
    logits = Tensor(rng.normal(size=(4, 6)), requires_grad=True)
    targets = np.array([1, 5, -1, 0])

    def loss_fn():
        return ag.softmax_cross_entropy(logits, targets, ignore_index=-1)

    loss_fn().backward()
    (fd,) = finite_difference(loss_fn, [logits])
    assert max_relative_error(logits.grad, fd) < 1e-6


def test_layer_norm_normalizes_to_zero_mean_unit_variance():
    x = Tensor([[1.0, 2.0, 3.0]])
    out = ag.layer_norm(x, Tensor(np.ones(3)), Tensor(np.zeros(3))).data[0]
    assert out.mean() == pytest.approx(0.0, abs=1e-12)
    assert out.var() == pytest.approx(1.0, abs=1e-4)  # eps-tolerance


def test_layer_norm_constant_input_gives_minus_beta():
    x = Tensor(np.full((2, 4), 7.0))
    beta = Tensor(np.full(4, 0.25))
    out = ag.layer_norm(x, Tensor(np.ones(4)), beta)
    assert np.allclose(out.data, -0.25)


def test_layer_norm_dimension_mismatch():
    with pytest.raises(ShapeError):
        ag.layer_norm(Tensor(np.ones((2, 4))), Tensor(np.ones(3)), Tensor(np.zeros(3)))


def test_layer_norm_gradients_match_finite_differences():
    rng = np.random.default_rng(4)
    x = Tensor(rng.normal(size=(2, 4)), requires_grad=True)
    gamma = Tensor(rng.normal(size=4), requires_grad=True)
    beta = Tensor(rng.normal(size=4), requires_grad=True)
    weight = rng.normal(size=(2, 4))

    def loss_fn():
        return ag.tensor_sum(ag.mul(ag.layer_norm(x, gamma, beta), Tensor(weight)))

    loss_fn().backward()
    fd = finite_difference(loss_fn, [x, gamma, beta])
    for got, want in zip([x.grad, gamma.grad, beta.grad], fd):
        assert max_relative_error(got, want) < 1e-5


def test_backward_of_sum_is_all_ones():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    ag.tensor_sum(x).backward()
    assert np.array_equal(x.grad, np.ones((2, 3)))


def test_backward_of_sum_of_squares():
    x = Tensor([1.0, -2.0], requires_grad=True)
    ag.tensor_sum(ag.mul(x, x)).backward()
    assert np.array_equal(x.grad, np.array([2.0, -4.0]))


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        ag.mul(x, x).backward()


def test_backward_accumulates_across_calls():
    x = Tensor([1.0, -2.0], requires_grad=True)
    loss = ag.tensor_sum(ag.mul(x, x))
    loss.backward()
    loss.backward()
    assert np.array_equal(x.grad, np.array([4.0, -8.0]))


def test_backward_is_bit_deterministic():
    rng = np.random.default_rng(5)
    x = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
    w = Tensor(rng.normal(size=(3, 3)), requires_grad=True)

    def run():
        x.zero_grad()
        w.zero_grad()
        out = ag.softmax(ag.matmul(x, w), axis=-1)
        ag.tensor_sum(ag.mul(out, out)).backward()
        return x.grad.copy(), w.grad.copy()

    gx1, gw1 = run()
    gx2, gw2 = run()
    assert np.array_equal(gx1, gx2)
    assert np.array_equal(gw1, gw2)


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(6)
    out = ag.softmax(Tensor(rng.normal(size=(4, 7)) * 10), axis=-1)
    assert np.allclose(out.data.sum(axis=-1), 1.0, atol=1e-9)


def test_softmax_gradients_match_finite_differences():
    rng = np.random.default_rng(7)
    x = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
    weight = rng.normal(size=(3, 5))

    def loss_fn():
        return ag.tensor_sum(ag.mul(ag.softmax(x, axis=-1), Tensor(weight)))

    loss_fn().backward()
    (fd,) = finite_difference(loss_fn, [x])
    assert max_relative_error(x.grad, fd) < 1e-6


def test_embedding_scatter_adds_repeated_ids():
    w = Tensor(np.arange(8.0).reshape(4, 2), requires_grad=True)
    out = ag.embedding(w, np.array([[0, 2, 0]]))
    assert np.array_equal(out.data, [[[0.0, 1.0], [4.0, 5.0], [0.0, 1.0]]])
    ag.tensor_sum(out).backward()
    assert np.array_equal(w.grad, [[2.0, 2.0], [0.0, 0.0], [1.0, 1.0], [0.0, 0.0]])


def test_embedding_rejects_out_of_range_ids():
    w = Tensor(np.zeros((4, 2)))
    with pytest.raises(IndexError):
        ag.embedding(w, np.array([[0, 4]]))
    with pytest.raises(IndexError):
        ag.embedding(w, np.array([[-1]]))


def test_masked_fill_blocks_gradient_at_masked_entries():
    x = Tensor(np.ones((2, 3)), requires_grad=True)
    mask = np.array([[True, False, False], [False, False, True]])
    out = ag.masked_fill(x, mask, -1e9)
    assert out.data[0, 0] == -1e9 and out.data[1, 2] == -1e9
    ag.tensor_sum(out).backward()
    assert np.array_equal(x.grad, (~mask).astype(float))


def test_concat_splits_gradient():
    a = Tensor(np.ones((2, 2)), requires_grad=True)
    b = Tensor(np.ones((3, 2)), requires_grad=True)
    out = ag.concat([a, b], axis=0)
    assert out.shape == (5, 2)
    ag.tensor_sum(ag.mul(out, out)).backward()
    assert np.array_equal(a.grad, np.full((2, 2), 2.0))
    assert np.array_equal(b.grad, np.full((3, 2), 2.0))


def test_reshape_transpose_roundtrip_gradients():
    rng = np.random.default_rng(8)
    x = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
    weight = rng.normal(size=(3, 2, 4))

    def loss_fn():
        moved = ag.transpose(x, (1, 0, 2))
        return ag.tensor_sum(ag.mul(moved.reshape((3, 2, 4)), Tensor(weight)))

    loss_fn().backward()
    (fd,) = finite_difference(loss_fn, [x])
    assert max_relative_error(x.grad, fd) < 1e-6


def test_add_bias_broadcasts_only_over_last_dim():
    x = Tensor(np.zeros((2, 3)), requires_grad=True)
    bias = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
    out = ag.add(x, bias)
    assert np.array_equal(out.data, [[1.0, 2.0, 3.0], [1.0, 2.0, 3.0]])
    ag.tensor_sum(out).backward()
    assert np.array_equal(bias.grad, [2.0, 2.0, 2.0])
    with pytest.raises(ShapeError):
        ag.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros(2)))
    with pytest.raises(ShapeError):
        ag.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2))))


def test_relu_and_dropout_paths():
    x = Tensor(np.array([-1.0, 0.5]), requires_grad=True)
    ag.tensor_sum(ag.relu(x)).backward()
    assert np.array_equal(x.grad, [0.0, 1.0])
    # p=0 or missing rng -> identity object, not a copy
    assert ag.dropout(x, 0.0, np.random.default_rng(0)) is x
    assert ag.dropout(x, 0.5, None) is x
    y = ag.dropout(Tensor(np.ones(1000)), 0.5, np.random.default_rng(0))
    kept = y.data != 0.0
    assert 0.4 < kept.mean() < 0.6
    assert np.allclose(y.data[kept], 2.0)  # inverted scaling


def test_no_grad_builds_no_tape():
    x = Tensor(np.ones(3), requires_grad=True)
    with ag.no_grad():
        out = ag.mul(x, x)
    assert out._backward is None and out._parents == ()


def test_no_grad_is_thread_local():
    # overlapping no_grad blocks on worker threads must not disable the tape
    # for anyone else (read-only inference may run concurrently)
    from concurrent.futures import ThreadPoolExecutor

    x = Tensor(np.ones(4), requires_grad=True)

    def infer(_):
        with ag.no_grad():
            return ag.mul(x, x)._backward is None

    with ThreadPoolExecutor(max_workers=4) as pool:
        assert all(pool.map(infer, range(32)))
    out = ag.mul(x, x)
    assert out._backward is not None  # main thread tape still records


def test_parameter_read_tracing():
    p = Parameter(np.ones((2, 2)), "layer.weight", Parameter.SHARED)
    q = Parameter(np.ones((2, 2)), "layer.other", Parameter.SHARED)
    with ag.trace_parameter_reads() as seen:
        ag.matmul(Tensor(np.ones((2, 2))), p.tensor)
    assert seen == {"layer.weight"}
    assert q.name not in seen
