import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chanmae import autodiff as ad
from chanmae.autodiff import (
    Parameter,
    Tensor,
    backward,
    concat,
    gather_rows,
    gelu,
    layer_norm,
    matmul,
    mean_all,
    slice_cols,
    softmax_lastdim,
    sum_all,
)
from chanmae.errors import ContractError, ShapeError
from chanmae.gradcheck import grad_check


def _matmul_oracle(a, b):
    m, k = a.shape
    k2, n = b.shape
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            for s in range(k):
                out[i, j] += a[i, s] * b[s, j]
    return out


class TestMatmul:
    def test_identity(self):
        a = Tensor(np.eye(2))
        b = Tensor([[3.0, 4.0], [5.0, 6.0]])
        assert np.array_equal(matmul(a, b).data, [[3.0, 4.0], [5.0, 6.0]])

    def test_hand_arithmetic(self):
        out = matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
        assert out.data.shape == (1, 1)
        assert out.data[0, 0] == 11.0

    def test_against_triple_loop(self):
        rng = np.random.default_rng(0)
        a = rng.normal(size=(3, 4))
        b = rng.normal(size=(4, 2))
        got = matmul(Tensor(a), Tensor(b)).data
        assert np.abs(got - _matmul_oracle(a, b)).max() < 1e-12

    def test_shape_error_names_both_shapes(self):
        with pytest.raises(ShapeError) as exc:
            matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))
        assert "(2, 3)" in str(exc.value) and "(4, 2)" in str(exc.value)

    def test_gradients(self):
        rng = np.random.default_rng(1)
        a = Parameter("a", rng.normal(size=(3, 4)))
        b = Parameter("b", rng.normal(size=(4, 2)))
        w = rng.normal(size=(3, 2))
        report = grad_check(lambda x, y: sum_all(matmul(x, y) * w), [a, b])
        assert report.max_rel_err < 1e-6


class TestLayerNorm:
    def test_constant_rows_become_zero(self):
        x = Tensor(np.full((3, 5), 7.0))
        out = layer_norm(x, Tensor(np.ones(5)), Tensor(np.zeros(5)), eps=1e-6)
        assert np.abs(out.data).max() == 0.0

    def test_two_point_symmetry(self):
        out = layer_norm(Tensor([[1.0, 3.0]]), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=1e-12)
        assert np.abs(out.data - [[-1.0, 1.0]]).max() < 1e-9

    def test_affine_shape_mismatch(self):
        with pytest.raises(ShapeError):
            layer_norm(Tensor(np.zeros((2, 4))), Tensor(np.ones(3)), Tensor(np.zeros(3)))

    def test_eps_must_be_positive(self):
        with pytest.raises(ContractError):
            layer_norm(Tensor(np.zeros((2, 4))), Tensor(np.ones(4)), Tensor(np.zeros(4)), eps=0.0)

    def test_gradients(self):
        rng = np.random.default_rng(2)
        x = Parameter("x", rng.normal(size=(2, 8)))
        g = Parameter("g", rng.normal(size=8) + 1.0)
        b = Parameter("b", rng.normal(size=8))
        w = rng.normal(size=(2, 8))
        report = grad_check(lambda xx, gg, bb: sum_all(layer_norm(xx, gg, bb) * w), [x, g, b])
        assert report.max_rel_err < 1e-6


class TestSoftmax:
    def test_uniform(self):
        out = softmax_lastdim(Tensor([[0.0, 0.0, 0.0]]))
        assert np.abs(out.data - 1.0 / 3.0).max() < 1e-15

    def test_no_overflow_at_large_logits(self):
        out = softmax_lastdim(Tensor([[1000.0, 0.0]]))
        assert np.abs(out.data - [[1.0, 0.0]]).max() < 1e-12

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0.1, 1e3))
    def test_rows_sum_to_one(self, seed, scale):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(4, 7)) * scale
        out = softmax_lastdim(Tensor(x))
        assert (out.data >= 0).all()
        assert np.abs(out.data.sum(axis=-1) - 1.0).max() < 1e-12

    def test_gradients(self):
        rng = np.random.default_rng(3)
        x = Parameter("x", rng.normal(size=(3, 5)))
        w = rng.normal(size=(3, 5))
        report = grad_check(lambda xx: sum_all(softmax_lastdim(xx) * w), [x])
        assert report.max_rel_err < 1e-6


class TestGelu:
    def test_zero(self):
        assert gelu(Tensor([0.0])).data[0] == 0.0

    def test_asymptote(self):
        assert abs(gelu(Tensor([10.0])).data[0] - 10.0) < 1e-4

    def test_gradients(self):
        rng = np.random.default_rng(4)
        x = Parameter("x", rng.normal(size=(2, 6)) * 2.0)
        w = rng.normal(size=(2, 6))
        report = grad_check(lambda xx: sum_all(gelu(xx) * w), [x])
        assert report.max_rel_err < 1e-6


class TestMultiHeadAttention:
    def test_single_head_matches_composed_ops(self):
        rng = np.random.default_rng(0)
        q, k, v = (Tensor(rng.normal(size=(5, 4))) for _ in range(3))
        fused = ad.multi_head_attention(q, k, v, heads=1).data
        scale = 1.0 / np.sqrt(4)
        att = softmax_lastdim(matmul(q, ad.transpose(k)) * scale)
        composed = matmul(att, v).data
        assert np.abs(fused - composed).max() < 1e-14

    def test_multi_head_matches_per_head_slices(self):
        rng = np.random.default_rng(1)
        q, k, v = (Tensor(rng.normal(size=(6, 8))) for _ in range(3))
        fused = ad.multi_head_attention(q, k, v, heads=2).data
        parts = []
        for h in range(2):
            qh, kh, vh = (slice_cols(x, 4 * h, 4 * h + 4) for x in (q, k, v))
            att = softmax_lastdim(matmul(qh, ad.transpose(kh)) * (1.0 / np.sqrt(4)))
            parts.append(matmul(att, vh))
        composed = concat(parts, axis=1).data
        assert np.abs(fused - composed).max() < 1e-14

    def test_gradients(self):
        rng = np.random.default_rng(2)
        q = Parameter("q", rng.normal(size=(4, 6)))
        k = Parameter("k", rng.normal(size=(4, 6)))
        v = Parameter("v", rng.normal(size=(4, 6)))
        w = rng.normal(size=(4, 6))
        report = grad_check(
            lambda a, b, c: sum_all(ad.multi_head_attention(a, b, c, heads=3) * w), [q, k, v]
        )
        assert report.max_rel_err < 1e-6

    def test_shape_errors(self):
        with pytest.raises(ShapeError):
            ad.multi_head_attention(Tensor(np.zeros((3, 6))), Tensor(np.zeros((4, 6))),
                                    Tensor(np.zeros((3, 6))), heads=2)
        with pytest.raises(ShapeError):
            ad.multi_head_attention(Tensor(np.zeros((3, 6))), Tensor(np.zeros((3, 6))),
                                    Tensor(np.zeros((3, 6))), heads=4)


class TestBackward:
    def test_sum_of_squares(self):
        p = Parameter("p", [1.0, -2.0, 3.0])
        loss = sum_all(p.value * p.value)
        backward(loss)
        assert np.array_equal(p.grad, [2.0, -4.0, 6.0])

    def test_frozen_parameter_gets_zero_grad(self):
        p = Parameter("p", [1.0, 2.0])
        q = Parameter("q", [3.0, 4.0], trainable=False)
        loss = sum_all(p.value * q.value)
        backward(loss)
        assert np.array_equal(p.grad, [3.0, 4.0])
        assert np.array_equal(q.grad, [0.0, 0.0])

    def test_non_scalar_loss_rejected(self):
        p = Parameter("p", [1.0, 2.0])
        with pytest.raises(ContractError):
            backward(p.value * 2.0)

    def test_off_path_parameter_keeps_zero(self):
        p = Parameter("p", [1.0])
        q = Parameter("q", [5.0])
        backward(sum_all(p.value * p.value))
        assert np.array_equal(q.grad, [0.0])

    def test_grad_accumulates_across_calls(self):
        p = Parameter("p", [2.0])
        for _ in range(3):
            backward(sum_all(p.value))
        assert np.array_equal(p.grad, [3.0])
        p.zero_grad()
        assert np.array_equal(p.grad, [0.0])


class TestStructuralOps:
    def test_gather_rows_forward_and_grad(self):
        p = Parameter("p", np.arange(6.0).reshape(3, 2))
        out = gather_rows(p.value, [2, 0, 2])
        assert np.array_equal(out.data, [[4.0, 5.0], [0.0, 1.0], [4.0, 5.0]])
        backward(sum_all(out))
        assert np.array_equal(p.grad, [[1.0, 1.0], [0.0, 0.0], [2.0, 2.0]])

    def test_slice_concat_roundtrip_grad(self):
        rng = np.random.default_rng(5)
        p = Parameter("p", rng.normal(size=(3, 6)))
        w = rng.normal(size=(3, 6))

        def fn(x):
            halves = concat([slice_cols(x, 0, 3), slice_cols(x, 3, 6)], axis=1)
            return sum_all(halves * w)

        report = grad_check(fn, [p])
        assert report.max_rel_err < 1e-6

    def test_broadcast_add_grad(self):
        rng = np.random.default_rng(6)
        x = Parameter("x", rng.normal(size=(4, 3)))
        b = Parameter("b", rng.normal(size=3))
        w = rng.normal(size=(4, 3))
        report = grad_check(lambda xx, bb: sum_all((xx + bb) * w), [x, b])
        assert report.max_rel_err < 1e-6

    def test_transpose_reshape_grad(self):
        rng = np.random.default_rng(7)
        x = Parameter("x", rng.normal(size=(2, 6)))
        w = rng.normal(size=(3, 4))

        def fn(xx):
            return sum_all(ad.reshape(ad.transpose(xx), (3, 4)) * w)

        report = grad_check(fn, [x])
        assert report.max_rel_err < 1e-6

    def test_detach_blocks_gradient(self):
        p = Parameter("p", [1.0, 2.0])
        loss = sum_all(p.value.detach() * p.value.detach())
        backward(loss)
        assert np.array_equal(p.grad, [0.0, 0.0])

    def test_mean_all(self):
        p = Parameter("p", [1.0, 2.0, 3.0, 6.0])
        out = mean_all(p.value)
        assert out.item() == 3.0
        backward(out)
        assert np.allclose(p.grad, 0.25)


class TestFiniteness:
    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_forward_backward_stay_finite(self, seed):
        rng = np.random.default_rng(seed)
        x = Parameter("x", rng.normal(size=(3, 8)) * 1e3)
        g = Parameter("g", np.ones(8))
        b = Parameter("b", np.zeros(8))
        y = softmax_lastdim(layer_norm(x.value, g.value, b.value))
        loss = sum_all(gelu(y))
        backward(loss)
        assert np.isfinite(loss.data).all()
        for p in (x, g, b):
            assert np.isfinite(p.grad).all()
