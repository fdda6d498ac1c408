import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _reference import bilinear_scalar

from boxseg.diffcore import (FormatError, Graph, NonFiniteError, Tensor, bilinear_matrix, conv2d,
                             gradcheck, leaky_relu, load_tensors, ops, read_pfm, relative_error,
                             save_tensors, sigmoid, upsample_bilinear, write_pfm)


def _conv_reference(x, k, b, stride, pad):
    """Direct nested-loop cross-correlation."""
    c, h, w = x.shape
    kout, _, kh, kw = k.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    out = np.zeros((kout, ho, wo))
    for o in range(kout):
        for i in range(ho):
            for j in range(wo):
                patch = xp[:, i * stride:i * stride + kh, j * stride:j * stride + kw]
                out[o, i, j] = np.sum(patch * k[o]) + b[o]
    return out


class TestTensor:
    def test_rejects_nan(self):
        with pytest.raises(NonFiniteError):
            Tensor([1.0, np.nan])

    def test_rejects_inf_from_op(self):
        a = Tensor([1e308], requires_grad=True)
        with pytest.raises(NonFiniteError):
            ops.mul(a, 10.0)

    def test_data_is_copied(self):
        arr = np.ones(3)
        t = Tensor(arr)
        arr[0] = 5.0
        assert t.data[0] == 1.0

    def test_backward_accumulates_shared_input(self):
        x = Tensor([2.0, 3.0], requires_grad=True)
        y = ops.sum(ops.add(ops.mul(x, x), x))
        y.backward()
        np.testing.assert_allclose(x.grad, [5.0, 7.0])

    def test_detach_cuts_graph(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        y = ops.sum(ops.mul(x.detach(), x))
        y.backward()
        np.testing.assert_allclose(x.grad, [1.0, 2.0])

    def test_graph_reverse_order(self):
        x = Tensor(np.ones(2), requires_grad=True)
        h = ops.mul(x, 3.0)
        y = ops.sum(h)
        g = Graph.trace(y)
        assert g.tensors[0] is x and g.tensors[-1] is y

    def test_forward_replay_bit_identical(self):
        rng = np.random.default_rng(3)
        x = Tensor(rng.normal(size=(2, 6, 6)))
        k = Tensor(rng.normal(size=(3, 2, 3, 3)))
        b = Tensor(rng.normal(size=3))
        a1 = sigmoid(conv2d(x, k, b, 1, 1)).data
        a2 = sigmoid(conv2d(x, k, b, 1, 1)).data
        assert a1.tobytes() == a2.tobytes()


class TestConv2d:
    def test_identity_kernel(self):
        x = Tensor(np.arange(9.0).reshape(1, 3, 3))
        out = conv2d(x, Tensor(np.ones((1, 1, 1, 1))), Tensor(np.zeros(1)))
        np.testing.assert_array_equal(out.data, x.data)

    def test_zero_kernel_gives_bias(self):
        x = Tensor(np.random.default_rng(0).normal(size=(2, 5, 5)))
        out = conv2d(x, Tensor(np.zeros((1, 2, 3, 3))), Tensor([1.5]), 1, 1)
        np.testing.assert_array_equal(out.data, np.full((1, 5, 5), 1.5))

    @pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1), (2, 0)])
    def test_matches_loop_reference(self, stride, pad):
        rng = np.random.default_rng(stride * 10 + pad)
        x, k, b = rng.normal(size=(3, 7, 6)), rng.normal(size=(4, 3, 3, 3)), rng.normal(size=4)
        out = conv2d(Tensor(x), Tensor(k), Tensor(b), stride, pad)
        np.testing.assert_allclose(out.data, _conv_reference(x, k, b, stride, pad), atol=1e-12)

    def test_batched_equals_per_sample(self):
        rng = np.random.default_rng(5)
        x, k, b = rng.normal(size=(3, 2, 6, 6)), rng.normal(size=(4, 2, 3, 3)), rng.normal(size=4)
        batched = conv2d(Tensor(x), Tensor(k), Tensor(b), 2, 1).data
        for i in range(3):
            single = conv2d(Tensor(x[i]), Tensor(k), Tensor(b), 2, 1).data
            np.testing.assert_allclose(batched[i], single, atol=1e-12)

    def test_input_gradient_finite_difference(self):
        rng = np.random.default_rng(11)
        x = Tensor(rng.normal(size=(2, 5, 5)))
        k = Tensor(rng.normal(size=(1, 2, 3, 3)))
        b = Tensor(rng.normal(size=1))
        err = gradcheck(lambda: ops.sum(ops.mul(conv2d(x, k, b, 1, 1), conv2d(x, k, b, 1, 1))), x)
        assert err < 1e-6

    @pytest.mark.parametrize("stride", [1, 2])
    def test_all_gradients(self, stride):
        rng = np.random.default_rng(stride)
        x = Tensor(rng.normal(size=(2, 3, 6, 6)))
        k = Tensor(rng.normal(size=(2, 3, 3, 3)))
        b = Tensor(rng.normal(size=2))
        w = rng.normal(size=conv2d(x, k, b, stride, 1).shape)
        err = gradcheck(lambda: ops.sum(ops.mul(conv2d(x, k, b, stride, 1), w)), [x, k, b])
        assert err < 1e-5

    def test_backward_is_transpose(self):
        rng = np.random.default_rng(2)
        u = rng.normal(size=(2, 6, 5))
        k = rng.normal(size=(3, 2, 3, 3))
        x = Tensor(u, requires_grad=True)
        y = conv2d(x, Tensor(k), Tensor(np.zeros(3)), 2, 1)
        v = rng.normal(size=y.shape)
        y.backward(v)
        assert abs(np.sum(y.data * v) - np.sum(u * x.grad)) < 1e-10

    def test_even_kernel_rejected(self):
        with pytest.raises(ValueError, match="odd"):
            conv2d(Tensor(np.zeros((1, 4, 4))), Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros(1)))

    def test_channel_mismatch_named(self):
        with pytest.raises(ValueError, match="channel"):
            conv2d(Tensor(np.zeros((2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))), Tensor(np.zeros(1)))

    def test_bad_stride(self):
        with pytest.raises(ValueError, match="stride"):
            conv2d(Tensor(np.zeros((1, 4, 4))), Tensor(np.zeros((1, 1, 3, 3))), Tensor(np.zeros(1)), 3)


class TestActivations:
    def test_leaky_values(self):
        out = leaky_relu(Tensor([2.0, -2.0]), 0.01)
        np.testing.assert_allclose(out.data, [2.0, -0.02])

    def test_leaky_slope_at_zero(self):
        x = Tensor([0.0], requires_grad=True)
        ops.sum(leaky_relu(x, 0.1)).backward()
        assert x.grad[0] == pytest.approx(0.1)

    def test_leaky_gradcheck_away_from_zero(self):
        rng = np.random.default_rng(1)
        z = rng.normal(size=20)
        z[np.abs(z) < 0.05] = 0.5
        x = Tensor(z)
        assert gradcheck(lambda: ops.sum(ops.mul(leaky_relu(x), leaky_relu(x))), x, eps=1e-5) < 1e-6

    def test_sigmoid_at_zero(self):
        x = Tensor([0.0], requires_grad=True)
        y = sigmoid(x)
        ops.sum(y).backward()
        assert y.data[0] == 0.5 and x.grad[0] == 0.25

    def test_sigmoid_saturates_stably(self):
        out = sigmoid(Tensor([40.0, -800.0, 800.0])).data
        assert abs(out[0] - 1.0) < 1e-12
        assert out[1] == 0.0 and out[2] == 1.0

    def test_sigmoid_gradcheck(self):
        x = Tensor(np.random.default_rng(4).normal(size=15) * 3)
        assert gradcheck(lambda: ops.sum(ops.mul(sigmoid(x), sigmoid(x))), x, eps=1e-5) < 1e-6


class TestUpsample:
    def test_constant_map(self):
        out = upsample_bilinear(Tensor(np.full((2, 3, 3), 0.3)), 7, 11)
        np.testing.assert_allclose(out.data, 0.3, atol=1e-15)

    def test_single_pixel_replicates(self):
        out = upsample_bilinear(Tensor([[[4.0]]]), 5, 5)
        np.testing.assert_array_equal(out.data, np.full((1, 5, 5), 4.0))

    def test_two_by_two_against_scalar_reference(self):
        img = np.array([[0.0, 1.0], [0.0, 1.0]])
        out = upsample_bilinear(Tensor(img), 4, 4).data
        np.testing.assert_allclose(out, bilinear_scalar(img, 4, 4), atol=1e-15)
        np.testing.assert_allclose(out[0], [0.0, 0.25, 0.75, 1.0])
        assert np.all(out == out[0])

    @settings(max_examples=30, deadline=None)
    @given(h=st.integers(1, 6), w=st.integers(1, 6), fy=st.integers(1, 4), fx=st.integers(1, 4),
           seed=st.integers(0, 10_000))
    def test_matches_scalar_reference(self, h, w, fy, fx, seed):
        img = np.random.default_rng(seed).random((h, w))
        out = upsample_bilinear(Tensor(img), h * fy + fy // 2, w * fx)
        np.testing.assert_allclose(out.data, bilinear_scalar(img, h * fy + fy // 2, w * fx), atol=1e-12)

    def test_backward_is_transpose(self):
        rng = np.random.default_rng(8)
        u = rng.normal(size=(3, 4, 5))
        x = Tensor(u, requires_grad=True)
        y = upsample_bilinear(x, 9, 13)
        v = rng.normal(size=y.shape)
        y.backward(v)
        assert abs(np.sum(y.data * v) - np.sum(u * x.grad)) < 1e-10

    def test_rows_are_stochastic(self):
        m = bilinear_matrix(5, 17)
        np.testing.assert_allclose(m.sum(axis=1), 1.0)

    def test_downsampling_rejected(self):
        with pytest.raises(ValueError):
            upsample_bilinear(Tensor(np.zeros((4, 4))), 2, 4)


class TestGradcheck:
    def test_sum_has_zero_error(self):
        # dyadic inputs and step keep the central difference exact
        x = Tensor(np.random.default_rng(0).integers(-8, 8, size=6).astype(float))
        assert gradcheck(lambda: ops.sum(x), x, eps=2.0 ** -20) == 0.0

    def test_sigmoid_sum_at_zero(self):
        x = Tensor(np.zeros(4), requires_grad=True)
        ops.sum(sigmoid(x)).backward()
        np.testing.assert_allclose(x.grad, 0.25)
        assert gradcheck(lambda: ops.sum(sigmoid(x)), x) < 1e-8

    def test_detects_wrong_gradient(self):
        x = Tensor(np.array([1.0, 2.0]))

        def f():
            # forward x**2 with a deliberately wrong backward rule
            return ops.sum(ops.record(x.data ** 2, "bad", (x,), lambda g: (g * x.data,)))

        assert gradcheck(f, x) > 0.1

    def test_restores_values(self):
        x = Tensor(np.array([0.3, -0.7]))
        before = x.data.copy()
        gradcheck(lambda: ops.sum(sigmoid(x)), x)
        np.testing.assert_array_equal(x.data, before)

    @pytest.mark.parametrize("eps", [1e-8, 1e-3])
    def test_eps_range(self, eps):
        x = Tensor(np.ones(2))
        with pytest.raises(ValueError):
            gradcheck(lambda: ops.sum(x), x, eps=eps)

    def test_non_finite_objective(self):
        x = Tensor(np.ones(2))
        with pytest.raises(NonFiniteError):
            gradcheck(lambda: float("nan"), x)

    def test_relative_error_floor(self):
        assert relative_error(0.0, 0.0) == 0.0
        assert relative_error(1e-10, 0.0) == pytest.approx(1e-2)


class TestSerialize:
    def test_container_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        arrays = {"a": rng.normal(size=(2, 3)), "b.c": rng.normal(size=(4,)), "s": np.array(2.5)}
        save_tensors(tmp_path / "t.bin", arrays)
        back = load_tensors(tmp_path / "t.bin")
        assert list(back) == list(arrays)
        for k in arrays:
            assert back[k].tobytes() == np.asarray(arrays[k], dtype="<f8").tobytes()

    def test_container_header(self, tmp_path):
        save_tensors(tmp_path / "t.bin", {"x": np.ones(2)})
        raw = (tmp_path / "t.bin").read_bytes()
        assert raw[:8] == b"BXSGTNSR"
        assert int.from_bytes(raw[8:12], "little") == 1

    def test_bad_magic(self, tmp_path):
        (tmp_path / "t.bin").write_bytes(b"NOTMAGIC" + bytes(8))
        with pytest.raises(FormatError):
            load_tensors(tmp_path / "t.bin")

    def test_truncated(self, tmp_path):
        save_tensors(tmp_path / "t.bin", {"x": np.ones(10)})
        raw = (tmp_path / "t.bin").read_bytes()
        (tmp_path / "t.bin").write_bytes(raw[:-8])
        with pytest.raises(FormatError):
            load_tensors(tmp_path / "t.bin")

    def test_pfm_round_trip(self, tmp_path):
        a = np.random.default_rng(1).random((5, 7)).astype(np.float32).astype(np.float64)
        write_pfm(tmp_path / "m.pfm", a)
        np.testing.assert_array_equal(read_pfm(tmp_path / "m.pfm"), a)

    def test_pfm_is_bottom_up(self, tmp_path):
        write_pfm(tmp_path / "m.pfm", np.array([[1.0], [2.0]]))
        raw = (tmp_path / "m.pfm").read_bytes()
        data = np.frombuffer(raw[-8:], dtype="<f4")
        np.testing.assert_array_equal(data, [2.0, 1.0])

    def test_pfm_rejects_colour(self, tmp_path):
        (tmp_path / "c.pfm").write_bytes(b"PF\n1 1\n-1.0\n" + bytes(12))
        with pytest.raises(FormatError):
            read_pfm(tmp_path / "c.pfm")
