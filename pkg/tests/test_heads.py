import numpy as np
import pytest

from boxseg.diffcore import Tensor, gradcheck, ops
from boxseg.heads import (HeadParams, Model, TransferMLP, backbone_forward, head_forward, weight_transfer)


def _zero_head(c=4):
    return HeadParams.zeros(c)


class TestHeadForward:
    def test_zero_params_half(self):
        feats = Tensor(np.random.default_rng(0).normal(size=(4, 5, 5)))
        out = head_forward(feats, _zero_head(), 20, 20)
        np.testing.assert_array_equal(out.data, 0.5)

    def test_saturated_bias(self):
        head = _zero_head()
        head.conv3_b.data = np.array([40.0])
        out = head_forward(Tensor(np.ones((4, 3, 3))), head, 12, 12)
        np.testing.assert_allclose(out.data, 1.0, atol=1e-12)

    def test_output_shape(self):
        rng = np.random.default_rng(1)
        head = HeadParams.init(16, rng)
        out = head_forward(Tensor(rng.normal(size=(16, 72, 72))), head, 288, 288)
        assert out.shape == (288, 288)
        assert np.all((out.data > 0) & (out.data < 1))

    def test_batched_shape(self):
        rng = np.random.default_rng(1)
        out = head_forward(Tensor(rng.normal(size=(2, 4, 6, 6))), HeadParams.init(4, rng), 24, 24)
        assert out.shape == (2, 24, 24)

    def test_channel_mismatch(self):
        with pytest.raises(ValueError, match="channels"):
            head_forward(Tensor(np.zeros((3, 4, 4))), _zero_head(4), 8, 8)

    def test_gradcheck_params(self):
        rng = np.random.default_rng(3)
        head = HeadParams.init(3, rng)
        feats = Tensor(rng.normal(size=(3, 4, 4)))
        w = rng.normal(size=(8, 8))
        err = gradcheck(lambda: ops.sum(ops.mul(head_forward(feats, head, 8, 8), w)), head.tensors(), eps=1e-5)
        assert err < 1e-4


class TestBackbone:
    def test_quarter_resolution(self):
        m = Model.init(0)
        out = backbone_forward(Tensor(np.random.default_rng(0).random((2, 3, 32, 32))), m.backbone)
        assert out.shape == (2, 16, 8, 8)

    def test_feature_size_for_train_patch(self):
        m = Model.init(0)
        assert m.features(np.zeros((3, 288, 288))).shape == (16, 72, 72)


class TestTransferMLP:
    def test_zero_mlp_gives_half(self):
        mlp = TransferMLP.zeros(4)
        head = weight_transfer(HeadParams.init(4, np.random.default_rng(0)), mlp)
        assert all(np.all(t.data == 0) for t in head.tensors())
        out = head_forward(Tensor(np.ones((4, 3, 3))), head, 6, 6)
        np.testing.assert_array_equal(out.data, 0.5)

    def test_two_dim_toy(self):
        x = Tensor([1.0, -1.0])
        w1, b1 = Tensor(np.eye(2)), Tensor(np.zeros(2))
        w2, b2 = Tensor(np.eye(2)), Tensor([0.5, 0.5])
        h = ops.leaky_relu(ops.linear(x, w1, b1), 0.01)
        np.testing.assert_allclose(h.data, [1.0, -0.01])
        np.testing.assert_allclose(ops.linear(h, w2, b2).data, [1.5, 0.49])

    def test_hidden_width(self):
        d = HeadParams.size_for(16)
        assert d == 4657
        assert TransferMLP.hidden_for(d) == 1165

    def test_init_outputs_half(self):
        m = Model.init(2)
        out = head_forward(m.features(np.random.default_rng(0).random((3, 16, 16))), m.transferred(), 16, 16)
        np.testing.assert_array_equal(out.data, 0.5)

    def test_weak_head_receives_no_gradient(self):
        m = Model.init(4)
        m.mlp.w2.data = np.random.default_rng(0).normal(0, 0.05, size=m.mlp.w2.shape)
        feats = m.features(np.random.default_rng(1).random((3, 16, 16))).detach()
        ops.sum(head_forward(feats, m.transferred(), 16, 16)).backward()
        assert all(t.grad is None or not np.any(t.grad) for t in m.weak.tensors())
        assert np.any(m.mlp.w2.grad) and np.any(m.mlp.w1.grad)

    def test_mlp_grads_independent_of_weak_perturbation_path(self):
        m = Model.init(5)
        m.mlp.w2.data = np.random.default_rng(0).normal(0, 0.05, size=m.mlp.w2.shape)
        feats = m.features(np.random.default_rng(1).random((3, 12, 12))).detach()
        ops.sum(head_forward(feats, m.transferred(), 12, 12)).backward()
        g1 = m.mlp.w1.grad.copy()
        for t in m.weak.tensors():
            t.grad = None
        for t in m.mlp.tensors():
            t.grad = None
        ops.sum(head_forward(feats, m.transferred(), 12, 12)).backward()
        np.testing.assert_array_equal(m.mlp.w1.grad, g1)

    def test_size_mismatch(self):
        with pytest.raises(ValueError):
            weight_transfer(HeadParams.zeros(3), TransferMLP.zeros(4))


class TestModel:
    def test_param_count(self):
        total = sum(t.size for t in Model.init(0).parameters().values())
        assert 10_000_000 < total < 12_000_000

    def test_init_deterministic(self):
        a, b = Model.init(9).parameters(), Model.init(9).parameters()
        assert all(a[k].data.tobytes() == b[k].data.tobytes() for k in a)

    def test_predict_alpha(self):
        m = Model.init(1)
        px = np.random.default_rng(0).random((2, 3, 16, 16))
        weak = m.predict(px, None)
        blend = m.predict(px, 0.7)
        assert weak.shape == blend.shape == (2, 16, 16)
        assert not np.array_equal(weak, blend)

    def test_checkpoint_round_trip(self, tmp_path):
        m = Model.init(3)
        m.save(tmp_path / "m.bxt")
        back = Model.load(tmp_path / "m.bxt")
        for k, t in m.parameters().items():
            assert back.parameters()[k].data.tobytes() == t.data.tobytes()

    def test_flatten_round_trip(self):
        h = HeadParams.init(4, np.random.default_rng(0))
        back = HeadParams.unflatten(h.flatten(), 4)
        for a, b in zip(h.tensors(), back.tensors()):
            np.testing.assert_array_equal(a.data, b.data)
