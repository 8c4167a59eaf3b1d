import numpy as np
import pytest

from biounet import checkpoint as ckpt_io
from biounet import kernels
from biounet import tensor as T
from biounet.errors import CheckpointError, ContractError, DimensionError
from biounet.gradcheck import check_gradients
from biounet.models import (N_BLOCKS, BioUNet, Encoder, EncoderConfig, clone_to_e3, load_module)
from biounet.tensor import Parameter, RunningStats, Tensor

SMALL = EncoderConfig(stage_widths=(4, 4, 8, 8))


def small_net(head_width=1, seed=0, dtype=None):
    return BioUNet(SMALL, head_width, seed=seed, dtype=dtype)


class TestShapes:
    def test_forward_shapes(self):
        net = small_net(head_width=5)
        x = Tensor(np.random.default_rng(0).standard_normal((2, 3, 32, 32)).astype(np.float32))
        out = net.encoder(x, training=True, retain_blocks=True)
        assert len(out.blocks) == N_BLOCKS and len(out.skips) == 4
        assert out.final.shape == (2, 8, 2, 2)
        assert net.classify(x).shape == (2, 5)
        assert net.project(x).shape == (2, 128)
        seg = net.segment(Tensor(np.random.default_rng(1).random((2, 12, 32, 32)).astype(np.float32)), training=True)
        assert seg.shape == (2, 1, 32, 32)
        assert seg.data.min() >= 0 and seg.data.max() <= 1

    def test_probabilities(self):
        net = small_net()
        p = net.classify(Tensor(np.zeros((3, 3, 32, 32), np.float32)), training=True).data
        assert np.all((p > 0) & (p < 1))

    def test_wrong_channels(self):
        net = small_net()
        with pytest.raises(DimensionError):
            net.encoder(Tensor(np.zeros((1, 4, 32, 32))))
        with pytest.raises(DimensionError):
            net.segment(Tensor(np.zeros((1, 3, 32, 32))))

    def test_config_contract(self):
        with pytest.raises(ContractError):
            EncoderConfig(stage_widths=(4, 8, 8))
        with pytest.raises(ContractError):
            EncoderConfig(blocks_per_stage=2)


class TestParameterGroups:
    def test_partition(self):
        net = small_net()
        groups = net.groups()
        ids = [id(p) for g in groups.values() for p in g]
        assert len(ids) == len(set(ids)) == len(net.parameters())

    def test_segmentation_gradient_reaches_only_theta_and_theta3(self):
        net = small_net()
        stack = Tensor(np.random.default_rng(0).random((2, 12, 32, 32)).astype(np.float32))
        net.segment(stack, training=True).sum().backward()
        groups = net.groups()
        assert all(p.grad is None for g in ("theta1", "theta2") for p in groups[g])
        assert any(p.grad is not None for p in groups["theta3"])

    def test_domains_keep_separate_statistics(self):
        net = small_net()
        x = Tensor(np.random.default_rng(0).standard_normal((2, 3, 32, 32)).astype(np.float32))
        net.encoder(x, training=True, domain="image")
        bn = net.encoder.stem_bn
        assert bn.stats["image"].mean is not None and bn.stats["heatmap"].mean is None
        before = bn.stats["image"].mean.copy()
        net.segment(Tensor(np.ones((2, 12, 32, 32), np.float32)), training=True)
        np.testing.assert_array_equal(bn.stats["image"].mean, before)
        assert bn.stats["heatmap"].mean is not None


class TestE3:
    def test_clone_is_frozen_copy(self):
        net = small_net()
        x = Tensor(np.random.default_rng(0).standard_normal((2, 3, 32, 32)).astype(np.float32))
        net.encoder(x, training=True)
        ck = ckpt_io.snapshot(net, {"selection_metric": 0.7})
        e3 = clone_to_e3(net.encoder, ck)
        assert all(not p.requires_grad for p in e3.parameters())
        assert e3.source_metric == 0.7
        ref = net.encoder(x).final.data
        np.testing.assert_array_equal(e3(x).final.data, ref)
        for p in net.encoder.parameters():
            p.data = p.data + 1.0
        np.testing.assert_array_equal(e3(x).final.data, ref)

    def test_load_module_shape_mismatch(self):
        a = Encoder(SMALL)
        b = Encoder(EncoderConfig(stage_widths=(4, 4, 8, 16)))
        arrays = {n: p.data for n, p in b.named_parameters("encoder.")}
        with pytest.raises(CheckpointError):
            load_module(a, arrays, "encoder.")


class TestCheckpoint:
    def test_save_load_bitwise(self, tmp_path):
        net = small_net(head_width=2, seed=3)
        x = Tensor(np.random.default_rng(0).standard_normal((2, 3, 32, 32)).astype(np.float32))
        net.encoder(x, training=True)
        ck = ckpt_io.snapshot(net, {"epoch": 4, "note": "x"})
        path = tmp_path / "a.ckpt"
        ckpt_io.save(ck, str(path))
        back = ckpt_io.load(str(path))
        assert back.digest() == ck.digest() and back.meta == ck.meta
        other = small_net(head_width=2, seed=9)
        ckpt_io.restore(other, back)
        np.testing.assert_array_equal(other.classify(x).data, net.classify(x).data)
        ckpt_io.save(back, str(tmp_path / "b.ckpt"))
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()

    def test_corrupted_file(self, tmp_path):
        path = tmp_path / "c.ckpt"
        path.write_bytes(b"not a zip")
        with pytest.raises(CheckpointError):
            ckpt_io.load(str(path))

    def test_architecture_mismatch(self):
        ck = ckpt_io.snapshot(small_net(head_width=1))
        with pytest.raises(CheckpointError):
            ckpt_io.restore(small_net(head_width=2), ck)


class TestConvPaths:
    """Large stride-1 convolutions take the per-tap GEMM path; both must agree."""

    @pytest.mark.parametrize("k,pad", [(3, 1), (3, 0), (5, 2)])
    def test_paths_agree(self, k, pad):
        rng = np.random.default_rng(k + pad)
        x = Tensor(rng.standard_normal((2, 4, 16, 18)), requires_grad=True)
        w = Parameter(rng.standard_normal((3, 4, k, k)))
        b = Parameter(rng.standard_normal(3))
        oh, ow = 16 + 2 * pad - k + 1, 18 + 2 * pad - k + 1
        out_s, back_s = T._conv_shifted(x, w, b, pad)
        out_u, back_u = T._conv_unfolded(x, w, b, 1, pad, oh, ow)
        np.testing.assert_allclose(out_s, out_u, rtol=1e-12, atol=1e-12)
        g = rng.standard_normal(out_s.shape)
        for a, c in zip(back_s(g), back_u(g)):
            np.testing.assert_allclose(a, c, rtol=1e-10, atol=1e-10)

    @pytest.mark.parametrize("seed", range(3))
    def test_shifted_gradients(self, seed):
        rng = np.random.default_rng(seed)
        arrays = [rng.standard_normal((1, 4, 16, 16)), rng.standard_normal((2, 4, 3, 3)), rng.standard_normal(2)]
        probe = rng.standard_normal((1, 2, 16, 16))
        report = check_gradients(lambda p: (T.conv2d(p[0], p[1], p[2], 1, 1) * probe).sum(),
                                 [Tensor(a) for a in arrays], max_coords=40, seed=seed)
        assert report.max_rel_error < 1e-4, report


@pytest.mark.skipif(kernels._ext is None, reason="compiled kernels not built")
class TestNormKernels:
    @pytest.mark.parametrize("dtype", [np.float32, np.float64])
    def test_backends_agree(self, dtype):
        rng = np.random.default_rng(0)
        x = (rng.standard_normal((3, 4, 5, 6)) * 2 + 1).astype(dtype)
        g = rng.standard_normal(x.shape).astype(dtype)
        tol = dict(rtol=1e-5, atol=1e-5) if dtype == np.float32 else dict(rtol=1e-12, atol=1e-12)
        m1, v1 = kernels.py_bn_moments(x)
        m2, v2 = kernels._ext.bn_moments(x)
        np.testing.assert_allclose(m1, m2, **tol)
        np.testing.assert_allclose(v1, v2, **tol)
        scale, shift = rng.standard_normal(4), rng.standard_normal(4)
        np.testing.assert_allclose(kernels.py_bn_affine(x, scale, shift), kernels._ext.bn_affine(x, scale, shift), **tol)
        inv = 1 / np.sqrt(v1 + 1e-5)
        gamma = rng.standard_normal(4)
        for training in (True, False):
            a = kernels.py_bn_backward(x, g, m1, inv, gamma, training)
            b = kernels._ext.bn_backward(x, g, m1, inv, gamma, training)
            for u, v in zip(a, b):
                np.testing.assert_allclose(u, v, **tol)

    def test_training_forward_is_normalized(self):
        x = Tensor(np.random.default_rng(1).standard_normal((4, 3, 5, 5)) * 3 + 2)
        out = T.batch_norm2d(x, Parameter(np.ones(3)), Parameter(np.zeros(3)), True, RunningStats())
        np.testing.assert_allclose(out.data.mean(axis=(0, 2, 3)), 0, atol=1e-12)
        np.testing.assert_allclose(out.data.var(axis=(0, 2, 3)), 1, atol=1e-4)
