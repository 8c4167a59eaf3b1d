import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from biounet import cam, imageio
from biounet import tensor as T
from biounet.errors import ContractError
from biounet.layers import Conv2d
from biounet.models import ClassifierHead, Encoder, EncoderConfig, EncoderOutput


class ToyEncoder:
    """One 1x1 conv channel; its output is the only tap."""

    def __init__(self, weight=1.0, in_ch=1):
        self.conv = Conv2d(in_ch, 1, 1, np.random.default_rng(0), pad=0, dtype=np.float64)
        self.conv.weight.data[:] = weight

    def __call__(self, x, training=False, domain="image", retain_blocks=False):
        a = self.conv(x)
        if retain_blocks:
            a.retain_grad()
        return EncoderOutput(a, [], [a])


def toy_head(weight=1.0):
    head = ClassifierHead(1, 1, dtype=np.float64)
    head.fc.weight.data[:] = weight
    head.fc.bias.data[:] = 0.0
    return head


def analytic(a):
    r = np.maximum(a, 0)
    lo, hi = r.min(axis=(-2, -1), keepdims=True), r.max(axis=(-2, -1), keepdims=True)
    return (r - lo) / (hi - lo)


def small_model(seed=0):
    cfg = EncoderConfig(stage_widths=(4, 4, 8, 8))
    rng = np.random.default_rng(seed)
    enc = Encoder(cfg, rng, dtype=np.float64)
    x = T.Tensor(rng.standard_normal((3, 3, 16, 16)))
    enc(x, training=True)          # populate running statistics
    head = ClassifierHead(cfg.out_width, 2, rng=rng, dtype=np.float64)
    return enc, head, x


class TestToyModel:
    @pytest.mark.parametrize("method", cam.METHODS)
    def test_equals_analytic_map(self, method):
        x = np.random.default_rng(1).random((2, 1, 6, 5)) + 0.1
        res = cam.cam_at_block(ToyEncoder(), toy_head(), T.Tensor(x), 1, 0, method)
        np.testing.assert_allclose(res.heatmap, analytic(x[:, 0]), atol=1e-6)
        assert not res.degenerate.any()

    def test_variants_agree(self):
        x = T.Tensor(np.random.default_rng(2).random((1, 1, 7, 7)))
        maps = [cam.cam_at_block(ToyEncoder(0.7), toy_head(2.0), x, 1, 0, m).heatmap for m in cam.METHODS]
        np.testing.assert_allclose(maps[1], maps[0], atol=1e-12)
        np.testing.assert_allclose(maps[2], maps[0], atol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.01, 100.0), st.sampled_from(cam.METHODS))
    def test_positive_rescaling_of_classifier(self, seed, c, method):
        x = T.Tensor(np.random.default_rng(seed).random((1, 1, 5, 6)))
        base = cam.cam_at_block(ToyEncoder(), toy_head(1.0), x, 1, 0, method).heatmap
        scaled = cam.cam_at_block(ToyEncoder(), toy_head(c), x, 1, 0, method).heatmap
        np.testing.assert_allclose(scaled, base, atol=1e-5)

    def test_zero_activations_are_degenerate(self):
        x = T.Tensor(np.zeros((1, 1, 4, 4)))
        for method in cam.METHODS:
            res = cam.cam_at_block(ToyEncoder(), toy_head(), x, 1, 0, method)
            assert not res.heatmap.any() and res.degenerate.all()

    def test_negated_logit_leaves_nothing(self):
        x = T.Tensor(np.random.default_rng(3).random((1, 1, 4, 4)) + 0.1)
        res = cam.grad_cam(ToyEncoder(), toy_head(-1.0), x, 1, 0)
        assert not res.heatmap.any() and res.degenerate.all()

    def test_zero_gradient_layercam(self):
        x = T.Tensor(np.random.default_rng(4).random((1, 1, 4, 4)))
        res = cam.layer_cam(ToyEncoder(), toy_head(0.0), x, 1, 0)
        assert not res.heatmap.any()

    def test_resized_to_input(self):
        x = T.Tensor(np.random.default_rng(5).random((1, 1, 4, 4)))
        acts, grads, _ = cam._block_activations(ToyEncoder(), toy_head(), x, 0)
        heat, _ = cam._finish(cam.combine(acts[0], grads[0], "gradcam"), (8, 8))
        assert heat.shape == (1, 8, 8)
        assert heat.max() == pytest.approx(1.0) and heat.min() == pytest.approx(0.0)


class TestCombine:
    def test_unknown_method(self):
        with pytest.raises(ContractError):
            cam.combine(np.ones((1, 1, 2, 2)), np.ones((1, 1, 2, 2)), "saliency")

    def test_minmax_constant_map(self):
        out, flag = cam.minmax_normalize(np.full((2, 3, 3), 4.0))
        assert not out.any() and flag.all()

    def test_layercam_ignores_negative_gradient(self):
        a = np.ones((1, 2, 2, 2))
        g = np.stack([np.full((2, 2), 1.0), np.full((2, 2), -5.0)])[None]
        np.testing.assert_array_equal(cam.combine(a, g, "layercam"), np.ones((1, 2, 2)))

    def test_gradcampp_weights(self):
        # one channel, one pixel: alpha = 1 / (2 + A g); weight = alpha * g
        a = np.full((1, 1, 1, 1), 2.0)
        g = np.full((1, 1, 1, 1), 0.5)
        assert cam.combine(a, g, "gradcampp")[0, 0, 0] == pytest.approx(2.0 * 0.5 / (2 + 2.0 * 0.5))


class TestRealEncoder:
    def test_stack_shape_and_range(self):
        enc, head, x = small_model()
        stack = cam.build_stack(enc, head, x, 1)
        assert stack.maps.shape == (3, 12, 16, 16)
        assert stack.maps.min() >= 0.0 and stack.maps.max() <= 1.0
        peaks = stack.maps.max(axis=(2, 3))
        assert np.all(np.isclose(peaks, 1.0) | stack.degenerate)

    @pytest.mark.parametrize("method", cam.METHODS)
    def test_channel_k_is_block_k(self, method):
        enc, head, x = small_model(1)
        stack = cam.build_stack(enc, head, x, 0, method)
        for k in (1, 5, 12):
            single = cam.cam_at_block(enc, head, x, k, 0, method)
            np.testing.assert_allclose(stack.maps[:, k - 1], single.heatmap, atol=1e-12)
        np.testing.assert_array_equal(stack.final, stack.maps[:, 11])

    @pytest.mark.parametrize("method", ["gradcam", "layercam"])
    def test_classifier_rescaling(self, method):
        enc, head, x = small_model(2)
        base = cam.build_stack(enc, head, x, 0, method).maps
        head.fc.weight.data = head.fc.weight.data * 3.7
        np.testing.assert_allclose(cam.build_stack(enc, head, x, 0, method).maps, base, atol=1e-5)

    def test_block_locality(self):
        enc, head, x = small_model(3)
        before = [b.data.copy() for b in enc(x, retain_blocks=True).blocks]
        for block in enc.blocks[6:]:
            for p in block.parameters():
                p.data = p.data + 0.5
        after = [b.data for b in enc(x, retain_blocks=True).blocks]
        for k in range(6):
            np.testing.assert_array_equal(after[k], before[k])
        assert not np.array_equal(after[11], before[11])

    def test_bad_target_and_block(self):
        enc, head, x = small_model()
        with pytest.raises(ContractError):
            cam.build_stack(enc, head, x, 2)
        with pytest.raises(ContractError):
            cam.grad_cam(enc, head, x, 13, 0)
        with pytest.raises(ContractError):
            cam.grad_cam(enc, head, x, 0, 0)


class TestExport:
    def test_filenames_and_round_trip(self, tmp_path):
        enc, head, x = small_model()
        stack = cam.build_stack(enc, head, T.Tensor(x.data[:1]), 0)
        stack.target = 3
        paths = cam.export_stack(stack, ["s1"], str(tmp_path))
        assert len(paths) == 12
        assert os.path.basename(paths[4]) == "s1_attr3_block5_gradcam.pgm"
        back = imageio.read_pgm(paths[11])
        np.testing.assert_array_equal(back, imageio.to_uint8(stack.maps[0, 11]))
