"""Patched-image CNN: tiling geometry, gradient separability, frame scores."""

import numpy as np
import pytest

from framegrad import ops
from framegrad.cnn import CnnConfig, build_cnn, frame_scores_cnn
from framegrad.tensor import Tensor

from oracles import finite_diff_at


def make_clip(seed=0, frames=6):
    return np.random.default_rng(seed).uniform(0, 1, (3, frames, 32, 32)).astype(np.float32)


@pytest.fixture(scope="module")
def model():
    return build_cnn(CnnConfig(num_classes=4, frames=6), seed=0).eval()


class TestGeometry:
    @pytest.mark.parametrize("frames,grid", [(1, (1, 1)), (6, (2, 3)), (20, (4, 5)),
                                             (394, (20, 20)), (16, (4, 4))])
    def test_near_square_grid_covers_frames(self, frames, grid):
        cfg = CnnConfig(num_classes=2, frames=frames)
        rows, cols = cfg.tile_grid()
        assert (rows, cols) == grid
        assert rows * cols >= frames

    def test_tile_untile_roundtrip_bit_exact(self, model):
        feats = np.random.default_rng(1).standard_normal((16, 6, 4, 4)).astype(np.float32)
        patched = model.tile(Tensor(feats))
        assert patched.shape == (16, 2 * 4, 3 * 4)
        back = model.untile(patched.data)
        assert (back == feats).all()

    def test_unused_tiles_zero_filled(self, model):
        feats = np.ones((16, 6, 4, 4), dtype=np.float32)
        patched = model.tile(Tensor(feats)).data
        grid = patched.reshape(16, 2, 4, 3, 4).transpose(0, 1, 3, 2, 4).reshape(16, 6, 4, 4)
        assert (grid[:, :6] == 1).all()
        # grid rows x cols == frames here, so extend the check with a 5-frame model
        cfg = CnnConfig(num_classes=2, frames=5)
        m = build_cnn(cfg, seed=1)
        feats5 = np.ones((16, 5, 4, 4), dtype=np.float32)
        patched5 = m.tile(Tensor(feats5)).data
        tiles = patched5.reshape(16, 2, 4, 3, 4).transpose(0, 1, 3, 2, 4).reshape(16, 6, 4, 4)
        assert (tiles[:, :5] == 1).all()
        assert (tiles[:, 5:] == 0).all()

    def test_swapping_frames_swaps_tiles_exactly(self, model):
        clip = make_clip(2)
        swapped = clip.copy()
        swapped[:, [1, 4]] = swapped[:, [4, 1]]
        p1 = model.tile(model.encode(Tensor(clip))).data
        p2 = model.tile(model.encode(Tensor(swapped))).data
        t1 = model.untile(p1)
        t2 = model.untile(p2)
        assert (t2[:, 1] == t1[:, 4]).all() and (t2[:, 4] == t1[:, 1]).all()
        keep = [0, 2, 3, 5]
        assert (t2[:, keep] == t1[:, keep]).all()


class TestEncoder:
    def test_output_shape_independent_of_content(self, model):
        a = model.encode(Tensor(make_clip(3)))
        b = model.encode(Tensor(np.zeros((3, 6, 32, 32), dtype=np.float32)))
        assert a.shape == b.shape == (16, 6, 4, 4)

    def test_zero_frame_zero_bias_gives_zero_features(self):
        model = build_cnn(CnnConfig(num_classes=4, frames=2), seed=3)
        out = model.encode(Tensor(np.zeros((3, 2, 32, 32), dtype=np.float32)))
        assert (out.data == 0).all()

    def test_pixel_gradients_match_finite_differences(self):
        model = build_cnn(CnnConfig(num_classes=3, frames=2), seed=4, dtype=np.float64).eval()
        clip = np.random.default_rng(5).uniform(0, 1, (3, 2, 32, 32))
        xt = Tensor(clip, requires_grad=True)
        ops.select(model.forward(xt), 1).backward()

        def f(x):
            return float(ops.select(model.forward(Tensor(x)), 1).data)

        rng = np.random.default_rng(6)
        coords = rng.choice(clip.size, size=10, replace=False)
        numeric = finite_diff_at(f, clip, coords, h=1e-3)
        flat = xt.grad.reshape(-1)
        for i, n in numeric.items():
            assert abs(flat[i] - n) / max(1.0, abs(flat[i]), abs(n)) < 1e-5


class TestClassify:
    def test_softmax_sums_to_one(self, model):
        logits = model.forward(Tensor(make_clip(7)))
        probs = ops.softmax(logits, axis=0)
        assert abs(float(probs.data.sum()) - 1.0) < 1e-6

    def test_rejects_wrong_shape(self, model):
        with pytest.raises(ops.ShapeError, match="clip shape"):
            model.forward(Tensor(np.zeros((3, 5, 32, 32), dtype=np.float32)))

    def test_no_gradient_leaks_across_frame_tiles(self, model):
        # the gradient of one frame's tile sum must touch only that frame's pixels
        clip = make_clip(8)
        for frame in (0, 3, 5):
            x = Tensor(clip, requires_grad=True)
            patched = model.tile(model.encode(x))
            tiles = model.untile(np.ones_like(patched.data) * 0)  # layout reference only
            rows, cols = model.config.tile_grid()
            fh, fw = model.config.feature_shape()
            r, c = divmod(frame, cols)
            mask = np.zeros_like(patched.data)
            mask[:, r * fh:(r + 1) * fh, c * fw:(c + 1) * fw] = 1.0
            ops.sum_all(patched * Tensor(mask)).backward()
            grad = x.grad
            others = [t for t in range(6) if t != frame]
            assert np.abs(grad[:, frame]).max() > 0
            assert (grad[:, others] == 0).all()


class TestFrameScores:
    def test_constant_volume_rule_applies(self, model):
        # zero-weight head gives an all-zero gradient volume -> all scores 0.5
        frozen = build_cnn(CnnConfig(num_classes=4, frames=6), seed=9).eval()
        frozen.fc2.weight.data[...] = 0.0
        frozen.fc2.bias.data[...] = 0.0
        series = frame_scores_cnn(frozen, make_clip(10), 1)
        assert (series.scores == 0.5).all()

    def test_scores_cover_full_length_without_sampling(self):
        cfg = CnnConfig(num_classes=2, frames=50)
        model = build_cnn(cfg, seed=11).eval()
        clip = np.random.default_rng(12).uniform(0, 1, (3, 50, 32, 32)).astype(np.float32)
        series = frame_scores_cnn(model, clip, 0)
        assert len(series.scores) == 50
        assert series.sampled_indices is None

    def test_two_frame_clip_matches_hand_aggregation(self):
        cfg = CnnConfig(num_classes=3, frames=2)
        model = build_cnn(cfg, seed=13).eval()
        clip = np.random.default_rng(14).uniform(0, 1, (3, 2, 32, 32)).astype(np.float32)
        from framegrad.saliency import vanilla_grad

        vol = vanilla_grad(model, clip, 2)
        series = frame_scores_cnn(model, clip, 2)
        raw = np.array([np.abs(vol.values[:, t]).mean() for t in range(2)])
        hi, lo = raw.argmax(), raw.argmin()
        expected = np.zeros(2)
        expected[hi] = 1.0 if raw[hi] != raw[lo] else 0.5
        if raw[hi] == raw[lo]:
            expected[:] = 0.5
        np.testing.assert_allclose(series.scores, expected, atol=1e-9)

    def test_positive_scale_invariance(self):
        from framegrad.saliency import SaliencyVolume, classify_frames, frame_scores

        values = np.random.default_rng(15).standard_normal((3, 7, 4, 4))
        base = frame_scores(SaliencyVolume(values, "vanilla", 0))
        scaled = frame_scores(SaliencyVolume(values * 12.5, "vanilla", 0))
        np.testing.assert_allclose(base.scores, scaled.scores, atol=1e-12)
        assert (classify_frames(base, 0.3) == classify_frames(scaled, 0.3)).all()


class TestGradCamPath:
    def test_gradcam_on_cnn_is_clip_shaped_and_non_negative(self, model):
        from framegrad.saliency import gradcam

        clip = make_clip(16)
        vol = gradcam(model, clip, 2)
        assert vol.values.shape == clip.shape
        assert (vol.values >= 0).all()
