"""ROI masks, local views, and the global/local blend."""

import numpy as np
import pytest

from framegrad.views import ViewKind, apply_view, make_global_local, make_local, roi_mask


def track_of(*frames):
    """Each frame: list of (x, y, conf) triples; joint ids assigned in order."""
    return [[(j, x, y, c) for j, (x, y, c) in enumerate(joints)] for joints in frames]


class TestRoiMask:
    def test_bounding_box_margin_zero(self):
        track = track_of([(10, 10, 1.0), (20, 30, 1.0)])
        mask = roi_mask(track, (64, 64), margin=0.0)
        expected = np.zeros((64, 64), dtype=bool)
        expected[10:31, 10:21] = True
        assert (mask[0] == expected).all()

    def test_margin_dilates_by_fraction_of_box_size(self):
        track = track_of([(10, 10, 1.0), (20, 30, 1.0)])
        mask = roi_mask(track, (64, 64), margin=0.5)
        # box is 10 wide, 20 tall: +-5 in x, +-10 in y, clamped at the top
        expected = np.zeros((64, 64), dtype=bool)
        expected[0:41, 5:26] = True
        assert (mask[0] == expected).all()

    def test_clamped_to_frame(self):
        track = track_of([(1, 1, 1.0), (6, 6, 1.0)])
        mask = roi_mask(track, (8, 8), margin=1.0)
        assert mask[0].all()

    def test_low_confidence_frame_carries_previous_mask(self):
        track = track_of(
            [(2, 2, 0.9), (5, 5, 0.9)],
            [(20, 20, 0.1)],
            [(10, 10, 0.9), (12, 14, 0.9)],
        )
        mask = roi_mask(track, (32, 32), margin=0.0, confidence_floor=0.3)
        assert (mask[1] == mask[0]).all()
        assert not (mask[2] == mask[0]).all()

    def test_leading_invalid_frames_borrow_next_valid(self):
        track = track_of(
            [(20, 20, 0.0)],
            [(2, 2, 0.9), (5, 5, 0.9)],
        )
        mask = roi_mask(track, (32, 32), margin=0.0)
        assert (mask[0] == mask[1]).all()

    def test_empty_track_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            roi_mask([], (8, 8))

    def test_all_unconfident_rejected(self):
        with pytest.raises(ValueError, match="confidence"):
            roi_mask(track_of([(1, 1, 0.0)], [(2, 2, 0.1)]), (8, 8))


class TestLocalView:
    def test_full_mask_is_identity(self):
        rng = np.random.default_rng(0)
        clip = rng.uniform(0, 1, (3, 4, 8, 8)).astype(np.float32)
        mask = np.ones((4, 8, 8), dtype=bool)
        assert (make_local(clip, mask) == clip).all()

    def test_outside_pixels_exactly_zero(self):
        rng = np.random.default_rng(1)
        clip = rng.uniform(0, 1, (3, 2, 8, 8)).astype(np.float32)
        mask = np.zeros((2, 8, 8), dtype=bool)
        mask[:, 2:5, 3:6] = True
        out = make_local(clip, mask)
        assert (out[:, ~mask] == 0.0).all()

    def test_checkerboard_half_frame(self):
        x = np.indices((8, 8)).sum(axis=0) % 2
        clip = np.broadcast_to(x, (3, 2, 8, 8)).astype(np.float32)
        mask = np.zeros((2, 8, 8), dtype=bool)
        mask[:, :, :4] = True
        out = make_local(clip, mask)
        assert (out[:, :, :, :4] == clip[:, :, :, :4]).all()
        assert (out[:, :, :, 4:] == 0.0).all()

    def test_idempotent_bit_exact(self):
        rng = np.random.default_rng(2)
        clip = rng.uniform(0, 1, (3, 3, 8, 8)).astype(np.float32)
        mask = rng.uniform(size=(3, 8, 8)) > 0.5
        once = make_local(clip, mask)
        twice = make_local(once, mask)
        assert (once == twice).all()


class TestGlobalLocal:
    def _pair(self, seed=3):
        rng = np.random.default_rng(seed)
        clip = rng.uniform(0, 1, (3, 4, 8, 8)).astype(np.float32)
        mask = rng.uniform(size=(4, 8, 8)) > 0.5
        return clip, mask, make_local(clip, mask)

    def test_alpha_one_is_global(self):
        clip, _, local = self._pair()
        np.testing.assert_array_equal(make_global_local(clip, local, 1.0), clip)

    def test_alpha_zero_is_local(self):
        clip, _, local = self._pair()
        np.testing.assert_array_equal(make_global_local(clip, local, 0.0), local)

    def test_half_blend_values(self):
        clip = np.full((3, 1, 2, 2), 0.8, dtype=np.float32)
        mask = np.zeros((1, 2, 2), dtype=bool)
        mask[0, 0, 0] = True
        local = make_local(clip, mask)
        out = make_global_local(clip, local, 0.5)
        assert out[0, 0, 0, 0] == np.float32(0.8)
        assert out[0, 0, 1, 1] == np.float32(0.4)

    @pytest.mark.parametrize("alpha", [0.1, 0.3, 0.5, 0.7, 0.9])
    def test_roi_pixels_bit_identical_any_alpha(self, alpha):
        clip, mask, local = self._pair(seed=4)
        out = make_global_local(clip, local, alpha)
        assert (out[:, mask] == clip[:, mask]).all()

    def test_rejects_bad_alpha(self):
        clip, _, local = self._pair()
        with pytest.raises(ValueError, match="blend"):
            make_global_local(clip, local, 1.5)

    def test_shape_and_range_preserved(self):
        clip, mask, local = self._pair(seed=5)
        for kind in ViewKind:
            out = apply_view(clip, _mask_track(mask), kind)
            assert out.shape == clip.shape
            assert out.min() >= 0.0 and out.max() <= 1.0


def _mask_track(mask):
    """A one-joint-per-corner track whose bbox reproduces each frame's mask extent."""
    track = []
    for m in mask:
        ys, xs = np.nonzero(m)
        if len(xs) == 0:
            track.append([(0, 1.0, 1.0, 0.0)])
        else:
            track.append([(0, float(xs.min()), float(ys.min()), 1.0),
                          (1, float(xs.max()), float(ys.max()), 1.0)])
    return track
