"""Optimizer arithmetic, schedules, splitters, and the overfit learnability check."""

import numpy as np
import pytest

from framegrad.metrics import binary_f1, multiclass_f1
from framegrad.stan import StanConfig, build_model
from framegrad.synth import SynthConfig, generate_clip
from framegrad.tensor import Tensor
from framegrad.train import (
    AdamW,
    SplitPlan,
    TrainConfig,
    clip_gradients,
    cosine_lr,
    kfold,
    leave_one_group_out,
    train_model,
)


class TestAdamW:
    def test_zero_gradients_leave_params_unchanged(self):
        p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
        opt = AdamW([p], weight_decay=0.0)
        p.grad = np.zeros(2)
        opt.step(0.1)
        np.testing.assert_array_equal(p.data, [1.0, -2.0])

    def test_two_steps_match_hand_recurrence(self):
        theta = 0.5
        p = Tensor(np.array([theta]), requires_grad=True)
        b1, b2, eps, wd, lr = 0.9, 0.999, 1e-8, 0.01, 0.05
        opt = AdamW([p], beta1=b1, beta2=b2, epsilon=eps, weight_decay=wd)

        m = v = 0.0
        for t, g in enumerate([0.3, -0.2], start=1):
            p.grad = np.array([g])
            opt.step(lr)
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            mhat = m / (1 - b1 ** t)
            vhat = v / (1 - b2 ** t)
            theta = theta - lr * (mhat / (np.sqrt(vhat) + eps) + wd * theta)
            assert abs(float(p.data[0]) - theta) < 1e-10
            p.zero_grad()

    def test_weight_decay_decoupled_from_moments(self):
        # zero gradient + nonzero decay still shrinks the parameter
        p = Tensor(np.array([2.0]), requires_grad=True)
        opt = AdamW([p], weight_decay=0.1)
        p.grad = np.zeros(1)
        opt.step(0.5)
        assert float(p.data[0]) == pytest.approx(2.0 - 0.5 * 0.1 * 2.0, abs=1e-12)


class TestSchedule:
    def test_endpoint_is_zero(self):
        assert cosine_lr(30, 1e-3, 2, 30) == pytest.approx(0.0, abs=1e-12)

    def test_warmup_ramps_linearly(self):
        assert cosine_lr(0, 1.0, 4, 20) == pytest.approx(0.25)
        assert cosine_lr(3, 1.0, 4, 20) == pytest.approx(1.0)

    def test_cosine_midpoint_is_half(self):
        assert cosine_lr(16, 1.0, 2, 30) == pytest.approx(0.5)

    def test_monotone_decay_after_warmup(self):
        values = [cosine_lr(e, 1.0, 2, 30) for e in range(2, 31)]
        assert all(a >= b for a, b in zip(values, values[1:]))


class TestClipGradients:
    def test_norm_respected(self):
        p = Tensor(np.zeros(4), requires_grad=True)
        p.grad = np.full(4, 10.0)
        clip_gradients([p], 1.0)
        assert np.linalg.norm(p.grad) == pytest.approx(1.0, rel=1e-6)

    def test_small_gradients_untouched(self):
        p = Tensor(np.zeros(4), requires_grad=True)
        g = np.full(4, 0.01)
        p.grad = g.copy()
        clip_gradients([p], 1.0)
        np.testing.assert_array_equal(p.grad, g)


class FakeManifest:
    def __init__(self, labels, groups=None):
        from framegrad.manifest import ClipRecord
        self.clips = [
            ClipRecord(clip_id=f"c{i:03d}", path="", label=lab,
                       group=groups[i] if groups else f"g{i % 3}",
                       frames=4, important=np.zeros(4, dtype=np.uint8), keypoints=[[]] * 4)
            for i, lab in enumerate(labels)
        ]


class TestSplits:
    def test_kfold_stratified_balanced(self):
        manifest = FakeManifest([i % 4 for i in range(200)])
        plan = kfold(manifest, 10, seed=0)
        assert len(plan.folds) == 10
        by_id = {c.clip_id: c.label for c in manifest.clips}
        for fold in plan.folds:
            assert len(fold) == 20
            labels = [by_id[cid] for cid in fold]
            for cls in range(4):
                assert labels.count(cls) == 5
        plan.validate([c.clip_id for c in manifest.clips])

    def test_kfold_deterministic_bytes(self):
        manifest = FakeManifest([i % 3 for i in range(30)])
        assert kfold(manifest, 5, seed=9).to_json() == kfold(manifest, 5, seed=9).to_json()
        assert kfold(manifest, 5, seed=9).to_json() != kfold(manifest, 5, seed=10).to_json()

    def test_leave_one_group_out_partitions_exactly(self):
        groups = [f"subject{i % 15:02d}" for i in range(60)]
        manifest = FakeManifest([i % 4 for i in range(60)], groups)
        plan = leave_one_group_out(manifest)
        assert len(plan.folds) == 15
        plan.validate([c.clip_id for c in manifest.clips])
        by_id = {c.clip_id: c.group for c in manifest.clips}
        for fold in plan.folds:
            assert len({by_id[cid] for cid in fold}) == 1

    def test_train_test_disjoint(self):
        manifest = FakeManifest([i % 2 for i in range(20)])
        plan = kfold(manifest, 4, seed=1)
        for i in range(4):
            train, test = plan.train_test(i)
            assert not set(train) & set(test)
            assert set(train) | set(test) == {c.clip_id for c in manifest.clips}


class TestF1:
    def test_perfect(self):
        assert binary_f1([1, 0, 1], [1, 0, 1]) == 1.0

    def test_formula_case(self):
        # TP=2, FP=1, FN=1
        assert binary_f1([1, 1, 1, 0, 0], [1, 1, 0, 1, 0]) == pytest.approx(2 * 2 / (2 * 2 + 1 + 1), abs=1e-4)

    def test_degenerate_zero(self):
        assert binary_f1([0, 0], [0, 0]) == 0.0

    def test_multiclass_micro_is_accuracy(self):
        preds = [0, 1, 2, 2, 1]
        labels = [0, 1, 1, 2, 1]
        per_class, micro = multiclass_f1(preds, labels, 3)
        assert micro == pytest.approx(4 / 5)
        assert len(per_class) == 3


@pytest.mark.slow
class TestOverfitSmoke:
    def _examples(self, frames=8, count=10):
        cfg = SynthConfig(num_classes=2, clips_per_class=count // 2, frames=frames, seed=3)
        examples = []
        for i in range(count):
            clip, label, _, _, _ = generate_clip(cfg, i)
            examples.append(((lambda c=clip: c), label))
        return examples

    def test_stan_overfits_ten_clips(self):
        examples = self._examples()
        model = build_model(StanConfig.desk(num_classes=2, frames=8), seed=0)
        config = TrainConfig(total_epochs=200, batch_size=5, seed=0, weight_decay=0.0)
        history = train_model(model, examples, config)
        assert min(history) < 0.05, f"final losses {history[-5:]}"

    def test_cnn_overfits_ten_clips(self):
        from framegrad.cnn import CnnConfig, build_cnn

        examples = self._examples()
        model = build_cnn(CnnConfig(num_classes=2, frames=8), seed=0)
        config = TrainConfig(total_epochs=200, batch_size=5, seed=0, weight_decay=0.0)
        history = train_model(model, examples, config)
        assert min(history) < 0.05, f"final losses {history[-5:]}"
