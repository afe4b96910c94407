import math

import numpy as np
import pytest

from transducer_distill.data import Utterance
from transducer_distill.distill import (
    CombinedLossConfig,
    DistillError,
    DistillLossKind,
    LossKind,
    combined_loss,
    fs_distill,
    fs_norm_distill,
    shift_teacher,
    soft_kl_efficient,
    soft_kl_full,
)
from transducer_distill.decode import PseudoLabelRecord
from transducer_distill.lattice import Lattice, LatticeShapeError, forward_backward
from transducer_distill.model import EncoderConfig, TransducerModel

from conftest import random_lattice


def lattice_from_probs(probs) -> Lattice:
    return Lattice(np.log(np.asarray(probs, dtype=np.float64)))


class TestSoftKlFull:
    def test_zero_at_equality(self, rng):
        lat = random_lattice(rng, T=3, U=2, K=3)
        loss, grad = soft_kl_full(lat, Lattice(lat.log_probs.copy()))
        assert loss == pytest.approx(0.0, abs=1e-12)
        assert np.allclose(grad, -np.exp(lat.log_probs))

    def test_single_node_value(self):
        teacher = lattice_from_probs([[[0.7, 0.2, 0.1]]])
        student = lattice_from_probs([[[0.6, 0.2, 0.2]]])
        expected = 0.7 * math.log(0.7 / 0.6) + 0.1 * math.log(0.1 / 0.2)
        loss, _ = soft_kl_full(teacher, student)
        assert loss == pytest.approx(expected, abs=1e-12)

    def test_non_negative_on_random_pairs(self):
        for seed in range(100):
            rng = np.random.default_rng(3000 + seed)
            teacher = random_lattice(rng, T=2, U=1, K=3)
            student = random_lattice(rng, T=2, U=1, K=3)
            loss, _ = soft_kl_full(teacher, student)
            assert loss >= 0.0

    def test_dimension_mismatch_names_both_shapes(self, rng):
        teacher = random_lattice(rng, T=3, U=1, K=2)
        student = random_lattice(rng, T=2, U=1, K=2)
        with pytest.raises(LatticeShapeError) as exc:
            soft_kl_full(teacher, student)
        assert "(3, 2, 3)" in str(exc.value) and "(2, 2, 3)" in str(exc.value)

    def test_gradient_matches_finite_differences(self, rng):
        teacher = random_lattice(rng, T=2, U=1, K=3)
        student = random_lattice(rng, T=2, U=1, K=3)
        _, grad = soft_kl_full(teacher, student)
        h = 1e-6
        for idx in np.ndindex(student.log_probs.shape):
            student.log_probs[idx] += h
            up, _ = soft_kl_full(teacher, student)
            student.log_probs[idx] -= 2 * h
            down, _ = soft_kl_full(teacher, student)
            student.log_probs[idx] += h
            fd = (up - down) / (2 * h)
            assert fd == pytest.approx(grad[idx], rel=1e-4, abs=1e-8)

    def test_mean_reduction_scales(self, rng):
        teacher = random_lattice(rng, T=2, U=1, K=2)
        student = random_lattice(rng, T=2, U=1, K=2)
        total, _ = soft_kl_full(teacher, student, reduction="sum")
        mean, _ = soft_kl_full(teacher, student, reduction="mean")
        assert mean == pytest.approx(total / 4.0, abs=1e-12)


class TestSoftKlEfficient:
    def test_zero_at_equality(self, rng):
        lat = random_lattice(rng, T=3, U=2, K=4)
        loss, _ = soft_kl_efficient(lat, Lattice(lat.log_probs.copy()), [0, 1])
        assert loss == pytest.approx(0.0, abs=1e-12)

    def test_three_class_value(self):
        # teacher (target .7, blank .1, rest .2) vs student (.6, .2, .2);
        # the u=U row is identical on both sides so only node (0,0) counts
        teacher = lattice_from_probs([[[0.7, 0.2, 0.1], [0.3, 0.3, 0.4]]])
        student = lattice_from_probs([[[0.6, 0.2, 0.2], [0.3, 0.3, 0.4]]])
        expected = 0.7 * math.log(7.0 / 6.0) + 0.1 * math.log(0.5)
        loss, _ = soft_kl_efficient(teacher, student, [0])
        assert loss == pytest.approx(expected, abs=1e-12)

    def test_never_exceeds_full_kl(self):
        for seed in range(100):
            rng = np.random.default_rng(4000 + seed)
            T = int(rng.integers(1, 4))
            U = int(rng.integers(0, 3))
            K = int(rng.integers(2, 5))
            teacher = random_lattice(rng, T, U, K)
            student = random_lattice(rng, T, U, K)
            y = rng.integers(0, K, size=U)
            eff, _ = soft_kl_efficient(teacher, student, y)
            full, _ = soft_kl_full(teacher, student)
            assert eff <= full + 1e-9
            assert eff >= 0.0

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(51)
        teacher = random_lattice(rng, T=2, U=2, K=3)
        student = random_lattice(rng, T=2, U=2, K=3)
        y = [2, 0]
        _, grad = soft_kl_efficient(teacher, student, y)
        h = 1e-6
        for idx in np.ndindex(student.log_probs.shape):
            student.log_probs[idx] += h
            up, _ = soft_kl_efficient(teacher, student, y)
            student.log_probs[idx] -= 2 * h
            down, _ = soft_kl_efficient(teacher, student, y)
            student.log_probs[idx] += h
            fd = (up - down) / (2 * h)
            assert fd == pytest.approx(grad[idx], rel=1e-4, abs=1e-8)


class TestShiftTeacher:
    def test_identity_at_zero(self, rng):
        lat = random_lattice(rng, T=4, U=1, K=2)
        out = shift_teacher(lat, 0)
        assert np.array_equal(out.log_probs, lat.log_probs)
        assert out.excluded_frames == 0

    def test_shift_moves_frames_right(self, rng):
        lat = random_lattice(rng, T=5, U=1, K=2)
        out = shift_teacher(lat, 2)
        assert out.excluded_frames == 2
        assert np.array_equal(out.log_probs[2], lat.log_probs[0])
        assert np.array_equal(out.log_probs[4], lat.log_probs[2])

    def test_shift_beyond_length_rejected(self, rng):
        lat = random_lattice(rng, T=3, U=0, K=2)
        with pytest.raises(DistillError):
            shift_teacher(lat, 3)

    def test_soft_loss_skips_excluded_frames(self, rng):
        teacher = random_lattice(rng, T=4, U=1, K=2)
        student = random_lattice(rng, T=4, U=1, K=2)
        shifted = shift_teacher(teacher, 2)
        loss, grad = soft_kl_full(shifted, student)
        # direct computation over the overlapping frames only
        manual = float(
            np.sum(
                np.exp(teacher.log_probs[:2])
                * (teacher.log_probs[:2] - student.log_probs[2:])
            )
        )
        assert loss == pytest.approx(manual, abs=1e-12)
        assert np.all(grad[:2] == 0.0)


class TestFsDistill:
    def test_equal_inputs_zero(self):
        loss, grad = fs_distill(3.2, 3.2, "l1")
        assert loss == 0.0 and grad == 0.0
        loss, grad = fs_distill(3.2, 3.2, "mse")
        assert loss == 0.0 and grad == 0.0

    def test_l1_case(self):
        loss, grad = fs_distill(2.0, 5.0, "l1")
        assert loss == pytest.approx(3.0) and grad == pytest.approx(1.0)

    def test_mse_case(self):
        loss, grad = fs_distill(2.0, 5.0, "mse")
        assert loss == pytest.approx(9.0) and grad == pytest.approx(6.0)

    def test_symmetric_as_a_function(self):
        for kind in ("l1", "mse"):
            a, _ = fs_distill(1.3, 4.1, kind)
            b, _ = fs_distill(4.1, 1.3, kind)
            assert a == pytest.approx(b)

    def test_non_finite_identifies_side(self):
        with pytest.raises(DistillError, match="teacher"):
            fs_distill(float("nan"), 1.0)
        with pytest.raises(DistillError, match="student"):
            fs_distill(1.0, float("inf"))


class TestFsNormDistill:
    def test_equal_scores_zero(self):
        scores = [-1.0, -2.5, -4.0]
        loss, grad = fs_norm_distill(scores, scores, 0, "l1")
        assert loss == pytest.approx(0.0, abs=1e-12)
        loss, _ = fs_norm_distill(scores, scores, 1, "mse")
        assert loss == pytest.approx(0.0, abs=1e-12)

    def test_two_hypothesis_l1_value(self):
        # normalized teacher/student log-probs computed independently
        t_norm = -1.0 - math.log(math.exp(-1.0) + math.exp(-2.0))
        s_norm = -1.5 - math.log(2 * math.exp(-1.5))
        expected = abs(s_norm - t_norm)
        loss, _ = fs_norm_distill([-1.0, -2.0], [-1.5, -1.5], 0, "l1")
        assert loss == pytest.approx(expected, abs=1e-12)
        assert loss == pytest.approx(0.3798854930417225, abs=1e-12)

    @pytest.mark.parametrize("c", [-5.0, 0.1, 7.0])
    def test_global_shift_invariance(self, c):
        teacher = [-1.0, -2.0, -0.5]
        student = [-1.5, -1.5, -2.5]
        base, _ = fs_norm_distill(teacher, student, 1, "mse")
        t_shift, _ = fs_norm_distill([x + c for x in teacher], student, 1, "mse")
        s_shift, _ = fs_norm_distill(teacher, [x + c for x in student], 1, "mse")
        both, _ = fs_norm_distill(
            [x + c for x in teacher], [x + c for x in student], 1, "mse"
        )
        assert abs(t_shift - base) < 1e-9
        assert abs(s_shift - base) < 1e-9
        assert abs(both - base) < 1e-9

    @pytest.mark.parametrize("kind", ["l1", "mse"])
    def test_gradient_matches_finite_differences(self, kind):
        rng = np.random.default_rng(8)
        teacher = -rng.uniform(0.5, 4.0, size=5)
        student = -rng.uniform(0.5, 4.0, size=5)
        _, grad = fs_norm_distill(teacher, student, 2, kind)
        h = 1e-6
        for i in range(5):
            student[i] += h
            up, _ = fs_norm_distill(teacher, student, 2, kind)
            student[i] -= 2 * h
            down, _ = fs_norm_distill(teacher, student, 2, kind)
            student[i] += h
            fd = (up - down) / (2 * h)
            assert fd == pytest.approx(grad[i], rel=1e-4, abs=1e-8)

    def test_errors(self):
        with pytest.raises(DistillError):
            fs_norm_distill([], [], 0)
        with pytest.raises(DistillError):
            fs_norm_distill([-1.0], [-1.0, -2.0], 0)
        with pytest.raises(DistillError):
            fs_norm_distill([-1.0], [-1.0], 3)


class TestDistillLossKind:
    def test_shift_only_for_soft(self):
        DistillLossKind(LossKind.SOFT_FULL, shift_n=3)
        with pytest.raises(DistillError):
            DistillLossKind(LossKind.FS_L1, shift_n=3)

    def test_nbest_positive(self):
        with pytest.raises(DistillError):
            DistillLossKind(LossKind.FSNORM_L1, nbest_size=0)


class TestCombinedLoss:
    @staticmethod
    def build(seed=0, subsample=1, hidden=6, vocab=3):
        cfg = EncoderConfig(
            causal=False, left_context=1, right_context=1,
            subsample=subsample, hidden=hidden,
        )
        return TransducerModel(vocab_size=vocab, feat_dim=2, encoder=cfg, seed=seed)

    @staticmethod
    def batch(rng, vocab=3):
        sup = Utterance("s-0", rng.normal(size=(4, 2)), labels=(0, 1))
        unsup = Utterance("u-0", rng.normal(size=(4, 2)), labels=None)
        return [sup, unsup]

    def test_supervised_only_weights(self, rng):
        model = self.build()
        batch = self.batch(rng)
        cfg = CombinedLossConfig(1.0, 0.0, 0.0)
        total, terms = combined_loss(
            model, batch, DistillLossKind(LossKind.HARD), cfg
        )
        assert terms["hard_on_pseudo"] == 0.0 and terms["distill"] == 0.0
        assert total == pytest.approx(terms["supervised_rnnt"])

    def test_hard_distillation_uses_pseudo_labels(self, rng):
        model = self.build()
        batch = self.batch(rng)
        pseudo = {"u-0": PseudoLabelRecord("u-0", (2,), -1.0, [((2,), -1.0)])}
        cfg = CombinedLossConfig(1.0, 1.0, 0.0)
        total, terms = combined_loss(
            model, batch, DistillLossKind(LossKind.HARD), cfg, pseudo_labels=pseudo
        )
        assert terms["hard_on_pseudo"] > 0.0
        assert total == pytest.approx(
            terms["supervised_rnnt"] + terms["hard_on_pseudo"]
        )

    def test_missing_pseudo_label_raises(self, rng):
        model = self.build()
        batch = self.batch(rng)
        cfg = CombinedLossConfig(1.0, 1.0, 0.0)
        with pytest.raises(DistillError, match="u-0"):
            combined_loss(model, batch, DistillLossKind(LossKind.HARD), cfg)

    def test_self_distillation_reduces_to_supervised(self, rng):
        # teacher == student and pseudo == truth: soft KL and FS terms vanish
        model = self.build(seed=5)
        x = rng.normal(size=(4, 2))
        sup = Utterance("s-0", x, labels=(0, 1))
        unsup = Utterance("u-0", x.copy(), labels=None)
        lat = model.build_lattice(x, [0, 1])
        exact, _, _ = forward_backward(lat, [0, 1])
        pseudo = {"u-0": PseudoLabelRecord("u-0", (0, 1), float(exact), [((0, 1), float(exact))])}

        cfg = CombinedLossConfig(1.0, 0.0, 1.0)
        total, terms = combined_loss(
            model, [sup, unsup], DistillLossKind(LossKind.SOFT_FULL), cfg,
            pseudo_labels=pseudo, teacher_model=model,
        )
        assert terms["distill"] == pytest.approx(0.0, abs=1e-12)
        assert total == pytest.approx(terms["supervised_rnnt"], abs=1e-12)

        total, terms = combined_loss(
            model, [sup, unsup], DistillLossKind(LossKind.FS_L1), cfg,
            pseudo_labels=pseudo,
        )
        assert terms["distill"] == pytest.approx(0.0, abs=1e-9)

    def test_fs_allows_subsample_mismatch(self, rng):
        teacher = self.build(seed=1, subsample=1)
        student = self.build(seed=2, subsample=2)
        x = rng.normal(size=(6, 2))
        unsup = Utterance("u-0", x, labels=None)
        t_lat = teacher.build_lattice(x, [1])
        t_score, _, _ = forward_backward(t_lat, [1])
        pseudo = {"u-0": PseudoLabelRecord("u-0", (1,), float(t_score), [((1,), float(t_score))])}
        cfg = CombinedLossConfig(0.0, 0.0, 1.0)
        total, terms = combined_loss(
            student, [unsup], DistillLossKind(LossKind.FS_L1), cfg, pseudo_labels=pseudo
        )
        assert np.isfinite(total)
        assert terms["distill"] >= 0.0

    def test_soft_rejects_subsample_mismatch(self, rng):
        teacher = self.build(seed=1, subsample=1)
        student = self.build(seed=2, subsample=2)
        x = rng.normal(size=(6, 2))
        unsup = Utterance("u-0", x, labels=None)
        pseudo = {"u-0": PseudoLabelRecord("u-0", (1,), -1.0, [((1,), -1.0)])}
        cfg = CombinedLossConfig(0.0, 0.0, 1.0)
        with pytest.raises(LatticeShapeError):
            combined_loss(
                student, [unsup], DistillLossKind(LossKind.SOFT_EFFICIENT), cfg,
                pseudo_labels=pseudo, teacher_model=teacher,
            )

    def test_fsnorm_needs_a_real_list(self, rng):
        student = self.build(seed=2)
        unsup = Utterance("u-0", rng.normal(size=(4, 2)), labels=None)
        pseudo = {"u-0": PseudoLabelRecord("u-0", (1,), -1.0, [((1,), -1.0)])}
        cfg = CombinedLossConfig(0.0, 0.0, 1.0)
        with pytest.raises(DistillError, match="N-best"):
            combined_loss(
                student, [unsup], DistillLossKind(LossKind.FSNORM_L1, nbest_size=4),
                cfg, pseudo_labels=pseudo,
            )

    def test_gradients_flow_into_model(self, rng):
        teacher = self.build(seed=1)
        student = self.build(seed=2)
        x = rng.normal(size=(5, 2))
        unsup = Utterance("u-0", x, labels=None)
        t_lat = teacher.build_lattice(x, [1, 0])
        t_score, _, _ = forward_backward(t_lat, [1, 0])
        nbest = []
        for labels in [(1, 0), (1,), ()]:
            lat = teacher.build_lattice(x, list(labels))
            s, _, _ = forward_backward(lat, list(labels))
            nbest.append((labels, float(s)))
        nbest.sort(key=lambda e: -e[1])
        pseudo = {"u-0": PseudoLabelRecord("u-0", (1, 0), float(t_score), nbest)}

        for kind in [
            DistillLossKind(LossKind.SOFT_FULL),
            DistillLossKind(LossKind.SOFT_EFFICIENT),
            DistillLossKind(LossKind.FS_L1),
            DistillLossKind(LossKind.FS_MSE),
            DistillLossKind(LossKind.FSNORM_L1, nbest_size=3),
            DistillLossKind(LossKind.FSNORM_MSE, nbest_size=3),
        ]:
            student.zero_grad()
            cfg = CombinedLossConfig(0.0, 0.0, 1.0)
            total, _ = combined_loss(
                student, [unsup], kind, cfg,
                pseudo_labels=pseudo, teacher_model=teacher,
            )
            assert np.isfinite(total)
            grad_norm = sum(float(np.abs(g).sum()) for g in student.grads.values())
            assert grad_norm > 0.0


class TestCombinedLossConfig:
    def test_needs_a_positive_weight(self):
        with pytest.raises(DistillError):
            CombinedLossConfig(0.0, 0.0, 0.0)

    def test_rejects_negative(self):
        with pytest.raises(DistillError):
            CombinedLossConfig(-1.0, 0.0, 1.0)
