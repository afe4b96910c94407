"""Distillation losses for sequence transducers.

Frame-local losses (soft distillation) match teacher and student posterior
distributions at every lattice node; sequence-level losses (full-sum
distillation) match sequence log-probabilities and therefore tolerate
teachers and students with different time resolutions.  All losses return
their gradient w.r.t. the student side; the teacher is a frozen constant.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .lattice import Lattice, LatticeShapeError, logsumexp, rnnt_loss_with_grad
from .model import NonFiniteLossError


class DistillError(ValueError):
    pass


class LossKind(str, Enum):
    HARD = "hard"
    SOFT_FULL = "soft_full"
    SOFT_EFFICIENT = "soft_efficient"
    FS_L1 = "fs_l1"
    FS_MSE = "fs_mse"
    FSNORM_L1 = "fsnorm_l1"
    FSNORM_MSE = "fsnorm_mse"

    @property
    def is_soft(self) -> bool:
        return self in (LossKind.SOFT_FULL, LossKind.SOFT_EFFICIENT)

    @property
    def is_sequence_level(self) -> bool:
        return self in (
            LossKind.FS_L1,
            LossKind.FS_MSE,
            LossKind.FSNORM_L1,
            LossKind.FSNORM_MSE,
        )

    @property
    def is_norm(self) -> bool:
        return self in (LossKind.FSNORM_L1, LossKind.FSNORM_MSE)

    @property
    def fs_flavor(self) -> str:
        return "mse" if self in (LossKind.FS_MSE, LossKind.FSNORM_MSE) else "l1"


@dataclass(frozen=True)
class DistillLossKind:
    """A distillation loss selection plus its knobs.

    ``shift_n`` shifts the teacher lattice right in time (soft variants
    only); ``nbest_size`` is the hypothesis-list length for the normalized
    sequence variants.
    """

    kind: LossKind
    shift_n: int = 0
    nbest_size: int = 1

    def __post_init__(self):
        if self.shift_n < 0:
            raise DistillError("shift_n must be >= 0")
        if self.shift_n > 0 and not self.kind.is_soft:
            raise DistillError("shift_n only applies to soft distillation")
        if self.nbest_size < 1:
            raise DistillError("nbest_size must be >= 1")


@dataclass(frozen=True)
class CombinedLossConfig:
    weight_supervised_rnnt: float = 1.0
    weight_hard_on_pseudo: float = 0.0
    weight_distill: float = 0.0

    def __post_init__(self):
        weights = (
            self.weight_supervised_rnnt,
            self.weight_hard_on_pseudo,
            self.weight_distill,
        )
        if any(w < 0 for w in weights):
            raise DistillError("loss weights must be non-negative")
        if not any(w > 0 for w in weights):
            raise DistillError("at least one loss weight must be positive")


def _check_same_shape(teacher: Lattice, student: Lattice) -> None:
    if teacher.log_probs.shape != student.log_probs.shape:
        raise LatticeShapeError(
            "teacher/student lattices differ in shape: "
            f"{teacher.log_probs.shape} vs {student.log_probs.shape}; "
            "frame-local soft distillation requires identical T', U, K "
            "(sequence-level full-sum distillation has no such constraint)",
            teacher.log_probs.shape,
            student.log_probs.shape,
        )


def soft_kl_full(teacher: Lattice, student: Lattice, reduction: str = "sum"):
    """KL(teacher || student) summed over every lattice node and label.

    Returns ``(loss, grad)`` with the gradient taken w.r.t. the student
    log-probabilities (simply -teacher_probs at included positions).
    """
    _check_same_shape(teacher, student)
    skip = max(teacher.excluded_frames, student.excluded_frames)

    t_lp = teacher.log_probs[skip:]
    s_lp = student.log_probs[skip:]
    t_p = np.exp(t_lp)
    node_kl = np.sum(t_p * (t_lp - s_lp), axis=-1)

    grad = np.zeros_like(student.log_probs)
    grad[skip:] = -t_p
    scale = 1.0
    if reduction == "mean":
        scale = 1.0 / max(node_kl.size, 1)
    elif reduction != "sum":
        raise DistillError(f"unknown reduction {reduction!r}")
    return float(node_kl.sum()) * scale, grad * scale


def _three_class_log(lat: Lattice, y: np.ndarray, skip: int):
    """Collapse each node to log-masses of (target, blank, rest).

    Working entirely in log space keeps the masses finite even where the
    linear probabilities underflow; intermediates stay O(T x U) because the
    rest-mass accumulates label by label instead of exponentiating the full
    lattice.  Structurally empty classes (the target at the u=U row) are
    -inf and carry zero teacher weight.
    """
    lp = lat.log_probs[skip:]
    T, U1, K1 = lp.shape
    blank = K1 - 1
    log_blank = lp[:, :, blank]
    log_tgt = np.full((T, U1), -np.inf)
    for u in range(len(y)):
        log_tgt[:, u] = lp[:, u, y[u]]
    log_rest = np.full((T, U1), -np.inf)
    for k in range(blank):
        col = lp[:, :, k]
        hit = np.flatnonzero(y == k)
        if hit.size:
            col = col.copy()
            col[:, hit] = -np.inf  # the target label is not part of "rest"
        log_rest = np.logaddexp(log_rest, col)
    return log_tgt, log_blank, log_rest


def _kl_term(log_p, log_q):
    """Elementwise exp(log_p) * (log_p - log_q), zero where log_p = -inf."""
    out = np.zeros_like(log_p)
    mask = log_p > -np.inf
    out[mask] = np.exp(log_p[mask]) * (log_p[mask] - log_q[mask])
    return out


def soft_kl_efficient(teacher: Lattice, student: Lattice, labels, reduction: str = "sum"):
    """Three-class soft distillation: match (target, blank, rest) at each node.

    The coarsened KL never exceeds the full KL (log-sum inequality) and
    needs no T x U x K intermediate.
    """
    _check_same_shape(teacher, student)
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    if len(y) + 1 != teacher.num_label_rows:
        raise LatticeShapeError(
            f"label sequence of length {len(y)} does not match lattice with "
            f"{teacher.num_label_rows} label rows",
            teacher.log_probs.shape,
            (len(y),),
        )
    skip = max(teacher.excluded_frames, student.excluded_frames)

    t_tgt, t_blank, t_rest = _three_class_log(teacher, y, skip)
    s_tgt, s_blank, s_rest = _three_class_log(student, y, skip)

    kl = _kl_term(t_tgt, s_tgt) + _kl_term(t_blank, s_blank) + _kl_term(t_rest, s_rest)
    loss = float(kl.sum())

    # gradient w.r.t. student log-probabilities via the class masses:
    # d/dlogp(target) = -exp(t_tgt), d/dlogp(blank) = -exp(t_blank),
    # d/dlogp(k in rest) = -exp(t_rest) * softmax of logp(k) within rest
    s_lp = student.log_probs[skip:]
    blank = student.blank

    grad = np.zeros_like(student.log_probs)
    gview = grad[skip:]
    rest_weight = np.where(t_rest > -np.inf, np.exp(t_rest), 0.0)
    safe_rest = np.where(s_rest > -np.inf, s_rest, 0.0)
    for k in range(blank):
        inside = np.exp(s_lp[:, :, k] - safe_rest)
        gview[:, :, k] = -rest_weight * np.where(s_rest > -np.inf, inside, 0.0)
    for u in range(len(y)):
        gview[:, u, y[u]] = -np.exp(t_tgt[:, u])
    gview[:, :, blank] = -np.exp(t_blank)

    scale = 1.0
    if reduction == "mean":
        scale = 1.0 / max(kl.size, 1)
    elif reduction != "sum":
        raise DistillError(f"unknown reduction {reduction!r}")
    return loss * scale, grad * scale


def shift_teacher(teacher: Lattice, shift: int) -> Lattice:
    """Move the teacher lattice ``shift`` frames to the right in time.

    Output node (t, u) holds teacher node (t - shift, u); the first
    ``shift`` frames carry no teacher evidence and are flagged excluded so
    soft losses skip them rather than matching invented distributions.
    """
    if shift < 0:
        raise DistillError("shift must be >= 0")
    if shift >= teacher.num_frames:
        raise DistillError(
            f"shift {shift} >= lattice length {teacher.num_frames}"
        )
    if shift == 0:
        return Lattice(teacher.log_probs.copy(), excluded_frames=teacher.excluded_frames)
    shifted = np.empty_like(teacher.log_probs)
    shifted[shift:] = teacher.log_probs[: teacher.num_frames - shift]
    # excluded region: placeholder uniform rows, never read by the losses
    shifted[:shift] = -np.log(teacher.log_probs.shape[2])
    return Lattice(shifted, excluded_frames=shift + teacher.excluded_frames)


def _check_fs_input(value: float, side: str) -> float:
    value = float(value)
    if not np.isfinite(value):
        raise DistillError(f"non-finite {side} loss value: {value!r}")
    return value


def fs_distill(teacher_nll: float, student_nll: float, kind: str = "l1"):
    """Sequence-level distillation on full-sum losses of the pseudo label.

    Both inputs are -log P(Y|X); the teacher value is a constant.  Returns
    ``(loss, d loss / d student_nll)``.
    """
    t = _check_fs_input(teacher_nll, "teacher")
    s = _check_fs_input(student_nll, "student")
    diff = s - t
    if kind == "l1":
        return abs(diff), float(np.sign(diff))
    if kind == "mse":
        return diff * diff, 2.0 * diff
    raise DistillError(f"unknown full-sum flavor {kind!r}")


def fs_norm_distill(teacher_scores, student_scores, target_index: int, kind: str = "l1"):
    """Full-sum distillation on N-best-normalized sequence log-probabilities.

    Scores are log P(Y'|X) over a shared hypothesis list; both sides are
    normalized by their logsumexp, which cancels any constant offset.
    Returns ``(loss, gradient w.r.t. student_scores)``.
    """
    t = np.asarray(teacher_scores, dtype=np.float64).reshape(-1)
    s = np.asarray(student_scores, dtype=np.float64).reshape(-1)
    if t.size == 0:
        raise DistillError("empty hypothesis list")
    if t.size != s.size:
        raise DistillError(
            f"teacher/student score lists differ in length: {t.size} vs {s.size}"
        )
    if not 0 <= target_index < t.size:
        raise DistillError(f"target index {target_index} outside list of {t.size}")
    if not np.all(np.isfinite(t)):
        raise DistillError("non-finite teacher score")
    if not np.all(np.isfinite(s)):
        raise DistillError("non-finite student score")

    t_norm = t[target_index] - logsumexp(t)
    s_norm = s[target_index] - logsumexp(s)
    diff = s_norm - t_norm
    if kind == "l1":
        loss, dnorm = abs(diff), float(np.sign(diff))
    elif kind == "mse":
        loss, dnorm = diff * diff, 2.0 * diff
    else:
        raise DistillError(f"unknown full-sum flavor {kind!r}")

    # s_norm = s[i] - logsumexp(s): d s_norm / d s_j = [j == i] - softmax(s)_j
    softmax = np.exp(s - logsumexp(s))
    grad = -softmax
    grad[target_index] += 1.0
    return float(loss), dnorm * grad


# ----- batch-level combination -----


def _rnnt_term(model, x, y, weight: float, utt_id: str, accumulate: bool) -> float:
    lat, cache = model.forward(x, y)
    loss, g = rnnt_loss_with_grad(lat, y)
    if not np.isfinite(loss):
        raise NonFiniteLossError(utt_id, loss)
    if accumulate and weight != 0.0:
        model.backward(cache, weight * g)
    return loss


def _soft_term(model, teacher_model, x, y, kind: DistillLossKind, reduction: str,
               weight: float, utt_id: str, accumulate: bool) -> float:
    student_lat, cache = model.forward(x, y)
    teacher_lat = teacher_model.build_lattice(x, y)
    if kind.shift_n > 0:
        teacher_lat = shift_teacher(teacher_lat, kind.shift_n)
    if kind.kind == LossKind.SOFT_FULL:
        loss, g = soft_kl_full(teacher_lat, student_lat, reduction=reduction)
    else:
        loss, g = soft_kl_efficient(teacher_lat, student_lat, y, reduction=reduction)
    if not np.isfinite(loss):
        raise NonFiniteLossError(utt_id, loss)
    if accumulate and weight != 0.0:
        model.backward(cache, weight * g)
    return loss


def _fs_term(model, x, record, kind: DistillLossKind, weight: float,
             accumulate: bool) -> float:
    if kind.kind.is_norm:
        if len(record.nbest) < 2:
            raise DistillError(
                f"normalized full-sum distillation needs an N-best list with "
                f">= 2 hypotheses, got {len(record.nbest)} for {record.utt_id}"
            )
        teacher_scores = [score for _, score in record.nbest]
        student_scores = []
        caches = []
        grads = []
        for labels, _ in record.nbest:
            lat, cache = model.forward(x, list(labels))
            nll, g = rnnt_loss_with_grad(lat, list(labels))
            student_scores.append(-nll)
            caches.append(cache)
            grads.append(g)  # gradient of the NLL; score = -NLL
        loss, dscores = fs_norm_distill(
            teacher_scores, student_scores, record.target_index(), kind.kind.fs_flavor
        )
        if not np.isfinite(loss):
            raise NonFiniteLossError(record.utt_id, loss)
        if accumulate and weight != 0.0:
            for dscore, cache, g in zip(dscores, caches, grads):
                # d score / d lattice = -d NLL / d lattice
                model.backward(cache, (-dscore * weight) * g)
        return loss

    y = list(record.labels)
    lat, cache = model.forward(x, y)
    student_nll, g = rnnt_loss_with_grad(lat, y)
    teacher_nll = -record.score
    loss, dstudent = fs_distill(teacher_nll, student_nll, kind.kind.fs_flavor)
    if not np.isfinite(loss):
        raise NonFiniteLossError(record.utt_id, loss)
    if accumulate and weight != 0.0:
        model.backward(cache, (dstudent * weight) * g)
    return loss


def combined_loss(
    model,
    batch,
    kind: DistillLossKind,
    config: CombinedLossConfig,
    pseudo_labels=None,
    teacher_model=None,
    reduction: str = "sum",
    accumulate: bool = True,
):
    """Weighted sum of supervised, hard-pseudo, and distillation terms.

    ``batch`` is a list of corpus utterances; those with ground-truth labels
    form the supervised slice, the rest must have a pseudo-label record.
    Per-term means are reported separately for logging.  Gradients are
    accumulated into ``model.grads`` scaled by the term weights.
    """
    sums = {"supervised_rnnt": 0.0, "hard_on_pseudo": 0.0, "distill": 0.0}
    counts = {"supervised_rnnt": 0, "hard_on_pseudo": 0, "distill": 0}
    n_sup = max(sum(1 for u in batch if u.labels is not None), 1)
    n_unsup = max(sum(1 for u in batch if u.labels is None), 1)

    for utt in batch:
        if utt.labels is not None:
            if config.weight_supervised_rnnt > 0:
                sums["supervised_rnnt"] += _rnnt_term(
                    model, utt.frames, list(utt.labels),
                    config.weight_supervised_rnnt / n_sup,
                    utt.utt_id, accumulate,
                )
                counts["supervised_rnnt"] += 1
            continue

        record = (pseudo_labels or {}).get(utt.utt_id)
        if record is None:
            if config.weight_hard_on_pseudo > 0 or config.weight_distill > 0:
                raise DistillError(f"no pseudo label for utterance {utt.utt_id}")
            continue
        if config.weight_hard_on_pseudo > 0:
            sums["hard_on_pseudo"] += _rnnt_term(
                model, utt.frames, list(record.labels),
                config.weight_hard_on_pseudo / n_unsup, utt.utt_id, accumulate,
            )
            counts["hard_on_pseudo"] += 1
        if config.weight_distill > 0 and kind.kind != LossKind.HARD:
            if kind.kind.is_soft:
                if teacher_model is None:
                    raise DistillError("soft distillation requires the teacher model")
                sums["distill"] += _soft_term(
                    model, teacher_model, utt.frames, list(record.labels), kind,
                    reduction, config.weight_distill / n_unsup, utt.utt_id, accumulate,
                )
            else:
                sums["distill"] += _fs_term(
                    model, utt.frames, record, kind,
                    config.weight_distill / n_unsup, accumulate,
                )
            counts["distill"] += 1

    terms = {
        name: (sums[name] / counts[name] if counts[name] else 0.0) for name in sums
    }
    total = (
        config.weight_supervised_rnnt * terms["supervised_rnnt"]
        + config.weight_hard_on_pseudo * terms["hard_on_pseudo"]
        + config.weight_distill * terms["distill"]
    )
    return total, terms


def make_loss_fn(kind, config, pseudo_labels=None, teacher_model=None, reduction="sum"):
    """Bind a ``combined_loss`` closure usable with ``model.train_step``."""

    def loss_fn(model, batch):
        return combined_loss(
            model,
            batch,
            kind=kind,
            config=config,
            pseudo_labels=pseudo_labels,
            teacher_model=teacher_model,
            reduction=reduction,
        )

    return loss_fn
