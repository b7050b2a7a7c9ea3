"""Distillation objective ``L = KL(p, q) + sum_i ||r_s_i - r_t_i||^2`` and its gradient.

The teacher is frozen, so gradients are taken with respect to the
student's outputs only: softened probabilities ``q`` and block
representations ``r_s``.  :func:`expanded_gradient` keeps the full chain
rule with teacher-side partials for checking.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ShapeError

ROW_SUM_TOL = 1e-9


@dataclass
class DistillBatch:
    teacher_probs: np.ndarray
    student_probs: np.ndarray
    teacher_reps: list[np.ndarray] = field(default_factory=list)
    student_reps: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        self.teacher_probs = np.atleast_2d(np.asarray(self.teacher_probs, dtype=np.float64))
        self.student_probs = np.atleast_2d(np.asarray(self.student_probs, dtype=np.float64))
        if self.teacher_probs.shape != self.student_probs.shape:
            raise ShapeError("teacher and student logits differ in shape")
        self.teacher_reps = [np.asarray(r, dtype=np.float64) for r in self.teacher_reps]
        self.student_reps = [np.asarray(r, dtype=np.float64) for r in self.student_reps]
        _check_reps(self.student_reps, self.teacher_reps)


def _check_reps(r_s, r_t):
    if len(r_s) != len(r_t):
        raise ShapeError("teacher and student have different block counts")
    for a, b in zip(r_s, r_t):
        if np.shape(a) != np.shape(b):
            raise ShapeError(f"representation shapes differ: {np.shape(a)} vs {np.shape(b)}")


def _check_distribution(x: np.ndarray, name: str) -> None:
    if np.any(x < 0) or not np.allclose(x.sum(axis=-1), 1.0, rtol=0, atol=ROW_SUM_TOL):
        raise DomainError(f"{name} rows must be probability distributions")


def kl_logits_loss(p, q, check: bool = True) -> float:
    """Batch mean of ``sum_i p_i log(p_i / q_i)``; terms with ``p_i = 0`` vanish."""
    p = np.atleast_2d(np.asarray(p, dtype=np.float64))
    q = np.atleast_2d(np.asarray(q, dtype=np.float64))
    if p.shape != q.shape:
        raise ShapeError("p and q differ in shape")
    if check:
        _check_distribution(p, "p")
        _check_distribution(q, "q")
    support = p > 0
    if np.any(support & (q <= 0)):
        raise DomainError("q vanishes where p has mass")
    terms = np.zeros_like(p)
    terms[support] = p[support] * np.log(p[support] / q[support])
    return float(terms.sum() / p.shape[0])


def reps_loss(r_s, r_t) -> float:
    _check_reps(r_s, r_t)
    return float(sum(np.sum((np.asarray(a) - np.asarray(b)) ** 2) for a, b in zip(r_s, r_t)))


def total_loss_grad(batch: DistillBatch, check: bool = True
                    ) -> tuple[float, np.ndarray, list[np.ndarray]]:
    """Loss, dL/dq and dL/dr_s for a frozen teacher.

    dL/dq = -p / (B q) (the batch mean puts ``1/B`` on every row) and
    dL/dr_s = 2 (r_s - r_t).
    """
    p, q = batch.teacher_probs, batch.student_probs
    loss = kl_logits_loss(p, q, check) + reps_loss(batch.student_reps, batch.teacher_reps)
    B = p.shape[0]
    grad_q = np.where(p > 0, -p / np.where(q > 0, q, 1.0), 0.0) / B
    grad_r = [2.0 * (s - t) for s, t in zip(batch.student_reps, batch.teacher_reps)]
    return loss, grad_q, grad_r


def expanded_gradient(batch: DistillBatch, dp_dw, dq_dw, drs_dw, drt_dw) -> np.ndarray:
    """Full chain rule, teacher partials included.

    ``dp_dw``/``dq_dw`` have shape ``[B, classes, *w]``; ``drs_dw``/``drt_dw``
    hold one ``[*rep_shape, *w]`` array per block.  With zero teacher
    partials this reduces to chaining :func:`total_loss_grad`.
    """
    p, q = batch.teacher_probs, batch.student_probs
    B = p.shape[0]
    w_axes = np.ndim(dp_dw) - 2
    ratio = np.where(p > 0, p / q, 0.0)
    logterm = np.where(p > 0, np.log(np.where(p > 0, p, 1.0) / q) + 1.0, 0.0)
    expand = (...,) + (None,) * w_axes
    g = ((logterm[expand] * dp_dw - ratio[expand] * dq_dw).sum(axis=(0, 1))) / B
    for rs, rt, ds, dt in zip(batch.student_reps, batch.teacher_reps, drs_dw, drt_dw):
        diff = 2.0 * (rs - rt)
        lead = tuple(range(diff.ndim))
        g = g + np.tensordot(diff, ds, axes=(lead, lead)) - np.tensordot(diff, dt, axes=(lead, lead))
    return g
