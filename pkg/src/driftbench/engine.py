"""Continual test-time adaptation loop.

One call to :func:`step` handles one arriving batch: the student predicts
first (that prediction is the reported output), then the student is updated
from teacher guidance, the teacher absorbs the student through an EMA whose
weight depends on the measured domain shift, and finally a random subset of
teacher scalars is reset to the source values.

Modes:
  ctta_t       full pipeline (refine/filter guidance, IPCA-driven EMA, restoration)
  no_adapt     predictions only
  fixed_alpha  raw teacher guidance and a constant EMA weight
  entropy_min  the student minimises its own prediction entropy, no teacher
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import cda, model, rfp, rng
from .errors import InvalidInputError, PoisonedUpdateError
from .model import DropoutMask, ModelParams, OptimizerState
from .stream import Batch, StreamSchedule, make_stream

log = logging.getLogger(__name__)

MODES = ("ctta_t", "no_adapt", "fixed_alpha", "entropy_min")


@dataclass(frozen=True)
class EngineConfig:
    mode: str = "ctta_t"
    alpha: float | None = None  # fixed_alpha only
    rfp: rfp.RfpConfig = field(default_factory=rfp.RfpConfig)
    alpha_policy: cda.AlphaPolicy = field(default_factory=cda.AlphaPolicy)
    restore_prob: float = 0.01
    optimizer: OptimizerState = field(default_factory=OptimizerState)
    master_seed: int = 0
    student_dropout: bool = False
    k: int | None = None  # principal components tracked; None -> min(d, 8)

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidInputError(f"unknown mode {self.mode!r}; choose from {MODES}")
        if self.mode == "fixed_alpha":
            if self.alpha is None or not 0.0 <= self.alpha <= 1.0:
                raise InvalidInputError("fixed_alpha mode needs alpha in [0, 1]")
        if not 0.0 <= self.restore_prob <= 1.0:
            raise InvalidInputError("restore_prob must be in [0, 1]")

    @property
    def label(self) -> str:
        return f"fixed_alpha:{self.alpha:g}" if self.mode == "fixed_alpha" else self.mode


@dataclass(frozen=True)
class EngineState:
    theta_source: ModelParams
    theta_teacher: ModelParams
    theta_student: ModelParams
    tracker: cda.DomainTracker
    optimizer: OptimizerState
    step: int = 0

    @classmethod
    def initial(cls, theta_0: ModelParams, cfg: EngineConfig) -> "EngineState":
        feat_dim = theta_0.hidden or theta_0.dim
        return cls(
            theta_source=theta_0,
            theta_teacher=theta_0,
            theta_student=theta_0,
            tracker=cda.DomainTracker.empty(feat_dim, cfg.k),
            optimizer=cfg.optimizer.copy(),
            step=0,
        )


@dataclass(frozen=True)
class StepReport:
    step: int
    domain_id: int
    accuracy: float
    direct: int = 0
    refined: int = 0
    discarded: int = 0
    loss: float | None = None
    distance: float | None = None
    alpha: float | None = None
    restored_fraction: float | None = None
    n_seen: int | None = None
    skipped: bool = False

    @property
    def kept(self) -> int:
        return self.direct + self.refined


@dataclass
class MetricsLog:
    reports: list[StepReport]
    final_state: EngineState

    def accuracy(self) -> np.ndarray:
        return np.array([r.accuracy for r in self.reports])


def ema_update(theta_t: ModelParams, theta_s: ModelParams, alpha: float) -> ModelParams:
    if not 0.0 <= alpha <= 1.0:
        raise InvalidInputError("alpha must be in [0, 1]")
    return theta_t.unflat(alpha * theta_t.flat() + (1.0 - alpha) * theta_s.flat())


def stochastic_restore(theta_t: ModelParams, theta_0: ModelParams, p: float, seed: int) -> tuple[ModelParams, float]:
    """Reset each scalar of the teacher to its source value with probability ``p``."""
    if not 0.0 <= p <= 1.0:
        raise InvalidInputError("restore probability must be in [0, 1]")
    teacher = theta_t.flat()
    mask = rng.uniform(seed, teacher.size) < p
    restored = np.where(mask, theta_0.flat(), teacher)
    return theta_t.unflat(restored), float(mask.mean()) if teacher.size else 0.0


def _student_mask(cfg: EngineConfig, params: ModelParams, step: int, rows: int) -> DropoutMask | None:
    if not cfg.student_dropout:
        return None
    key = rng.derive(cfg.master_seed, rng.STUDENT_DROPOUT, step)
    return DropoutMask.draw(key, 0, cfg.rfp.dropout_rate, params.dim, params.hidden, rows=rows)


def _guidance(state: EngineState, x: np.ndarray, cfg: EngineConfig):
    if cfg.mode == "fixed_alpha":
        probs = model.forward(state.theta_teacher, x).probs
        return list(probs), len(x), 0, 0
    seeds = [rfp.sample_seed(cfg.master_seed, state.step, i) for i in range(len(x))]
    decisions = rfp.decide_batch(state.theta_teacher, x, cfg.rfp, seeds)
    targets = [d.guidance for d in decisions]
    direct = sum(d.kind is rfp.Guide.DIRECT for d in decisions)
    refined = sum(d.kind is rfp.Guide.REFINED for d in decisions)
    return targets, direct, refined, len(x) - direct - refined


def _student_update(state: EngineState, x, targets, cfg: EngineConfig):
    keep = [i for i, t in enumerate(targets) if t is not None]
    if not keep:
        return state.theta_student, state.optimizer, None
    xk = x[keep]
    tk = np.stack([targets[i] for i in keep])
    mask = _student_mask(cfg, state.theta_student, state.step, len(keep))
    student_probs = model.forward(state.theta_student, xk, mask).probs
    loss = float(np.mean(model.cross_entropy(tk, student_probs)))
    if not np.isfinite(loss):
        raise PoisonedUpdateError("non-finite loss")
    g = model.grad(state.theta_student, xk, tk, mask)
    student, opt = model.optimizer_step(state.theta_student, g, state.optimizer)
    return student, opt, loss


def _entropy_update(state: EngineState, x, cfg: EngineConfig):
    mask = _student_mask(cfg, state.theta_student, state.step, len(x))
    probs = model.forward(state.theta_student, x, mask).probs
    loss = float(np.mean(model.entropy(probs)))
    if not np.isfinite(loss):
        raise PoisonedUpdateError("non-finite loss")
    g = model.entropy_grad(state.theta_student, x, mask)
    student, opt = model.optimizer_step(state.theta_student, g, state.optimizer)
    return student, opt, loss


def step(state: EngineState, batch: Batch, cfg: EngineConfig) -> tuple[np.ndarray, StepReport, EngineState]:
    """Predict on ``batch`` with the student, then adapt. Returns (probs, report, new state)."""
    x = np.asarray(batch.x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != state.theta_student.dim:
        raise InvalidInputError(f"batch has shape {x.shape}, model expects (n, {state.theta_student.dim})")
    probs = model.forward(state.theta_student, x).probs
    accuracy = float(np.mean(np.argmax(probs, axis=1) == np.asarray(batch.y)))
    base = dict(step=state.step, domain_id=batch.domain_id, accuracy=accuracy)

    if cfg.mode == "no_adapt":
        return probs, StepReport(**base), replace(state, step=state.step + 1)

    try:
        if not np.all(np.isfinite(x)):
            raise PoisonedUpdateError("non-finite input batch")
        if cfg.mode == "entropy_min":
            student, opt, loss = _entropy_update(state, x, cfg)
            report = StepReport(**base, direct=len(x), loss=loss)
            new = replace(state, theta_student=student, optimizer=opt, step=state.step + 1)
            return probs, report, new

        targets, direct, refined, discarded = _guidance(state, x, cfg)
        student, opt, loss = _student_update(state, x, targets, cfg)

        tracker, distance = state.tracker, None
        if cfg.mode == "fixed_alpha":
            alpha = cfg.alpha
        else:
            feats = model.features(state.theta_source, x)
            tracker, distance = cda.ipca_update(state.tracker, feats)
            alpha = cda.alpha_from_distance(distance, cfg.alpha_policy)
        teacher = ema_update(state.theta_teacher, student, alpha)

        restored = None
        if cfg.mode == "ctta_t":
            key = rng.derive(cfg.master_seed, rng.RESTORE, state.step)
            teacher, restored = stochastic_restore(teacher, state.theta_source, cfg.restore_prob, key)
        if not (teacher.is_finite() and student.is_finite()):
            raise PoisonedUpdateError("non-finite parameters after update")
    except PoisonedUpdateError as exc:
        log.warning("step %d skipped: %s", state.step, exc)
        return probs, StepReport(**base, skipped=True), replace(state, step=state.step + 1)

    report = StepReport(
        **base,
        direct=direct,
        refined=refined,
        discarded=discarded,
        loss=loss,
        distance=distance,
        alpha=alpha,
        restored_fraction=restored,
        n_seen=tracker.n_seen if distance is not None else None,
    )
    new = EngineState(
        theta_source=state.theta_source,
        theta_teacher=teacher,
        theta_student=student,
        tracker=tracker,
        optimizer=opt,
        step=state.step + 1,
    )
    return probs, report, new


def run(cfg: EngineConfig, schedule: StreamSchedule, theta_0: ModelParams) -> MetricsLog:
    state = EngineState.initial(theta_0, cfg)
    reports = []
    for batch in make_stream(schedule):
        _, report, state = step(state, batch, cfg)
        reports.append(report)
    return MetricsLog(reports=reports, final_state=state)
