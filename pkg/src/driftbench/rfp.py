"""Refine-then-filter teacher guidance.

Per sample: a confident teacher (entropy at most ``gamma * log C``) guides
the student directly. Otherwise the teacher is run ``n_passes`` times under
independent dropout masks, the stacked probabilities are decomposed by SVD,
and the singular-value-weighted right singular vectors give a per-class
consistency score ``s``. Samples whose best score falls below ``tau`` are
discarded; the rest are guided by ``softmax(softmax(s) * p_teacher)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import linalg, rng
from .errors import InvalidInputError
from .model import DropoutMask, ModelParams, entropy, forward, softmax


@dataclass(frozen=True)
class RfpConfig:
    n_passes: int = 8
    gamma: float = 0.4
    tau: float = 1.2
    dropout_rate: float = 0.1

    def __post_init__(self):
        if self.n_passes < 2:
            raise InvalidInputError("n_passes must be >= 2")
        if not self.gamma > 0:
            raise InvalidInputError("gamma must be > 0")
        if not self.tau >= 0:
            raise InvalidInputError("tau must be >= 0")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise InvalidInputError("dropout_rate must be in [0, 1)")

    def entropy_threshold(self, n_classes: int) -> float:
        return self.gamma * math.log(n_classes)


@dataclass(frozen=True)
class ConsistencyReport:
    p_matrix: np.ndarray  # (N, C)
    sigma: np.ndarray  # retained singular values
    v: np.ndarray  # (C, r) retained right singular vectors as columns
    s: np.ndarray  # (C,)
    s_max: float
    eps_bound: float
    p_bar: np.ndarray  # (C,)


class Guide(Enum):
    DIRECT = "direct_guide"
    REFINED = "refined_guide"
    DISCARD = "discard"


@dataclass(frozen=True)
class RfpDecision:
    kind: Guide
    guidance: np.ndarray | None
    report: ConsistencyReport | None = None


def consistency_matrix(teacher: ModelParams, x, cfg: RfpConfig, seed: int) -> np.ndarray:
    """Stack of ``n_passes`` dropout predictions for one sample, shape (N, C)."""
    x = np.asarray(x, dtype=np.float64)
    mask = DropoutMask.draw(seed, 0, cfg.dropout_rate, teacher.dim, teacher.hidden, rows=cfg.n_passes)
    return forward(teacher, np.broadcast_to(x, (cfg.n_passes, x.shape[-1])), mask).probs


def _report(p: np.ndarray, dec: linalg.SvdResult) -> ConsistencyReport:
    r = dec.rank
    sigma = dec.sigma[:r]
    vt = dec.vt[:r]
    u = dec.u[:, :r]
    s = sigma @ vt
    n = p.shape[0]
    # |s_j - pbar_j| <= sum_k sigma_k |v_kj| |1 - u_k.1 / N|
    drift = np.abs(1.0 - u.sum(axis=0) / n)
    eps = float(np.max((sigma * drift) @ np.abs(vt)))
    return ConsistencyReport(
        p_matrix=p,
        sigma=sigma,
        v=vt.T.copy(),
        s=s,
        s_max=float(s.max()),
        eps_bound=eps,
        p_bar=p.mean(axis=0),
    )


def _check_stochastic(p: np.ndarray) -> None:
    if p.ndim != 2 or p.shape[0] < 1 or p.shape[1] < 1:
        raise InvalidInputError(f"expected an (N, C) matrix, got shape {p.shape}")
    if not np.any(p):
        raise InvalidInputError("consistency matrix is all zeros")


def consistency_distribution(p_matrix) -> ConsistencyReport:
    p = np.array(p_matrix, dtype=np.float64)
    _check_stochastic(p)
    return _report(p, linalg.svd(p))


def consistency_distributions(stack) -> list[ConsistencyReport]:
    """Reports for a stack of equally shaped matrices (one batched SVD)."""
    stack = np.array(stack, dtype=np.float64)
    for p in stack:
        _check_stochastic(p)
    return [_report(p, dec) for p, dec in zip(stack, linalg.svd_batch(stack))]


def refine(teacher_probs, s) -> np.ndarray:
    teacher_probs = np.asarray(teacher_probs, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    if teacher_probs.shape != s.shape:
        raise InvalidInputError("teacher_probs and s must have the same length")
    return softmax(softmax(s) * teacher_probs)


def sample_seed(seed: int, step: int, index: int) -> int:
    """Dropout key for sample ``index`` of batch ``step``."""
    return rng.derive(seed, rng.DROPOUT, step, index)


def decide_batch(teacher: ModelParams, x, cfg: RfpConfig, seeds) -> list[RfpDecision]:
    """:func:`decide` for every row of ``x``; ``seeds[i]`` keys the masks of row i."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    probs = forward(teacher, x).probs
    gamma_c = cfg.entropy_threshold(teacher.n_classes)
    uncertain = np.flatnonzero(entropy(probs) > gamma_c)
    decisions: list[RfpDecision | None] = [None] * len(x)
    for i in range(len(x)):
        decisions[i] = RfpDecision(Guide.DIRECT, probs[i])
    if uncertain.size:
        stack = np.stack([consistency_matrix(teacher, x[i], cfg, seeds[i]) for i in uncertain])
        for i, report in zip(uncertain, consistency_distributions(stack)):
            if report.s_max < cfg.tau:
                decisions[i] = RfpDecision(Guide.DISCARD, None, report)
            else:
                decisions[i] = RfpDecision(Guide.REFINED, refine(probs[i], report.s), report)
    return decisions


def decide(teacher: ModelParams, x, cfg: RfpConfig, seed: int) -> RfpDecision:
    return decide_batch(teacher, np.asarray(x, dtype=np.float64)[None], cfg, [seed])[0]
