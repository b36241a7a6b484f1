"""Domain-aware EMA weight from incremental PCA.

The tracker pools mean and covariance over every feature row seen so far,
re-extracts the top-k principal axes after each batch, and reports how far
those axes moved (squared Frobenius norm of the difference). That distance
sets the teacher's EMA weight: alpha = 1 - distance, mapped into
``[alpha_bound, 1]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import linalg
from .errors import InvalidInputError


@dataclass(frozen=True)
class DomainTracker:
    dim: int
    k: int
    n_seen: int = 0
    mean: np.ndarray | None = None
    cov: np.ndarray | None = None
    components: np.ndarray | None = None  # (d, k)
    last_distance: float = 0.0
    basis: np.ndarray | None = None  # full eigenbasis, warm start for the next update

    @classmethod
    def empty(cls, dim: int, k: int | None = None) -> "DomainTracker":
        k = min(dim, 8) if k is None else k
        if not 1 <= k <= dim:
            raise InvalidInputError(f"k must be in [1, {dim}], got {k}")
        return cls(dim=dim, k=k)

    def snapshot(self) -> dict:
        return {"n_seen": self.n_seen, "distance": self.last_distance}


def merge_moments(n_a: int, mean_a, cov_a, n_b: int, mean_b, cov_b):
    """Pooled count, mean and population covariance of two sample sets."""
    n = n_a + n_b
    delta = mean_a - mean_b
    cov = (n_a * cov_a + n_b * cov_b + (n_a * n_b / n) * np.outer(delta, delta)) / n
    mean = (n_a * mean_a + n_b * mean_b) / n
    return n, mean, 0.5 * (cov + cov.T)


def principal_components(cov: np.ndarray, k: int) -> np.ndarray:
    return linalg.sym_eig(cov).vectors[:, :k].copy()


def _eigenbasis(cov: np.ndarray, start: np.ndarray | None) -> np.ndarray:
    return linalg.sym_eig(cov, basis=start).vectors


def ipca_update(tracker: DomainTracker, x_batch) -> tuple[DomainTracker, float]:
    x = np.asarray(x_batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != tracker.dim:
        raise InvalidInputError(f"expected (n, {tracker.dim}) batch, got shape {x.shape}")
    batch_mean, batch_cov = linalg.covariance(x)
    if tracker.n_seen == 0:
        n, mean, cov = x.shape[0], batch_mean, batch_cov
    else:
        n, mean, cov = merge_moments(tracker.n_seen, tracker.mean, tracker.cov, x.shape[0], batch_mean, batch_cov)
    basis = _eigenbasis(cov, tracker.basis)
    comps = basis[:, : tracker.k].copy()
    distance = 0.0 if tracker.n_seen == 0 else linalg.frobenius_norm_sq(tracker.components - comps)
    new = DomainTracker(
        dim=tracker.dim,
        k=tracker.k,
        n_seen=n,
        mean=mean,
        cov=cov,
        components=comps,
        last_distance=distance,
        basis=basis,
    )
    return new, distance


@dataclass(frozen=True)
class AlphaPolicy:
    kind: str = "linear_clamp"
    alpha_bound: float = 0.99
    kappa: float = 0.1

    def __post_init__(self):
        if self.kind not in ("linear_clamp", "exp_decay"):
            raise InvalidInputError(f"unknown alpha policy {self.kind!r}")
        if not 0.0 < self.alpha_bound < 1.0:
            raise InvalidInputError("alpha_bound must be in (0, 1)")
        if not self.kappa > 0:
            raise InvalidInputError("kappa must be > 0")


def alpha_from_distance(distance: float, policy: AlphaPolicy = AlphaPolicy()) -> float:
    if distance < 0:
        raise InvalidInputError("distance must be >= 0")
    if policy.kind == "linear_clamp":
        return min(1.0, max(policy.alpha_bound, 1.0 - distance))
    return policy.alpha_bound + (1.0 - policy.alpha_bound) * math.exp(-distance / policy.kappa)


def tradeoff_objective(theta_t_next, theta_s_next, theta_t_prev, distance: float) -> float:
    """distance * |T' - S'|^2 + (1 - distance) * |T' - T|^2, distance clipped to [0, 1].

    The EMA step with alpha = 1 - distance is its minimiser.
    """
    w = min(1.0, max(0.0, distance))
    a = np.asarray(theta_t_next, dtype=np.float64)
    to_student = linalg.frobenius_norm_sq(a - np.asarray(theta_s_next, dtype=np.float64))
    to_prev = linalg.frobenius_norm_sq(a - np.asarray(theta_t_prev, dtype=np.float64))
    return w * to_student + (1.0 - w) * to_prev
