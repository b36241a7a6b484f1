"""Small dense linear algebra on float64 numpy arrays.

Thin SVD (one-sided Jacobi), symmetric eigendecomposition (cyclic two-sided
Jacobi), population covariance and a couple of norms. Sizes in this package
stay below ~128, so plain rotations are fast enough and, unlike LAPACK
drivers, give bit-reproducible output for a given input.

Singular and eigen vectors carry a fixed sign: each vector is flipped so
that its largest-magnitude entry is positive (lowest index wins a tie).
Downstream quantities such as consistency scores and principal-component
differences depend on that sign.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import EmptyInputError, InvalidInputError

MAX_SWEEPS = 60
RANK_RTOL = 1e-12
_EPS = np.finfo(np.float64).eps


@dataclass(frozen=True)
class SvdResult:
    u: np.ndarray  # (m, r) orthonormal columns
    sigma: np.ndarray  # (r,) descending, >= 0
    vt: np.ndarray  # (r, n) orthonormal rows

    @property
    def rank(self) -> int:
        if self.sigma.size == 0 or self.sigma[0] == 0.0:
            return 0
        return int(np.count_nonzero(self.sigma > RANK_RTOL * self.sigma[0]))

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.sigma) @ self.vt


@dataclass(frozen=True)
class EigResult:
    values: np.ndarray  # descending
    vectors: np.ndarray  # columns, orthonormal


def _as_finite_matrix(m) -> np.ndarray:
    a = np.array(m, dtype=np.float64)
    if a.ndim != 2:
        raise InvalidInputError(f"expected a 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError("matrix has non-finite entries")
    return a


def sign_fix_rows(rows: np.ndarray, partner_cols: np.ndarray | None = None):
    """Flip each row so its largest-|.| entry is positive.

    ``partner_cols`` (e.g. U for the rows of V^T) has column k flipped
    together with row k. Returns new arrays.
    """
    rows = rows.copy()
    partner = None if partner_cols is None else partner_cols.copy()
    if rows.size == 0:
        return rows, partner
    lead = np.argmax(np.abs(rows), axis=1)
    flip = rows[np.arange(rows.shape[0]), lead] < 0
    rows[flip] *= -1.0
    if partner is not None:
        partner[:, flip] *= -1.0
    return rows, partner


def _complete_basis(q: np.ndarray, keep: np.ndarray) -> np.ndarray:
    """Replace columns of ``q`` not flagged in ``keep`` by an orthonormal completion."""
    m = q.shape[0]
    basis = [q[:, k] for k in range(q.shape[1]) if keep[k]]
    out = q.copy()
    for k in range(q.shape[1]):
        if keep[k]:
            continue
        best, best_norm = None, -1.0
        for e in range(m):
            cand = np.zeros(m)
            cand[e] = 1.0
            for _ in range(2):
                for b in basis:
                    cand -= (b @ cand) * b
            nrm = np.linalg.norm(cand)
            if nrm > best_norm + 1e-12:
                best, best_norm = cand, nrm
        vec = best / best_norm
        basis.append(vec)
        out[:, k] = vec
    return out


@lru_cache(maxsize=None)
def round_robin(n: int) -> tuple[tuple[np.ndarray, np.ndarray], ...]:
    """Fixed tournament schedule: each round is a set of disjoint (p, q) pairs, p < q.

    Every pair of ``range(n)`` appears exactly once per sweep.
    """
    players = list(range(n)) + ([-1] if n % 2 else [])
    size = len(players)
    rounds = []
    for _ in range(size - 1):
        ps, qs = [], []
        for i in range(size // 2):
            a, b = players[i], players[size - 1 - i]
            if a >= 0 and b >= 0:
                ps.append(min(a, b))
                qs.append(max(a, b))
        if ps:
            rounds.append((np.array(ps), np.array(qs)))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return tuple(rounds)


def _rowdot(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return (x * y).sum(axis=-1)


def _jacobi_columns(a: np.ndarray):
    """One-sided Jacobi on the columns of a stack ``a`` of shape (B, m, n), n <= m.

    Inactive pairs get an exact identity rotation, so a matrix that has
    converged is left bit-for-bit unchanged while the rest of the stack
    keeps sweeping.
    """
    batch, m, n = a.shape
    g = np.ascontiguousarray(np.swapaxes(a, 1, 2))  # g[b, p] is column p of a[b]
    w = np.broadcast_to(np.eye(n), (batch, n, n)).copy()  # w[b, p] is column p of V
    tol = max(m, 1) * _EPS
    schedule = round_robin(n)
    for _ in range(MAX_SWEEPS):
        rotated = False
        for ps, qs in schedule:
            gp, gq = g[:, ps], g[:, qs]
            c = _rowdot(gp, gq)
            alpha = _rowdot(gp, gp)
            beta = _rowdot(gq, gq)
            act = (c != 0.0) & (np.abs(c) > tol * np.sqrt(alpha * beta))
            if not act.any():
                continue
            safe_c = np.where(act, c, 1.0)
            with np.errstate(over="ignore"):
                # |zeta| = inf gives t = 0: the rotation would be a no-op
                zeta = (beta - alpha) / (2.0 * safe_c)
                t = np.copysign(1.0, zeta) / (np.abs(zeta) + np.hypot(1.0, zeta))
            act &= t != 0.0
            if not act.any():
                continue
            rotated = True
            cs = np.where(act, 1.0 / np.sqrt(1.0 + t * t), 1.0)[..., None]
            sn = np.where(act, t, 0.0)[..., None] * cs
            g[:, ps] = cs * gp - sn * gq
            g[:, qs] = sn * gp + cs * gq
            wp, wq = w[:, ps], w[:, qs]
            w[:, ps] = cs * wp - sn * wq
            w[:, qs] = sn * wp + cs * wq
        if not rotated:
            break
    sigma = np.sqrt(_rowdot(g, g))
    order = np.argsort(-sigma, axis=1, kind="stable")
    sigma = np.take_along_axis(sigma, order, axis=1)
    g = np.take_along_axis(g, order[..., None], axis=1)
    w = np.take_along_axis(w, order[..., None], axis=1)
    u = np.zeros((batch, m, n))
    for b in range(batch):
        top = sigma[b, 0]
        keep = sigma[b] > RANK_RTOL * top if top > 0 else np.zeros(n, bool)
        u[b][:, keep] = (g[b, keep] / sigma[b, keep, None]).T
        if not np.all(keep):
            u[b] = _complete_basis(u[b], keep)
    return u, sigma, w  # w[b] rows are V columns, i.e. w[b] == V^T


def svd_batch(stack) -> list[SvdResult]:
    """Thin SVDs of a stack of equally shaped matrices, shape (B, rows, cols)."""
    a = np.array(stack, dtype=np.float64)
    if a.ndim != 3:
        raise InvalidInputError(f"expected a (B, rows, cols) stack, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError("matrix has non-finite entries")
    _, rows, cols = a.shape
    if min(rows, cols) < 1:
        raise InvalidInputError("svd needs at least one row and one column")
    if cols <= rows:
        u, sigma, vt = _jacobi_columns(a)
    else:
        v_t, sigma, ut = _jacobi_columns(np.swapaxes(a, 1, 2))
        u, vt = np.swapaxes(ut, 1, 2), np.swapaxes(v_t, 1, 2)
    out = []
    for b in range(a.shape[0]):
        vt_b, u_b = sign_fix_rows(vt[b], u[b])
        out.append(SvdResult(u=u_b, sigma=sigma[b].copy(), vt=vt_b))
    return out


def svd(m) -> SvdResult:
    """Thin SVD ``m = U diag(sigma) V^T`` with min(rows, cols) triplets."""
    return svd_batch(_as_finite_matrix(m)[None])[0]


def sym_eig(c, sym_tol: float = 1e-12, basis=None) -> EigResult:
    """Eigendecomposition of a symmetric matrix, eigenvalues descending.

    ``basis`` (orthogonal, n x n) warm-starts the sweeps: the matrix is first
    rotated into that basis, so eigenvectors of a nearby matrix converge in a
    sweep or two. The result differs from a cold start only by rounding.
    """
    a = _as_finite_matrix(c)
    n = a.shape[0]
    if a.shape[0] != a.shape[1]:
        raise InvalidInputError(f"sym_eig needs a square matrix, got {a.shape}")
    scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
    if np.any(np.abs(a - a.T) > sym_tol * scale):
        raise InvalidInputError("matrix is not symmetric within tolerance")
    a = 0.5 * (a + a.T)
    if basis is None:
        v = np.eye(n)
    else:
        v = np.array(basis, dtype=np.float64)
        if v.shape != (n, n) or not np.allclose(v.T @ v, np.eye(n), atol=1e-8):
            raise InvalidInputError("basis must be an orthogonal n x n matrix")
        a = v.T @ a @ v
        a = 0.5 * (a + a.T)
    norm_f = float(np.linalg.norm(a))
    floor = 1e-17 * norm_f
    tol = max(n, 1) * _EPS
    schedule = round_robin(n)
    eye = np.eye(n)
    for _ in range(MAX_SWEEPS):
        rotated = False
        for ps, qs in schedule:
            apq = a[ps, qs]
            diag = a.diagonal()
            app, aqq = diag[ps], diag[qs]
            act = np.abs(apq) > np.maximum(floor, tol * np.sqrt(np.abs(app * aqq)))
            if not act.any():
                continue
            rotated = True
            if not act.all():
                ps, qs, apq, app, aqq = ps[act], qs[act], apq[act], app[act], aqq[act]
            theta = (aqq - app) / (2.0 * apq)
            t = np.copysign(1.0, theta) / (np.abs(theta) + np.hypot(1.0, theta))
            cs = 1.0 / np.sqrt(t * t + 1.0)
            sn = t * cs
            # the pairs of one round are disjoint, so their rotations compose into one matrix
            rot = eye.copy()
            rot[ps, ps] = cs
            rot[qs, qs] = cs
            rot[ps, qs] = sn
            rot[qs, ps] = -sn
            a = rot.T @ a @ rot
            a[ps, qs] = 0.0
            a[qs, ps] = 0.0
            v = v @ rot
        if not rotated:
            break
    values = np.diag(a).copy()
    order = np.argsort(-values, kind="stable")
    values = values[order]
    vt, _ = sign_fix_rows(v[:, order].T)
    return EigResult(values=values, vectors=vt.T.copy())


def covariance(x) -> tuple[np.ndarray, np.ndarray]:
    """Mean and population covariance (divide by n) of the rows of ``x``."""
    a = np.array(x, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] == 0:
        raise EmptyInputError("covariance needs at least one sample row")
    mean = a.mean(axis=0)
    centered = a - mean
    cov = centered.T @ centered / a.shape[0]
    return mean, 0.5 * (cov + cov.T)


def frobenius_norm_sq(m) -> float:
    a = np.asarray(m, dtype=np.float64)
    return float(np.sum(a * a))
