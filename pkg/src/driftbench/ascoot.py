"""Asymmetric co-optimal transport (As-COOT).

Two couplings are optimised jointly: ``pi_s`` between N samples and M
experts, and ``pi_f`` between their d1 and d2 features. Each block has a
soft (KL-penalised) row marginal and a hard column marginal. With one block
fixed the other is a strictly convex entropic OT problem, solved by a
generalized Sinkhorn iteration in the log domain; block coordinate descent
alternates the two.

The coupling cost is squared difference, ``L_ijkl = (X_ik - E_jl)**2``, which
contracts in closed form. A dense ``(N, M, d1, d2)`` tensor is also accepted
for tiny instances so oracle tests can check the contraction.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import kl_div

from .errors import InvalidInputError, MatrixParseError

INNER_TOL = 1e-10
OUTER_TOL = 1e-8
MAX_INNER = 10_000
MAX_OUTER = 200
DEFAULT_EPSILON = 0.05
DEFAULT_LAMBDA1 = 1.0
HARD_MARGINAL_TOL = 1e-8
MAX_TENSOR_ENTRIES = 4**4


def _marginal(name: str, w, size: int) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (size,):
        raise InvalidInputError(f"{name} must have shape ({size},), got {w.shape}")
    if not np.all(np.isfinite(w)) or np.any(w <= 0):
        raise InvalidInputError(f"{name} must be finite and strictly positive")
    if abs(w.sum() - 1.0) > 1e-12:
        raise InvalidInputError(f"{name} must sum to 1 (got {w.sum()!r})")
    return w


def _logsumexp(a: np.ndarray, axis: int | None = None) -> np.ndarray:
    # scipy.special.logsumexp costs ~100us per call on tiny inputs; the
    # Sinkhorn loop calls this thousands of times
    peak = np.max(a, axis=axis, keepdims=True)
    out = peak + np.log(np.sum(np.exp(a - peak), axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis)


def uniform(n: int) -> np.ndarray:
    return np.full(n, 1.0 / n)


@dataclass(frozen=True)
class TransportProblem:
    x: np.ndarray  # (N, d1)
    e: np.ndarray  # (M, d2)
    mu: np.ndarray
    nu: np.ndarray
    mu_f: np.ndarray
    nu_f: np.ndarray
    lambda1: float = DEFAULT_LAMBDA1
    epsilon: float = DEFAULT_EPSILON
    tensor: np.ndarray | None = None  # optional dense L, tiny instances only

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        e = np.asarray(self.e, dtype=np.float64)
        if x.ndim != 2 or e.ndim != 2 or 0 in x.shape or 0 in e.shape:
            raise InvalidInputError("x and e must be non-empty 2-D matrices")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(e))):
            raise InvalidInputError("x and e must be finite")
        (n, d1), (m, d2) = x.shape, e.shape
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "e", e)
        object.__setattr__(self, "mu", _marginal("mu", self.mu, n))
        object.__setattr__(self, "nu", _marginal("nu", self.nu, m))
        object.__setattr__(self, "mu_f", _marginal("mu_f", self.mu_f, d1))
        object.__setattr__(self, "nu_f", _marginal("nu_f", self.nu_f, d2))
        if not self.lambda1 > 0:
            raise InvalidInputError("lambda1 must be > 0")
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise InvalidInputError("epsilon must be finite and > 0")
        if self.tensor is not None:
            t = np.asarray(self.tensor, dtype=np.float64)
            if t.shape != (n, m, d1, d2):
                raise InvalidInputError(f"tensor must have shape {(n, m, d1, d2)}, got {t.shape}")
            if t.size > MAX_TENSOR_ENTRIES:
                raise InvalidInputError(f"dense tensors are limited to {MAX_TENSOR_ENTRIES} entries")
            object.__setattr__(self, "tensor", t)

    @classmethod
    def uniform(cls, x, e, lambda1: float = DEFAULT_LAMBDA1, epsilon: float = DEFAULT_EPSILON) -> "TransportProblem":
        x, e = np.asarray(x, dtype=np.float64), np.asarray(e, dtype=np.float64)
        return cls(x, e, uniform(x.shape[0]), uniform(e.shape[0]), uniform(x.shape[1]), uniform(e.shape[1]), lambda1, epsilon)

    def sample_cost(self, pi_f) -> np.ndarray:
        """Cost on the sample block with the feature coupling held fixed."""
        if self.tensor is not None:
            return np.einsum("ijkl,kl->ij", self.tensor, np.asarray(pi_f, dtype=np.float64))
        return cost_from_plan(self.x, self.e, pi_f)

    def feature_cost(self, pi_s) -> np.ndarray:
        """Cost on the feature block with the sample coupling held fixed."""
        if self.tensor is not None:
            return np.einsum("ijkl,ij->kl", self.tensor, np.asarray(pi_s, dtype=np.float64))
        return cost_from_plan(self.x.T, self.e.T, pi_s)


@dataclass(frozen=True)
class TransportPlan:
    """Sub-problem solution ``pi_ij = u_i K_ij v_j mu_i nu_j``.

    ``alpha`` and ``beta`` are the log-domain potentials (``u = exp(alpha/eps)``,
    ``v = exp(beta/eps)``); ``u`` and ``v`` may over- or underflow when the cost
    is large relative to epsilon, the potentials never do.
    """

    pi: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    epsilon: float
    iterations: int
    marginal_residual: float
    converged: bool

    @property
    def u(self) -> np.ndarray:
        with np.errstate(over="ignore", under="ignore"):
            return np.exp(self.alpha / self.epsilon)

    @property
    def v(self) -> np.ndarray:
        with np.errstate(over="ignore", under="ignore"):
            return np.exp(self.beta / self.epsilon)


@dataclass
class BcdHistory:
    objectives: list[float] = field(default_factory=list)  # J_0 at the initial couplings, then one per outer step
    sample_residuals: list[float] = field(default_factory=list)
    feature_residuals: list[float] = field(default_factory=list)
    inner_iterations: list[tuple[int, int]] = field(default_factory=list)
    converged: bool = False

    @property
    def outer_iterations(self) -> int:
        return len(self.objectives) - 1

    def increases(self, slack: float = 1e-12) -> list[int]:
        """Outer steps k where J_k > J_{k-1} + slack."""
        j = self.objectives
        return [k for k in range(1, len(j)) if j[k] > j[k - 1] + slack]


def cost_from_plan(x, e, pi_f) -> np.ndarray:
    """``C_ij = sum_kl (x_ik - e_jl)**2 pi_f[k, l]`` via the closed-form contraction."""
    x = np.asarray(x, dtype=np.float64)
    e = np.asarray(e, dtype=np.float64)
    p = np.asarray(pi_f, dtype=np.float64)
    if x.ndim != 2 or e.ndim != 2 or p.shape != (x.shape[1], e.shape[1]):
        raise InvalidInputError(f"shape mismatch: x {x.shape}, e {e.shape}, pi_f {p.shape}")
    r = p.sum(axis=1)
    c = p.sum(axis=0)
    return ((x * x) @ r)[:, None] + ((e * e) @ c)[None, :] - 2.0 * (x @ p @ e.T)


def _row_exponent(lambda1: float, epsilon: float) -> float:
    """-(eps * lambda1 / (lambda1 + eps)) as a multiplier on the row log-sum-exp."""
    if math.isinf(lambda1):
        return -epsilon
    return -epsilon * lambda1 / (lambda1 + epsilon)


def sinkhorn_asym(
    c,
    mu,
    nu,
    lambda1: float = DEFAULT_LAMBDA1,
    epsilon: float = DEFAULT_EPSILON,
    tol: float = INNER_TOL,
    max_iter: int = MAX_INNER,
    init: tuple[np.ndarray, np.ndarray] | None = None,
) -> TransportPlan:
    """Soft row marginal (KL weight ``lambda1``), hard column marginal ``nu``.

    Alternates the two potential updates in the log domain until the largest
    change in ``log u`` is at most ``tol``. ``lambda1 = math.inf`` makes the
    row marginal hard too (balanced Sinkhorn). ``init`` warm-starts from a
    previous ``(alpha, beta)``.
    """
    c = np.asarray(c, dtype=np.float64)
    if c.ndim != 2 or 0 in c.shape:
        raise InvalidInputError(f"cost must be a non-empty matrix, got shape {c.shape}")
    if not np.all(np.isfinite(c)):
        raise InvalidInputError("cost matrix contains non-finite entries")
    n, m = c.shape
    mu = _marginal("mu", mu, n)
    nu = _marginal("nu", nu, m)
    if not lambda1 > 0:
        raise InvalidInputError("lambda1 must be > 0")
    if not (epsilon > 0 and math.isfinite(epsilon)):
        raise InvalidInputError("epsilon must be finite and > 0")
    if max_iter < 1:
        raise InvalidInputError("max_iter must be >= 1")

    log_mu, log_nu = np.log(mu), np.log(nu)
    scaled = -c / epsilon
    row_mult = _row_exponent(lambda1, epsilon)
    if init is None:
        alpha, beta = np.zeros(n), np.zeros(m)
    else:
        alpha, beta = (np.array(v, dtype=np.float64) for v in init)
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        new_alpha = row_mult * _logsumexp(scaled + (beta / epsilon + log_nu)[None, :], axis=1)
        beta = -epsilon * _logsumexp(scaled + (new_alpha / epsilon + log_mu)[:, None], axis=0)
        change = float(np.max(np.abs(new_alpha - alpha))) / epsilon
        alpha = new_alpha
        if change <= tol:
            converged = True
            break
    pi = np.exp(scaled + (alpha / epsilon + log_mu)[:, None] + (beta / epsilon + log_nu)[None, :])
    residual = float(np.max(np.abs(pi.sum(axis=0) - nu)))
    return TransportPlan(pi, alpha, beta, epsilon, iterations, residual, converged)


def _block_terms(pi, row_ref, col_ref, lambda1: float, epsilon: float) -> float:
    pi = np.asarray(pi, dtype=np.float64)
    if np.any(pi < 0) or np.max(np.abs(pi.sum(axis=0) - col_ref)) > HARD_MARGINAL_TOL:
        return math.inf
    entropic = epsilon * float(np.sum(kl_div(pi, np.outer(row_ref, col_ref))))
    if math.isinf(lambda1):
        return entropic if np.max(np.abs(pi.sum(axis=1) - row_ref)) <= HARD_MARGINAL_TOL else math.inf
    return lambda1 * float(np.sum(kl_div(pi.sum(axis=1), row_ref))) + entropic


def objective(pi_s, pi_f, problem: TransportProblem) -> float:
    """Full As-COOT objective; +inf if either hard column marginal is violated."""
    p = problem
    pi_s = np.asarray(pi_s, dtype=np.float64)
    pi_f = np.asarray(pi_f, dtype=np.float64)
    if pi_s.shape != (p.mu.size, p.nu.size) or pi_f.shape != (p.mu_f.size, p.nu_f.size):
        raise InvalidInputError("coupling shapes do not match the problem")
    sample = _block_terms(pi_s, p.mu, p.nu, p.lambda1, p.epsilon)
    feature = _block_terms(pi_f, p.mu_f, p.nu_f, p.lambda1, p.epsilon)
    if math.isinf(sample) or math.isinf(feature):
        return math.inf
    coupling = float(np.sum(p.sample_cost(pi_f) * pi_s))
    return coupling + sample + feature


def subproblem_objective(pi, c, mu, nu, lambda1: float, epsilon: float) -> float:
    """Primal value of one block: <C, pi> + soft row KL + entropic KL, +inf off the hard marginal."""
    pi = np.asarray(pi, dtype=np.float64)
    terms = _block_terms(pi, np.asarray(mu, dtype=np.float64), np.asarray(nu, dtype=np.float64), lambda1, epsilon)
    return terms + float(np.sum(np.asarray(c, dtype=np.float64) * pi))


def dual_objective(alpha, beta, c, mu, nu, lambda1: float, epsilon: float) -> float:
    """Fenchel dual of one block in the potentials ``(alpha, beta)``.

    The entropic conjugate is taken without its ``+eps * sum(mu nu)`` constant,
    so at the optimum this sits exactly ``epsilon`` below the primal value.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    nu = np.asarray(nu, dtype=np.float64)
    if math.isinf(lambda1):
        soft = float(alpha @ mu)
    else:
        soft = -lambda1 * float(mu @ np.expm1(-alpha / lambda1))
    exponent = (alpha[:, None] + beta[None, :] - c) / epsilon + np.log(np.outer(mu, nu))
    return soft + float(beta @ nu) - epsilon * float(np.exp(_logsumexp(exponent)))


def bcd_solve(
    problem: TransportProblem,
    tol: float = OUTER_TOL,
    max_outer: int = MAX_OUTER,
    init_pi_f=None,
    inner_tol: float = INNER_TOL,
    max_inner: int = MAX_INNER,
) -> tuple[np.ndarray, np.ndarray, BcdHistory]:
    """Alternate exact block solves until ``|J_k - J_{k-1}| <= tol * (1 + |J_k|)``.

    ``history.converged`` is False when ``max_outer`` is reached or an inner
    solve hit its iteration cap.
    """
    p = problem
    if init_pi_f is None:
        pi_f = np.outer(p.mu_f, p.nu_f)
    else:
        pi_f = np.asarray(init_pi_f, dtype=np.float64)
        if pi_f.shape != (p.mu_f.size, p.nu_f.size) or np.any(pi_f < 0):
            raise InvalidInputError("init_pi_f must be a nonnegative d1 x d2 matrix")
    pi_s = np.outer(p.mu, p.nu)
    history = BcdHistory()
    # J_0 is only finite if the starting pi_f meets its hard marginal
    history.objectives.append(objective(pi_s, pi_f, p))
    duals_s = duals_f = None
    inner_ok = True
    for _ in range(max_outer):
        plan_s = sinkhorn_asym(p.sample_cost(pi_f), p.mu, p.nu, p.lambda1, p.epsilon, inner_tol, max_inner, duals_s)
        pi_s, duals_s = plan_s.pi, (plan_s.alpha, plan_s.beta)
        plan_f = sinkhorn_asym(p.feature_cost(pi_s), p.mu_f, p.nu_f, p.lambda1, p.epsilon, inner_tol, max_inner, duals_f)
        pi_f, duals_f = plan_f.pi, (plan_f.alpha, plan_f.beta)
        inner_ok = inner_ok and plan_s.converged and plan_f.converged
        history.sample_residuals.append(plan_s.marginal_residual)
        history.feature_residuals.append(plan_f.marginal_residual)
        history.inner_iterations.append((plan_s.iterations, plan_f.iterations))
        j = objective(pi_s, pi_f, p)
        previous = history.objectives[-1]
        history.objectives.append(j)
        if math.isfinite(previous) and abs(j - previous) <= tol * (1.0 + abs(j)):
            history.converged = inner_ok
            break
    return pi_s, pi_f, history


# -- plain-text matrix files ------------------------------------------------
#
# A file is a sequence of blocks "name rows cols" followed by rows*cols
# whitespace-separated floats in row-major order. '#' starts a comment that
# runs to the end of the line.

_TOKEN = re.compile(rb"#[^\n]*|\S+")
_NAME = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")


def parse_matrices(data: bytes) -> dict[str, np.ndarray]:
    tokens = [(m.start(), m.group()) for m in _TOKEN.finditer(data) if not m.group().startswith(b"#")]
    out: dict[str, np.ndarray] = {}
    pos = 0

    def take(what: str) -> tuple[int, str]:
        nonlocal pos
        if pos >= len(tokens):
            raise MatrixParseError(f"unexpected end of input, expected {what}", len(data))
        offset, raw = tokens[pos]
        pos += 1
        try:
            return offset, raw.decode("utf-8")
        except UnicodeDecodeError:
            raise MatrixParseError("token is not valid UTF-8", offset) from None

    while pos < len(tokens):
        offset, name = take("block name")
        if not _NAME.match(name):
            raise MatrixParseError(f"bad block name {name!r}", offset)
        if name in out:
            raise MatrixParseError(f"duplicate block {name!r}", offset)
        dims = []
        for what in ("row count", "column count"):
            off, raw = take(what)
            if not raw.isdigit() or int(raw) == 0:
                raise MatrixParseError(f"{what} must be a positive integer, got {raw!r}", off)
            dims.append(int(raw))
        values = np.empty(dims[0] * dims[1])
        for i in range(values.size):
            off, raw = take(f"value {i + 1} of block {name!r}")
            try:
                values[i] = float(raw)
            except ValueError:
                raise MatrixParseError(f"not a number: {raw!r}", off) from None
            if not math.isfinite(values[i]):
                raise MatrixParseError(f"non-finite value {raw!r}", off)
        out[name] = values.reshape(dims)
    return out


def format_matrices(blocks: dict[str, np.ndarray]) -> str:
    lines = []
    for name, value in blocks.items():
        if not _NAME.match(name):
            raise InvalidInputError(f"bad block name {name!r}")
        a = np.atleast_2d(np.asarray(value, dtype=np.float64))
        if a.ndim != 2:
            raise InvalidInputError(f"block {name!r} must be at most 2-D")
        lines.append(f"{name} {a.shape[0]} {a.shape[1]}")
        lines.extend(" ".join(repr(float(v)) for v in row) for row in a)
    return "\n".join(lines) + "\n"


def read_matrices(path) -> dict[str, np.ndarray]:
    return parse_matrices(Path(path).read_bytes())


def problem_from_blocks(blocks: dict[str, np.ndarray], lambda1: float | None = None, epsilon: float | None = None) -> TransportProblem:
    """Build a problem from parsed blocks; missing marginals default to uniform."""
    if "x" not in blocks or "e" not in blocks:
        raise InvalidInputError("problem file needs blocks 'x' and 'e'")
    x, e = blocks["x"], blocks["e"]

    def vec(name, size):
        return blocks[name].ravel() if name in blocks else uniform(size)

    def scalar(name, given, default):
        if given is not None:
            return given
        return float(blocks[name].ravel()[0]) if name in blocks else default

    return TransportProblem(
        x,
        e,
        vec("mu", x.shape[0]),
        vec("nu", e.shape[0]),
        vec("mu_f", x.shape[1]),
        vec("nu_f", e.shape[1]),
        scalar("lambda1", lambda1, DEFAULT_LAMBDA1),
        scalar("epsilon", epsilon, DEFAULT_EPSILON),
    )


def demo_problem() -> TransportProblem:
    """Bundled 5 x 4 instance: 5 samples with 3 features against 4 experts with 2."""
    x = np.array(
        [
            [0.9, 0.1, 0.4],
            [0.2, 0.8, 0.5],
            [0.5, 0.5, 0.1],
            [0.1, 0.3, 0.9],
            [0.7, 0.6, 0.3],
        ]
    )
    e = np.array([[1.0, 0.2], [0.1, 0.9], [0.6, 0.4], [0.3, 0.3]])
    mu = np.array([0.3, 0.2, 0.2, 0.15, 0.15])
    return TransportProblem(x, e, mu, uniform(4), uniform(3), uniform(2), DEFAULT_LAMBDA1, DEFAULT_EPSILON)
