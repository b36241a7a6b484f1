"""Quick randomized property checks runnable without the test suite installed."""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from . import ascoot, cda, linalg, model, rfp

Check = Callable[[np.random.Generator], str | None]


def _svd_reconstructs(gen: np.random.Generator) -> str | None:
    for _ in range(50):
        m = gen.normal(size=tuple(gen.integers(1, 9, size=2)))
        dec = linalg.svd(m)
        err = np.max(np.abs(dec.reconstruct() - m))
        if err > 1e-10 * max(1.0, np.max(np.abs(m))):
            return f"svd reconstruction error {err:.3g}"
    return None


def _eig_residual(gen: np.random.Generator) -> str | None:
    for _ in range(50):
        a = gen.normal(size=(6, 6))
        c = a @ a.T
        e = linalg.sym_eig(c)
        err = np.max(np.abs(c @ e.vectors - e.vectors * e.values))
        if err > 1e-9:
            return f"eigen residual {err:.3g}"
    return None


def _ipca_matches_batch(gen: np.random.Generator) -> str | None:
    for _ in range(20):
        d = int(gen.integers(1, 10))
        x = gen.normal(size=(int(gen.integers(2, 80)), d))
        cuts = np.sort(gen.choice(np.arange(1, len(x)), size=min(3, len(x) - 1), replace=False))
        tracker = cda.DomainTracker.empty(d)
        for chunk in np.split(x, cuts):
            if len(chunk):
                tracker, _ = cda.ipca_update(tracker, chunk)
        mean, cov = linalg.covariance(x)
        err = max(np.max(np.abs(tracker.mean - mean)), np.max(np.abs(tracker.cov - cov)))
        if err > 1e-10:
            return f"incremental moments off by {err:.3g}"
    return None


def _consistency_bound(gen: np.random.Generator) -> str | None:
    for _ in range(200):
        n, c = int(gen.integers(2, 17)), int(gen.integers(2, 9))
        p = gen.dirichlet(np.ones(c), size=n)
        rep = rfp.consistency_distribution(p)
        if rep.s_max > rep.p_bar.max() + rep.eps_bound + 1e-9:
            return f"s_max bound violated on a {n}x{c} matrix"
    return None


def _gradient_matches_fd(gen: np.random.Generator) -> str | None:
    params = model.init_params(4, 3, hidden=5, seed=int(gen.integers(1 << 30)), scale=0.5)
    x = gen.normal(size=(6, 4))
    target = gen.dirichlet(np.ones(3), size=6)
    g = model.grad(params, x, target).flat()
    flat = params.flat()
    h = 1e-6
    for i in gen.choice(flat.size, size=10, replace=False):
        up, down = flat.copy(), flat.copy()
        up[i] += h
        down[i] -= h
        loss_up = np.mean(model.cross_entropy(target, model.forward(params.unflat(up), x).probs))
        loss_down = np.mean(model.cross_entropy(target, model.forward(params.unflat(down), x).probs))
        fd = (loss_up - loss_down) / (2 * h)
        if abs(fd - g[i]) > 1e-5 * max(1.0, abs(fd)):
            return f"gradient entry {i}: analytic {g[i]:.6g} vs finite difference {fd:.6g}"
    return None


def _sinkhorn_hard_marginal(gen: np.random.Generator) -> str | None:
    for _ in range(10):
        n, m = int(gen.integers(2, 7)), int(gen.integers(2, 7))
        nu = gen.dirichlet(np.ones(m))
        plan = ascoot.sinkhorn_asym(gen.random((n, m)), ascoot.uniform(n), nu)
        if plan.marginal_residual > 1e-9:
            return f"column marginal residual {plan.marginal_residual:.3g}"
    return None


def _bcd_monotone(gen: np.random.Generator) -> str | None:
    for _ in range(5):
        shape = gen.integers(2, 5, size=4)
        problem = ascoot.TransportProblem.uniform(gen.normal(size=shape[:2]), gen.normal(size=shape[2:]))
        _, _, history = ascoot.bcd_solve(problem)
        if history.increases():
            return f"objective increased at outer steps {history.increases()}"
        if not all(math.isfinite(j) for j in history.objectives):
            return "non-finite objective"
    return None


CHECKS: dict[str, Check] = {
    "svd reconstruction": _svd_reconstructs,
    "symmetric eigen residual": _eig_residual,
    "incremental covariance": _ipca_matches_batch,
    "consistency score bound": _consistency_bound,
    "cross-entropy gradient": _gradient_matches_fd,
    "sinkhorn hard marginal": _sinkhorn_hard_marginal,
    "bcd monotone objective": _bcd_monotone,
}


def run_checks(seed: int = 0, emit: Callable[[str], None] = print) -> bool:
    ok = True
    for name, check in CHECKS.items():
        failure = check(np.random.default_rng(seed))
        emit(f"{'FAIL' if failure else 'ok  '} {name}" + (f": {failure}" if failure else ""))
        ok = ok and failure is None
    return ok
