"""Independent reference implementations shared by several test modules."""

import numpy as np

from driftbench.ascoot import TransportProblem


def balanced_sinkhorn(c, mu, nu, eps, iters=20000):
    k = np.exp(-c / eps)
    a, b = np.ones_like(mu), np.ones_like(nu)
    for _ in range(iters):
        a = mu / (k @ b)
        b = nu / (k.T @ a)
    return a[:, None] * k * b[None, :]


def random_feasible(gen, size, col, count):
    """``count`` random couplings with exact column sums ``col`` and free rows."""
    w = gen.dirichlet(np.ones(size[0]), size=(count, size[1]))  # (count, cols, rows)
    return np.transpose(w, (0, 2, 1)) * col[None, None, :]


def random_problem(gen, n=None, m=None, d1=None, d2=None, lambda1=1.0, epsilon=0.05):
    n, m, d1, d2 = (v or int(gen.integers(2, 6)) for v in (n, m, d1, d2))
    return TransportProblem(
        gen.normal(size=(n, d1)),
        gen.normal(size=(m, d2)),
        gen.dirichlet(np.full(n, 5.0)),
        gen.dirichlet(np.full(m, 5.0)),
        gen.dirichlet(np.full(d1, 5.0)),
        gen.dirichlet(np.full(d2, 5.0)),
        lambda1,
        epsilon,
    )


def gen_kl_rows(a, b):
    """Generalized KL between each leading-axis slice of ``a`` and ``b``."""
    a = a.reshape(a.shape[0], -1)
    b = np.broadcast_to(np.ravel(b), a.shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(a > 0, a * np.log(a / b), 0.0)
    return terms.sum(axis=1) - a.sum(axis=1) + b.sum(axis=1)


def objective_batch(pi_s, pi_f, p):
    """Objective for stacks of couplings (count, n, m) and (count, d1, d2)."""
    sq = (p.x[:, None, :, None] - p.e[None, :, None, :]) ** 2  # (n, m, d1, d2)
    coupling = np.einsum("ijkl,cij,ckl->c", sq, pi_s, pi_f)
    soft = gen_kl_rows(pi_s.sum(axis=2), p.mu) + gen_kl_rows(pi_f.sum(axis=2), p.mu_f)
    entropic = gen_kl_rows(pi_s, np.outer(p.mu, p.nu)) + gen_kl_rows(pi_f, np.outer(p.mu_f, p.nu_f))
    return coupling + p.lambda1 * soft + p.epsilon * entropic
