"""Independent reference computations for the test-suite.

Nothing here calls the Sinkhorn or chi-square solvers under test.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import linprog, minimize


def strict_feasibility_margin(support: np.ndarray, r: np.ndarray, c: np.ndarray) -> float:
    """Largest t such that some P with P_ij >= t on ``support``, zero elsewhere,
    has row sums r and column sums c (LP). Negative/NaN means infeasible."""
    cells = np.argwhere(support)
    n_cells = len(cells)
    nrow, ncol = support.shape
    # variables: P on the cells, then t; maximize t
    a_eq = np.zeros((nrow + ncol, n_cells + 1))
    for k, (i, j) in enumerate(cells):
        a_eq[i, k] = 1.0
        a_eq[nrow + j, k] = 1.0
    b_eq = np.concatenate([r, c])
    a_ub = np.zeros((n_cells, n_cells + 1))
    a_ub[np.arange(n_cells), np.arange(n_cells)] = -1.0
    a_ub[:, -1] = 1.0
    cost = np.zeros(n_cells + 1)
    cost[-1] = -1.0
    res = linprog(cost, A_ub=a_ub, b_ub=np.zeros(n_cells), A_eq=a_eq, b_eq=b_eq,
                  bounds=[(0, None)] * n_cells + [(None, 1.0)], method="highs")
    return float(res.x[-1]) if res.status == 0 else float("nan")


def temperature(p, T):
    w = np.asarray(p, dtype=float) ** (1.0 / T)
    return w / w.sum()


def random_zero_pattern_instance(rng, L, T, zero_frac=0.3, min_margin=1e-6, max_tries=200):
    """Random off-diagonal Q with ``zero_frac`` of its cells zeroed.

    Patterns that cannot carry the temperature target strictly inside their
    support (LP margin below ``min_margin``) are redrawn: on those, every
    feasible plan must put mass on Q-zero cells.
    """
    off = ~np.eye(L, dtype=bool)
    for _ in range(max_tries):
        q = rng.random((L, L))
        q[~off] = 0.0
        q[off & (rng.random((L, L)) < zero_frac)] = 0.0
        if q.sum() == 0:
            continue
        q /= q.sum()
        p = (q.sum(0) + q.sum(1)) / 2
        r = temperature(p, T)
        if strict_feasibility_margin(q > 0, r, r) > min_margin:
            return q, r
    raise RuntimeError("could not draw a feasible instance")


def kl_projection_slsqp(q: np.ndarray, r: np.ndarray, c: np.ndarray) -> tuple[np.ndarray, float]:
    """min_P KL(P || q) over the transport polytope by SLSQP on all cells."""
    n, m = q.shape

    def kl(x):
        P = np.maximum(x.reshape(n, m), 1e-300)
        return float(np.sum(P * (np.log(P) - np.log(q))))

    def grad(x):
        P = np.maximum(x.reshape(n, m), 1e-300)
        return (np.log(P) - np.log(q) + 1.0).ravel()

    cons = [
        {"type": "eq", "fun": lambda x: x.reshape(n, m).sum(1) - r},
        {"type": "eq", "fun": lambda x: x.reshape(n, m).sum(0)[:-1] - c[:-1]},
    ]
    x0 = np.outer(r, c).ravel()
    res = minimize(kl, x0, jac=grad, constraints=cons, bounds=[(1e-12, 1)] * (n * m),
                   method="SLSQP", options={"ftol": 1e-14, "maxiter": 2000})
    return res.x.reshape(n, m), float(res.fun)


def chi2_ball_slsqp(q: np.ndarray, l: np.ndarray, rho: float) -> tuple[np.ndarray, float]:
    """max p.l over simplex intersect chi2 ball by SLSQP, best of a few starts."""
    best = (None, -np.inf)
    starts = [q, np.where(l == l.max(), q, 0) / q[l == l.max()].sum() * 0.5 + q * 0.5]
    for x0 in starts:
        res = minimize(
            lambda p: -p @ l, x0, jac=lambda p: -l, method="SLSQP",
            bounds=[(0, 1)] * q.size,
            constraints=[
                {"type": "eq", "fun": lambda p: p.sum() - 1},
                {"type": "ineq", "fun": lambda p: rho - np.sum((p - q) ** 2 / q)},
            ],
            options={"ftol": 1e-14, "maxiter": 1000},
        )
        if -res.fun > best[1] and np.sum((res.x - q) ** 2 / q) <= rho + 1e-7:
            best = (res.x, -res.fun)
    return best


def chi2_ball_grid(q: np.ndarray, l: np.ndarray, rho: float, step: float = 1e-3) -> float:
    """Dense-grid maximum over the 2-simplex (3 pairs only)."""
    n = int(round(1 / step))
    i, j = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="ij")
    mask = i + j <= n
    p = np.stack([i[mask], j[mask], n - i[mask] - j[mask]], axis=1) / n
    div = np.sum((p - q) ** 2 / q, axis=1)
    vals = p @ l
    return float(vals[div <= rho].max())


def power_law_joint(n_languages=100, density=0.5, seed=0):
    from bitext_planner import symmetrize, to_joint
    from bitext_planner.synthetic import power_law_corpus

    return to_joint(symmetrize(power_law_corpus(n_languages, density, seed=seed)))


def plain_sinkhorn(k: np.ndarray, r: np.ndarray, c: np.ndarray, iters: int = 5000) -> np.ndarray:
    """Textbook alternating scaling, used only to manufacture feasible plans."""
    u = np.ones_like(r)
    v = np.ones_like(c)
    for _ in range(iters):
        u = r / (k @ v)
        v = c / (k.T @ u)
    return u[:, None] * k * v[None, :]


def kl(p: np.ndarray, q: np.ndarray) -> float:
    m = p > 0
    return float(np.sum(p[m] * np.log(p[m] / q[m])))


def batched_sinkhorn(kernels: np.ndarray, r: np.ndarray, c: np.ndarray, iters: int = 2000) -> np.ndarray:
    """plain_sinkhorn over a stack of kernels (shape (B, n, m)) at once."""
    u = np.ones(kernels.shape[:2])
    v = np.ones((kernels.shape[0], kernels.shape[2]))
    for _ in range(iters):
        u = r / np.einsum("bij,bj->bi", kernels, v)
        v = c / np.einsum("bij,bi->bj", kernels, u)
    return u[:, :, None] * kernels * v[:, None, :]
