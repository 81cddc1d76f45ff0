"""Sinkhorn-Knopp solvers for language-pair sampling plans.

Two objectives share one scaling routine and differ only in the kernel:

* ``ent-ot``: minimize <P, -log(Q + eps)> - H(P) over the transport polytope.
  The kernel is Q + eps and the solution is the KL (I-)projection of the
  smoothed Q onto the polytope.
* ``m2m``: maximize <P, Q> over the same polytope, entropically smoothed with
  strength gamma relative to max(Q), i.e. kernel exp(Q / (gamma max Q)).
  Small gamma drives the plan towards a sparse vertex.

Both constrain row and column sums to the temperature-smoothed language
marginal p^(1/T).
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
from collections.abc import Mapping
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np
from scipy.special import logsumexp

from .corpus import JointDistribution, LanguageIndex, marginals
from .errors import ConvergenceError, InfeasibleError, InputError

__all__ = [
    "KernelSpec",
    "MarginalTarget",
    "SinkhornConfig",
    "TransportPlan",
    "build_kernel",
    "build_log_kernel",
    "entropy",
    "kl_divergence",
    "load_plan",
    "plan_from_dict",
    "plan_to_dict",
    "sinkhorn",
    "solve_m2m",
    "solve_proposed",
    "solve_temperature",
    "temperature_marginal",
]

logger = logging.getLogger(__name__)

DEFAULT_TEMPERATURE = 5.0
DEFAULT_EPSILON = 1e-9
DEFAULT_GAMMA = 0.01


@dataclass(frozen=True, eq=False)
class MarginalTarget:
    r: np.ndarray
    c: np.ndarray
    temperature: float = 1.0

    def __post_init__(self):
        for name in ("r", "c"):
            vec = np.array(getattr(self, name), dtype=np.float64)
            _check_simplex(vec, name, atol=1e-12)
            vec.setflags(write=False)
            object.__setattr__(self, name, vec)
        if self.r.shape != self.c.shape:
            raise InputError("row and column targets differ in length")
        if not self.temperature > 0:
            raise InputError("temperature must be > 0")


@dataclass(frozen=True)
class KernelSpec:
    kind: Literal["ent-ot", "m2m"]
    strength: float

    def __post_init__(self):
        if self.kind not in ("ent-ot", "m2m"):
            raise InputError(f"unknown kernel kind {self.kind!r}")
        if not (np.isfinite(self.strength) and self.strength > 0):
            name = "epsilon" if self.kind == "ent-ot" else "gamma"
            raise InputError(f"{name} must be > 0, got {self.strength}")

    @classmethod
    def ent_ot(cls, epsilon: float = DEFAULT_EPSILON) -> KernelSpec:
        return cls("ent-ot", float(epsilon))

    @classmethod
    def m2m(cls, gamma: float = DEFAULT_GAMMA) -> KernelSpec:
        return cls("m2m", float(gamma))

    @property
    def param_name(self) -> str:
        return "epsilon" if self.kind == "ent-ot" else "gamma"


@dataclass(frozen=True)
class SinkhornConfig:
    tolerance: float = 1e-9
    max_iterations: int = 10_000
    underflow_guard: float = 1e-300
    newton_after: int = 1000

    def __post_init__(self):
        if not 0 < self.tolerance < 1:
            raise InputError("tolerance must lie in (0, 1)")
        if int(self.max_iterations) != self.max_iterations or self.max_iterations < 1:
            raise InputError("max_iterations must be a positive integer")
        if not self.underflow_guard >= 0:
            raise InputError("underflow_guard must be >= 0")
        if self.newton_after < 0:
            raise InputError("newton_after must be >= 0")


@dataclass(frozen=True, eq=False)
class TransportPlan:
    """A solved sampling plan P* over ordered language pairs."""

    index: LanguageIndex
    p_star: np.ndarray
    target: MarginalTarget
    kernel: KernelSpec | None
    iterations_used: int
    marginal_violation: float
    objective_value: float
    method: str
    config: SinkhornConfig = SinkhornConfig()
    log_domain: bool = False
    directedness: str = "directed"
    objective_kind: str = ""

    def __post_init__(self):
        p = np.array(self.p_star, dtype=np.float64)
        if p.shape != (self.index.size, self.index.size):
            raise InputError("plan shape does not match language index")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise InputError("plan entries must be finite and non-negative")
        p.setflags(write=False)
        object.__setattr__(self, "p_star", p)

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update("\n".join(self.index.codes).encode("utf-8"))
        h.update(b"\0")
        h.update(np.ascontiguousarray(self.p_star, dtype="<f8").tobytes())
        return "sha256:" + h.hexdigest()

    def positive_entries(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(rows, cols, probs) of all positive cells in canonical row-major order."""
        rows, cols = np.nonzero(self.p_star > 0)
        return rows, cols, self.p_star[rows, cols]


def _check_simplex(vec: np.ndarray, name: str, atol: float = 1e-9):
    if vec.ndim != 1 or vec.size == 0:
        raise InputError(f"{name} must be a non-empty vector")
    if not np.all(np.isfinite(vec)) or np.any(vec < 0):
        raise InputError(f"{name} entries must be finite and non-negative")
    if abs(vec.sum() - 1.0) > atol:
        raise InputError(f"{name} sums to {vec.sum()!r}, not 1")


def _generic_index(n: int) -> LanguageIndex:
    width = len(str(max(n - 1, 0)))
    return LanguageIndex(tuple(f"x{i:0{width}d}" for i in range(n)))


def _as_joint(q) -> tuple[np.ndarray, LanguageIndex, bool, str]:
    """Return (matrix, index, exclude_diagonal, directedness) for a solver input.

    Raw matrices are accepted as general joint distributions whose diagonal
    may carry mass; JointDistribution inputs exclude self-pairs.
    """
    if isinstance(q, JointDistribution):
        return q.q, q.index, True, q.directedness
    mat = np.array(q, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise InputError("joint matrix must be square")
    if not np.all(np.isfinite(mat)) or np.any(mat < 0):
        raise InputError("joint matrix entries must be finite and non-negative")
    if abs(mat.sum() - 1.0) > 1e-9:
        raise InputError(f"joint matrix sums to {mat.sum()!r}, not 1")
    directedness = "symmetrized" if np.array_equal(mat, mat.T) else "directed"
    return mat, _generic_index(mat.shape[0]), False, directedness


def temperature_marginal(p, temperature: float) -> MarginalTarget:
    """Smooth a language distribution to r_i proportional to p_i^(1/T).

    Zero-mass languages stay at zero for every T.
    """
    p = np.asarray(p, dtype=np.float64)
    if not temperature > 0:
        raise InputError(f"temperature must be > 0, got {temperature}")
    if p.ndim != 1 or np.any(p < 0) or not np.all(np.isfinite(p)):
        raise InputError("p must be a finite non-negative vector")
    if not np.any(p > 0):
        raise InputError("p has no positive entries")
    _check_simplex(p, "p")
    pos = p > 0
    logw = np.full(p.shape, -np.inf)
    logw[pos] = np.log(p[pos]) / temperature
    w = np.zeros_like(p)
    w[pos] = np.exp(logw[pos] - logw[pos].max())
    r = w / w.sum()
    return MarginalTarget(r, r.copy(), float(temperature))


def _scale(mat: np.ndarray) -> float:
    top = mat.max()
    return float(top) if top > 0 else 1.0


def build_log_kernel(q, spec: KernelSpec, diagonal_guard: float = 1e-300) -> np.ndarray:
    mat, _, exclude_diag, _ = _as_joint(q)
    if spec.kind == "ent-ot":
        logk = np.log(mat + spec.strength)
    else:
        logk = mat / (spec.strength * _scale(mat))
    if exclude_diag:
        np.fill_diagonal(logk, np.log(max(diagonal_guard, np.finfo(float).tiny)))
    return logk


def build_kernel(q, spec: KernelSpec, diagonal_guard: float = 1e-300) -> np.ndarray:
    """Gibbs kernel for the chosen objective.

    ent-ot: K = Q + eps. m2m: K = exp(Q / (gamma * max Q)); gamma is relative
    to the largest pair probability so its effect does not shrink as the
    number of languages grows. For a JointDistribution the
    diagonal is set to ``diagonal_guard`` so self-pairs get negligible mass.
    M2M entries may overflow to inf for tiny gamma; ``sinkhorn`` then works
    from the log kernel instead.
    """
    mat, _, exclude_diag, _ = _as_joint(q)
    if spec.kind == "ent-ot":
        k = mat + spec.strength
    else:
        with np.errstate(over="ignore"):
            k = np.exp(mat / (spec.strength * _scale(mat)))
    if exclude_diag:
        np.fill_diagonal(k, max(diagonal_guard, np.finfo(float).tiny))
    return k


def _violation(p: np.ndarray, r: np.ndarray, c: np.ndarray) -> float:
    return float(max(np.abs(p.sum(axis=1) - r).max(), np.abs(p.sum(axis=0) - c).max()))


def _check_feasible(k: np.ndarray, r: np.ndarray, c: np.ndarray):
    dead_rows = np.nonzero((k.sum(axis=1) == 0) & (r > 0))[0]
    dead_cols = np.nonzero((k.sum(axis=0) == 0) & (c > 0))[0]
    if dead_rows.size or dead_cols.size:
        raise InfeasibleError(
            f"kernel has zero rows {dead_rows.tolist()} / columns {dead_cols.tolist()} "
            "where the target marginal is positive"
        )


def _scale_plain(k, r, c, config, limit):
    """Multiplicative scaling for at most ``limit`` iterations.

    Returns (u, v, iterations, converged); u is None when a scaling factor
    fell below the underflow guard or overflowed.
    """
    guard = config.underflow_guard
    u = np.ones_like(r)
    v = np.ones_like(c)
    it = 0
    with np.errstate(divide="ignore", invalid="ignore", over="ignore", under="ignore"):
        kv = k @ v
        # after a v-update the columns are exact, so only the start needs this
        col_viol = np.abs(k.T @ u - c).max()
        while True:
            viol = max(np.abs(u * kv - r).max(), col_viol)
            if viol <= config.tolerance:
                return u, v, it, True
            if it >= limit:
                return u, v, it, False
            u = np.where(r > 0, r / kv, 0.0)
            ktu = k.T @ u
            v = np.where(c > 0, c / ktu, 0.0)
            it += 1
            if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
                return None, None, it, False
            nz_u, nz_v = u[u > 0], v[v > 0]
            if (nz_u.size and nz_u.min() < guard) or (nz_v.size and nz_v.min() < guard):
                return None, None, it, False
            kv = k @ v
            col_viol = np.abs(v * ktu - c).max()


def _log_violation(logk, f, g, r, c) -> float:
    with np.errstate(invalid="ignore", over="ignore"):
        rows = np.exp(f + logsumexp(logk + g[None, :], axis=1))
        cols = np.exp(g + logsumexp(logk + f[:, None], axis=0))
        viol = max(np.abs(np.nan_to_num(rows) - r).max(), np.abs(np.nan_to_num(cols) - c).max())
    return float(viol) if np.isfinite(viol) else np.inf


def _scale_log(logk, r, c, config, it, limit, f=None, g=None):
    """Log-domain scaling: f <- log r - LSE_j(logK + g), likewise for g."""
    with np.errstate(divide="ignore"):
        logr, logc = np.log(r), np.log(c)
    f = np.zeros_like(r) if f is None else f
    g = np.zeros_like(c) if g is None else g
    while True:
        if _log_violation(logk, f, g, r, c) <= config.tolerance:
            return f, g, it, True
        if it >= limit:
            return f, g, it, False
        f = np.where(r > 0, logr - logsumexp(logk + g[None, :], axis=1), -np.inf)
        g = np.where(c > 0, logc - logsumexp(logk + f[:, None], axis=0), -np.inf)
        it += 1


def _newton(logk, r, c, f, g, config, it):
    """Newton steps on the dual scaling potentials (f, g) = (log u, log v).

    Sinkhorn slows to O(1/k) when the plan sits near a face of the polytope
    (small gamma); Newton on the same dual converges quadratically there.
    The last column potential is pinned to remove the (f + t, g - t) gauge.
    """
    rows, cols = r > 0, c > 0
    lk = logk[np.ix_(rows, cols)]
    rr, cc = r[rows], c[cols]
    ff, gg = f[rows].copy(), g[cols].copy()
    shift = gg[-1]
    ff += shift
    gg -= shift
    m = ff.size

    def evaluate(ff, gg):
        with np.errstate(over="ignore", invalid="ignore"):
            p = np.exp(ff[:, None] + lk + gg[None, :])
            a, b = p.sum(axis=1), p.sum(axis=0)
            phi = p.sum() - rr @ ff - cc @ gg
            viol = max(np.abs(a - rr).max(), np.abs(b - cc).max())
        return p, a, b, phi, viol

    p, a, b, phi, viol = evaluate(ff, gg)
    converged = viol <= config.tolerance
    while not converged and it < config.max_iterations:
        grad = np.concatenate([a - rr, (b - cc)[:-1]])
        hess = np.block([[np.diag(a), p[:, :-1]], [p[:, :-1].T, np.diag(b[:-1])]])
        # Levenberg damping: near-zero plan entries can split the support into
        # blocks whose relative gauge is almost free, leaving H near singular
        damping = viol * 1e-3
        accepted = False
        while damping < 1e3 and not accepted:
            step = np.linalg.solve(hess + damping * np.eye(hess.shape[0]), -grad)
            df, dg = step[:m], np.append(step[m:], 0.0)
            slope = grad @ step
            t = 1.0
            while t > 1e-4:
                cand = evaluate(ff + t * df, gg + t * dg)
                # change in the dual objective, formed without the large linear terms
                delta = (cand[0].sum() - p.sum()) - t * (rr @ df + cc @ dg)
                if np.isfinite(delta) and (delta <= 1e-4 * t * slope or cand[4] < viol):
                    accepted = True
                    break
                t *= 0.5
            damping *= 10.0
        if not accepted:
            break
        ff, gg = ff + t * df, gg + t * dg
        p, a, b, phi, viol = cand
        it += 1
        converged = viol <= config.tolerance
    f_out = np.full_like(r, -np.inf)
    g_out = np.full_like(c, -np.inf)
    f_out[rows], g_out[cols] = ff, gg
    return f_out, g_out, it, converged


def sinkhorn(
    kernel: np.ndarray,
    target: MarginalTarget,
    config: SinkhornConfig = SinkhornConfig(),
    *,
    log_kernel: np.ndarray | None = None,
    index: LanguageIndex | None = None,
) -> TransportPlan:
    """Scale ``kernel`` to P = diag(u) K diag(v) with the target marginals.

    Iterates u <- r / (K v), v <- c / (K^T u) until the L-infinity violation
    of both marginals is within ``config.tolerance``. If a scaling factor
    drops below ``config.underflow_guard`` (or overflows) the solve restarts
    in the log domain from ``log_kernel`` (default: log of ``kernel``). If
    scaling has not converged after ``config.newton_after`` iterations the
    remaining budget goes to Newton steps on the same potentials.

    Raises InfeasibleError for a zero kernel row/column under positive target
    mass and ConvergenceError (with a diagnostic) after ``max_iterations``.
    """
    k = np.asarray(kernel, dtype=np.float64)
    r, c = target.r, target.c
    if k.shape != (r.size, c.size):
        raise InputError(f"kernel shape {k.shape} does not match targets ({r.size}, {c.size})")
    if np.any(np.isnan(k)) or np.any(k < 0):
        raise InputError("kernel entries must be non-negative")
    if log_kernel is None:
        with np.errstate(divide="ignore"):
            log_kernel = np.log(k)
    finite = bool(np.all(np.isfinite(k)))
    _check_feasible(k if finite else np.isfinite(log_kernel).astype(float), r, c)

    limit = min(config.max_iterations, config.newton_after)
    log_domain = False
    f = None
    it = 0
    if finite:
        u, v, it, converged = _scale_plain(k, r, c, config, limit)
        if u is not None:
            if converged:
                p = u[:, None] * k * v[None, :]
            else:
                with np.errstate(divide="ignore"):
                    f, g = np.log(u), np.log(v)
    if not finite or u is None:
        log_domain = True
        logger.debug("sinkhorn: switching to log-domain scaling after %d iterations", it)
        f, g, it, converged = _scale_log(log_kernel, r, c, config, it, limit)
    if not converged and it < config.max_iterations:
        log_domain = True
        logger.debug("sinkhorn: Newton polish after %d iterations", it)
        f, g, it, converged = _newton(log_kernel, r, c, f, g, config, it)
        if not converged and it < config.max_iterations:
            # Newton stalled in its line search; spend the rest on plain updates
            f, g, it, converged = _scale_log(
                log_kernel, r, c, config, it, config.max_iterations, f, g
            )
    if f is not None:
        with np.errstate(over="ignore", invalid="ignore"):
            p = np.exp(f[:, None] + log_kernel + g[None, :])
    p = np.nan_to_num(p, nan=0.0, posinf=0.0)
    violation = _violation(p, r, c)
    if index is None:
        index = _generic_index(r.size)
    plan = TransportPlan(
        index=index,
        p_star=p,
        target=target,
        kernel=None,
        iterations_used=int(it),
        marginal_violation=violation,
        objective_value=float("nan"),
        method="sinkhorn",
        config=config,
        log_domain=log_domain,
    )
    if not converged:
        raise ConvergenceError(
            f"sinkhorn did not converge in {it} iterations "
            f"(marginal violation {violation:.3e} > {config.tolerance:.1e})",
            {"iterations": int(it), "violation": violation, "log_domain": log_domain, "plan": plan},
        )
    return plan


def _solve(q, temperature, spec: KernelSpec, config: SinkhornConfig, p) -> TransportPlan:
    mat, index, exclude_diag, directedness = _as_joint(q)
    if p is None:
        p = marginals(mat)
    target = temperature_marginal(p, temperature)
    k = build_kernel(q, spec, config.underflow_guard)
    logk = build_log_kernel(q, spec, config.underflow_guard)
    plan = sinkhorn(k, target, config, log_kernel=logk, index=index)
    if exclude_diag:
        # self-pairs only ever hold guard-level residue (~1e-300); drop it
        p_star = plan.p_star.copy()
        np.fill_diagonal(p_star, 0.0)
        plan = dataclasses.replace(plan, p_star=p_star)
    if spec.kind == "ent-ot":
        smoothed = k / k.sum()
        objective, kind = kl_divergence(plan.p_star / plan.p_star.sum(), smoothed), "kl_to_smoothed_q"
    else:
        objective, kind = float(np.sum(plan.p_star * mat)), "frobenius_inner_product"
    return dataclasses.replace(
        plan,
        kernel=spec,
        objective_value=objective,
        objective_kind=kind,
        method=spec.kind,
        directedness=directedness,
    )


def solve_proposed(
    q,
    temperature: float = DEFAULT_TEMPERATURE,
    epsilon: float = DEFAULT_EPSILON,
    config: SinkhornConfig = SinkhornConfig(),
    p=None,
) -> TransportPlan:
    """Entropic OT plan: the KL projection of (Q + eps) onto the polytope.

    ``p`` overrides the language marginal derived from ``q`` (e.g. with
    monolingual corpus sizes) before temperature smoothing. ``q`` may be a
    JointDistribution (self-pairs excluded) or a raw square matrix.
    """
    return _solve(q, temperature, KernelSpec.ent_ot(epsilon), config, p)


def solve_m2m(
    q,
    temperature: float = DEFAULT_TEMPERATURE,
    gamma: float = DEFAULT_GAMMA,
    config: SinkhornConfig = SinkhornConfig(),
    p=None,
) -> TransportPlan:
    """Baseline plan maximizing <P, Q>, smoothed with kernel exp(Q / (gamma max Q))."""
    return _solve(q, temperature, KernelSpec.m2m(gamma), config, p)


def solve_temperature(q, temperature: float = DEFAULT_TEMPERATURE, p=None) -> TransportPlan:
    """Independent coupling r (x) r with self-pairs removed and renormalized.

    It ignores the pair structure of Q entirely and does not meet the target
    marginals exactly; the violation is reported as-is.
    """
    mat, index, exclude_diag, directedness = _as_joint(q)
    if p is None:
        p = marginals(mat)
    target = temperature_marginal(p, temperature)
    plan = np.outer(target.r, target.c)
    if exclude_diag:
        np.fill_diagonal(plan, 0.0)
    if plan.sum() <= 0:
        raise InfeasibleError("independent coupling has no off-diagonal mass")
    plan /= plan.sum()
    return TransportPlan(
        index=index,
        p_star=plan,
        target=target,
        kernel=None,
        iterations_used=0,
        marginal_violation=_violation(plan, target.r, target.c),
        objective_value=kl_divergence(plan, mat),
        method="temperature",
        directedness=directedness,
        objective_kind="kl_to_q",
    )


def kl_divergence(p, q) -> float:
    """KL(P || Q) with 0 log 0 = 0; +inf when P has mass where Q has none."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise InputError(f"shape mismatch {p.shape} vs {q.shape}")
    for name, m in (("P", p), ("Q", q)):
        if np.any(m < 0) or abs(m.sum() - 1.0) > 1e-9:
            raise InputError(f"{name} must be non-negative and sum to 1")
    mask = p > 0
    if np.any(q[mask] == 0):
        return float("inf")
    return float(np.sum(p[mask] * (np.log(p[mask]) - np.log(q[mask]))))


def entropy(p) -> float:
    """Shannon entropy in nats, with 0 log 0 = 0."""
    p = np.asarray(p, dtype=np.float64)
    nz = p[p > 0]
    return float(-np.sum(nz * np.log(nz)))


# ---------------------------------------------------------------- serialization


def plan_to_dict(plan: TransportPlan) -> dict:
    rows, cols, vals = plan.positive_entries()
    header = {
        "method": plan.method,
        "kernel": plan.kernel.kind if plan.kernel else None,
        "T": plan.target.temperature,
        "tolerance": plan.config.tolerance,
        "max_iterations": plan.config.max_iterations,
        "underflow_guard": plan.config.underflow_guard,
        "iterations": plan.iterations_used,
        "violation": plan.marginal_violation,
        "objective": plan.objective_value if np.isfinite(plan.objective_value) else None,
        "objective_kind": plan.objective_kind,
        "log_domain": plan.log_domain,
        "directedness": plan.directedness,
        "digest": plan.digest(),
    }
    if plan.kernel is not None:
        header[plan.kernel.param_name] = plan.kernel.strength
    return {
        "kind": "transport_plan",
        "header": header,
        "codes": list(plan.index.codes),
        "target": plan.target.r.tolist(),
        "entries": [
            [int(i), int(j), float(v)] for i, j, v in zip(rows, cols, vals)
        ],
    }


def plan_from_dict(doc: Mapping) -> TransportPlan:
    try:
        header = doc["header"]
        index = LanguageIndex(tuple(doc["codes"]))
        p = np.zeros((index.size, index.size))
        for i, j, v in doc["entries"]:
            p[int(i), int(j)] = float(v)
        r = np.asarray(doc["target"], dtype=np.float64)
        kernel = None
        if header.get("kernel"):
            name = "epsilon" if header["kernel"] == "ent-ot" else "gamma"
            kernel = KernelSpec(header["kernel"], float(header[name]))
        plan = TransportPlan(
            index=index,
            p_star=p,
            target=MarginalTarget(r, r.copy(), float(header["T"])),
            kernel=kernel,
            iterations_used=int(header["iterations"]),
            marginal_violation=float(header["violation"]),
            objective_value=float("nan") if header["objective"] is None else float(header["objective"]),
            method=header["method"],
            config=SinkhornConfig(
                float(header["tolerance"]),
                int(header["max_iterations"]),
                float(header["underflow_guard"]),
            ),
            log_domain=bool(header.get("log_domain", False)),
            directedness=header.get("directedness", "directed"),
            objective_kind=header.get("objective_kind", ""),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"malformed plan document: {exc}") from None
    if "digest" in header and header["digest"] != plan.digest():
        raise InputError("plan digest does not match its entries")
    return plan


def load_plan(path: str | Path) -> TransportPlan:
    return plan_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
