"""Chi-square-ball reweighting of language pairs and the iterated best-response loop.

The inner problem is

    sup  sum_i p_i l_i   s.t.  p in simplex,  sum_i (p_i - q_i)^2 / q_i <= rho

with combined per-pair losses l_i = l_D,i + lambda * l_G,i. Its KKT solution
is p_i = q_i * (1 + (l_i - mu) / nu)_+ : mu normalizes, nu > 0 is set so the
divergence constraint holds with equality.
"""

from __future__ import annotations

import json
import math
import warnings
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .errors import InputError
from .transport import TransportPlan

__all__ = [
    "ChiSquareBall",
    "DroTrajectory",
    "LossSource",
    "LossTrace",
    "ReweightResult",
    "ball_from_plan",
    "chi2",
    "ibr_run",
    "inner_sup",
    "top_movers",
    "trajectory_to_jsonl",
    "movers_to_dict",
]

CHI2_DEFINITION = "sum_i (p_i - q_i)^2 / q_i"

Pair = tuple[str, str]


@dataclass(frozen=True, eq=False)
class ChiSquareBall:
    rho: float
    base: np.ndarray
    pairs: tuple[Pair, ...] = ()

    def __post_init__(self):
        base = np.array(self.base, dtype=np.float64)
        if not (math.isfinite(self.rho) and self.rho >= 0):
            raise InputError(f"rho must be finite and >= 0, got {self.rho}")
        if base.ndim != 1 or base.size == 0:
            raise InputError("base distribution must be a non-empty vector")
        if np.any(base <= 0) or not np.all(np.isfinite(base)):
            raise InputError("base distribution must be strictly positive on its support")
        if abs(base.sum() - 1.0) > 1e-9:
            raise InputError("base distribution must sum to 1")
        base = base / base.sum()
        base.setflags(write=False)
        object.__setattr__(self, "base", base)
        pairs = tuple(tuple(p) for p in self.pairs) or tuple(
            (f"p{i}", "") for i in range(base.size)
        )
        if len(pairs) != base.size:
            raise InputError("pair labels and base distribution differ in length")
        object.__setattr__(self, "pairs", pairs)


@dataclass(frozen=True, eq=False)
class LossTrace:
    loss_d: np.ndarray
    loss_g: np.ndarray
    lam: float = 1.0

    def __post_init__(self):
        ld = np.array(self.loss_d, dtype=np.float64)
        lg = np.array(self.loss_g, dtype=np.float64)
        if ld.shape != lg.shape or ld.ndim != 1:
            raise InputError("discriminator and generator losses must be equal-length vectors")
        for arr in (ld, lg):
            if not np.all(np.isfinite(arr)) or np.any(arr < 0):
                raise InputError("losses must be finite and >= 0")
        if not (math.isfinite(self.lam) and self.lam >= 0):
            raise InputError("lambda must be >= 0")
        object.__setattr__(self, "loss_d", ld)
        object.__setattr__(self, "loss_g", lg)

    @property
    def combined(self) -> np.ndarray:
        return self.loss_d + self.lam * self.loss_g

    def __len__(self) -> int:
        return self.loss_d.size


@dataclass(frozen=True, eq=False)
class ReweightResult:
    p: np.ndarray
    objective: float
    chi2_used: float
    mu: float
    nu: float
    flag: str = ""  # "", "rho_zero", "equal_losses" or "vertex"


@dataclass
class DroTrajectory:
    ball: ChiSquareBall
    lam: float
    rounds: list[tuple[int, ReweightResult]] = field(default_factory=list)
    resamples: int = 0
    rounds_between: int = 1
    reanchor: bool = False
    error: str | None = None

    @property
    def final(self) -> np.ndarray:
        if not self.rounds:
            raise InputError("trajectory has no rounds")
        return self.rounds[-1][1].p


def chi2(p, q) -> float:
    """Sum of (p_i - q_i)^2 / q_i; +inf if p has mass where q has none."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise InputError(f"shape mismatch {p.shape} vs {q.shape}")
    zero = q == 0
    if np.any(p[zero] > 0):
        return float("inf")
    nz = ~zero
    return float(np.sum((p[nz] - q[nz]) ** 2 / q[nz]))


def _normalizer(q: np.ndarray, l: np.ndarray, nu: float) -> float:
    """Exact mu with sum_i q_i (1 + (l_i - mu)/nu)_+ = 1.

    The sum is piecewise linear and decreasing in mu; with losses sorted in
    descending order the active set is a prefix, so each prefix length k
    gives a candidate mu and exactly one is consistent.
    """
    order = np.argsort(-l, kind="stable")
    ls, qs = l[order], q[order]
    cq = np.cumsum(qs)
    cql = np.cumsum(qs * ls)
    mu = (nu * (cq - 1.0) + cql) / cq
    nxt = np.append(ls[1:], -np.inf)
    ok = (mu < ls + nu) & (mu >= nxt + nu)
    k = int(np.argmax(ok)) if ok.any() else len(l) - 1
    return float(mu[k])


def _weights(q, l, nu) -> tuple[np.ndarray, float]:
    mu = _normalizer(q, l, nu)
    p = q * np.maximum(0.0, 1.0 + (l - mu) / nu)
    return p / p.sum(), mu


def _dot(a: np.ndarray, b: np.ndarray) -> float:
    # compensated summation keeps e.g. mean([3, 2, 1]) at exactly 2
    return math.fsum(a * b)


def inner_sup(ball: ChiSquareBall, losses: LossTrace, tol: float = 1e-10) -> ReweightResult:
    """Worst-case distribution in the chi-square ball for the given losses."""
    q = ball.base
    if len(losses) != q.size:
        raise InputError(f"loss trace has {len(losses)} entries, base has {q.size}")
    l = losses.combined
    base_obj = _dot(q, l)
    if ball.rho == 0:
        return ReweightResult(q.copy(), base_obj, 0.0, base_obj, math.inf, "rho_zero")
    if q.size < 2:
        raise InputError("degenerate base: single-atom support")
    spread = l.max() - l.min()
    if spread <= 1e-15 * max(1.0, abs(l.max())):
        return ReweightResult(q.copy(), base_obj, 0.0, base_obj, math.inf, "equal_losses")

    top = l == l.max()
    s = float(q[top].sum())
    if ball.rho >= (1.0 - s) / s * (1.0 - 1e-12):
        # the ball reaches the face of the simplex holding the top losses
        p = np.where(top, q / s, 0.0)
        return ReweightResult(p, _dot(p, l), chi2(p, q), float(l.max()), 0.0, "vertex")

    # unclamped solution p - q = q (l - mean) / nu, chi2 = var / nu^2
    var = float(q @ (l - base_obj) ** 2)
    nu = math.sqrt(var / ball.rho)
    if 1.0 + (l.min() - base_obj) / nu >= 0:
        p = q * (1.0 + (l - base_obj) / nu)
        p = p / p.sum()
        return ReweightResult(p, _dot(p, l), chi2(p, q), base_obj, nu)

    # some weights clamp at zero: bisect nu on chi2(nu) = rho (chi2 decreasing in nu)
    lo, hi = 0.0, nu
    while chi2(_weights(q, l, hi)[0], q) > ball.rho:
        lo, hi = hi, 2.0 * hi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if chi2(_weights(q, l, mid)[0], q) > ball.rho:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol * hi:
            break
    p, mu = _weights(q, l, hi)
    return ReweightResult(p, _dot(p, l), chi2(p, q), mu, hi)


class LossSource(Protocol):
    def __call__(self, round_index: int, distribution: np.ndarray, steps: int) -> LossTrace:
        """Per-pair mean losses observed while training ``steps`` steps under
        ``distribution`` (aligned with the ball's pairs)."""


def ibr_run(
    initial: ChiSquareBall,
    loss_source: LossSource,
    resamples: int = 10,
    rounds_between: int = 1,
    reanchor: bool = False,
) -> DroTrajectory:
    """Iterated best response: observe losses, re-solve the ball, resample.

    The ball stays centred on ``initial.base`` unless ``reanchor`` is set. If
    the loss source raises, the trajectory is truncated and ``error`` is set.
    """
    if resamples < 1:
        raise InputError("resamples must be >= 1")
    if rounds_between < 0:
        raise InputError("rounds_between must be >= 0")
    traj = DroTrajectory(
        ball=initial,
        lam=float("nan"),
        resamples=resamples,
        rounds_between=rounds_between,
        reanchor=reanchor,
    )
    current = initial.base.copy()
    for k in range(1, resamples + 1):
        try:
            trace = loss_source(k, current.copy(), rounds_between)
        except Exception as exc:  # noqa: BLE001 -- any provider failure ends the run
            traj.error = f"round {k}: {type(exc).__name__}: {exc}"
            break
        traj.lam = trace.lam
        ball = ChiSquareBall(initial.rho, current, initial.pairs) if reanchor else initial
        result = inner_sup(ball, trace)
        traj.rounds.append((k, result))
        current = result.p
    return traj


def top_movers(
    traj: DroTrajectory, k: int = 10
) -> tuple[list[tuple[Pair, float]], list[tuple[Pair, float]]]:
    """Pairs with the largest and smallest final/base probability ratios.

    The two lists are disjoint: ``k`` is clamped to half the support (the
    upsampled side takes the odd one out), so a large ``k`` splits the whole
    support between them. Ties go by canonical pair order.
    """
    if k < 1:
        raise InputError("k must be >= 1")
    ratio = traj.final / traj.ball.base
    pairs = traj.ball.pairs
    n = len(pairs)
    k_up = min(k, (n + 1) // 2)
    k_down = min(k, n - k_up)
    if k_up < k or k_down < k:
        warnings.warn(f"top_movers: k={k} clamped to {k_up}/{k_down} for {n} pairs", stacklevel=2)
    ranked = sorted(range(n), key=lambda i: (-ratio[i], pairs[i]))
    chosen = set(ranked[:k_up])
    rising = sorted((i for i in range(n) if i not in chosen), key=lambda i: (ratio[i], pairs[i]))
    up = [(pairs[i], float(ratio[i])) for i in ranked[:k_up]]
    down = [(pairs[i], float(ratio[i])) for i in rising[:k_down]]
    return up, down


def ball_from_plan(plan: TransportPlan, rho: float, support_tau: float = 0.0) -> ChiSquareBall:
    """Ball around the plan restricted to cells above ``support_tau``."""
    p = plan.p_star
    rows, cols = np.nonzero(p > support_tau)
    if rows.size == 0:
        raise InputError("plan has no entries above the support threshold")
    base = p[rows, cols]
    codes = plan.index.codes
    pairs = tuple((codes[i], codes[j]) for i, j in zip(rows, cols))
    return ChiSquareBall(rho, base / base.sum(), pairs)


# ---------------------------------------------------------------- loss files


def parse_loss_records(text: str) -> list[dict]:
    """Read loss records from TSV (src, tgt, loss_d, loss_g) or JSONL.

    JSONL records may carry a ``round`` field to give per-round losses.
    """
    records = []
    for line_no, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        if s.startswith("{"):
            try:
                rec = json.loads(s)
                records.append(
                    {
                        "src": str(rec["src"]).lower(),
                        "tgt": str(rec["tgt"]).lower(),
                        "loss_d": float(rec["loss_d"]),
                        "loss_g": float(rec.get("loss_g", 0.0)),
                        "round": rec.get("round"),
                    }
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise InputError(f"bad loss record: {exc}", line_no) from None
            continue
        fields = line.rstrip("\r\n").split("\t")
        if len(fields) != 4:
            raise InputError(f"expected 4 tab-separated fields, got {len(fields)}", line_no)
        try:
            ld, lg = float(fields[2]), float(fields[3])
        except ValueError:
            raise InputError("losses must be numbers", line_no) from None
        records.append(
            {"src": fields[0].strip().lower(), "tgt": fields[1].strip().lower(), "loss_d": ld, "loss_g": lg, "round": None}
        )
    if not records:
        raise InputError("loss file has no records")
    return records


class RecordedLosses:
    """Loss source replaying losses from a file, per round where given."""

    def __init__(self, records: Iterable[dict], pairs: Sequence[Pair], lam: float = 1.0):
        self.pairs = list(pairs)
        self.lam = lam
        by_round: dict[int | None, dict[Pair, tuple[float, float]]] = {}
        for rec in records:
            by_round.setdefault(rec["round"], {})[(rec["src"], rec["tgt"])] = (rec["loss_d"], rec["loss_g"])
        self._by_round = by_round
        for rnd, table in by_round.items():
            missing = [p for p in self.pairs if p not in table]
            if missing:
                where = "" if rnd is None else f" in round {rnd}"
                raise InputError(
                    f"loss file lacks {len(missing)} support pairs{where}, e.g. {'-'.join(missing[0])}"
                )

    def __call__(self, round_index: int, distribution: np.ndarray, steps: int) -> LossTrace:
        table = self._by_round.get(round_index, self._by_round.get(None))
        if table is None:
            raise InputError(f"no losses recorded for round {round_index}")
        ld = [table[p][0] for p in self.pairs]
        lg = [table[p][1] for p in self.pairs]
        return LossTrace(np.array(ld), np.array(lg), self.lam)


# ---------------------------------------------------------------- serialization


def trajectory_to_jsonl(traj: DroTrajectory) -> str:
    header = {
        "kind": "dro_trajectory",
        "rho": traj.ball.rho,
        "lambda": traj.lam if math.isfinite(traj.lam) else None,
        "resamples": traj.resamples,
        "rounds_between": traj.rounds_between,
        "reanchor": traj.reanchor,
        "chi2_definition": CHI2_DEFINITION,
        "pairs": [list(p) for p in traj.ball.pairs],
        "base": traj.ball.base.tolist(),
        "completed_rounds": len(traj.rounds),
        "error": traj.error,
    }
    lines = [json.dumps(header)]
    for k, res in traj.rounds:
        lines.append(
            json.dumps(
                {
                    "round": k,
                    "objective": res.objective,
                    "chi2": res.chi2_used,
                    "mu": res.mu,
                    "nu": res.nu if math.isfinite(res.nu) else None,
                    "flag": res.flag,
                    "p": res.p.tolist(),
                }
            )
        )
    return "\n".join(lines) + "\n"


def movers_to_dict(up, down) -> dict:
    def rows(items):
        return [{"src": s, "tgt": t, "ratio": r} for (s, t), r in items]

    return {"upsampled": rows(up), "downsampled": rows(down)}
