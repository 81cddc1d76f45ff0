"""Sparsity, entropy and data-wastage metrics for sampling plans."""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass

import numpy as np

from .corpus import JointDistribution
from .errors import InputError
from .transport import TransportPlan, entropy

__all__ = [
    "ComparisonReport",
    "PlanReport",
    "compare",
    "density_histogram",
    "diagnose",
    "histogram_csv",
    "support_fraction",
    "wastage",
]

DEFAULT_TAU = 1e-6


@dataclass(frozen=True)
class PlanReport:
    method: str
    tau: float
    entropy: float
    support_size: int
    support_fraction: float
    wastage: float
    min_positive: float
    max_positive: float
    median_positive: float
    histogram: list[tuple[float, float, int]]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["histogram"] = [list(row) for row in self.histogram]
        return d


@dataclass(frozen=True)
class ComparisonReport:
    tau: float
    entropy_delta: float
    support_fraction_delta: float
    wastage_delta: float
    tv_distance: float
    only_in_a: list[tuple[str, str]]
    only_in_b: list[tuple[str, str]]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["only_in_a"] = [list(p) for p in self.only_in_a]
        d["only_in_b"] = [list(p) for p in self.only_in_b]
        return d


def _matrices(plan: TransportPlan, joint: JointDistribution) -> tuple[np.ndarray, np.ndarray]:
    if plan.index != joint.index:
        raise InputError("plan and joint distribution use different language indexes")
    return plan.p_star, joint.q


def support_fraction(plan: TransportPlan, joint: JointDistribution, tau: float = DEFAULT_TAU) -> float:
    """Share of Q-supported cells whose plan probability exceeds ``tau``."""
    p, q = _matrices(plan, joint)
    supported = q > 0
    n = int(supported.sum())
    if n == 0:
        raise InputError("joint distribution has empty support")
    return int(np.sum(supported & (p > tau))) / n


def wastage(plan: TransportPlan, joint: JointDistribution, tau: float = DEFAULT_TAU) -> float:
    """Q-mass of available bitext that the plan samples with probability <= tau."""
    p, q = _matrices(plan, joint)
    return float(min(1.0, q[(q > 0) & (p <= tau)].sum()))


def density_histogram(
    plan: TransportPlan, bins: int = 50, value_range: tuple[float, float] | None = None
) -> list[tuple[float, float, int]]:
    """Equal-width histogram of log10 of the plan's positive entries.

    ``value_range`` (in log10 units) fixes the bin edges, e.g. to put two
    plans on the same axis.
    """
    if bins < 1:
        raise InputError("bins must be >= 1")
    vals = plan.p_star[plan.p_star > 0]
    if vals.size == 0:
        raise InputError("plan has no positive entries")
    logs = np.log10(vals)
    counts, edges = np.histogram(logs, bins=bins, range=value_range)
    if value_range is not None:
        # np.histogram drops out-of-range values; clip them into the edge bins
        counts[0] += int(np.sum(logs < value_range[0]))
        counts[-1] += int(np.sum(logs > value_range[1]))
    return [(float(lo), float(hi), int(n)) for lo, hi, n in zip(edges[:-1], edges[1:], counts)]


def histogram_csv(rows: list[tuple[float, float, int]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["bin_lo", "bin_hi", "count"])
    for lo, hi, n in rows:
        writer.writerow([repr(lo), repr(hi), n])
    return buf.getvalue()


def diagnose(
    plan: TransportPlan, joint: JointDistribution, tau: float = DEFAULT_TAU, bins: int = 50
) -> PlanReport:
    if tau < 0:
        raise InputError("tau must be >= 0")
    p = plan.p_star
    pos = p[p > 0]
    return PlanReport(
        method=plan.method,
        tau=tau,
        entropy=entropy(p),
        support_size=int(np.sum((joint.q > 0) & (p > tau))),
        support_fraction=support_fraction(plan, joint, tau),
        wastage=wastage(plan, joint, tau),
        min_positive=float(pos.min()),
        max_positive=float(pos.max()),
        median_positive=float(np.median(pos)),
        histogram=density_histogram(plan, bins),
    )


def compare(
    a: TransportPlan, b: TransportPlan, joint: JointDistribution, tau: float = DEFAULT_TAU
) -> ComparisonReport:
    """Metric deltas (a - b), total-variation distance and support differences."""
    if a.index != b.index:
        raise InputError("plans use different language indexes")
    pa, pb = _matrices(a, joint)[0], _matrices(b, joint)[0]
    codes = a.index.codes
    in_a, in_b = pa > tau, pb > tau

    def pairs(mask):
        return [(codes[i], codes[j]) for i, j in zip(*np.nonzero(mask))]

    return ComparisonReport(
        tau=tau,
        entropy_delta=entropy(pa) - entropy(pb),
        support_fraction_delta=support_fraction(a, joint, tau) - support_fraction(b, joint, tau),
        wastage_delta=wastage(a, joint, tau) - wastage(b, joint, tau),
        tv_distance=float(min(1.0, 0.5 * np.abs(pa - pb).sum())),
        only_in_a=pairs(in_a & ~in_b),
        only_in_b=pairs(in_b & ~in_a),
    )
