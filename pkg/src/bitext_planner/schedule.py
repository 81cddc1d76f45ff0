"""Deterministic batch schedules drawn from a sampling plan.

Each entry is an i.i.d. draw of an ordered language pair from the plan's
positive cells, followed by an independent direction flip.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import stats

from .errors import InputError, VerificationError
from .transport import TransportPlan

__all__ = [
    "AliasSampler",
    "Schedule",
    "ScheduleEntry",
    "build_sampler",
    "generate",
    "schedule_from_jsonl",
    "schedule_to_jsonl",
    "verify",
]

GENERATOR_ID = f"numpy.random.Generator(PCG64)/numpy-{np.__version__}"
MAX_ENTRIES = 2**31 - 1


class AliasSampler:
    """Vose alias tables over the positive cells of a plan, O(1) per draw."""

    def __init__(self, rows: np.ndarray, cols: np.ndarray, probs: np.ndarray):
        n = probs.size
        if n == 0:
            raise InputError("plan has no positive entries to sample from")
        self.rows = rows
        self.cols = cols
        self.probs = probs / probs.sum()
        scaled = self.probs * n
        accept = np.ones(n)
        alias = np.arange(n)
        small = [i for i in range(n) if scaled[i] < 1.0]
        large = [i for i in range(n) if scaled[i] >= 1.0]
        while small and large:
            s, g = small.pop(), large.pop()
            accept[s] = scaled[s]
            alias[s] = g
            scaled[g] = scaled[g] + scaled[s] - 1.0
            (small if scaled[g] < 1.0 else large).append(g)
        # leftovers are 1 up to rounding
        for i in small + large:
            accept[i] = 1.0
            alias[i] = i
        self.accept = accept
        self.alias = alias

    def __len__(self) -> int:
        return self.probs.size

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        slot = rng.integers(0, len(self), size=size)
        coin = rng.random(size)
        return np.where(coin < self.accept[slot], slot, self.alias[slot])


def build_sampler(plan: TransportPlan) -> AliasSampler:
    rows, cols, probs = plan.positive_entries()
    return AliasSampler(rows, cols, probs)


class ScheduleEntry(NamedTuple):
    batch: int
    src: str
    tgt: str
    flipped: bool


@dataclass(frozen=True, eq=False)
class Schedule:
    """Header fields plus column arrays of the emitted entries.

    ``src``/``tgt`` hold language positions in the order the consumer should
    read them, i.e. after any flip.
    """

    plan_digest: str
    seed: int
    generator: str
    flip_prob: float
    batches: int
    batch_size: int
    codes: tuple[str, ...]
    src: np.ndarray
    tgt: np.ndarray
    flipped: np.ndarray

    def __len__(self) -> int:
        return int(self.src.size)

    def entries(self):
        for k in range(len(self)):
            yield ScheduleEntry(
                k // self.batch_size,
                self.codes[self.src[k]],
                self.codes[self.tgt[k]],
                bool(self.flipped[k]),
            )

    def header(self) -> dict:
        return {
            "kind": "schedule",
            "plan_digest": self.plan_digest,
            "seed": self.seed,
            "generator": self.generator,
            "flip_prob": self.flip_prob,
            "batches": self.batches,
            "batch_size": self.batch_size,
            "codes": list(self.codes),
        }


def _resolve_flip(plan: TransportPlan, flip_prob: float | None) -> float:
    if flip_prob is None:
        if plan.directedness == "symmetrized":
            return 0.5
        warnings.warn("directed plan: direction already encoded, flip_prob defaults to 0", stacklevel=3)
        return 0.0
    if not (isinstance(flip_prob, (int, float)) and 0.0 <= flip_prob <= 1.0):
        raise InputError(f"flip_prob must lie in [0, 1], got {flip_prob!r}")
    return float(flip_prob)


def generate(
    plan: TransportPlan,
    batches: int,
    batch_size: int,
    seed: int,
    flip_prob: float | None = None,
) -> Schedule:
    """Draw ``batches * batch_size`` entries; a pure function of its arguments.

    ``flip_prob=None`` means 0.5 for symmetrized plans and 0 (with a warning)
    for directed ones.
    """
    if batches < 1 or batch_size < 1:
        raise InputError("batches and batch_size must be >= 1")
    if batches * batch_size > MAX_ENTRIES:
        raise InputError(f"requested {batches * batch_size} entries exceeds {MAX_ENTRIES}")
    if not (isinstance(seed, (int, np.integer)) and 0 <= seed < 2**64):
        raise InputError("seed must be an integer in [0, 2**64)")
    fp = _resolve_flip(plan, flip_prob)
    sampler = build_sampler(plan)
    n = batches * batch_size
    rng = np.random.Generator(np.random.PCG64(int(seed)))
    cell = sampler.draw(rng, n)
    flipped = rng.random(n) < fp
    rows, cols = sampler.rows[cell], sampler.cols[cell]
    src = np.where(flipped, cols, rows)
    tgt = np.where(flipped, rows, cols)
    return Schedule(
        plan_digest=plan.digest(),
        seed=int(seed),
        generator=GENERATOR_ID,
        flip_prob=fp,
        batches=int(batches),
        batch_size=int(batch_size),
        codes=plan.index.codes,
        src=src,
        tgt=tgt,
        flipped=flipped,
    )


def schedule_to_jsonl(schedule: Schedule) -> str:
    quoted = [json.dumps(c) for c in schedule.codes]
    bs = schedule.batch_size
    lines = [json.dumps(schedule.header())]
    lines.extend(
        f'{{"b": {k // bs}, "src": {quoted[s]}, "tgt": {quoted[t]}, "f": {int(f)}}}'
        for k, (s, t, f) in enumerate(
            zip(schedule.src.tolist(), schedule.tgt.tolist(), schedule.flipped.tolist())
        )
    )
    return "\n".join(lines) + "\n"


def schedule_from_jsonl(text: str) -> Schedule:
    lines = text.splitlines()
    if not lines:
        raise InputError("empty schedule file")
    try:
        head = json.loads(lines[0])
        codes = tuple(head["codes"])
        pos = {c: i for i, c in enumerate(codes)}
        body = [json.loads(s) for s in lines[1:] if s.strip()]
        src = np.array([pos[e["src"]] for e in body], dtype=np.int64)
        tgt = np.array([pos[e["tgt"]] for e in body], dtype=np.int64)
        flipped = np.array([bool(e["f"]) for e in body], dtype=bool)
        return Schedule(
            plan_digest=head["plan_digest"],
            seed=int(head["seed"]),
            generator=head["generator"],
            flip_prob=float(head["flip_prob"]),
            batches=int(head["batches"]),
            batch_size=int(head["batch_size"]),
            codes=codes,
            src=src,
            tgt=tgt,
            flipped=flipped,
        )
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise InputError(f"malformed schedule: {exc}") from None


def _gof_pvalue(observed: np.ndarray, expected: np.ndarray) -> float:
    # pool sparse cells so every bin has expected count >= 5
    small = expected < 5
    obs = observed[~small]
    exp = expected[~small]
    if small.any():
        obs = np.append(obs, observed[small].sum())
        exp = np.append(exp, expected[small].sum())
    if obs.size < 2:
        return 1.0
    exp = exp * (obs.sum() / exp.sum())
    return float(stats.chisquare(obs, exp).pvalue)


def verify(schedule: Schedule, plan: TransportPlan, significance: float = 0.01) -> dict:
    """Recheck a schedule against its plan.

    Raises VerificationError on a digest mismatch; every other check is
    reported as pass/fail in the returned dict.
    """
    if schedule.plan_digest != plan.digest():
        raise VerificationError("schedule was not generated from this plan (digest mismatch)")
    n = len(schedule)
    checks: dict[str, dict] = {}

    checks["entry_count"] = {
        "pass": n == schedule.batches * schedule.batch_size,
        "entries": n,
        "expected": schedule.batches * schedule.batch_size,
    }

    rows = np.where(schedule.flipped, schedule.tgt, schedule.src)
    cols = np.where(schedule.flipped, schedule.src, schedule.tgt)
    in_support = plan.p_star[rows, cols] > 0
    checks["support"] = {"pass": bool(in_support.all()), "outside": int((~in_support).sum())}

    sampler = build_sampler(plan)
    size = plan.index.size
    cell_of = {int(r) * size + int(c): k for k, (r, c) in enumerate(zip(sampler.rows, sampler.cols))}
    flat = rows * size + cols
    observed = np.zeros(len(sampler))
    for key, cnt in zip(*np.unique(flat[in_support], return_counts=True)):
        observed[cell_of[int(key)]] = cnt
    pvalue = _gof_pvalue(observed, sampler.probs * n) if n else 1.0
    checks["frequency"] = {"pass": pvalue >= significance, "p_value": pvalue, "significance": significance}

    fp = schedule.flip_prob
    frac = float(schedule.flipped.mean()) if n else 0.0
    if fp in (0.0, 1.0):
        ok = frac == fp
        band = 0.0
    else:
        band = 3.0 * math.sqrt(fp * (1 - fp) / max(n, 1))
        ok = abs(frac - fp) <= band
    checks["flip_fraction"] = {"pass": bool(ok), "observed": frac, "expected": fp, "band": band}

    try:
        again = generate(plan, schedule.batches, schedule.batch_size, schedule.seed, fp)
        same = (
            np.array_equal(again.src, schedule.src)
            and np.array_equal(again.tgt, schedule.tgt)
            and np.array_equal(again.flipped, schedule.flipped)
        )
    except InputError:
        same = False
    checks["determinism"] = {"pass": bool(same), "generator_match": schedule.generator == GENERATOR_ID}

    return {"pass": all(c["pass"] for c in checks.values()), "checks": checks}
