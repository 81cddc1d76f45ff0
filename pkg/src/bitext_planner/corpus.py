"""Bitext pair-count ingestion and the joint distribution over language pairs.

Input records are pre-aggregated counts of sentence pairs per (src, tgt)
language pair, either as TSV::

    # comment
    en	fr	120000
    fr	de	5400

or as JSON ``{"pairs": [{"src": "en", "tgt": "fr", "count": 120000}, ...]}``.
"""

from __future__ import annotations

import hashlib
import json
import re
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Literal

import numpy as np

from .errors import InputError

__all__ = [
    "CorpusStats",
    "JointDistribution",
    "LanguageIndex",
    "filter_min_pairs",
    "joint_from_dict",
    "joint_to_dict",
    "load_marginal_override",
    "load_stats",
    "marginals",
    "parse_pair_counts",
    "parse_pair_json",
    "stats_from_dict",
    "stats_to_dict",
    "symmetrize",
    "to_joint",
]

Directedness = Literal["directed", "symmetrized"]

_CODE_RE = re.compile(r"^[a-z0-9][a-z0-9_\-]*$")


@dataclass(frozen=True)
class LanguageIndex:
    """Canonical (sorted, unique) ordering of language codes."""

    codes: tuple[str, ...]

    def __post_init__(self):
        if not self.codes:
            raise InputError("language index is empty")
        for code in self.codes:
            if not _CODE_RE.match(code):
                raise InputError(f"invalid language code {code!r}")
        if list(self.codes) != sorted(set(self.codes)):
            raise InputError("language codes must be unique and sorted")

    @classmethod
    def from_codes(cls, codes: Iterable[str]) -> LanguageIndex:
        return cls(tuple(sorted(set(codes))))

    @property
    def size(self) -> int:
        return len(self.codes)

    def __len__(self) -> int:
        return len(self.codes)

    def position(self, code: str) -> int:
        try:
            return self._positions[code]
        except KeyError:
            raise InputError(f"unknown language code {code!r}") from None

    @property
    def _positions(self) -> dict[str, int]:
        # cached lazily; object.__setattr__ because the dataclass is frozen
        try:
            return self.__dict__["_pos"]
        except KeyError:
            pos = {c: i for i, c in enumerate(self.codes)}
            object.__setattr__(self, "_pos", pos)
            return pos


@dataclass(frozen=True)
class CorpusStats:
    """Validated per-pair counts.

    For ``symmetrized`` stats each unordered pair is stored once, keyed with
    the lexicographically smaller code first.
    """

    index: LanguageIndex
    counts: Mapping[tuple[str, str], int]
    directedness: Directedness = "directed"
    provenance: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if self.directedness not in ("directed", "symmetrized"):
            raise InputError(f"unknown directedness {self.directedness!r}")
        known = set(self.index.codes)
        positive = False
        for (src, tgt), n in self.counts.items():
            if src == tgt:
                raise InputError(f"self-pair {src}-{tgt}")
            if src not in known or tgt not in known:
                raise InputError(f"pair {src}-{tgt} references unindexed language")
            if self.directedness == "symmetrized" and not src < tgt:
                raise InputError(f"symmetrized pair {src}-{tgt} not in canonical order")
            if not isinstance(n, (int, np.integer)) or n < 0:
                raise InputError(f"count for {src}-{tgt} must be a non-negative integer")
            positive = positive or n > 0
        if not positive:
            raise InputError("corpus has no positive counts")
        object.__setattr__(self, "counts", MappingProxyType(dict(self.counts)))
        object.__setattr__(self, "provenance", MappingProxyType(dict(self.provenance)))

    @property
    def total(self) -> int:
        return int(sum(self.counts.values()))

    @property
    def num_pairs(self) -> int:
        return sum(1 for n in self.counts.values() if n > 0)

    def count(self, src: str, tgt: str) -> int:
        if self.directedness == "symmetrized" and tgt < src:
            src, tgt = tgt, src
        return self.counts.get((src, tgt), 0)


@dataclass(frozen=True, eq=False)
class JointDistribution:
    """Dense L x L matrix of pair probabilities with an all-zero diagonal."""

    index: LanguageIndex
    q: np.ndarray
    directedness: Directedness = "directed"
    provenance: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        q = np.array(self.q, dtype=np.float64)
        n = self.index.size
        if q.shape != (n, n):
            raise InputError(f"matrix shape {q.shape} does not match {n} languages")
        if not np.all(np.isfinite(q)) or np.any(q < 0):
            raise InputError("joint distribution entries must be finite and non-negative")
        if np.any(np.diag(q) != 0):
            raise InputError("joint distribution diagonal must be zero")
        if abs(q.sum() - 1.0) > 1e-12:
            raise InputError(f"joint distribution sums to {q.sum()!r}, expected 1")
        q.setflags(write=False)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "provenance", MappingProxyType(dict(self.provenance)))

    @property
    def support(self) -> np.ndarray:
        return self.q > 0


def _digest(data: bytes) -> str:
    return "sha256:" + hashlib.sha256(data).hexdigest()


def _build_stats(records: Iterable[tuple[str, str, int, int]], digest: str) -> CorpusStats:
    counts: dict[tuple[str, str], int] = {}
    codes: set[str] = set()
    for src, tgt, n, _ in records:
        counts[(src, tgt)] = counts.get((src, tgt), 0) + n
        codes.update((src, tgt))
    if not counts:
        raise InputError("no pair records in input")
    return CorpusStats(
        LanguageIndex.from_codes(codes),
        counts,
        "directed",
        {"source_digest": digest, "directedness": "directed"},
    )


def _check_record(src: str, tgt: str, raw_count, line: int) -> tuple[str, str, int, int]:
    src, tgt = src.strip().lower(), tgt.strip().lower()
    for code in (src, tgt):
        if not _CODE_RE.match(code):
            raise InputError(f"invalid language code {code!r}", line)
    if src == tgt:
        raise InputError(f"self-pair {src}-{tgt}", line)
    if isinstance(raw_count, bool):
        raise InputError(f"count {raw_count!r} is not an integer", line)
    if isinstance(raw_count, int):
        n = raw_count
    else:
        try:
            n = int(str(raw_count).strip())
        except ValueError:
            raise InputError(f"count {raw_count!r} is not an integer", line) from None
    if n < 0:
        raise InputError(f"negative count {n}", line)
    return src, tgt, n, line


def parse_pair_counts(text: str) -> CorpusStats:
    """Parse tab-separated ``src<TAB>tgt<TAB>count`` records into directed stats.

    Blank lines and lines starting with ``#`` are skipped. Duplicate pairs
    have their counts summed.
    """
    records = []
    for line_no, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        fields = line.rstrip("\r\n").split("\t")
        if len(fields) != 3:
            raise InputError(f"expected 3 tab-separated fields, got {len(fields)}", line_no)
        records.append(_check_record(*fields, line=line_no))
    if not records:
        raise InputError("empty input: no pair records")
    return _build_stats(records, _digest(text.encode("utf-8")))


def parse_pair_json(text: str) -> CorpusStats:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"invalid JSON: {exc.msg}", exc.lineno) from None
    pairs = doc.get("pairs") if isinstance(doc, dict) else None
    if not isinstance(pairs, list):
        raise InputError('JSON input must be an object with a "pairs" list')
    records = []
    for k, rec in enumerate(pairs, 1):
        if not isinstance(rec, dict) or not {"src", "tgt", "count"} <= rec.keys():
            raise InputError(f"pair record {k} needs src, tgt and count")
        records.append(_check_record(str(rec["src"]), str(rec["tgt"]), rec["count"], line=k))
    if not records:
        raise InputError("empty input: no pair records")
    return _build_stats(records, _digest(text.encode("utf-8")))


def filter_min_pairs(
    stats: CorpusStats, min_count: int, mode: Literal["pair", "language"] = "pair"
) -> CorpusStats:
    """Drop low-resource entries and any languages left without pairs.

    ``mode="pair"`` removes each pair whose count is below ``min_count``.
    ``mode="language"`` removes every language whose total count across all
    its pairs is below ``min_count``, together with its pairs.
    """
    if min_count < 0:
        raise InputError("min_count must be >= 0")
    if mode == "pair":
        kept = {k: n for k, n in stats.counts.items() if n >= min_count}
    elif mode == "language":
        per_lang = dict.fromkeys(stats.index.codes, 0)
        for (src, tgt), n in stats.counts.items():
            per_lang[src] += n
            per_lang[tgt] += n
        ok = {c for c, n in per_lang.items() if n >= min_count}
        kept = {k: n for k, n in stats.counts.items() if k[0] in ok and k[1] in ok}
    else:
        raise InputError(f"unknown filter mode {mode!r}")
    if not any(n > 0 for n in kept.values()):
        raise InputError(f"all pairs filtered out at min_count={min_count}: empty corpus")
    codes = {c for pair in kept for c in pair}
    prov = dict(stats.provenance)
    prov.update(min_pairs=min_count, filter_mode=mode)
    return CorpusStats(LanguageIndex.from_codes(codes), kept, stats.directedness, prov)


def symmetrize(stats: CorpusStats) -> CorpusStats:
    """Fold both directions of every pair into one unordered count."""
    if stats.directedness != "directed":
        raise InputError("symmetrize expects directed stats")
    out: dict[tuple[str, str], int] = {}
    for (src, tgt), n in stats.counts.items():
        key = (src, tgt) if src < tgt else (tgt, src)
        out[key] = out.get(key, 0) + n
    prov = dict(stats.provenance)
    prov["directedness"] = "symmetrized"
    return CorpusStats(stats.index, out, "symmetrized", prov)


def to_joint(stats: CorpusStats) -> JointDistribution:
    """Normalize counts into the joint probability matrix.

    Symmetrized counts are split evenly over both orientations so the matrix
    is symmetric and still sums to one.
    """
    total = stats.total
    if total <= 0:
        raise InputError("total count is zero")
    n = stats.index.size
    q = np.zeros((n, n))
    pos = stats.index.position
    if stats.directedness == "directed":
        for (src, tgt), c in stats.counts.items():
            q[pos(src), pos(tgt)] = c / total
    else:
        for (src, tgt), c in stats.counts.items():
            i, j = pos(src), pos(tgt)
            q[i, j] = q[j, i] = c / (2 * total)
    # absorb the last-ulp rounding so the sum-to-one invariant is tight
    q /= q.sum()
    return JointDistribution(stats.index, q, stats.directedness, stats.provenance)


def marginals(joint: JointDistribution | np.ndarray) -> np.ndarray:
    """Per-language mass p_i = sum_j (q_ij + q_ji) / 2."""
    q = joint.q if isinstance(joint, JointDistribution) else np.asarray(joint, dtype=np.float64)
    p = (q.sum(axis=1) + q.sum(axis=0)) / 2.0
    return p / p.sum()


def load_marginal_override(text: str, index: LanguageIndex) -> np.ndarray:
    """Read ``code<TAB>weight`` lines (e.g. monolingual corpus sizes) into a
    simplex vector ordered by ``index``. Languages not listed get weight 0."""
    p = np.zeros(index.size)
    for line_no, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 2:
            raise InputError("expected code<TAB>weight", line_no)
        code = fields[0].strip().lower()
        try:
            w = float(fields[1])
        except ValueError:
            raise InputError(f"weight {fields[1]!r} is not a number", line_no) from None
        if not np.isfinite(w) or w < 0:
            raise InputError(f"weight must be finite and >= 0, got {w}", line_no)
        if code not in index.codes:
            raise InputError(f"language {code!r} is not in the corpus", line_no)
        p[index.position(code)] += w
    if p.sum() <= 0:
        raise InputError("marginal override has no positive weight")
    return p / p.sum()


# ---------------------------------------------------------------- serialization


def stats_to_dict(stats: CorpusStats) -> dict:
    pairs = [
        {"src": s, "tgt": t, "count": int(n)}
        for (s, t), n in sorted(stats.counts.items())
    ]
    return {
        "kind": "corpus_stats",
        "codes": list(stats.index.codes),
        "directedness": stats.directedness,
        "pairs": pairs,
        "provenance": dict(stats.provenance),
    }


def stats_from_dict(doc: Mapping) -> CorpusStats:
    try:
        index = LanguageIndex(tuple(doc["codes"]))
        counts = {(p["src"], p["tgt"]): int(p["count"]) for p in doc["pairs"]}
        return CorpusStats(index, counts, doc.get("directedness", "directed"), doc.get("provenance", {}))
    except (KeyError, TypeError) as exc:
        raise InputError(f"malformed corpus stats document: {exc}") from None


def load_stats(path: str | Path) -> CorpusStats:
    """Load a stats artifact, a JSON pair list, or a TSV pair-count file."""
    text = Path(path).read_text(encoding="utf-8")
    if text.lstrip().startswith("{"):
        doc = json.loads(text)
        if doc.get("kind") == "corpus_stats":
            return stats_from_dict(doc)
        return parse_pair_json(text)
    return parse_pair_counts(text)


def joint_to_dict(joint: JointDistribution) -> dict:
    n = joint.index.size
    entries = [[i, j, float(joint.q[i, j])] for i in range(n) for j in range(n) if joint.q[i, j] > 0]
    return {
        "kind": "joint_distribution",
        "codes": list(joint.index.codes),
        "directedness": joint.directedness,
        "entries": entries,
        "provenance": dict(joint.provenance),
    }


def joint_from_dict(doc: Mapping) -> JointDistribution:
    index = LanguageIndex(tuple(doc["codes"]))
    q = np.zeros((index.size, index.size))
    for i, j, v in doc["entries"]:
        q[int(i), int(j)] = float(v)
    return JointDistribution(index, q, doc.get("directedness", "directed"), doc.get("provenance", {}))
