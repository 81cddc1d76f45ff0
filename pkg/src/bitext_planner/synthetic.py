"""Synthetic corpora and loss models for demos and tests."""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from .corpus import CorpusStats, LanguageIndex
from .dro import LossTrace, Pair
from .errors import InputError

__all__ = ["GroupLossModel", "make_loss_model", "power_law_corpus"]


def power_law_corpus(
    n_languages: int = 100,
    density: float = 0.5,
    scale: float = 1e9,
    seed: int = 0,
) -> CorpusStats:
    """Pair counts proportional to 1 / (rank_i * rank_j).

    Language ``l000`` (rank 1) is the hub and pairs with every other
    language; each non-hub pair is kept with probability ``density``.
    """
    if n_languages < 3:
        raise InputError("need at least 3 languages")
    if not 0 < density <= 1:
        raise InputError("density must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    width = max(3, len(str(n_languages - 1)))
    codes = [f"l{i:0{width}d}" for i in range(n_languages)]
    keep = rng.random((n_languages, n_languages)) < density
    counts = {}
    for i in range(n_languages):
        for j in range(i + 1, n_languages):
            if i == 0 or keep[i, j]:
                n = int(scale / ((i + 1) * (j + 1)))
                if n > 0:
                    counts[(codes[i], codes[j])] = n
    return CorpusStats(
        LanguageIndex.from_codes(codes),
        counts,
        "directed",
        {"source": f"power_law(n={n_languages}, density={density}, scale={scale}, seed={seed})"},
    )


class GroupLossModel:
    """Per-pair losses by group: trivial (near-duplicate) pairs are easy,
    noisy (misaligned) pairs are hard, everything else sits in between.

    With ``adaptation > 0`` a pair's loss shrinks as it is sampled more than
    under the base distribution: l_i = level_i * (q_i / p_i)^adaptation.
    """

    def __init__(
        self,
        pairs: Sequence[Pair],
        base: np.ndarray,
        trivial: Sequence[Pair] = (),
        noisy: Sequence[Pair] = (),
        trivial_loss: float = 0.1,
        normal_loss: float = 1.0,
        noisy_loss: float = 2.0,
        adaptation: float = 0.0,
        lam: float = 1.0,
    ):
        self.pairs = list(pairs)
        self.base = np.asarray(base, dtype=np.float64)
        known = set(self.pairs)
        self.trivial = [tuple(p) for p in trivial]
        self.noisy = [tuple(p) for p in noisy]
        if not set(self.trivial) | set(self.noisy) <= known:
            raise InputError("group pairs must belong to the support")
        if set(self.trivial) & set(self.noisy):
            raise InputError("a pair cannot be both trivial and noisy")
        level = np.full(len(self.pairs), float(normal_loss))
        pos = {p: i for i, p in enumerate(self.pairs)}
        for p in self.trivial:
            level[pos[p]] = trivial_loss
        for p in self.noisy:
            level[pos[p]] = noisy_loss
        self.level = level
        self.adaptation = adaptation
        self.lam = lam

    def __call__(self, round_index: int, distribution: np.ndarray, steps: int) -> LossTrace:
        loss = self.level.copy()
        if self.adaptation:
            ratio = np.clip(self.base / np.maximum(distribution, 1e-300), 0.0, 1e6)
            loss = loss * ratio**self.adaptation
        # the split between the two losses is arbitrary; keep the combined value
        ld = loss / (1.0 + self.lam) if self.lam else loss
        lg = ld.copy() if self.lam else np.zeros_like(loss)
        return LossTrace(ld, lg, self.lam)


def make_loss_model(
    name: str,
    pairs: Sequence[Pair],
    base: np.ndarray,
    group_size: int | None = None,
    seed: int = 0,
    adaptation: float = 0.0,
    lam: float = 1.0,
) -> GroupLossModel:
    """Build a named synthetic model: ``constant``, ``noisy-pair`` (noisy
    pairs only) or ``trivial-pair`` (both trivial and noisy groups).

    Groups of ``group_size`` pairs (default: a tenth of the support, at
    least one) are drawn from the support with ``seed``.
    """
    n = len(pairs)
    if group_size is None:
        group_size = max(1, n // 10)
    if name not in ("constant", "noisy-pair", "trivial-pair"):
        raise InputError(f"unknown synthetic model {name!r}")
    needed = group_size * (2 if name == "trivial-pair" else 1)
    if name != "constant" and needed >= n:
        raise InputError(f"support of {n} pairs is too small for groups of {group_size}")
    perm = np.random.default_rng(seed).permutation(n)
    noisy = trivial = ()
    if name in ("noisy-pair", "trivial-pair"):
        noisy = [pairs[i] for i in sorted(perm[:group_size])]
    if name == "trivial-pair":
        trivial = [pairs[i] for i in sorted(perm[group_size : 2 * group_size])]
    return GroupLossModel(pairs, base, trivial, noisy, adaptation=adaptation, lam=lam)
