"""Data-manipulation processes applied to a subset of sources.

FP/FL/FB flip the protected attribute, the label, or both. SP shuffles the
protected attribute within a source. OP overwrites ``a`` with ``y`` and OL
overwrites ``y`` with ``a``. RP replaces every ``(a=0, y=1)`` row by a random
``(a=0, y=0)`` row and every ``(a=1, y=0)`` row by a random ``(a=1, y=1)`` row
drawn, with replacement, from the sources the adversary does not touch.

Whenever ``a`` is also a feature, the feature copy is rewritten with it.
"""
from __future__ import annotations

from enum import Enum

import numpy as np

from .tabular import Dataset, SourceBundle, concat


class AdversaryKind(str, Enum):
    FP = "FP"
    FL = "FL"
    FB = "FB"
    SP = "SP"
    OP = "OP"
    OL = "OL"
    RP = "RP"


class AdversaryInfeasibleError(ValueError):
    pass


# (a, y) cells replaced by RP, mapped to the cell their replacements come from
RP_CELLS = {(0, 1): (0, 0), (1, 0): (1, 1)}


def _rp_pool(bundle: SourceBundle, affected: set[int]) -> Dataset | None:
    rest = [s for i, s in enumerate(bundle) if i not in affected]
    return concat(rest) if rest else None


def _rp_missing_cells(bundle: SourceBundle, affected: set[int]) -> list[tuple[int, int]]:
    pool = _rp_pool(bundle, affected)
    missing = []
    for bad, good in RP_CELLS.items():
        demand = any(((s.protected == bad[0]) & (s.labels == bad[1])).any()
                     for i, s in enumerate(bundle) if i in affected)
        supply = pool is not None and ((pool.protected == good[0]) & (pool.labels == good[1])).any()
        if demand and not supply:
            missing.append(good)
    return missing


def adversary_feasible(kind, bundle: SourceBundle, affected) -> bool:
    kind = AdversaryKind(kind)
    if kind is not AdversaryKind.RP:
        return True
    return not _rp_missing_cells(bundle, set(affected))


def _resample(src: Dataset, pool: Dataset, rng: np.random.Generator) -> Dataset:
    X, y, a = src.features.copy(), src.labels.copy(), src.protected.copy()
    for (a_bad, y_bad), (a_good, y_good) in RP_CELLS.items():
        rows = np.flatnonzero((a == a_bad) & (y == y_bad))
        if rows.size == 0:
            continue
        candidates = np.flatnonzero((pool.protected == a_good) & (pool.labels == y_good))
        picks = candidates[rng.integers(0, candidates.size, rows.size)]
        X[rows], y[rows], a[rows] = pool.features[picks], pool.labels[picks], pool.protected[picks]
    return Dataset(X, y, a, src.schema)


def manipulate(kind: AdversaryKind, src: Dataset, rng: np.random.Generator,
               pool: Dataset | None = None) -> Dataset:
    if kind is AdversaryKind.FP:
        return src.with_protected(1 - src.protected)
    if kind is AdversaryKind.FL:
        return src.with_labels(1 - src.labels)
    if kind is AdversaryKind.FB:
        return src.with_protected(1 - src.protected).with_labels(1 - src.labels)
    if kind is AdversaryKind.SP:
        return src.with_protected(rng.permutation(src.protected))
    if kind is AdversaryKind.OP:
        return src.with_protected(src.labels)
    if kind is AdversaryKind.OL:
        return src.with_labels(src.protected)
    return _resample(src, pool, rng)


def apply_adversary(kind, bundle: SourceBundle, affected, seed: int) -> SourceBundle:
    """Return a new bundle with the ``affected`` sources manipulated by ``kind``."""
    kind = AdversaryKind(kind)
    affected = sorted(set(int(i) for i in affected))
    if any(i < 0 or i >= len(bundle) for i in affected):
        raise IndexError(f"affected indices {affected} out of range for {len(bundle)} sources")
    pool = None
    if kind is AdversaryKind.RP:
        missing = _rp_missing_cells(bundle, set(affected))
        if missing:
            cells = ", ".join(f"(a={c[0]}, y={c[1]})" for c in missing)
            raise AdversaryInfeasibleError(f"RP: no replacement rows for cell(s) {cells}")
        pool = _rp_pool(bundle, set(affected))

    children = np.random.SeedSequence(seed).spawn(len(bundle))
    sources = list(bundle.sources)
    for i in affected:
        sources[i] = manipulate(kind, sources[i], np.random.default_rng(children[i]), pool)
    flags = list(bundle.clean_flags or (True,) * len(bundle))
    for i in affected:
        flags[i] = False
    return SourceBundle(tuple(sources), tuple(flags))
