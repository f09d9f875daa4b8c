"""Rank statistics for differential abundance.

``w`` rescales the Wilcoxon rank sum of the case group onto [-1, 1]; a
protein's ``tau`` is the mean ``w`` of its elements at a rollup level.
Significance comes from relabelling samples while keeping group sizes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from itertools import combinations
from math import comb
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import rankdata

from .models import DataError, Direction, Measure, ProteinMap, QuantMatrix, RollupLevel
from .rollup import protein_elements

LOGGER = logging.getLogger(__name__)

TIE_TOLERANCE = 1e-12
PERMUTATION_CHUNK = 256
SPEARMAN_PERMUTATIONS = 10_000


class UndefinedStatistic(DataError):
    pass


@dataclass(frozen=True)
class WilcoxonResult:
    W: float
    w: float
    n: int
    m: int


@dataclass(frozen=True)
class TauResult:
    protein: str
    level: RollupLevel
    measure: Measure
    K: int
    tau: float
    p_value: float
    q_value: float
    direction: Direction


def _scaled(W, n, m):
    return (2.0 * W - n * (n + m + 1.0)) / (n * m)


def wilcoxon_w(
    case_values: Iterable[float],
    control_values: Iterable[float],
    missing_as_zero: bool = False,
) -> WilcoxonResult:
    """Scaled rank sum of the case group.

    Missing values (NaN) are dropped unless ``missing_as_zero`` is set, which
    is how spectral counts treat an unobserved species.
    """
    case = np.asarray(list(case_values), dtype=float)
    control = np.asarray(list(control_values), dtype=float)
    if missing_as_zero:
        case = np.nan_to_num(case, nan=0.0)
        control = np.nan_to_num(control, nan=0.0)
    else:
        case = case[~np.isnan(case)]
        control = control[~np.isnan(control)]
    n, m = case.size, control.size
    if n == 0 or m == 0:
        raise UndefinedStatistic(f"Wilcoxon statistic needs both groups (n={n}, m={m})")
    ranks = rankdata(np.concatenate([case, control]))
    W = float(ranks[:n].sum())
    return WilcoxonResult(W=W, w=float(_scaled(W, n, m)), n=n, m=m)


def tau(elements: Sequence[float]) -> float:
    if len(elements) == 0:
        raise UndefinedStatistic("tau needs at least one element")
    return float(np.mean(np.asarray(elements, dtype=float)))


def _prepared(m: QuantMatrix) -> np.ndarray:
    values = m.values.to_numpy(dtype=float)
    if m.measure is Measure.SPECTRAL_COUNT:
        return np.nan_to_num(values, nan=0.0)
    return values


def element_w(m: QuantMatrix) -> dict[str, WilcoxonResult]:
    """Per-entity w over the case/control columns; undefined elements are left out."""
    values = _prepared(m)
    case = [m.samples.index(sample) for sample in m.case_samples]
    control = [m.samples.index(sample) for sample in m.control_samples]
    results: dict[str, WilcoxonResult] = {}
    for entity, row in zip(m.entities, values):
        try:
            results[entity] = wilcoxon_w(row[case], row[control])
        except UndefinedStatistic:
            continue
    return results


class _TauEngine:
    """Vectorised tau for many case labellings at once.

    Element ranks do not depend on the labelling, so rank sums for a batch of
    labellings reduce to one matrix product.
    """

    def __init__(self, values: np.ndarray, membership: np.ndarray):
        present = ~np.isnan(values)
        self.presence = present.astype(float)
        self.ranks = np.zeros_like(values)
        for row in range(values.shape[0]):
            mask = present[row]
            if mask.any():
                self.ranks[row, mask] = rankdata(values[row, mask])
        self.totals = self.presence.sum(axis=1)
        self.membership = membership

    def taus(self, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        labels = np.atleast_2d(labels).astype(float)
        W = labels @ self.ranks.T
        n = labels @ self.presence.T
        m = self.totals - n
        defined = (n > 0) & (m > 0)
        with np.errstate(divide="ignore", invalid="ignore"):
            w = np.where(defined, _scaled(W, n, m), 0.0)
        counts = defined.astype(float) @ self.membership
        sums = w @ self.membership
        with np.errstate(divide="ignore", invalid="ignore"):
            values = np.where(counts > 0, sums / counts, np.nan)
        return values, counts


def _membership(m: QuantMatrix, pm: ProteinMap, level: RollupLevel):
    elements = protein_elements(pm, m, level)
    position = {entity: index for index, entity in enumerate(m.entities)}
    membership = np.zeros((len(m.entities), len(elements)))
    for column, item in enumerate(elements):
        membership[[position[entity] for entity in item.elements], column] = 1.0
    return elements, membership


def _case_labels(m: QuantMatrix) -> np.ndarray:
    case = set(m.case_samples)
    return np.array([1.0 if sample in case else 0.0 for sample in m.samples])


def _relabelings(base: np.ndarray, permutations: int, seed: int, exhaustive: bool) -> np.ndarray:
    size, chosen = base.size, int(base.sum())
    if comb(size, chosen) < 2:
        raise UndefinedStatistic(
            f"Only {comb(size, chosen)} distinct relabelling of {size} samples exists"
        )
    if exhaustive:
        labels = np.zeros((comb(size, chosen), size))
        for row, indices in enumerate(combinations(range(size), chosen)):
            labels[row, list(indices)] = 1.0
        return labels
    rng = np.random.default_rng(seed)
    return np.array([rng.permutation(base) for _ in range(permutations)])


def permutation_null(
    m: QuantMatrix,
    pm: ProteinMap,
    level: RollupLevel,
    permutations: int,
    seed: int,
    exhaustive: bool = False,
) -> dict[str, tuple[float, int, float]]:
    """Observed tau, K and two-sided p-value per protein.

    Random mode uses (1 + hits) / (B + 1); exhaustive mode enumerates every
    relabelling (the observed one included) and reports hits / total.
    """
    if permutations < 1:
        raise DataError(f"Permutation count must be at least 1, got {permutations}")
    elements, membership = _membership(m, pm, level)
    if not elements:
        return {}
    engine = _TauEngine(_prepared(m), membership)
    base = _case_labels(m)
    observed, counts = engine.taus(base)
    observed, counts = observed[0], counts[0]
    labels = _relabelings(base, permutations, seed, exhaustive)

    threshold = np.abs(observed) - TIE_TOLERANCE
    hits = np.zeros(len(elements))
    for start in range(0, len(labels), PERMUTATION_CHUNK):
        null, _ = engine.taus(labels[start : start + PERMUTATION_CHUNK])
        null = np.nan_to_num(null, nan=0.0)
        hits += (np.abs(null) >= threshold).sum(axis=0)

    if exhaustive:
        p_values = hits / len(labels)
    else:
        p_values = (1.0 + hits) / (len(labels) + 1.0)
    results = {}
    for index, item in enumerate(elements):
        if np.isnan(observed[index]):
            LOGGER.debug("Protein dropped protein=%s reason=undefined tau", item.protein)
            continue
        results[item.protein] = (float(observed[index]), int(counts[index]), float(p_values[index]))
    return results


def bh_qvalues(p_values: Sequence[float]) -> list[float]:
    p = np.asarray(p_values, dtype=float)
    if p.size == 0:
        return []
    if np.any((p <= 0) | (p > 1)):
        raise DataError("p-values must lie in (0, 1]")
    order = np.argsort(p, kind="mergesort")
    ranked = p[order] * p.size / np.arange(1, p.size + 1)
    ranked = np.minimum.accumulate(ranked[::-1])[::-1]
    q = np.empty_like(p)
    q[order] = np.minimum(ranked, 1.0)
    return q.tolist()


def direction_of(value: float) -> Direction:
    if value > 0:
        return Direction.UP
    if value < 0:
        return Direction.DOWN
    return Direction.NULL


def test_proteins(
    m: QuantMatrix,
    pm: ProteinMap,
    level: RollupLevel,
    permutations: int,
    seed: int,
    exhaustive: bool = False,
) -> list[TauResult]:
    observed = permutation_null(m, pm, level, permutations, seed, exhaustive)
    proteins = sorted(observed)
    q_values = bh_qvalues([observed[protein][2] for protein in proteins])
    results = [
        TauResult(
            protein=protein,
            level=level,
            measure=m.measure,
            K=observed[protein][1],
            tau=observed[protein][0],
            p_value=observed[protein][2],
            q_value=q_value,
            direction=direction_of(observed[protein][0]),
        )
        for protein, q_value in zip(proteins, q_values)
    ]
    LOGGER.info(
        "Differential test complete measure=%s level=%s proteins=%d permutations=%d",
        m.measure.value,
        level.value,
        len(results),
        permutations,
    )
    return results


def spearman_rho(
    x: Sequence[float],
    y: Sequence[float],
    permutations: int = SPEARMAN_PERMUTATIONS,
    seed: int = 0,
) -> tuple[float, float]:
    x_values = np.asarray(x, dtype=float)
    y_values = np.asarray(y, dtype=float)
    if x_values.size != y_values.size:
        raise DataError("Spearman inputs must have equal lengths")
    if x_values.size < 3:
        raise UndefinedStatistic("Spearman correlation needs at least three pairs")
    x_ranks = rankdata(x_values)
    y_ranks = rankdata(y_values)
    if np.ptp(x_ranks) == 0 or np.ptp(y_ranks) == 0:
        raise UndefinedStatistic("Spearman correlation undefined for constant ranks")
    rho = float(np.corrcoef(x_ranks, y_ranks)[0, 1])

    x_centered = (x_ranks - x_ranks.mean()) / np.linalg.norm(x_ranks - x_ranks.mean())
    y_centered = (y_ranks - y_ranks.mean()) / np.linalg.norm(y_ranks - y_ranks.mean())
    rng = np.random.default_rng(seed)
    hits = 0
    for start in range(0, permutations, PERMUTATION_CHUNK):
        size = min(PERMUTATION_CHUNK, permutations - start)
        shuffled = rng.permuted(np.tile(y_centered, (size, 1)), axis=1)
        null = shuffled @ x_centered
        hits += int(np.sum(np.abs(null) >= abs(rho) - TIE_TOLERANCE))
    return rho, (1.0 + hits) / (permutations + 1.0)
