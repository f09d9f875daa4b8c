"""Ion-competition and sample-preparation diagnostics."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from .feature_model import TimeExtent, extent_2sigma
from .models import ClassRule, DataError, ProteinMap, QuantMatrix
from .rollup import entity_sequence

LOGGER = logging.getLogger(__name__)

W_BINS = np.round(np.linspace(-1.0, 1.0, 21), 10)
P_BINS = np.round(np.linspace(0.0, 1.0, 21), 10)


class Cohort(str, Enum):
    ZERO = "zero"
    POSITIVE = "positive"
    MISSING = "missing"


class TrypticStatus(str, Enum):
    FULLY_TRYPTIC = "fully_tryptic"
    STRICTLY_SEMI_TRYPTIC = "strictly_semi_tryptic"
    NON_TRYPTIC = "non_tryptic"

    @property
    def rank(self) -> int:
        return {"fully_tryptic": 2, "strictly_semi_tryptic": 1, "non_tryptic": 0}[self.value]


@dataclass(frozen=True)
class InterferenceRecord:
    species: str
    distance: float | None
    cohort: Cohort


@dataclass(frozen=True)
class StratumSummary:
    stratum: str
    count: int
    median: float
    histogram: tuple[int, ...]


def pairwise_distance(scored: TimeExtent, competitor: TimeExtent) -> float:
    if scored.left > competitor.right:
        return scored.left - competitor.right
    if competitor.left > scored.right:
        return competitor.left - scored.right
    return 0.0


def cohort_of(distance: float | None) -> Cohort:
    if distance is None or np.isnan(distance):
        return Cohort.MISSING
    return Cohort.ZERO if distance == 0 else Cohort.POSITIVE


def interference_distance(
    scored_features: Mapping[str, Mapping[str, TimeExtent]],
    competing_features: Mapping[str, Sequence[TimeExtent]],
    samples: Iterable[str] | None = None,
) -> list[InterferenceRecord]:
    """Mean over samples of the smallest gap to any competing feature.

    ``scored_features`` maps species to per-sample extents, ``competing_features``
    maps a sample to the competing extents observed there.  Samples lacking
    either side contribute nothing.
    """
    sample_list = sorted(competing_features) if samples is None else list(samples)
    competitors = {
        sample: (
            np.array([extent.left for extent in competing_features.get(sample, ())]),
            np.array([extent.right for extent in competing_features.get(sample, ())]),
        )
        for sample in sample_list
    }
    records = []
    for species in sorted(scored_features):
        per_sample = scored_features[species]
        gaps = []
        for sample in sample_list:
            extent = per_sample.get(sample)
            lefts, rights = competitors[sample]
            if extent is None or lefts.size == 0:
                continue
            gap = np.maximum.reduce(
                [extent.left - rights, lefts - extent.right, np.zeros_like(lefts)]
            )
            gaps.append(float(gap.min()))
        distance = float(np.mean(gaps)) if gaps else None
        records.append(InterferenceRecord(species, distance, cohort_of(distance)))
    return records


def cohort_counts(records: Iterable[InterferenceRecord]) -> dict[Cohort, int]:
    counts = {cohort: 0 for cohort in Cohort}
    for record in records:
        counts[record.cohort] += 1
    return counts


def positive_cohort_distances(records: Iterable[InterferenceRecord]) -> dict[str, float]:
    distances = np.array(
        [record.distance for record in records if record.cohort is Cohort.POSITIVE]
    )
    if distances.size == 0:
        return {"count": 0}
    quartiles = np.percentile(distances, [0, 25, 50, 75, 100])
    return {
        "count": int(distances.size),
        "min": float(quartiles[0]),
        "q1": float(quartiles[1]),
        "median": float(quartiles[2]),
        "q3": float(quartiles[3]),
        "max": float(quartiles[4]),
        "mean": float(distances.mean()),
    }


def classify_tryptic(
    sequence: str, parent_sequence: str, start: int, proline_rule: bool = True
) -> TrypticStatus:
    end = start - 1 + len(sequence)
    if start < 1 or parent_sequence[start - 1 : end] != sequence:
        raise DataError(f"{sequence} does not occur at position {start} of its protein")
    n_tryptic = start == 1 or (
        parent_sequence[start - 2] in "KR" and not (proline_rule and sequence[0] == "P")
    )
    c_tryptic = end == len(parent_sequence) or (
        sequence[-1] in "KR" and not (proline_rule and parent_sequence[end] == "P")
    )
    if n_tryptic and c_tryptic:
        return TrypticStatus.FULLY_TRYPTIC
    if n_tryptic or c_tryptic:
        return TrypticStatus.STRICTLY_SEMI_TRYPTIC
    return TrypticStatus.NON_TRYPTIC


def _occurrences(sequence: str, parent: str) -> Iterable[int]:
    index = parent.find(sequence)
    while index >= 0:
        yield index + 1
        index = parent.find(sequence, index + 1)


def species_statuses(
    sequences: Iterable[str],
    proteins: Mapping[str, str],
    pm: ProteinMap,
    proline_rule: bool = True,
) -> dict[str, TrypticStatus]:
    """Most tryptic status over every occurrence in every mapped protein."""
    statuses: dict[str, TrypticStatus] = {}
    unplaced = []
    for sequence in sorted(set(sequences)):
        best: TrypticStatus | None = None
        for accession in sorted(pm.proteins_for(sequence)):
            parent = proteins.get(accession, "")
            for start in _occurrences(sequence, parent):
                status = classify_tryptic(sequence, parent, start, proline_rule)
                if best is None or status.rank > best.rank:
                    best = status
        if best is None:
            unplaced.append(sequence)
        else:
            statuses[sequence] = best
    if unplaced:
        LOGGER.warning(
            "Sequences not found in mapped proteins count=%d first=%s",
            len(unplaced),
            unplaced[0],
        )
    return statuses


def semi_tryptic_profile(
    m: QuantMatrix, statuses: Mapping[str, TrypticStatus]
) -> pd.DataFrame:
    semi = np.array(
        [
            statuses.get(entity_sequence(entity, m.level)) is TrypticStatus.STRICTLY_SEMI_TRYPTIC
            for entity in m.entities
        ],
        dtype=bool,
    )
    values = m.values
    totals = values.sum(axis=0, skipna=True)
    semi_values = values.loc[semi]
    semi_sums = semi_values.sum(axis=0, skipna=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        fractions = np.where(totals > 0, semi_sums / totals, 0.0)
    return pd.DataFrame(
        {
            "sample_id": m.samples,
            "semi_count": (semi_values > 0).sum(axis=0).astype(int).to_numpy(),
            "semi_abundance_fraction": fractions,
        }
    )


def w_histogram(values: Sequence[float]) -> tuple[int, ...]:
    counts, _ = np.histogram(np.asarray(values, dtype=float), bins=W_BINS)
    return tuple(int(count) for count in counts)


def stratified_w(
    w_values: Mapping[str, float],
    strata: Mapping[str, str],
    order: Sequence[str] | None = None,
) -> list[StratumSummary]:
    labels = list(order) if order is not None else sorted(set(strata.values()))
    grouped: dict[str, list[float]] = {label: [] for label in labels}
    for entity, value in w_values.items():
        label = strata.get(entity)
        if label is None:
            raise DataError(f"Entity {entity} has no stratum")
        grouped.setdefault(label, []).append(value)
    summaries = []
    for label, values in grouped.items():
        if not values:
            LOGGER.info("Stratum omitted stratum=%s reason=empty", label)
            continue
        summaries.append(
            StratumSummary(label, len(values), float(np.median(values)), w_histogram(values))
        )
    return summaries


def summaries_frame(summaries: Sequence[StratumSummary], family: str) -> pd.DataFrame:
    rows = [
        {
            "family": family,
            "stratum": summary.stratum,
            "bin_low": W_BINS[index],
            "bin_high": W_BINS[index + 1],
            "count": count,
        }
        for summary in summaries
        for index, count in enumerate(summary.histogram)
    ]
    return pd.DataFrame(rows, columns=["family", "stratum", "bin_low", "bin_high", "count"])


def abundance_strata(m: QuantMatrix, samples: Sequence[str]) -> dict[str, str]:
    """Low/high split at the median row total over ``samples``, normally the control class."""
    totals = m.values[list(samples)].sum(axis=1, skipna=True)
    median = float(totals.median()) if len(totals) else 0.0
    return {
        str(entity): "low" if total <= median else "high"
        for entity, total in totals.items()
    }


def missingness_strata(
    m: QuantMatrix, samples: Sequence[str], split: int | None = None
) -> dict[str, str]:
    """Bins entities by how many of ``samples`` miss them, normally the control class."""
    size = len(samples)
    split = (size + 1) // 2 if split is None else split
    missing = m.values[list(samples)].isna().sum(axis=1)
    low, high = f"0-{split - 1}", f"{split}-{size}"
    return {str(entity): low if count < split else high for entity, count in missing.items()}


def cohort_strata(records: Iterable[InterferenceRecord]) -> dict[str, str]:
    return {record.species: record.cohort.value for record in records}


def pvalue_histogram(results: Sequence, rule: ClassRule) -> pd.DataFrame:
    """Binned p-values of foreground proteins; background and other proteins are left out."""
    p_values = [result.p_value for result in results if rule.label(result.protein) == "foreground"]
    counts, _ = np.histogram(np.asarray(p_values, dtype=float), bins=P_BINS)
    return pd.DataFrame(
        {"bin_low": P_BINS[:-1], "bin_high": P_BINS[1:], "count": counts.astype(int)},
        columns=["bin_low", "bin_high", "count"],
    )


def species_classes(
    entities: Iterable[str], level, pm: ProteinMap, rule: ClassRule
) -> dict[str, str]:
    """Background wins when any mapped protein is background."""
    classes = {}
    for entity in entities:
        labels = {rule.label(protein) for protein in pm.proteins_for(entity_sequence(entity, level))}
        if "background" in labels:
            classes[entity] = "background"
        elif "foreground" in labels:
            classes[entity] = "foreground"
        else:
            classes[entity] = "other"
    return classes


def extents_by_class(
    fits: Iterable, classes: Mapping[str, str], runs: Iterable[str]
) -> tuple[dict[str, dict[str, TimeExtent]], dict[str, list[TimeExtent]]]:
    """Split successful fits of ``runs`` into foreground per-species and background per-run extents."""
    wanted = set(runs)
    foreground: dict[str, dict[str, TimeExtent]] = {}
    background: dict[str, list[TimeExtent]] = {run: [] for run in sorted(wanted)}
    for record in fits:
        if record.run not in wanted or not record.successful:
            continue
        extent = extent_2sigma(record.result.params)
        label = classes.get(record.species)
        if label == "foreground":
            foreground.setdefault(record.species, {})[record.run] = extent
        elif label == "background":
            background[record.run].append(extent)
    return foreground, background
