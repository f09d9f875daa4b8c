from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache

import pandas as pd

from .ingest import parse_species
from .models import DataError, ProteinMap, QuantMatrix, RollupLevel

LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class ProteinElements:
    protein: str
    level: RollupLevel
    elements: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.elements:
            raise DataError(f"Protein {self.protein} has no elements")
        if self.level is RollupLevel.PROTEIN and self.elements != (self.protein,):
            raise DataError("Protein-level elements must be the protein itself")

    @property
    def K(self) -> int:
        return len(self.elements)


@lru_cache(maxsize=65536)
def _sequence_of_species(key: str) -> str:
    return parse_species(key).sequence


def entity_sequence(entity: str, level: RollupLevel) -> str:
    if level is RollupLevel.SPECIES:
        return _sequence_of_species(entity)
    if level is RollupLevel.PEPTIDE:
        return entity
    raise DataError("Protein-level entities have no single sequence")


def _parent_pairs(
    entities: list[str], source: RollupLevel, target: RollupLevel, pm: ProteinMap
) -> list[tuple[str, str]]:
    pairs: list[tuple[str, str]] = []
    orphans: set[str] = set()
    for entity in entities:
        sequence = entity_sequence(entity, source)
        if target is RollupLevel.PEPTIDE:
            pairs.append((entity, sequence))
            continue
        proteins = pm.proteins_for(sequence)
        if not proteins:
            orphans.add(sequence)
        pairs.extend((entity, protein) for protein in sorted(proteins))
    if orphans:
        raise DataError(f"Sequences without protein mapping: {', '.join(sorted(orphans))}")
    return pairs


def rollup_matrix(m: QuantMatrix, target: RollupLevel, pm: ProteinMap) -> QuantMatrix:
    """Sum entities into their parents; a parent with every constituent missing stays missing."""
    if target < m.level:
        raise DataError(f"Cannot roll {m.level.value} down to {target.value}")
    if target is m.level:
        return m.with_values(m.values.copy())
    pairs = _parent_pairs(m.entities, m.level, target, pm)
    if not pairs:
        empty = pd.DataFrame(index=pd.Index([], dtype=object), columns=m.values.columns, dtype=float)
        return m.with_values(empty, level=target)
    children, parents = zip(*pairs)
    expanded = m.values.loc[list(children)]
    expanded.index = pd.Index(parents, dtype=object)
    rolled = expanded.groupby(level=0, sort=True).sum(min_count=1)
    rolled.index = pd.Index([str(item) for item in rolled.index], dtype=object)
    LOGGER.debug(
        "Rollup measure=%s from=%s to=%s entities=%d parents=%d",
        m.measure.value,
        m.level.value,
        target.value,
        len(m.values),
        len(rolled),
    )
    return m.with_values(rolled, level=target)


def protein_elements(
    pm: ProteinMap, m: QuantMatrix, level: RollupLevel
) -> list[ProteinElements]:
    if level is not m.level:
        raise DataError(f"Matrix is at {m.level.value} level, not {level.value}")
    if level is RollupLevel.PROTEIN:
        return [ProteinElements(entity, level, (entity,)) for entity in sorted(m.entities)]
    members: dict[str, list[str]] = {}
    for entity in m.entities:
        for protein in pm.proteins_for(entity_sequence(entity, level)):
            members.setdefault(protein, []).append(entity)
    return [
        ProteinElements(protein, level, tuple(sorted(elements)))
        for protein, elements in sorted(members.items())
    ]
