from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping

import numpy as np
import pandas as pd


AMINO_ACIDS = frozenset("ACDEFGHIKLMNPQRSTVWY")
MASS_DECIMALS = 3
MASS_TOLERANCE = 5e-4
RUN_SEPARATOR = "__"


class DataError(ValueError):
    """Malformed, inconsistent or insufficient input data."""


class ConfigError(ValueError):
    """Invalid configuration or command-line usage."""


class Measure(str, Enum):
    SPECTRAL_COUNT = "count"
    ION_ABUNDANCE = "abundance"


class RollupLevel(str, Enum):
    SPECIES = "species"
    PEPTIDE = "peptide"
    PROTEIN = "protein"

    @property
    def rank(self) -> int:
        return _LEVEL_ORDER.index(self)

    def __lt__(self, other: object) -> bool:
        if not isinstance(other, RollupLevel):
            return NotImplemented
        return self.rank < other.rank

    def __le__(self, other: object) -> bool:
        if not isinstance(other, RollupLevel):
            return NotImplemented
        return self.rank <= other.rank


_LEVEL_ORDER = (RollupLevel.SPECIES, RollupLevel.PEPTIDE, RollupLevel.PROTEIN)


class Group(str, Enum):
    CASE = "case"
    CONTROL = "control"


def run_label(sample_id: str, replicate_id: str) -> str:
    return f"{sample_id}{RUN_SEPARATOR}{replicate_id}"


def split_run_label(label: str) -> tuple[str, str]:
    sample_id, separator, replicate_id = label.rpartition(RUN_SEPARATOR)
    if not separator or not sample_id or not replicate_id:
        raise DataError(f"Invalid run label: {label!r}")
    return sample_id, replicate_id


@dataclass(frozen=True, order=True)
class Modification:
    position: int
    mass: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "mass", round(float(self.mass), MASS_DECIMALS))

    def same_as(self, other: "Modification") -> bool:
        return (
            self.position == other.position
            and abs(self.mass - other.mass) <= MASS_TOLERANCE
        )


@dataclass(frozen=True, order=True)
class SpeciesKey:
    sequence: str
    modifications: tuple[Modification, ...] = ()
    charge: int = 1

    def __post_init__(self) -> None:
        if not self.sequence:
            raise DataError("Species sequence cannot be empty")
        invalid = sorted(set(self.sequence) - AMINO_ACIDS)
        if invalid:
            raise DataError(
                f"Species sequence {self.sequence!r} contains non-amino-acid letters: "
                f"{''.join(invalid)}"
            )
        if self.charge < 1:
            raise DataError(f"Species charge must be at least 1, got {self.charge}")
        modifications = tuple(self.modifications)
        previous = 0
        for modification in modifications:
            if not 1 <= modification.position <= len(self.sequence):
                raise DataError(
                    f"Modification position {modification.position} outside "
                    f"{self.sequence!r}"
                )
            if modification.position <= previous:
                raise DataError("Modification positions must be strictly increasing")
            previous = modification.position
        object.__setattr__(self, "modifications", modifications)

    def render(self) -> str:
        by_position = {item.position: item.mass for item in self.modifications}
        parts: list[str] = []
        for index, residue in enumerate(self.sequence, start=1):
            parts.append(residue)
            if index in by_position:
                parts.append(f"[{by_position[index]:.{MASS_DECIMALS}f}]")
        return f"{''.join(parts)}+{self.charge}"

    def __str__(self) -> str:
        return self.render()


@dataclass(frozen=True)
class Identification:
    sample_id: str
    replicate_id: str
    species: SpeciesKey
    retention_time: float
    precursor_mz: float
    fdr: float

    def __post_init__(self) -> None:
        if not self.sample_id or not self.replicate_id:
            raise DataError("Identification requires sample_id and replicate_id")
        if not np.isfinite(self.retention_time) or self.retention_time < 0:
            raise DataError(f"retention_time must be >= 0, got {self.retention_time}")
        if not np.isfinite(self.precursor_mz) or self.precursor_mz <= 0:
            raise DataError(f"precursor_mz must be > 0, got {self.precursor_mz}")
        if not 0.0 <= self.fdr <= 1.0:
            raise DataError(f"fdr must be within [0, 1], got {self.fdr}")

    @property
    def run(self) -> str:
        return run_label(self.sample_id, self.replicate_id)


@dataclass(frozen=True, eq=False)
class Raster:
    """Sparse LC-MS points of one run, sorted by (time, mz)."""

    sample_id: str
    replicate_id: str
    times: np.ndarray
    mzs: np.ndarray
    intensities: np.ndarray

    @classmethod
    def from_arrays(
        cls,
        sample_id: str,
        replicate_id: str,
        times: Iterable[float],
        mzs: Iterable[float],
        intensities: Iterable[float],
    ) -> "Raster":
        time_values = np.asarray(times, dtype=float).ravel()
        mz_values = np.asarray(mzs, dtype=float).ravel()
        intensity_values = np.asarray(intensities, dtype=float).ravel()
        if not time_values.size == mz_values.size == intensity_values.size:
            raise DataError("Raster arrays must have equal lengths")
        if not (
            np.all(np.isfinite(time_values))
            and np.all(np.isfinite(mz_values))
            and np.all(np.isfinite(intensity_values))
        ):
            raise DataError("Raster values must be finite")
        if np.any(intensity_values < 0):
            raise DataError("Raster intensities must be nonnegative")
        order = np.lexsort((mz_values, time_values))
        time_values = time_values[order]
        mz_values = mz_values[order]
        intensity_values = intensity_values[order]
        if time_values.size > 1:
            repeated = (np.diff(time_values) == 0) & (np.diff(mz_values) == 0)
            if np.any(repeated):
                index = int(np.argmax(repeated))
                raise DataError(
                    "Raster contains duplicate point "
                    f"(time={time_values[index]}, mz={mz_values[index]})"
                )
        return cls(sample_id, replicate_id, time_values, mz_values, intensity_values)

    @property
    def run(self) -> str:
        return run_label(self.sample_id, self.replicate_id)

    @property
    def size(self) -> int:
        return int(self.times.size)

    def points(self) -> list[tuple[float, float, float]]:
        return list(
            zip(self.times.tolist(), self.mzs.tolist(), self.intensities.tolist())
        )

    def window(
        self, time_low: float, time_high: float, mz_low: float, mz_high: float
    ) -> "Raster":
        start = int(np.searchsorted(self.times, time_low, side="left"))
        stop = int(np.searchsorted(self.times, time_high, side="right"))
        mzs = self.mzs[start:stop]
        keep = (mzs >= mz_low) & (mzs <= mz_high)
        return Raster(
            self.sample_id,
            self.replicate_id,
            self.times[start:stop][keep],
            mzs[keep],
            self.intensities[start:stop][keep],
        )


@dataclass(frozen=True)
class ProteinMap:
    entries: Mapping[str, frozenset[str]]

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[str, str]]) -> "ProteinMap":
        entries: dict[str, set[str]] = {}
        for sequence, accession in pairs:
            if not accession:
                raise DataError(f"Empty protein accession for sequence {sequence!r}")
            entries.setdefault(sequence, set()).add(accession)
        return cls({key: frozenset(value) for key, value in sorted(entries.items())})

    def proteins_for(self, sequence: str) -> frozenset[str]:
        return self.entries.get(sequence, frozenset())

    def pairs(self) -> list[tuple[str, str]]:
        return [
            (sequence, accession)
            for sequence, accessions in sorted(self.entries.items())
            for accession in sorted(accessions)
        ]

    @property
    def accessions(self) -> list[str]:
        return sorted({item for values in self.entries.values() for item in values})


@dataclass(frozen=True, eq=False)
class DesignTable:
    """Protein abundances per sample class; index is the accession."""

    frame: pd.DataFrame

    def __post_init__(self) -> None:
        if self.frame.index.has_duplicates:
            duplicated = self.frame.index[self.frame.index.duplicated()].tolist()
            raise DataError(f"Duplicate design accessions: {', '.join(duplicated)}")
        values = self.frame.to_numpy(dtype=float)
        if values.size and (np.any(~np.isfinite(values)) or np.any(values < 0)):
            raise DataError("Design abundances must be finite and nonnegative")

    @property
    def classes(self) -> list[str]:
        return [str(column) for column in self.frame.columns]

    @property
    def accessions(self) -> list[str]:
        return [str(item) for item in self.frame.index]

    def abundance(self, accession: str, class_name: str) -> float:
        return float(self.frame.at[accession, class_name])


@dataclass(frozen=True)
class SampleSheet:
    classes: Mapping[str, str] = field(default_factory=dict)

    def samples_of(self, class_name: str) -> list[str]:
        return sorted(
            sample for sample, value in self.classes.items() if value == class_name
        )

    def class_of(self, sample_id: str) -> str:
        try:
            return self.classes[sample_id]
        except KeyError as exc:
            raise DataError(f"Sample {sample_id!r} missing from sample sheet") from exc


@dataclass(frozen=True)
class ClassRule:
    """Accession-prefix rule splitting proteins into foreground and background."""

    foreground_prefix: str = ""
    background_prefix: str = ""

    def is_background(self, accession: str) -> bool:
        return bool(self.background_prefix) and accession.startswith(
            self.background_prefix
        )

    def is_foreground(self, accession: str) -> bool:
        if self.is_background(accession):
            return False
        return not self.foreground_prefix or accession.startswith(
            self.foreground_prefix
        )

    def label(self, accession: str) -> str:
        if self.is_background(accession):
            return "background"
        if self.is_foreground(accession):
            return "foreground"
        return "other"


class Direction(str, Enum):
    UP = "up"
    DOWN = "down"
    NULL = "null"


@dataclass(frozen=True, eq=False)
class QuantMatrix:
    """Entities by samples; NaN marks a missing cell.

    ``groups`` is empty for per-run matrices and maps every column to a
    :class:`Group` once the compared classes have been selected.
    """

    measure: Measure
    level: RollupLevel
    values: pd.DataFrame
    groups: Mapping[str, Group] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.values.columns.has_duplicates:
            raise DataError("QuantMatrix sample labels must be unique")
        if self.values.index.has_duplicates:
            raise DataError("QuantMatrix entity keys must be unique")
        cells = self.values.to_numpy(dtype=float)
        if np.any(cells[~np.isnan(cells)] < 0):
            raise DataError("QuantMatrix cells must be nonnegative or missing")
        if self.groups:
            unlabelled = [str(item) for item in self.values.columns if item not in self.groups]
            if unlabelled:
                raise DataError(f"Samples without group: {', '.join(unlabelled)}")
            present = {self.groups[str(item)] for item in self.values.columns}
            if present != {Group.CASE, Group.CONTROL}:
                raise DataError("Case and control groups must both be non-empty")

    @property
    def entities(self) -> list[str]:
        return [str(item) for item in self.values.index]

    @property
    def samples(self) -> list[str]:
        return [str(item) for item in self.values.columns]

    def samples_in(self, group: Group) -> list[str]:
        return [sample for sample in self.samples if self.groups.get(sample) == group]

    @property
    def case_samples(self) -> list[str]:
        return self.samples_in(Group.CASE)

    @property
    def control_samples(self) -> list[str]:
        return self.samples_in(Group.CONTROL)

    def with_values(
        self, values: pd.DataFrame, level: RollupLevel | None = None
    ) -> "QuantMatrix":
        groups = {
            str(sample): self.groups[str(sample)]
            for sample in values.columns
            if str(sample) in self.groups
        }
        return QuantMatrix(self.measure, level or self.level, values, groups)
