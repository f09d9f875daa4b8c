"""Readers for identifications, rasters, protein maps, designs and sample sheets."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd
from pyteomics import fasta

from .models import (
    AMINO_ACIDS,
    DataError,
    DesignTable,
    Identification,
    Modification,
    ProteinMap,
    Raster,
    SampleSheet,
    SpeciesKey,
    split_run_label,
)

LOGGER = logging.getLogger(__name__)

IDENTIFICATION_COLUMNS = ("sample_id", "replicate_id", "species", "rt_sec", "mz", "fdr")
RASTER_COLUMNS = ("rt_sec", "mz", "intensity")
PROTEIN_MAP_COLUMNS = ("sequence", "protein_accession")
SAMPLE_COLUMNS = ("sample_id", "class")
RASTER_SUFFIX = ".raster.tsv"


class SpeciesParseError(DataError):
    def __init__(self, text: str, offset: int, reason: str):
        super().__init__(f"Invalid species {text!r} at byte {offset}: {reason}")
        self.text = text
        self.offset = offset


class TableError(DataError):
    def __init__(self, path: Path, line: int | None, reason: str):
        location = f"{path}:{line}" if line is not None else str(path)
        super().__init__(f"{location}: {reason}")
        self.path = path
        self.line = line


def _byte_offset(text: str, index: int) -> int:
    return len(text[:index].encode("utf-8"))


def parse_species(text: str) -> SpeciesKey:
    if not text:
        raise SpeciesParseError(text, 0, "empty species string")
    residues: list[str] = []
    modifications: list[Modification] = []
    index = 0
    while index < len(text) and text[index] != "+":
        character = text[index]
        if character == "[":
            if not residues:
                raise SpeciesParseError(
                    text, _byte_offset(text, index), "modification before any residue"
                )
            if modifications and modifications[-1].position == len(residues):
                raise SpeciesParseError(
                    text, _byte_offset(text, index), "second modification on a residue"
                )
            close = text.find("]", index)
            if close < 0:
                raise SpeciesParseError(
                    text, _byte_offset(text, index), "unterminated modification bracket"
                )
            try:
                mass = float(text[index + 1 : close])
            except ValueError:
                raise SpeciesParseError(
                    text, _byte_offset(text, index + 1), "modification mass is not a number"
                ) from None
            if not np.isfinite(mass) or mass <= 0:
                raise SpeciesParseError(
                    text, _byte_offset(text, index + 1), "modification mass must be positive"
                )
            modifications.append(Modification(len(residues), mass))
            index = close + 1
            continue
        if character not in AMINO_ACIDS:
            reason = (
                "modification bracket outside a residue context"
                if character == "]"
                else f"{character!r} is not an amino-acid letter"
            )
            raise SpeciesParseError(text, _byte_offset(text, index), reason)
        residues.append(character)
        index += 1

    if not residues:
        raise SpeciesParseError(text, 0, "empty sequence")
    if index >= len(text):
        raise SpeciesParseError(text, _byte_offset(text, index), "missing charge suffix")
    digits = text[index + 1 :]
    if not digits:
        raise SpeciesParseError(
            text, _byte_offset(text, index + 1), "missing charge digits"
        )
    for position, character in enumerate(digits, start=index + 1):
        if not character.isascii() or not character.isdigit():
            raise SpeciesParseError(
                text, _byte_offset(text, position), "charge must be a positive integer"
            )
    charge = int(digits)
    if charge < 1:
        raise SpeciesParseError(
            text, _byte_offset(text, index + 1), "charge must be a positive integer"
        )
    return SpeciesKey("".join(residues), tuple(modifications), charge)


def render_species(species: SpeciesKey) -> str:
    return species.render()


def read_tsv(path: Path) -> pd.DataFrame:
    """Read a tab-separated table as strings; every row must be as wide as the header."""
    path = Path(path)
    if not path.exists():
        raise TableError(path, None, "file not found")
    try:
        # header=None stops pandas from turning a surplus leading field into the index
        raw = pd.read_csv(
            path,
            sep="\t",
            header=None,
            dtype=str,
            keep_default_na=False,
            na_filter=False,
            encoding="utf-8",
            skip_blank_lines=True,
        )
    except pd.errors.EmptyDataError:
        raise TableError(path, 1, "missing header row") from None
    except pd.errors.ParserError as exc:
        raise TableError(path, None, f"column count disagrees with header ({exc})") from exc
    except UnicodeDecodeError as exc:
        raise TableError(path, None, f"not valid UTF-8 ({exc})") from exc
    frame = raw.iloc[1:].reset_index(drop=True)
    frame.columns = [str(value) for value in raw.iloc[0]]
    return _check_row_widths(path, frame)


def _read_table(path: Path, columns: Sequence[str]) -> pd.DataFrame:
    frame = read_tsv(path)
    header = [str(column) for column in frame.columns]
    if header != list(columns):
        missing = [column for column in columns if column not in header]
        detail = f"missing column(s) {', '.join(missing)}" if missing else "unexpected columns"
        raise TableError(
            path, 1, f"{detail}; expected header {' '.join(columns)}, got {' '.join(header)}"
        )
    return frame


def _check_row_widths(path: Path, frame: pd.DataFrame) -> pd.DataFrame:
    # pandas pads short rows with NaN even when na_filter is off
    short = frame.isna().any(axis=1).to_numpy()
    if np.any(short):
        row = int(np.argmax(short))
        raise TableError(path, row + 2, "column count disagrees with header")
    return frame


def _numbers(path: Path, frame: pd.DataFrame, column: str) -> np.ndarray:
    values = pd.to_numeric(frame[column], errors="coerce").to_numpy(dtype=float)
    bad = ~np.isfinite(values)
    if np.any(bad):
        row = int(np.argmax(bad))
        raise TableError(
            path, row + 2, f"unparsable number in {column}: {frame[column].iloc[row]!r}"
        )
    return values


def read_identifications(path: Path) -> list[Identification]:
    path = Path(path)
    frame = _read_table(path, IDENTIFICATION_COLUMNS)
    times = _numbers(path, frame, "rt_sec")
    mzs = _numbers(path, frame, "mz")
    fdrs = _numbers(path, frame, "fdr")
    species_cache: dict[str, SpeciesKey] = {}
    records: list[Identification] = []
    for row, (sample_id, replicate_id, species_text) in enumerate(
        zip(frame["sample_id"], frame["replicate_id"], frame["species"])
    ):
        try:
            species = species_cache.get(species_text)
            if species is None:
                species = parse_species(species_text)
                species_cache[species_text] = species
            records.append(
                Identification(
                    sample_id=sample_id,
                    replicate_id=replicate_id,
                    species=species,
                    retention_time=float(times[row]),
                    precursor_mz=float(mzs[row]),
                    fdr=float(fdrs[row]),
                )
            )
        except DataError as exc:
            raise TableError(path, row + 2, str(exc)) from exc
    LOGGER.debug("Identifications loaded path=%s rows=%d", path, len(records))
    return records


def raster_path(directory: Path, sample_id: str, replicate_id: str) -> Path:
    return Path(directory) / f"{sample_id}__{replicate_id}{RASTER_SUFFIX}"


def run_from_raster_path(path: Path) -> tuple[str, str]:
    name = Path(path).name
    if not name.endswith(RASTER_SUFFIX):
        raise DataError(f"Raster file name must end with {RASTER_SUFFIX}: {name}")
    return split_run_label(name[: -len(RASTER_SUFFIX)])


def read_raster(path: Path, sample_id: str | None = None, replicate_id: str | None = None) -> Raster:
    path = Path(path)
    if sample_id is None or replicate_id is None:
        sample_id, replicate_id = run_from_raster_path(path)
    frame = _read_table(path, RASTER_COLUMNS)
    times = _numbers(path, frame, "rt_sec")
    mzs = _numbers(path, frame, "mz")
    intensities = _numbers(path, frame, "intensity")
    negative = intensities < 0
    if np.any(negative):
        raise TableError(path, int(np.argmax(negative)) + 2, "negative intensity")
    try:
        return Raster.from_arrays(sample_id, replicate_id, times, mzs, intensities)
    except DataError as exc:
        raise TableError(path, None, str(exc)) from exc


def read_protein_map(path: Path) -> ProteinMap:
    path = Path(path)
    frame = _read_table(path, PROTEIN_MAP_COLUMNS)
    pairs: list[tuple[str, str]] = []
    for row, (sequence, accession) in enumerate(
        zip(frame["sequence"], frame["protein_accession"])
    ):
        if not sequence or set(sequence) - AMINO_ACIDS:
            raise TableError(path, row + 2, f"invalid sequence {sequence!r}")
        if not accession.strip():
            raise TableError(path, row + 2, "empty protein accession")
        pairs.append((sequence, accession.strip()))
    return ProteinMap.from_pairs(pairs)


def read_design(path: Path) -> DesignTable:
    path = Path(path)
    frame = read_tsv(path)
    if not len(frame.columns) or frame.columns[0] != "protein_accession":
        raise TableError(path, 1, "first column must be protein_accession")
    if len(frame.columns) < 3:
        raise TableError(path, 1, "design needs at least two sample classes")
    accessions = frame["protein_accession"].str.strip()
    if (accessions == "").any():
        raise TableError(path, int(np.argmax((accessions == "").to_numpy())) + 2, "empty accession")
    values = {column: _numbers(path, frame, column) for column in frame.columns[1:]}
    for column, column_values in values.items():
        if np.any(column_values < 0):
            row = int(np.argmax(column_values < 0))
            raise TableError(path, row + 2, f"negative abundance in {column}")
    design = pd.DataFrame(values, index=pd.Index(accessions.tolist(), name="protein_accession"))
    try:
        return DesignTable(design)
    except DataError as exc:
        raise TableError(path, None, str(exc)) from exc


def read_samples(path: Path) -> SampleSheet:
    path = Path(path)
    frame = _read_table(path, SAMPLE_COLUMNS)
    classes: dict[str, str] = {}
    for row, (sample_id, class_name) in enumerate(zip(frame["sample_id"], frame["class"])):
        if not sample_id or not class_name:
            raise TableError(path, row + 2, "sample_id and class are required")
        if sample_id in classes:
            raise TableError(path, row + 2, f"duplicate sample {sample_id}")
        classes[sample_id] = class_name
    return SampleSheet(classes)


def read_fasta(path: Path) -> dict[str, str]:
    path = Path(path)
    if not path.exists():
        raise TableError(path, None, "file not found")
    proteins: dict[str, str] = {}
    with fasta.read(str(path)) as entries:
        for description, sequence in entries:
            accession = description.split()[0] if description else ""
            if not accession:
                raise TableError(path, None, "FASTA entry without accession")
            proteins[accession] = sequence.strip().upper()
    return proteins


def filter_by_fdr(
    identifications: Iterable[Identification], threshold: float
) -> list[Identification]:
    if not 0.0 < threshold <= 1.0:
        raise DataError(f"FDR threshold must be within (0, 1], got {threshold}")
    return [record for record in identifications if record.fdr <= threshold]
