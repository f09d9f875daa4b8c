from __future__ import annotations

import io
import logging
import os
import tempfile
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd
from pyteomics import fasta

from .feature_model import FeatureParams, FitResult
from .ingest import TableError, raster_path, read_tsv
from .models import (
    DataError,
    DesignTable,
    Direction,
    Group,
    Identification,
    Measure,
    ProteinMap,
    QuantMatrix,
    Raster,
    RollupLevel,
    SampleSheet,
    run_label,
)
from .quant import FitRecord
from .stats import TauResult

LOGGER = logging.getLogger(__name__)

NA = "NA"
FLOAT_FORMAT = "%.12g"
RESULT_COLUMNS = ("protein", "level", "measure", "K", "tau", "p_value", "q_value", "direction")


def render_table(frame: pd.DataFrame, index: bool = False) -> str:
    return frame.to_csv(
        sep="\t",
        index=index,
        na_rep=NA,
        float_format=FLOAT_FORMAT,
        lineterminator="\n",
    )


def atomic_write_text(path: Path, content: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    descriptor, temporary = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(descriptor, "w", encoding="utf-8", newline="") as handle:
            handle.write(content)
        os.replace(temporary, path)
    except BaseException:
        Path(temporary).unlink(missing_ok=True)
        raise


class OutputStore:
    """Collects rendered files and writes them only once a stage has finished."""

    def __init__(self, root: Path):
        self.root = root
        self.pending: dict[Path, str] = {}

    def put_text(self, relative: str, content: str) -> None:
        self.pending[self.root / relative] = content

    def put_table(self, relative: str, frame: pd.DataFrame, index: bool = False) -> None:
        self.put_text(relative, render_table(frame, index=index))

    def put_matrix(self, relative: str, m: QuantMatrix) -> None:
        self.put_text(relative, render_matrix(m))
        if m.groups:
            self.put_table(groups_path(relative), groups_frame(m))

    def commit(self) -> list[Path]:
        written = sorted(self.pending)
        for path in written:
            atomic_write_text(path, self.pending[path])
        LOGGER.info("Outputs written root=%s files=%d", self.root, len(written))
        self.pending.clear()
        return written


def groups_path(relative: str) -> str:
    stem = relative[: -len(".tsv")] if relative.endswith(".tsv") else relative
    return f"{stem}.groups.tsv"


def render_matrix(m: QuantMatrix) -> str:
    frame = m.values.copy()
    frame.index = pd.Index(m.entities, name=m.level.value)
    return render_table(frame, index=True)


def groups_frame(m: QuantMatrix) -> pd.DataFrame:
    return pd.DataFrame(
        {"sample_id": m.samples, "group": [m.groups[sample].value for sample in m.samples]}
    )


def _as_floats(path: Path, frame: pd.DataFrame) -> pd.DataFrame:
    try:
        return frame.replace(NA, np.nan).astype(float)
    except ValueError as exc:
        raise TableError(path, None, f"non-numeric cell: {exc}") from exc


def read_matrix(path: Path, measure: Measure, level: RollupLevel) -> QuantMatrix:
    """Inverse of :func:`render_matrix`; a ``.groups.tsv`` sidecar is picked up when present."""
    frame = read_tsv(path)
    if frame.columns.empty or frame.columns[0] != level.value:
        raise TableError(path, 1, f"first column must be {level.value}")
    values = _as_floats(path, frame.iloc[:, 1:])
    values.index = pd.Index(frame.iloc[:, 0].tolist(), dtype=object)
    values.columns = [str(column) for column in values.columns]
    groups: dict[str, Group] = {}
    sidecar = path.with_name(groups_path(path.name))
    if sidecar.exists():
        table = read_tsv(sidecar)
        try:
            groups = {row.sample_id: Group(row.group) for row in table.itertuples(index=False)}
        except (AttributeError, ValueError) as exc:
            raise TableError(sidecar, None, f"invalid group table: {exc}") from exc
    return QuantMatrix(measure, level, values, groups)


def results_frame(results: Sequence[TauResult]) -> pd.DataFrame:
    return pd.DataFrame(
        [
            {
                "protein": result.protein,
                "level": result.level.value,
                "measure": result.measure.value,
                "K": result.K,
                "tau": result.tau,
                "p_value": result.p_value,
                "q_value": result.q_value,
                "direction": result.direction.value,
            }
            for result in results
        ],
        columns=list(RESULT_COLUMNS),
    )


def read_results(path: Path) -> list[TauResult]:
    frame = read_tsv(path)
    if tuple(frame.columns) != RESULT_COLUMNS:
        raise TableError(path, 1, f"expected header {' '.join(RESULT_COLUMNS)}")
    results = []
    for line, row in enumerate(frame.itertuples(index=False), start=2):
        try:
            results.append(
                TauResult(
                    protein=row.protein,
                    level=RollupLevel(row.level),
                    measure=Measure(row.measure),
                    K=int(row.K),
                    tau=float(row.tau),
                    p_value=float(row.p_value),
                    q_value=float(row.q_value),
                    direction=Direction(row.direction),
                )
            )
        except ValueError as exc:
            raise TableError(path, line, str(exc)) from exc
    return results


def read_fits(path: Path) -> list[FitRecord]:
    """Fit records back from a fits table; failed fits come back without a result."""
    frame = read_tsv(path)
    numeric = ["A", "mu", "sigma", "zeta0", "delta", "lambda", "rho", "residual", "abundance"]
    missing = [column for column in ["sample_id", "replicate_id", "species", *numeric] if column not in frame]
    if missing:
        raise TableError(path, 1, f"missing columns {', '.join(missing)}")
    values = _as_floats(path, frame[numeric])
    records = []
    for index, row in frame.iterrows():
        run = run_label(row["sample_id"], row["replicate_id"])
        numbers = values.loc[index]
        if np.isnan(numbers["A"]):
            records.append(FitRecord(run, row["species"], None, None, "no fit"))
            continue
        try:
            params = FeatureParams(
                amplitude=numbers["A"],
                mu=numbers["mu"],
                sigma=numbers["sigma"],
                zeta0=numbers["zeta0"],
                delta=numbers["delta"],
                lam=numbers["lambda"],
                rho=numbers["rho"],
                n_peaks=int(float(row["n_peaks"])),
            )
        except (DataError, ValueError) as exc:
            raise TableError(path, int(index) + 2, str(exc)) from exc
        result = FitResult(
            params=params,
            residual_norm=float(numbers["residual"]),
            iterations=0,
            converged=row["converged"] == "True",
            abundance=float(numbers["abundance"]),
        )
        records.append(FitRecord(run, row["species"], None, result))
    return records


def identifications_frame(ids: Iterable[Identification]) -> pd.DataFrame:
    return pd.DataFrame(
        [
            {
                "sample_id": record.sample_id,
                "replicate_id": record.replicate_id,
                "species": record.species.render(),
                "rt_sec": record.retention_time,
                "mz": record.precursor_mz,
                "fdr": record.fdr,
            }
            for record in ids
        ],
        columns=["sample_id", "replicate_id", "species", "rt_sec", "mz", "fdr"],
    )


def raster_frame(raster: Raster) -> pd.DataFrame:
    return pd.DataFrame(
        {"rt_sec": raster.times, "mz": raster.mzs, "intensity": raster.intensities}
    )


def protein_map_frame(pm: ProteinMap) -> pd.DataFrame:
    return pd.DataFrame(pm.pairs(), columns=["sequence", "protein_accession"])


def design_frame(design: DesignTable) -> pd.DataFrame:
    frame = design.frame.copy()
    frame.index = pd.Index(design.accessions, name="protein_accession")
    return frame.reset_index()


def samples_frame(sheet: SampleSheet) -> pd.DataFrame:
    samples = sorted(sheet.classes)
    return pd.DataFrame(
        {"sample_id": samples, "class": [sheet.classes[sample] for sample in samples]}
    )


def render_fasta(proteins: Mapping[str, str]) -> str:
    buffer = io.StringIO()
    fasta.write(((accession, proteins[accession]) for accession in sorted(proteins)), output=buffer)
    return buffer.getvalue()


def stage_rasters(store: OutputStore, directory: str, rasters: Mapping[str, Raster]) -> None:
    for label in sorted(rasters):
        raster = rasters[label]
        relative = raster_path(Path(directory), raster.sample_id, raster.replicate_id)
        store.put_table(str(relative), raster_frame(raster))
