from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from .feature_model import (
    FitResult,
    extract_window,
    fit_feature,
    initial_guess,
    is_successful,
)
from .models import (
    ConfigError,
    DataError,
    Group,
    Identification,
    Measure,
    QuantMatrix,
    Raster,
    RollupLevel,
    SampleSheet,
    split_run_label,
)

LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class FitRecord:
    run: str
    species: str
    seed: Identification | None
    result: FitResult | None
    reason: str = ""

    @property
    def successful(self) -> bool:
        return self.result is not None and is_successful(self.result)


def _entity_frame(cells: Mapping[tuple[str, str], float], runs: Sequence[str]) -> pd.DataFrame:
    if not cells:
        return pd.DataFrame(
            index=pd.Index([], dtype=object), columns=list(runs), dtype=float
        )
    frame = pd.Series(cells, dtype=float).unstack()
    return frame.reindex(index=sorted(frame.index), columns=list(runs))


def _sorted_runs(ids: Iterable[Identification], extra: Iterable[str] = ()) -> list[str]:
    return sorted({record.run for record in ids} | set(extra))


def spectral_counts(
    ids: Sequence[Identification], runs: Iterable[str] = ()
) -> QuantMatrix:
    """Per-run identification counts; zero only where the sibling replicate saw the species."""
    counts: dict[tuple[str, str], float] = {}
    for record in ids:
        key = (str(record.species), record.run)
        counts[key] = counts.get(key, 0.0) + 1.0
    columns = _sorted_runs(ids, runs)
    frame = _entity_frame(counts, columns)

    samples = pd.Index([split_run_label(run)[0] for run in columns])
    for sample_id in samples.unique():
        members = [run for run, owner in zip(columns, samples) if owner == sample_id]
        seen = frame[members].notna().any(axis=1)
        block = frame.loc[seen, members]
        frame.loc[seen, members] = block.fillna(0.0)
    return QuantMatrix(Measure.SPECTRAL_COUNT, RollupLevel.SPECIES, frame)


def best_identifications(
    ids: Iterable[Identification],
) -> dict[tuple[str, str], Identification]:
    """Lowest-fdr identification per (run, species); earlier rows win ties."""
    best: dict[tuple[str, str], Identification] = {}
    for record in ids:
        key = (record.run, str(record.species))
        current = best.get(key)
        if current is None or record.fdr < current.fdr:
            best[key] = record
    return best


def _fit_one(raster: Raster, seed: Identification) -> FitRecord:
    run = seed.run
    species = str(seed.species)
    try:
        window = extract_window(raster, seed)
        result = fit_feature(window, initial_guess(window, seed))
    except DataError as exc:
        return FitRecord(run, species, seed, None, f"{type(exc).__name__}: {exc}")
    reason = "" if is_successful(result) else (
        "not converged" if not result.converged else "residual gate"
    )
    return FitRecord(run, species, seed, result, reason)


def fit_features(
    ids: Sequence[Identification],
    rasters: Mapping[str, Raster],
    workers: int = 1,
) -> list[FitRecord]:
    seeds = best_identifications(ids)
    missing = sorted({run for run, _ in seeds} - set(rasters))
    if missing:
        raise DataError(f"Missing raster for run(s): {', '.join(missing)}")
    jobs = [(rasters[run], seeds[(run, species)]) for run, species in sorted(seeds)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            records = list(executor.map(lambda job: _fit_one(*job), jobs))
    else:
        records = [_fit_one(*job) for job in jobs]
    LOGGER.info(
        "Feature fitting complete fits=%d successful=%d workers=%d",
        len(records),
        sum(record.successful for record in records),
        workers,
    )
    return records


def ion_abundances(
    ids: Sequence[Identification],
    rasters: Mapping[str, Raster],
    workers: int = 1,
    fits: Sequence[FitRecord] | None = None,
) -> QuantMatrix:
    if fits is None:
        fits = fit_features(ids, rasters, workers)
    cells = {
        (record.species, record.run): record.result.abundance
        for record in fits
        if record.successful
    }
    frame = _entity_frame(cells, _sorted_runs(ids, rasters))
    return QuantMatrix(Measure.ION_ABUNDANCE, RollupLevel.SPECIES, frame)


def average_technical_replicates(m: QuantMatrix) -> QuantMatrix:
    samples = [split_run_label(run)[0] for run in m.samples]
    if not samples:
        return m.with_values(m.values.copy())
    averaged = m.values.T.groupby(samples, sort=True).mean().T
    averaged.columns = [str(item) for item in averaged.columns]
    return QuantMatrix(m.measure, m.level, averaged)


def assign_groups(
    m: QuantMatrix, sheet: SampleSheet, case_class: str, control_class: str
) -> QuantMatrix:
    if case_class == control_class:
        raise ConfigError("Case and control classes must differ")
    case = [sample for sample in m.samples if sheet.classes.get(sample) == case_class]
    control = [sample for sample in m.samples if sheet.classes.get(sample) == control_class]
    for name, members in ((case_class, case), (control_class, control)):
        if not members:
            raise ConfigError(f"Class {name} has no samples in the matrix")
    groups = {sample: Group.CASE for sample in case}
    groups.update({sample: Group.CONTROL for sample in control})
    return QuantMatrix(m.measure, m.level, m.values[case + control].copy(), groups)


def filter_min_presence(m: QuantMatrix, k: int) -> QuantMatrix:
    if k < 1:
        raise ConfigError(f"Minimum presence must be at least 1, got {k}")
    present = m.values.notna()
    enough = (present[m.case_samples].sum(axis=1) >= k) | (
        present[m.control_samples].sum(axis=1) >= k
    )
    informative = (m.values > 0).any(axis=1)
    kept = m.values.loc[enough & informative]
    LOGGER.debug(
        "Presence filter measure=%s level=%s kept=%d dropped=%d",
        m.measure.value,
        m.level.value,
        len(kept),
        len(m.values) - len(kept),
    )
    return m.with_values(kept.copy())


def normalize(m: QuantMatrix) -> QuantMatrix:
    values = m.values
    positive = (values > 0).any(axis=0)
    empty = [str(sample) for sample in values.columns[~positive.to_numpy()]]
    if empty:
        raise DataError(f"No positive values to normalize sample(s): {', '.join(empty)}")
    if m.measure is Measure.SPECTRAL_COUNT:
        scales = values.sum(axis=0, skipna=True)
        center = scales.mean()
    else:
        scales = values.median(axis=0, skipna=True)
        zero = [str(sample) for sample in scales.index[(scales <= 0).to_numpy()]]
        if zero:
            raise DataError(f"Median abundance is zero in sample(s): {', '.join(zero)}")
        center = scales.median()
    return m.with_values(values * (center / scales))


def fits_frame(fits: Sequence[FitRecord]) -> pd.DataFrame:
    rows = []
    for record in fits:
        sample_id, replicate_id = split_run_label(record.run)
        row = {"sample_id": sample_id, "replicate_id": replicate_id, "species": record.species}
        result = record.result
        if result is None:
            row.update(
                A=np.nan, mu=np.nan, sigma=np.nan, zeta0=np.nan, delta=np.nan,
                **{"lambda": np.nan}, rho=np.nan, n_peaks=np.nan, residual=np.nan,
                converged=False, abundance=np.nan,
            )
        else:
            p = result.params
            row.update(
                A=p.amplitude, mu=p.mu, sigma=p.sigma, zeta0=p.zeta0, delta=p.delta,
                **{"lambda": p.lam}, rho=p.rho, n_peaks=p.n_peaks,
                residual=result.residual_norm, converged=result.converged,
                abundance=result.abundance,
            )
        rows.append(row)
    columns = [
        "sample_id", "replicate_id", "species", "A", "mu", "sigma", "zeta0", "delta",
        "lambda", "rho", "n_peaks", "residual", "converged", "abundance",
    ]
    return pd.DataFrame(rows, columns=columns)
