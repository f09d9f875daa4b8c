from __future__ import annotations

import logging
from pathlib import Path

import pandas as pd

from .config import PipelineConfig, SimConfig, require_classes
from .diagnostics import (
    Cohort,
    abundance_strata,
    cohort_counts,
    cohort_strata,
    extents_by_class,
    interference_distance,
    missingness_strata,
    positive_cohort_distances,
    pvalue_histogram,
    semi_tryptic_profile,
    species_classes,
    species_statuses,
    stratified_w,
    summaries_frame,
)
from .evaluate import AUC_DECIMALS, confusion_at_fdr, design_to_truth, roc, scores_from_results
from .ingest import (
    RASTER_SUFFIX,
    TableError,
    filter_by_fdr,
    read_design,
    read_fasta,
    read_identifications,
    read_protein_map,
    read_raster,
    read_samples,
)
from .models import Measure, QuantMatrix, Raster, RollupLevel, split_run_label
from .quant import (
    FitRecord,
    assign_groups,
    average_technical_replicates,
    filter_min_presence,
    fit_features,
    fits_frame,
    ion_abundances,
    normalize,
    spectral_counts,
)
from .rollup import entity_sequence, rollup_matrix
from .simulate import SimDataset, directions_frame, pipeline_env, simulate
from .stats import UndefinedStatistic, element_w, spearman_rho, test_proteins
from .storage import (
    OutputStore,
    design_frame,
    identifications_frame,
    protein_map_frame,
    read_fits,
    read_matrix,
    read_results,
    render_fasta,
    results_frame,
    samples_frame,
    stage_rasters,
)

LOGGER = logging.getLogger(__name__)


def quant_file(measure: Measure) -> str:
    return f"quant/matrix.{measure.value}.tsv"


def rollup_file(measure: Measure, level: RollupLevel) -> str:
    return f"rollup/matrix.{measure.value}.{level.value}.tsv"


def results_file(measure: Measure, level: RollupLevel) -> str:
    return f"test/results.{measure.value}.{level.value}.tsv"


class PipelineService:
    def __init__(self, config: PipelineConfig):
        self.config = config
        self.store = OutputStore(config.out_dir)

    def _path(self, relative: str) -> Path:
        return self.config.out_dir / relative

    def _pairs(self) -> list[tuple[Measure, RollupLevel]]:
        return [(measure, level) for measure in self.config.measures for level in self.config.levels]

    def load_rasters(self) -> dict[str, Raster]:
        directory = self.config.raster_dir
        if not directory.is_dir():
            raise TableError(directory, None, "raster directory not found")
        rasters = {}
        for path in sorted(directory.glob(f"*{RASTER_SUFFIX}")):
            raster = read_raster(path)
            rasters[raster.run] = raster
        return rasters

    def quantify(self) -> list[Path]:
        ids = filter_by_fdr(
            read_identifications(self.config.identifications), self.config.fdr_threshold
        )
        rasters = self.load_rasters()
        if not ids:
            LOGGER.warning(
                "No identifications pass the FDR threshold threshold=%g",
                self.config.fdr_threshold,
            )
        counts = spectral_counts(ids, sorted(rasters))
        fits = fit_features(ids, rasters, self.config.workers)
        abundances = ion_abundances(ids, rasters, fits=fits)

        self.store.put_matrix(quant_file(Measure.SPECTRAL_COUNT), counts)
        self.store.put_matrix(quant_file(Measure.ION_ABUNDANCE), abundances)
        self.store.put_table("quant/fits.tsv", fits_frame(fits))
        self.store.put_table("quant/report.tsv", run_report(counts, abundances, fits))
        LOGGER.info(
            "Quantification complete runs=%d species=%d fits=%d converged=%d",
            len(counts.samples),
            len(counts.entities),
            len(fits),
            sum(record.result is not None and record.result.converged for record in fits),
        )
        return self.store.commit()

    def rollup(self) -> list[Path]:
        require_classes(self.config)
        sheet = read_samples(self.config.samples)
        pm = read_protein_map(self.config.protein_map)
        for measure in self.config.measures:
            species = read_matrix(self._path(quant_file(measure)), measure, RollupLevel.SPECIES)
            grouped = assign_groups(
                average_technical_replicates(species),
                sheet,
                self.config.case_class,
                self.config.control_class,
            )
            filtered = filter_min_presence(grouped, self.config.min_presence)
            if filtered.entities:
                filtered = normalize(filtered)
            else:
                LOGGER.warning("Nothing left after presence filter measure=%s", measure.value)
            for level in self.config.levels:
                m = filtered if level is RollupLevel.SPECIES else rollup_matrix(filtered, level, pm)
                self.store.put_matrix(rollup_file(measure, level), m)
            LOGGER.info(
                "Rollup complete measure=%s species=%d samples=%d",
                measure.value,
                len(filtered.entities),
                len(filtered.samples),
            )
        return self.store.commit()

    def test(self) -> list[Path]:
        pm = read_protein_map(self.config.protein_map)
        for measure, level in self._pairs():
            m = read_matrix(self._path(rollup_file(measure, level)), measure, level)
            results = test_proteins(
                m, pm, level, self.config.permutations, self.config.seed
            ) if m.entities else []
            self.store.put_table(results_file(measure, level), results_frame(results))
        return self.store.commit()

    def diagnose(self) -> list[Path]:
        config = self.config
        rule = config.class_rule
        sheet = read_samples(config.samples)
        pm = read_protein_map(config.protein_map)
        proteins = read_fasta(config.fasta)
        fits = read_fits(self._path("quant/fits.tsv"))

        records = interference_records(fits, sheet.samples_of(config.interference_class), pm, rule)
        distances = {record.species: record.distance for record in records}
        cohorts = cohort_strata(records)
        self.store.put_table(
            "diagnose/interference.tsv",
            pd.DataFrame(
                {
                    "species": [record.species for record in records],
                    "d_i": [record.distance for record in records],
                    "cohort": [record.cohort.value for record in records],
                },
                columns=["species", "d_i", "cohort"],
            ),
        )
        counts = cohort_counts(records)
        self.store.put_table(
            "diagnose/cohorts.tsv",
            pd.DataFrame({"cohort": [c.value for c in counts], "count": list(counts.values())}),
        )
        summary = positive_cohort_distances(records)
        self.store.put_table(
            "diagnose/positive_distances.tsv",
            pd.DataFrame({"statistic": list(summary), "value": list(summary.values())}),
        )

        for measure in config.measures:
            m = read_matrix(self._path(rollup_file(measure, RollupLevel.SPECIES)), measure, RollupLevel.SPECIES)
            w_values = {entity: result.w for entity, result in element_w(m).items()} if m.entities else {}
            self.store.put_table(
                f"diagnose/w_strata.{measure.value}.tsv",
                pd.concat(
                    [
                        summaries_frame(
                            stratified_w(
                                {key: value for key, value in w_values.items() if key in cohorts},
                                cohorts,
                                order=[cohort.value for cohort in Cohort],
                            ),
                            "cohort",
                        ),
                        summaries_frame(
                            stratified_w(w_values, abundance_strata(m, m.control_samples)),
                            "abundance",
                        ),
                        summaries_frame(
                            stratified_w(w_values, missingness_strata(m, m.control_samples)),
                            "missingness",
                        ),
                    ],
                    ignore_index=True,
                ),
            )
            self.store.put_table(
                f"diagnose/spearman.{measure.value}.tsv",
                spearman_table(measure, w_values, distances, cohorts, config.seed),
            )

            averaged = average_technical_replicates(
                read_matrix(self._path(quant_file(measure)), measure, RollupLevel.SPECIES)
            )
            statuses = species_statuses(
                (entity_sequence(entity, RollupLevel.SPECIES) for entity in averaged.entities),
                proteins,
                pm,
                config.proline_rule,
            )
            profile = semi_tryptic_profile(averaged, statuses)
            profile.insert(1, "class", [sheet.classes.get(sample, "") for sample in profile["sample_id"]])
            self.store.put_table(f"diagnose/semi_profile.{measure.value}.tsv", profile)

        for measure, level in self._pairs():
            path = self._path(results_file(measure, level))
            if path.exists():
                self.store.put_table(
                    f"diagnose/pvalues.{measure.value}.{level.value}.tsv",
                    pvalue_histogram(read_results(path), rule),
                )
        LOGGER.info(
            "Diagnostics complete species=%d zero=%d positive=%d missing=%d",
            len(records),
            counts[Cohort.ZERO],
            counts[Cohort.POSITIVE],
            counts[Cohort.MISSING],
        )
        return self.store.commit()

    def evaluate(self) -> list[Path]:
        require_classes(self.config)
        truth = design_to_truth(
            read_design(self.config.design), self.config.case_class, self.config.control_class
        )
        rows = []
        for measure, level in self._pairs():
            results = read_results(self._path(results_file(measure, level)))
            curve = roc(scores_from_results(results), truth)
            suffix = f"{measure.value}.{level.value}"
            self.store.put_table(f"evaluate/roc.{suffix}.tsv", curve.points)
            self.store.put_table(
                f"evaluate/confusion.{suffix}.tsv",
                confusion_at_fdr(results, truth, self.config.class_rule, self.config.alpha),
                index=True,
            )
            rows.append(
                {"measure": measure.value, "level": level.value, "auc": round(curve.auc, AUC_DECIMALS)}
            )
            LOGGER.info(
                "ROC measure=%s level=%s auc=%.3f positives=%d negatives=%d",
                measure.value,
                level.value,
                curve.auc,
                curve.positives,
                curve.negatives,
            )
        self.store.put_table("evaluate/auc.tsv", pd.DataFrame(rows, columns=["measure", "level", "auc"]))
        return self.store.commit()


def run_report(
    counts: QuantMatrix, abundances: QuantMatrix, fits: list[FitRecord]
) -> pd.DataFrame:
    by_run: dict[str, list[FitRecord]] = {}
    for record in fits:
        by_run.setdefault(record.run, []).append(record)
    rows = []
    for run in counts.samples:
        run_fits = by_run.get(run, [])
        sample_id, replicate_id = split_run_label(run)
        rows.append(
            {
                "sample_id": sample_id,
                "replicate_id": replicate_id,
                "species_counted": int(counts.values[run].notna().sum()),
                "species_quantified": int(abundances.values[run].notna().sum()),
                "fits_attempted": len(run_fits),
                "fits_converged": sum(
                    record.result is not None and record.result.converged for record in run_fits
                ),
            }
        )
    return pd.DataFrame(
        rows,
        columns=[
            "sample_id",
            "replicate_id",
            "species_counted",
            "species_quantified",
            "fits_attempted",
            "fits_converged",
        ],
    )


def interference_records(fits, samples, pm, rule):
    """Interference distances over the runs of ``samples``; each run counts as one observation."""
    wanted = set(samples)
    runs = sorted({record.run for record in fits if split_run_label(record.run)[0] in wanted})
    classes = species_classes(sorted({record.species for record in fits}), RollupLevel.SPECIES, pm, rule)
    foreground, background = extents_by_class(fits, classes, runs)
    for species, label in classes.items():
        if label == "foreground":
            foreground.setdefault(species, {})
    return interference_distance(foreground, background, samples=runs)


def spearman_table(measure, w_values, distances, cohorts, seed) -> pd.DataFrame:
    pairs = sorted(
        (species, w_values[species], distances[species])
        for species, label in cohorts.items()
        if label == Cohort.POSITIVE.value and species in w_values
    )
    rho = p_value = float("nan")
    if pairs:
        try:
            rho, p_value = spearman_rho(
                [w for _, w, _ in pairs], [d for _, _, d in pairs], seed=seed
            )
        except UndefinedStatistic as exc:
            LOGGER.info("Spearman skipped measure=%s reason=%s", measure.value, exc)
    return pd.DataFrame(
        [{"measure": measure.value, "pairs": len(pairs), "rho": rho, "p_value": p_value}]
    )


def write_simulation(dataset: SimDataset, config: SimConfig) -> list[Path]:
    store = OutputStore(config.out_dir)
    store.put_table("ids.tsv", identifications_frame(dataset.identifications))
    stage_rasters(store, "rasters", dataset.rasters)
    store.put_table("protein_map.tsv", protein_map_frame(dataset.protein_map))
    store.put_table("design.tsv", design_frame(dataset.design))
    store.put_table("samples.tsv", samples_frame(dataset.samples))
    store.put_text("proteins.fasta", render_fasta(dataset.proteins))
    store.put_table("truth/directions.tsv", directions_frame(dataset.truth.directions))
    store.put_table("truth/features.tsv", dataset.truth.features)
    store.put_text("pipeline.env", pipeline_env(config))
    return store.commit()


def run_simulation(config: SimConfig) -> list[Path]:
    return write_simulation(simulate(config), config)
