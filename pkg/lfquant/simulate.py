"""Synthetic LC-MS/MS datasets with known ground truth.

A random proteome is digested into tryptic peptides, each protein
contributes a few species, and every run draws species features from the
feature model scaled by the protein's design abundance.  Optional ion
competition suppresses foreground features that co-elute with background
ones, and optional semi-tryptic contamination adds truncated species to one
sample class.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping

import numpy as np
import pandas as pd
from pyteomics import mass, parser

from .config import SimConfig
from .evaluate import design_to_truth
from .feature_model import DEFAULT_PEAKS, FeatureParams, evaluate_model, isotope_spacing
from .ingest import read_design
from .models import (
    AMINO_ACIDS,
    ClassRule,
    DataError,
    DesignTable,
    Direction,
    Identification,
    Modification,
    ProteinMap,
    Raster,
    SampleSheet,
    SpeciesKey,
    run_label,
)

LOGGER = logging.getLogger(__name__)

TRYPSIN = r"[KR](?=[^P])"
PEPTIDE_LENGTH = (7, 20)
PROTEIN_LENGTH = (250, 500)
CHARGES = (2, 3)
OXIDATION_DELTA = 15.994915
SPIKE_LEVELS = {"QC2": 0.0, "A": 0.25, "B": 0.74, "C": 2.2, "D": 6.7, "E": 20.0}
BACKGROUND_LEVEL = 60.0
BIATECH_BASE = (1.0, 2.0, 5.0, 10.0)
BIATECH_PATTERNS = ((2.0, 1.0), (1.0, 2.0), (4.0, 1.0), (1.0, 4.0), (1.0, 0.0), (0.0, 1.0))
GRID_HALF_WIDTH = 4.0
MZ_OFFSETS = np.arange(-2, 3)
RETENTION_MARGIN = 60.0
SEMI_LEVEL = (0.01, 0.05)
MIN_SEMI_LENGTH = 6
GOOD_FDR = 1e-3
LOW_QUALITY_FDR = (0.0011, 0.05)

TRUTH_COLUMNS = (
    "sample_id",
    "replicate_id",
    "species",
    "protein",
    "role",
    "semi",
    "A",
    "mu",
    "sigma",
    "zeta0",
    "delta",
    "lambda",
    "rho",
    "n_peaks",
    "suppression",
    "detected",
    "identifications",
)


@dataclass(frozen=True)
class SimTruth:
    directions: dict[str, Direction]
    features: pd.DataFrame


@dataclass(frozen=True)
class SimDataset:
    rasters: dict[str, Raster]
    identifications: list[Identification]
    protein_map: ProteinMap
    design: DesignTable
    samples: SampleSheet
    proteins: dict[str, str]
    truth: SimTruth
    catalog: pd.DataFrame


def _lognormal_factors(rng: np.random.Generator, cv: float, size) -> np.ndarray:
    """Mean-one multiplicative noise with coefficient of variation ``cv``."""
    if cv == 0:
        return np.ones(size)
    scale = np.sqrt(np.log1p(cv**2))
    return np.exp(rng.normal(-0.5 * scale**2, scale, size))


def build_design(config: SimConfig, rng: np.random.Generator) -> DesignTable:
    if config.design_path is not None:
        return read_design(config.design_path)
    if config.preset == "cptac":
        classes = list(SPIKE_LEVELS)
        rows = {
            f"{config.foreground_prefix}{index + 1:04d}": [BACKGROUND_LEVEL] * len(classes)
            for index in range(config.proteins)
        }
        rows.update(
            {
                f"{config.background_prefix}{index + 1:03d}": list(SPIKE_LEVELS.values())
                for index in range(config.spike_proteins)
            }
        )
        return DesignTable(pd.DataFrame.from_dict(rows, orient="index", columns=classes))

    prefix = "BIA" if config.preset == "biatech" else "NUL"
    rows = {}
    for index in range(config.proteins):
        base = float(rng.choice(BIATECH_BASE))
        if index < config.differential_proteins:
            case_factor, control_factor = BIATECH_PATTERNS[index % len(BIATECH_PATTERNS)]
        else:
            case_factor = control_factor = 1.0
        rows[f"{prefix}{index + 1:03d}"] = [base * case_factor, base * control_factor]
    columns = [config.case_class, config.control_class]
    return DesignTable(pd.DataFrame.from_dict(rows, orient="index", columns=columns))


def random_protein(rng: np.random.Generator) -> str:
    letters = np.array(sorted(AMINO_ACIDS))
    length = int(rng.integers(PROTEIN_LENGTH[0], PROTEIN_LENGTH[1] + 1))
    return "M" + "".join(rng.choice(letters, size=length - 1))


def tryptic_peptides(sequence: str) -> list[str]:
    low, high = PEPTIDE_LENGTH
    return sorted(
        peptide
        for peptide in parser.cleave(sequence, TRYPSIN)
        if low <= len(peptide) <= high
    )


def species_mz(key: SpeciesKey) -> float:
    value = mass.calculate_mass(sequence=key.sequence, charge=key.charge)
    value += len(key.modifications) * OXIDATION_DELTA / key.charge
    return round(float(value), 6)


def _feature_draws(rng: np.random.Generator, config: SimConfig) -> dict[str, float]:
    latest = max(RETENTION_MARGIN, config.run_length - RETENTION_MARGIN)
    return {
        "a0": float(np.exp(rng.uniform(np.log(config.amplitude_min), np.log(config.amplitude_max)))),
        "mu0": float(rng.uniform(RETENTION_MARGIN, latest)),
        "sigma": float(rng.uniform(config.sigma_min, config.sigma_max)),
        "lam": float(rng.uniform(config.lambda_min, config.lambda_max)),
        "rho": float(rng.uniform(config.rho_min, config.rho_max)),
    }


def _catalog_row(
    key: SpeciesKey, protein: str, draws: dict, scales: dict, parent: str = ""
) -> dict:
    return {
        "species": key.render(),
        "key": key,
        "sequence": key.sequence,
        "charge": key.charge,
        "protein": protein,
        "zeta0": species_mz(key),
        "semi": bool(parent),
        "parent": parent,
        **draws,
        **{f"scale_{name}": value for name, value in scales.items()},
    }


def build_catalog(
    design: DesignTable, config: SimConfig, rng: np.random.Generator
) -> tuple[pd.DataFrame, dict[str, str]]:
    """One row per species; ``scale_<class>`` columns hold per-class multipliers.

    Background species get a log-uniform response factor on top of their
    amplitude, so equimolar spike proteins still span a wide intensity range.
    """
    proteins: dict[str, str] = {}
    rule = ClassRule(config.foreground_prefix, config.background_prefix)
    response = np.log([config.spike_response_min, config.spike_response_max])
    rows = []
    seen: set[str] = set()
    flat = {name: 1.0 for name in design.classes}
    for accession in design.accessions:
        sequence = random_protein(rng)
        spiked = rule.label(accession) == "background"
        proteins[accession] = sequence
        candidates = [peptide for peptide in tryptic_peptides(sequence) if peptide not in seen]
        count = min(len(candidates), int(rng.integers(config.species_min, config.species_max + 1)))
        if count < config.species_min:
            LOGGER.warning("Protein under-digested protein=%s peptides=%d", accession, count)
        chosen = sorted(rng.choice(len(candidates), size=count, replace=False)) if count else []
        for index in chosen:
            peptide = candidates[index]
            seen.add(peptide)
            charge = int(rng.choice(CHARGES))
            keys = [SpeciesKey(peptide, (), charge)]
            if "M" in peptide and rng.random() < config.oxidation_rate:
                oxidized = Modification(
                    peptide.index("M") + 1, mass.std_aa_mass["M"] + OXIDATION_DELTA
                )
                keys.append(SpeciesKey(peptide, (oxidized,), charge))
            for key in keys:
                draws = _feature_draws(rng, config)
                if spiked:
                    draws["a0"] *= float(np.exp(rng.uniform(*response)))
                rows.append(_catalog_row(key, accession, draws, flat))
    return pd.DataFrame(rows), proteins


def inject_semi_tryptic(
    catalog: pd.DataFrame,
    rate: float,
    semi_class: str,
    trace: float,
    config: SimConfig,
    rng: np.random.Generator,
) -> pd.DataFrame:
    """Append C-terminally truncated species at 1-5% of their parent's abundance.

    ``semi_class`` carries the full level, every other class ``trace`` times it.
    A zero rate returns the catalog untouched.
    """
    if rate <= 0:
        return catalog
    classes = [column[len("scale_"):] for column in catalog.columns if column.startswith("scale_")]
    existing = set(catalog["species"])
    rows = []
    for parent in catalog.loc[~catalog["semi"]].itertuples(index=False):
        if rng.random() >= rate:
            continue
        for cut in rng.permutation([1, 2, 3]):
            truncated = parent.sequence[: -int(cut)]
            if len(truncated) >= MIN_SEMI_LENGTH and truncated[-1] not in "KR":
                break
        else:
            continue
        kept = tuple(item for item in parent.key.modifications if item.position <= len(truncated))
        key = SpeciesKey(truncated, kept, parent.charge)
        if key.render() in existing:
            continue
        existing.add(key.render())
        draws = _feature_draws(rng, config)
        draws["a0"] = parent.a0 * float(rng.uniform(*SEMI_LEVEL))
        scales = {name: 1.0 if name == semi_class else trace for name in classes}
        rows.append(_catalog_row(key, parent.protein, draws, scales, parent=parent.species))
    LOGGER.info("Semi-tryptic injection class=%s species=%d trace=%g", semi_class, len(rows), trace)
    if not rows:
        return catalog
    return pd.concat([catalog, pd.DataFrame(rows)], ignore_index=True)


def detect(
    features: pd.DataFrame, floor: float, reference: pd.Series | None = None
) -> pd.DataFrame:
    """Flag features whose amplitude reaches ``floor`` times the run median."""
    reference = features["A"] if reference is None else reference
    threshold = floor * float(np.median(reference)) if len(reference) else 0.0
    flagged = features.copy()
    flagged["detected"] = flagged["A"] >= threshold
    return flagged


def apply_competition(
    features: pd.DataFrame,
    strength: float,
    reach: float = 0.0,
    floor: float = 0.0,
) -> pd.DataFrame:
    """Suppress foreground amplitudes by co-eluting background features.

    ``features`` needs columns A, mu, sigma and role.  Overlapping 2-sigma
    extents compete with weight 1; with ``reach`` > 0 a background feature
    ``gap`` seconds away still competes with weight exp(-gap/reach).
    """
    adjusted = features.copy()
    adjusted["suppression"] = 1.0
    foreground = (adjusted["role"] == "foreground").to_numpy()
    background = (adjusted["role"] == "background").to_numpy()
    if foreground.any() and background.any() and strength > 0:
        f = adjusted.loc[foreground]
        b = adjusted.loc[background]
        f_left = (f["mu"] - 2 * f["sigma"]).to_numpy()[:, None]
        f_right = (f["mu"] + 2 * f["sigma"]).to_numpy()[:, None]
        b_left = (b["mu"] - 2 * b["sigma"]).to_numpy()[None, :]
        b_right = (b["mu"] + 2 * b["sigma"]).to_numpy()[None, :]
        gap = np.maximum(np.maximum(f_left - b_right, b_left - f_right), 0.0)
        weight = np.exp(-gap / reach) if reach > 0 else (gap == 0).astype(float)
        pressure = weight @ b["A"].to_numpy() / f["A"].to_numpy()
        adjusted.loc[foreground, "suppression"] = 1.0 / (1.0 + strength * pressure)
    adjusted["A"] = adjusted["A"] * adjusted["suppression"]
    return detect(adjusted, floor, reference=features["A"])


def feature_grid(params: FeatureParams) -> tuple[np.ndarray, np.ndarray]:
    """Whole-second times over mu +/- 4 sigma crossed with 5 m/z points per isotope peak."""
    half = GRID_HALF_WIDTH * params.sigma
    times = np.arange(np.ceil(params.mu - half), np.floor(params.mu + half) + 1.0)
    times = times[times >= 0]
    mzs = np.round((params.centers[:, None] + params.rho * MZ_OFFSETS).ravel(), 6)
    grid_t, grid_m = np.meshgrid(times, mzs, indexing="ij")
    return grid_t.ravel(), grid_m.ravel()


def feature_points(params: FeatureParams) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    times, mzs = feature_grid(params)
    return times, mzs, np.asarray(evaluate_model(params, times, mzs), dtype=float)


def _params(row) -> FeatureParams:
    return FeatureParams(
        amplitude=row.A,
        mu=row.mu,
        sigma=row.sigma,
        zeta0=row.zeta0,
        delta=isotope_spacing(row.charge),
        lam=row.lam,
        rho=row.rho,
    )


def render_raster(
    sample_id: str,
    replicate_id: str,
    features: pd.DataFrame,
    noise: float,
    rng: np.random.Generator,
) -> Raster:
    """Sum every feature onto a shared grid; overlapping points add up."""
    chunks = []
    for row in features.itertuples(index=False):
        times, mzs, values = feature_points(_params(row))
        if noise > 0:
            values = values + rng.normal(0.0, noise * row.A, values.size)
        chunks.append(pd.DataFrame({"rt_sec": times, "mz": mzs, "intensity": values}))
    if not chunks:
        return Raster.from_arrays(sample_id, replicate_id, [], [], [])
    points = pd.concat(chunks, ignore_index=True).groupby(["rt_sec", "mz"], sort=True).sum()
    return Raster.from_arrays(
        sample_id,
        replicate_id,
        points.index.get_level_values("rt_sec").to_numpy(),
        points.index.get_level_values("mz").to_numpy(),
        np.clip(points["intensity"].to_numpy(), 0.0, None),
    )


def draw_identifications(
    sample_id: str,
    replicate_id: str,
    features: pd.DataFrame,
    config: SimConfig,
    rng: np.random.Generator,
) -> tuple[list[Identification], np.ndarray]:
    records = []
    counts = rng.poisson(config.cid_rate * features["A"].to_numpy())
    for row, count in zip(features.itertuples(index=False), counts):
        if count == 0:
            continue
        times = rng.uniform(row.mu - 2 * row.sigma, row.mu + 2 * row.sigma, count)
        low = rng.random(count) < config.low_quality_rate
        fdrs = np.where(
            low, rng.uniform(*LOW_QUALITY_FDR, count), rng.uniform(0.0, GOOD_FDR, count)
        )
        records.extend(
            Identification(
                sample_id=sample_id,
                replicate_id=replicate_id,
                species=row.key,
                retention_time=round(max(float(time), 0.0), 3),
                precursor_mz=float(row.zeta0),
                fdr=round(float(fdr), 6),
            )
            for time, fdr in zip(times, fdrs)
        )
    return records, counts


def simulate(config: SimConfig) -> SimDataset:
    proteome_stream, biology_stream, semi_stream, run_stream = np.random.SeedSequence(
        config.seed
    ).spawn(4)
    proteome_rng = np.random.default_rng(proteome_stream)

    design = build_design(config, proteome_rng)
    for name in (config.case_class, config.control_class):
        if name not in design.classes:
            raise DataError(f"Design has no class {name}")
    catalog, proteins = build_catalog(design, config, proteome_rng)
    if catalog.empty:
        raise DataError("Simulated proteome produced no species")
    base_size = len(catalog)
    catalog = inject_semi_tryptic(
        catalog,
        config.semi_tryptic_rate,
        config.semi_tryptic_class,
        config.semi_tryptic_trace,
        config,
        np.random.default_rng(semi_stream),
    )

    samples = {
        f"{name}_{index + 1:02d}": name
        for name in design.classes
        for index in range(config.biological_replicates)
    }
    sample_ids = list(samples)
    biology = _lognormal_factors(
        np.random.default_rng(biology_stream),
        config.biological_cv,
        (base_size, len(sample_ids)),
    )
    # Truncated species share their parent's biological factor.
    parent_row = {species: row for row, species in enumerate(catalog["species"][:base_size])}
    biology_rows = np.array(
        [parent_row.get(parent, row) for row, parent in enumerate(catalog["parent"])],
        dtype=int,
    )
    levels = design.frame.to_numpy(dtype=float)
    reference = float(np.median(levels[levels > 0])) if np.any(levels > 0) else 1.0
    rule = ClassRule(config.foreground_prefix, config.background_prefix)
    roles = np.array([rule.label(protein) for protein in catalog["protein"]])
    columns = ["species", "key", "protein", "charge", "zeta0", "sigma", "lam", "rho", "semi"]

    run_streams = run_stream.spawn(len(sample_ids) * config.technical_replicates)
    rasters: dict[str, Raster] = {}
    identifications: list[Identification] = []
    truth_frames = []
    for sample_index, sample_id in enumerate(sample_ids):
        class_name = samples[sample_id]
        ratio = design.frame.loc[catalog["protein"], class_name].to_numpy(dtype=float) / reference
        scale = catalog[f"scale_{class_name}"].to_numpy(dtype=float)
        bio = biology[biology_rows, sample_index]
        for replicate_index in range(config.technical_replicates):
            replicate_id = f"r{replicate_index + 1}"
            rng = np.random.default_rng(
                run_streams[sample_index * config.technical_replicates + replicate_index]
            )
            technical = _lognormal_factors(rng, config.technical_cv, len(catalog))
            jitter = rng.normal(0.0, config.rt_jitter, len(catalog))
            features = catalog[columns].copy()
            features["A"] = catalog["a0"].to_numpy() * ratio * scale * bio * technical
            features["mu"] = catalog["mu0"].to_numpy() + jitter
            features["role"] = roles
            features = features.loc[features["A"] > 0].reset_index(drop=True)
            if config.competition == "proportional":
                features = apply_competition(
                    features,
                    config.competition_strength,
                    config.competition_reach,
                    config.detection_floor,
                )
            else:
                features = detect(features.assign(suppression=1.0), config.detection_floor)
            visible = features.loc[features["detected"]].reset_index(drop=True)
            ids, counts = draw_identifications(sample_id, replicate_id, visible, config, rng)
            identifications.extend(ids)
            rasters[run_label(sample_id, replicate_id)] = render_raster(
                sample_id, replicate_id, visible, config.noise, rng
            )
            features["identifications"] = 0
            features.loc[features["detected"], "identifications"] = counts
            features.insert(0, "replicate_id", replicate_id)
            features.insert(0, "sample_id", sample_id)
            truth_frames.append(features)

    LOGGER.info(
        "Simulation complete preset=%s proteins=%d species=%d runs=%d identifications=%d",
        config.preset,
        len(design.accessions),
        len(catalog),
        len(rasters),
        len(identifications),
    )
    return SimDataset(
        rasters=rasters,
        identifications=identifications,
        protein_map=ProteinMap.from_pairs(zip(catalog["sequence"], catalog["protein"])),
        design=design,
        samples=SampleSheet(samples),
        proteins=proteins,
        truth=SimTruth(
            directions=design_to_truth(design, config.case_class, config.control_class),
            features=truth_features(truth_frames),
        ),
        catalog=catalog,
    )


def truth_features(frames: list[pd.DataFrame]) -> pd.DataFrame:
    if not frames:
        return pd.DataFrame(columns=list(TRUTH_COLUMNS))
    features = pd.concat(frames, ignore_index=True)
    features["delta"] = [isotope_spacing(int(charge)) for charge in features["charge"]]
    features["n_peaks"] = DEFAULT_PEAKS
    return features.rename(columns={"lam": "lambda"})[list(TRUTH_COLUMNS)]


def directions_frame(directions: Mapping[str, Direction]) -> pd.DataFrame:
    proteins = sorted(directions)
    return pd.DataFrame(
        {
            "protein_accession": proteins,
            "direction": [directions[protein].value for protein in proteins],
        }
    )


def pipeline_env(config: SimConfig) -> str:
    """Pipeline configuration pointing at the files written next to it."""
    lines = [
        "# Generated by lfquant simulate",
        "LFQ_IDENTIFICATIONS=ids.tsv",
        "LFQ_RASTER_DIR=rasters",
        "LFQ_PROTEIN_MAP=protein_map.tsv",
        "LFQ_SAMPLES=samples.tsv",
        "LFQ_DESIGN=design.tsv",
        "LFQ_FASTA=proteins.fasta",
        f"LFQ_CASE_CLASS={config.case_class}",
        f"LFQ_CONTROL_CLASS={config.control_class}",
        f"LFQ_INTERFERENCE_CLASS={config.interference_class}",
        f"LFQ_FOREGROUND_PREFIX={config.foreground_prefix}",
        f"LFQ_BACKGROUND_PREFIX={config.background_prefix}",
        f"LFQ_SEED={config.seed}",
        "LFQ_OUT_DIR=out",
    ]
    return "\n".join(lines) + "\n"
