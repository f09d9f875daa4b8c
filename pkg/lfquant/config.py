from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

from .models import ClassRule, ConfigError, Measure, RollupLevel


DEFAULT_RUNTIME_DIR = "~/.local/share/lfquant"
SEED_MAXIMUM = 2**32 - 1


@dataclass(frozen=True)
class PipelineConfig:
    identifications: Path
    raster_dir: Path
    protein_map: Path
    samples: Path
    design: Path
    fasta: Path
    fdr_threshold: float
    min_presence: int
    levels: tuple[RollupLevel, ...]
    measures: tuple[Measure, ...]
    permutations: int
    seed: int
    alpha: float
    case_class: str
    control_class: str
    interference_class: str
    foreground_prefix: str
    background_prefix: str
    proline_rule: bool
    workers: int
    out_dir: Path
    runtime_dir: Path
    log_file: Path
    config_file: Path | None

    @property
    def class_rule(self) -> ClassRule:
        return ClassRule(self.foreground_prefix, self.background_prefix)


@dataclass(frozen=True)
class SimConfig:
    preset: str
    design_path: Path | None
    case_class: str
    control_class: str
    interference_class: str
    proteins: int
    spike_proteins: int
    differential_proteins: int
    biological_replicates: int
    technical_replicates: int
    species_min: int
    species_max: int
    amplitude_min: float
    amplitude_max: float
    sigma_min: float
    sigma_max: float
    lambda_min: float
    lambda_max: float
    rho_min: float
    rho_max: float
    run_length: float
    rt_jitter: float
    biological_cv: float
    technical_cv: float
    noise: float
    competition: str
    competition_strength: float
    competition_reach: float
    detection_floor: float
    spike_response_min: float
    spike_response_max: float
    semi_tryptic_rate: float
    semi_tryptic_class: str
    semi_tryptic_trace: float
    cid_rate: float
    low_quality_rate: float
    oxidation_rate: float
    foreground_prefix: str
    background_prefix: str
    seed: int
    out_dir: Path
    config_file: Path | None = None


PRESETS: dict[str, dict[str, str]] = {
    "biatech": {
        "SIM_CASE_CLASS": "Mix1",
        "SIM_CONTROL_CLASS": "Mix2",
        "SIM_PROTEINS": "54",
        "SIM_SPIKE_PROTEINS": "0",
        "SIM_DIFFERENTIAL_PROTEINS": "18",
        "SIM_COMPETITION": "off",
        "SIM_FOREGROUND_PREFIX": "",
        "SIM_BACKGROUND_PREFIX": "",
    },
    "cptac": {
        "SIM_CASE_CLASS": "QC2",
        "SIM_CONTROL_CLASS": "E",
        "SIM_INTERFERENCE_CLASS": "E",
        "SIM_PROTEINS": "120",
        "SIM_SPIKE_PROTEINS": "48",
        "SIM_DIFFERENTIAL_PROTEINS": "0",
        "SIM_COMPETITION": "proportional",
        "SIM_COMPETITION_STRENGTH": "0.3",
        "SIM_COMPETITION_REACH": "10",
        "SIM_SPIKE_RESPONSE_MIN": "0.3",
        "SIM_SPIKE_RESPONSE_MAX": "30",
        "SIM_CID_RATE": "3e-4",
        "SIM_FOREGROUND_PREFIX": "YST",
        "SIM_BACKGROUND_PREFIX": "UPS",
    },
    "null": {
        "SIM_CASE_CLASS": "Case",
        "SIM_CONTROL_CLASS": "Control",
        "SIM_PROTEINS": "40",
        "SIM_SPIKE_PROTEINS": "0",
        "SIM_DIFFERENTIAL_PROTEINS": "0",
        "SIM_COMPETITION": "off",
        "SIM_FOREGROUND_PREFIX": "",
        "SIM_BACKGROUND_PREFIX": "",
    },
}


def _parse_env_file(path: Path) -> dict[str, str]:
    values: dict[str, str] = {}
    for raw_line in path.read_text(encoding="utf-8").splitlines():
        line = raw_line.strip()
        if not line or line.startswith("#") or "=" not in line:
            continue
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip().strip("\"'")
    return values


def _read_bool(value: str | None, fallback: bool = False) -> bool:
    if value is None:
        return fallback
    return value.strip().lower() in {"1", "true", "yes", "on"}


def _read_int(
    values: Mapping[str, str],
    key: str,
    fallback: int,
    minimum: int,
    maximum: int,
) -> int:
    try:
        parsed = int(values.get(key, str(fallback)))
    except ValueError as exc:
        raise ConfigError(f"{key} must be an integer") from exc
    if parsed < minimum or parsed > maximum:
        raise ConfigError(f"{key} must be between {minimum} and {maximum}")
    return parsed


def _read_float(
    values: Mapping[str, str],
    key: str,
    fallback: float,
    minimum: float,
    maximum: float,
    open_minimum: bool = False,
) -> float:
    try:
        parsed = float(values.get(key, repr(fallback)))
    except ValueError as exc:
        raise ConfigError(f"{key} must be a number") from exc
    below = parsed <= minimum if open_minimum else parsed < minimum
    if below or parsed > maximum or parsed != parsed:
        bracket = "(" if open_minimum else "["
        raise ConfigError(f"{key} must be within {bracket}{minimum:g}, {maximum:g}]")
    return parsed


def _read_choices(values: Mapping[str, str], key: str, fallback: str, kind) -> tuple:
    items = [item.strip() for item in values.get(key, fallback).split(",") if item.strip()]
    if not items:
        raise ConfigError(f"{key} must name at least one value")
    try:
        parsed = tuple(kind(item) for item in items)
    except ValueError as exc:
        allowed = ", ".join(member.value for member in kind)
        raise ConfigError(f"{key} accepts {allowed}") from exc
    return tuple(dict.fromkeys(parsed))


def _collect(
    path: Path | None,
    prefix: str,
    overrides: Mapping[str, str] | None,
    environ: Mapping[str, str] | None,
) -> tuple[dict[str, str], Path]:
    values: dict[str, str] = {}
    base = Path.cwd()
    if path is not None:
        path = path.expanduser()
        if not path.exists():
            raise ConfigError(f"Configuration file not found: {path}")
        values.update(_parse_env_file(path))
        base = path.resolve().parent
    environ = os.environ if environ is None else environ
    values.update({key: value for key, value in environ.items() if key.startswith(prefix)})
    values.update(overrides or {})
    return values, base


def _resolve(base: Path, raw: str) -> Path:
    candidate = Path(raw).expanduser()
    return candidate if candidate.is_absolute() else base / candidate


def load_pipeline_config(
    path: Path | None = None,
    overrides: Mapping[str, str] | None = None,
    environ: Mapping[str, str] | None = None,
) -> PipelineConfig:
    values, base = _collect(path, "LFQ_", overrides, environ)
    runtime_dir = Path(values.get("LFQ_RUNTIME_DIR", DEFAULT_RUNTIME_DIR)).expanduser()
    case_class = values.get("LFQ_CASE_CLASS", "").strip()
    control_class = values.get("LFQ_CONTROL_CLASS", "").strip()
    return PipelineConfig(
        identifications=_resolve(base, values.get("LFQ_IDENTIFICATIONS", "ids.tsv")),
        raster_dir=_resolve(base, values.get("LFQ_RASTER_DIR", "rasters")),
        protein_map=_resolve(base, values.get("LFQ_PROTEIN_MAP", "protein_map.tsv")),
        samples=_resolve(base, values.get("LFQ_SAMPLES", "samples.tsv")),
        design=_resolve(base, values.get("LFQ_DESIGN", "design.tsv")),
        fasta=_resolve(base, values.get("LFQ_FASTA", "proteins.fasta")),
        fdr_threshold=_read_float(values, "LFQ_FDR_THRESHOLD", 0.001, 0.0, 1.0, open_minimum=True),
        min_presence=_read_int(values, "LFQ_MIN_PRESENCE", 3, 1, 10_000),
        levels=_read_choices(values, "LFQ_LEVELS", "species,peptide,protein", RollupLevel),
        measures=_read_choices(values, "LFQ_MEASURES", "count,abundance", Measure),
        permutations=_read_int(values, "LFQ_PERMUTATIONS", 1500, 1, 10_000_000),
        seed=_read_int(values, "LFQ_SEED", 0, 0, SEED_MAXIMUM),
        alpha=_read_float(values, "LFQ_ALPHA", 0.05, 0.0, 1.0, open_minimum=True),
        case_class=case_class,
        control_class=control_class,
        interference_class=values.get("LFQ_INTERFERENCE_CLASS", "").strip() or case_class,
        foreground_prefix=values.get("LFQ_FOREGROUND_PREFIX", "").strip(),
        background_prefix=values.get("LFQ_BACKGROUND_PREFIX", "").strip(),
        proline_rule=_read_bool(values.get("LFQ_PROLINE_RULE"), True),
        workers=_read_int(values, "LFQ_WORKERS", 1, 1, 256),
        out_dir=_resolve(base, values.get("LFQ_OUT_DIR", "out")),
        runtime_dir=runtime_dir,
        log_file=runtime_dir / "lfquant.log",
        config_file=path,
    )


def require_classes(config: PipelineConfig) -> None:
    missing = [
        key
        for key, value in (
            ("LFQ_CASE_CLASS", config.case_class),
            ("LFQ_CONTROL_CLASS", config.control_class),
        )
        if not value
    ]
    if missing:
        raise ConfigError(f"Missing required configuration: {', '.join(missing)}")
    if config.case_class == config.control_class:
        raise ConfigError("LFQ_CASE_CLASS and LFQ_CONTROL_CLASS must differ")


def load_sim_config(
    path: Path | None = None,
    overrides: Mapping[str, str] | None = None,
    environ: Mapping[str, str] | None = None,
) -> SimConfig:
    raw, base = _collect(path, "SIM_", overrides, environ)
    preset = raw.get("SIM_PRESET", "biatech").strip().lower()
    if preset not in PRESETS:
        raise ConfigError(f"SIM_PRESET must be one of {', '.join(PRESETS)}")
    values = {**PRESETS[preset], **raw}

    competition = values.get("SIM_COMPETITION", "off").strip().lower()
    if competition not in {"off", "proportional"}:
        raise ConfigError("SIM_COMPETITION must be off or proportional")
    case_class = values.get("SIM_CASE_CLASS", "").strip()
    control_class = values.get("SIM_CONTROL_CLASS", "").strip()
    design = values.get("SIM_DESIGN", "").strip()
    if design and not (case_class and control_class):
        raise ConfigError("SIM_DESIGN requires SIM_CASE_CLASS and SIM_CONTROL_CLASS")

    config = SimConfig(
        preset=preset,
        design_path=_resolve(base, design) if design else None,
        case_class=case_class,
        control_class=control_class,
        interference_class=values.get("SIM_INTERFERENCE_CLASS", "").strip() or case_class,
        proteins=_read_int(values, "SIM_PROTEINS", 54, 1, 100_000),
        spike_proteins=_read_int(values, "SIM_SPIKE_PROTEINS", 0, 0, 100_000),
        differential_proteins=_read_int(values, "SIM_DIFFERENTIAL_PROTEINS", 0, 0, 100_000),
        biological_replicates=_read_int(values, "SIM_BIOLOGICAL_REPLICATES", 6, 1, 1000),
        technical_replicates=_read_int(values, "SIM_TECHNICAL_REPLICATES", 2, 1, 100),
        species_min=_read_int(values, "SIM_SPECIES_MIN", 2, 1, 1000),
        species_max=_read_int(values, "SIM_SPECIES_MAX", 5, 1, 1000),
        amplitude_min=_read_float(values, "SIM_AMPLITUDE_MIN", 2e4, 0.0, 1e15, open_minimum=True),
        amplitude_max=_read_float(values, "SIM_AMPLITUDE_MAX", 5e5, 0.0, 1e15, open_minimum=True),
        sigma_min=_read_float(values, "SIM_SIGMA_MIN", 2.0, 0.0, 600.0, open_minimum=True),
        sigma_max=_read_float(values, "SIM_SIGMA_MAX", 4.0, 0.0, 600.0, open_minimum=True),
        lambda_min=_read_float(values, "SIM_LAMBDA_MIN", 0.3, 0.0, 10.0, open_minimum=True),
        lambda_max=_read_float(values, "SIM_LAMBDA_MAX", 1.5, 0.0, 10.0, open_minimum=True),
        rho_min=_read_float(values, "SIM_RHO_MIN", 0.006, 0.0, 1.0, open_minimum=True),
        rho_max=_read_float(values, "SIM_RHO_MAX", 0.015, 0.0, 1.0, open_minimum=True),
        run_length=_read_float(values, "SIM_RUN_LENGTH", 3600.0, 0.0, 1e6, open_minimum=True),
        rt_jitter=_read_float(values, "SIM_RT_JITTER", 1.0, 0.0, 600.0),
        biological_cv=_read_float(values, "SIM_BIOLOGICAL_CV", 0.15, 0.0, 10.0),
        technical_cv=_read_float(values, "SIM_TECHNICAL_CV", 0.05, 0.0, 10.0),
        noise=_read_float(values, "SIM_NOISE", 0.0, 0.0, 10.0),
        competition=competition,
        competition_strength=_read_float(values, "SIM_COMPETITION_STRENGTH", 1.0, 0.0, 1e6),
        competition_reach=_read_float(values, "SIM_COMPETITION_REACH", 0.0, 0.0, 1e6),
        detection_floor=_read_float(values, "SIM_DETECTION_FLOOR", 0.01, 0.0, 1.0),
        spike_response_min=_read_float(
            values, "SIM_SPIKE_RESPONSE_MIN", 1.0, 0.0, 1e6, open_minimum=True
        ),
        spike_response_max=_read_float(
            values, "SIM_SPIKE_RESPONSE_MAX", 1.0, 0.0, 1e6, open_minimum=True
        ),
        semi_tryptic_rate=_read_float(values, "SIM_SEMI_TRYPTIC_RATE", 0.0, 0.0, 1.0),
        semi_tryptic_class=values.get("SIM_SEMI_TRYPTIC_CLASS", "").strip() or case_class,
        semi_tryptic_trace=_read_float(values, "SIM_SEMI_TRYPTIC_TRACE", 0.0, 0.0, 1.0),
        cid_rate=_read_float(values, "SIM_CID_RATE", 1e-4, 0.0, 1e6),
        low_quality_rate=_read_float(values, "SIM_LOW_QUALITY_RATE", 0.1, 0.0, 1.0),
        oxidation_rate=_read_float(values, "SIM_OXIDATION_RATE", 0.2, 0.0, 1.0),
        foreground_prefix=values.get("SIM_FOREGROUND_PREFIX", "").strip(),
        background_prefix=values.get("SIM_BACKGROUND_PREFIX", "").strip(),
        seed=_read_int(values, "SIM_SEED", 0, 0, SEED_MAXIMUM),
        out_dir=_resolve(base, values.get("SIM_OUT_DIR", "simulated")),
        config_file=path,
    )
    for low, high, name in (
        (config.species_min, config.species_max, "SPECIES"),
        (config.amplitude_min, config.amplitude_max, "AMPLITUDE"),
        (config.sigma_min, config.sigma_max, "SIGMA"),
        (config.lambda_min, config.lambda_max, "LAMBDA"),
        (config.rho_min, config.rho_max, "RHO"),
        (config.spike_response_min, config.spike_response_max, "SPIKE_RESPONSE"),
    ):
        if low > high:
            raise ConfigError(f"SIM_{name}_MIN must not exceed SIM_{name}_MAX")
    if config.differential_proteins > config.proteins:
        raise ConfigError("SIM_DIFFERENTIAL_PROTEINS cannot exceed SIM_PROTEINS")
    return config


def runtime_dir(
    path: Path | None = None, environ: Mapping[str, str] | None = None
) -> Path:
    """Log directory for commands that do not load a pipeline configuration."""
    values = _parse_env_file(path) if path is not None and path.exists() else {}
    environ = os.environ if environ is None else environ
    raw = environ.get("LFQ_RUNTIME_DIR") or values.get("LFQ_RUNTIME_DIR") or DEFAULT_RUNTIME_DIR
    return Path(raw).expanduser()
