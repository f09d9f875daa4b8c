from __future__ import annotations

import os
import tempfile
import unittest
from pathlib import Path
from unittest.mock import patch

from lfquant.config import (
    load_pipeline_config,
    load_sim_config,
    require_classes,
    runtime_dir,
)
from lfquant.models import ConfigError, Measure, RollupLevel


class PipelineConfigTests(unittest.TestCase):
    def test_defaults(self) -> None:
        config = load_pipeline_config(environ={})
        self.assertEqual(config.fdr_threshold, 0.001)
        self.assertEqual(config.min_presence, 3)
        self.assertEqual(
            config.levels, (RollupLevel.SPECIES, RollupLevel.PEPTIDE, RollupLevel.PROTEIN)
        )
        self.assertEqual(config.measures, (Measure.SPECTRAL_COUNT, Measure.ION_ABUNDANCE))
        self.assertEqual(config.permutations, 1500)
        self.assertEqual(config.alpha, 0.05)
        self.assertEqual(config.workers, 1)
        self.assertTrue(config.proline_rule)
        self.assertEqual(config.out_dir, Path.cwd() / "out")

    def test_file_then_environment_then_overrides(self) -> None:
        with tempfile.TemporaryDirectory() as directory:
            path = Path(directory) / "lfquant.env"
            path.write_text(
                "# comment\n"
                "LFQ_CASE_CLASS=Mix1\n"
                "LFQ_CONTROL_CLASS='Mix2'\n"
                "LFQ_PERMUTATIONS=100\n"
                "LFQ_SEED=3\n"
                "LFQ_IDENTIFICATIONS=data/ids.tsv\n",
                encoding="utf-8",
            )
            config = load_pipeline_config(
                path,
                overrides={"LFQ_SEED": "9"},
                environ={"LFQ_PERMUTATIONS": "200", "SIM_SEED": "5"},
            )
            self.assertEqual(config.identifications, Path(directory).resolve() / "data" / "ids.tsv")
        self.assertEqual((config.case_class, config.control_class), ("Mix1", "Mix2"))
        self.assertEqual(config.permutations, 200)
        self.assertEqual(config.seed, 9)
        self.assertEqual(config.interference_class, "Mix1")

    def test_duplicate_levels_collapse(self) -> None:
        config = load_pipeline_config(
            overrides={"LFQ_LEVELS": "protein, species,protein"}, environ={}
        )
        self.assertEqual(config.levels, (RollupLevel.PROTEIN, RollupLevel.SPECIES))

    def test_invalid_values(self) -> None:
        for key, value in (
            ("LFQ_FDR_THRESHOLD", "0"),
            ("LFQ_FDR_THRESHOLD", "1.5"),
            ("LFQ_ALPHA", "nan"),
            ("LFQ_PERMUTATIONS", "many"),
            ("LFQ_MIN_PRESENCE", "0"),
            ("LFQ_LEVELS", "gene"),
            ("LFQ_MEASURES", " , "),
        ):
            with self.subTest(key=key, value=value):
                with self.assertRaises(ConfigError):
                    load_pipeline_config(overrides={key: value}, environ={})

    def test_missing_file(self) -> None:
        with self.assertRaises(ConfigError):
            load_pipeline_config(Path("/nonexistent/lfquant.env"), environ={})

    def test_required_classes(self) -> None:
        with self.assertRaises(ConfigError) as raised:
            require_classes(load_pipeline_config(environ={}))
        self.assertIn("LFQ_CASE_CLASS", str(raised.exception))
        with self.assertRaises(ConfigError):
            require_classes(
                load_pipeline_config(
                    overrides={"LFQ_CASE_CLASS": "A", "LFQ_CONTROL_CLASS": "A"}, environ={}
                )
            )

    def test_process_environment_is_read(self) -> None:
        with patch.dict(os.environ, {"LFQ_WORKERS": "4"}):
            self.assertEqual(load_pipeline_config().workers, 4)


class SimConfigTests(unittest.TestCase):
    def test_cptac_preset(self) -> None:
        config = load_sim_config(overrides={"SIM_PRESET": "cptac"}, environ={})
        self.assertEqual((config.case_class, config.control_class), ("QC2", "E"))
        self.assertEqual(config.interference_class, "E")
        self.assertEqual(config.competition, "proportional")
        self.assertEqual((config.foreground_prefix, config.background_prefix), ("YST", "UPS"))
        self.assertEqual((config.spike_response_min, config.spike_response_max), (0.3, 30.0))
        self.assertEqual(config.competition_reach, 10.0)

    def test_spike_response_bounds_are_ordered(self) -> None:
        with self.assertRaises(ConfigError):
            load_sim_config(
                overrides={"SIM_SPIKE_RESPONSE_MIN": "5", "SIM_SPIKE_RESPONSE_MAX": "2"},
                environ={},
            )

    def test_explicit_values_beat_preset(self) -> None:
        config = load_sim_config(
            overrides={"SIM_PRESET": "cptac", "SIM_COMPETITION": "off", "SIM_PROTEINS": "10"},
            environ={},
        )
        self.assertEqual(config.competition, "off")
        self.assertEqual(config.proteins, 10)

    def test_semi_tryptic_class_defaults_to_case(self) -> None:
        config = load_sim_config(environ={})
        self.assertEqual(config.preset, "biatech")
        self.assertEqual(config.semi_tryptic_class, "Mix1")
        self.assertEqual(config.semi_tryptic_rate, 0.0)

    def test_invalid_values(self) -> None:
        for overrides in (
            {"SIM_PRESET": "unknown"},
            {"SIM_COMPETITION": "quadratic"},
            {"SIM_SIGMA_MIN": "5", "SIM_SIGMA_MAX": "4"},
            {"SIM_DIFFERENTIAL_PROTEINS": "100", "SIM_PROTEINS": "10"},
            {"SIM_DESIGN": "design.tsv", "SIM_CASE_CLASS": ""},
            {"SIM_SEMI_TRYPTIC_RATE": "1.5"},
        ):
            with self.subTest(overrides=overrides):
                with self.assertRaises(ConfigError):
                    load_sim_config(overrides=overrides, environ={})


class RuntimeDirTests(unittest.TestCase):
    def test_environment_beats_file(self) -> None:
        with tempfile.TemporaryDirectory() as directory:
            path = Path(directory) / "lfquant.env"
            path.write_text("LFQ_RUNTIME_DIR=/tmp/from-file\n", encoding="utf-8")
            self.assertEqual(runtime_dir(path, environ={}), Path("/tmp/from-file"))
            self.assertEqual(
                runtime_dir(path, environ={"LFQ_RUNTIME_DIR": "/tmp/from-env"}),
                Path("/tmp/from-env"),
            )

    def test_default_is_expanded(self) -> None:
        self.assertEqual(runtime_dir(None, environ={}), Path.home() / ".local/share/lfquant")


if __name__ == "__main__":
    unittest.main()
