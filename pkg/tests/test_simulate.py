from __future__ import annotations

import unittest

import numpy as np
import pandas as pd
from pyteomics import mass

from lfquant.config import load_sim_config
from lfquant.evaluate import design_to_truth
from lfquant.feature_model import FeatureParams, isotope_spacing
from lfquant.models import Direction, Modification, SpeciesKey
from lfquant.simulate import (
    SPIKE_LEVELS,
    TRUTH_COLUMNS,
    apply_competition,
    build_catalog,
    build_design,
    detect,
    feature_grid,
    inject_semi_tryptic,
    pipeline_env,
    render_raster,
    simulate,
    species_mz,
    tryptic_peptides,
)

SMALL = {
    "SIM_PROTEINS": "6",
    "SIM_DIFFERENTIAL_PROTEINS": "2",
    "SIM_BIOLOGICAL_REPLICATES": "2",
    "SIM_TECHNICAL_REPLICATES": "1",
    "SIM_SPECIES_MIN": "1",
    "SIM_SPECIES_MAX": "2",
    "SIM_RUN_LENGTH": "600",
}


def small_config(**extra: str):
    return load_sim_config(overrides={**SMALL, **extra}, environ={})


def competing(rows: list[tuple[float, float, float, str]]) -> pd.DataFrame:
    return pd.DataFrame(rows, columns=["A", "mu", "sigma", "role"])


class DesignTests(unittest.TestCase):
    def test_cptac_design_levels(self) -> None:
        config = load_sim_config(
            overrides={"SIM_PRESET": "cptac", "SIM_PROTEINS": "3", "SIM_SPIKE_PROTEINS": "2"},
            environ={},
        )
        design = build_design(config, np.random.default_rng(0))
        self.assertEqual(design.classes, list(SPIKE_LEVELS))
        self.assertEqual(design.accessions, ["YST0001", "YST0002", "YST0003", "UPS001", "UPS002"])
        self.assertEqual(design.abundance("YST0002", "E"), 60.0)
        self.assertEqual(design.abundance("UPS001", "QC2"), 0.0)
        self.assertEqual(design.abundance("UPS002", "E"), 20.0)

    def test_biatech_directions(self) -> None:
        config = load_sim_config(overrides={"SIM_PRESET": "biatech"}, environ={})
        design = build_design(config, np.random.default_rng(0))
        self.assertEqual(design.classes, ["Mix1", "Mix2"])
        truth = simulate_truth_counts(design)
        self.assertEqual(truth, {Direction.UP: 9, Direction.DOWN: 9, Direction.NULL: 36})

    def test_null_design_has_no_differences(self) -> None:
        config = load_sim_config(overrides={"SIM_PRESET": "null"}, environ={})
        design = build_design(config, np.random.default_rng(0))
        np.testing.assert_array_equal(design.frame["Case"], design.frame["Control"])


def simulate_truth_counts(design) -> dict[Direction, int]:
    counts = {direction: 0 for direction in Direction}
    for direction in design_to_truth(design, "Mix1", "Mix2").values():
        counts[direction] += 1
    return counts


class DigestTests(unittest.TestCase):
    def test_trypsin_skips_proline(self) -> None:
        self.assertEqual(
            tryptic_peptides("MAAAAAAAKPGGGGGGGRLLLLLLLK"),
            ["LLLLLLLK", "MAAAAAAAKPGGGGGGGR"],
        )

    def test_short_peptides_are_dropped(self) -> None:
        self.assertEqual(tryptic_peptides("MAKGGRLLLLLLLLK"), ["LLLLLLLLK"])

    def test_species_mz(self) -> None:
        plain = SpeciesKey("PEPTIDEMK", (), 2)
        expected = mass.calculate_mass(sequence="PEPTIDEMK", charge=2)
        self.assertAlmostEqual(species_mz(plain), expected, places=5)
        oxidized = SpeciesKey("PEPTIDEMK", (Modification(8, 147.035),), 2)
        self.assertAlmostEqual(species_mz(oxidized) - species_mz(plain), 15.994915 / 2, places=5)

    def test_catalog_species_are_unique(self) -> None:
        config = small_config(SIM_OXIDATION_RATE="1.0")
        rng = np.random.default_rng(3)
        catalog, proteins = build_catalog(build_design(config, rng), config, rng)
        self.assertEqual(len(proteins), 6)
        self.assertFalse(catalog["species"].duplicated().any())
        self.assertTrue(all(sequence.startswith("M") for sequence in proteins.values()))
        oxidized = catalog[[bool(key.modifications) for key in catalog["key"]]]
        for row in oxidized.itertuples(index=False):
            self.assertIn("M", row.sequence)

    def test_spike_response_spreads_background_only(self) -> None:
        config = load_sim_config(
            overrides={
                "SIM_PRESET": "cptac",
                "SIM_PROTEINS": "4",
                "SIM_SPIKE_PROTEINS": "6",
                "SIM_SPIKE_RESPONSE_MIN": "0.01",
                "SIM_SPIKE_RESPONSE_MAX": "100",
            },
            environ={},
        )
        rng = np.random.default_rng(8)
        catalog, _ = build_catalog(build_design(config, rng), config, rng)
        spiked = catalog["protein"].str.startswith("UPS")
        foreground = catalog.loc[~spiked, "a0"]
        background = catalog.loc[spiked, "a0"]
        self.assertTrue(foreground.between(2e4, 5e5).all())
        self.assertTrue(background.between(2e2, 5e7).all())
        self.assertFalse(background.between(2e4, 5e5).all())


class SemiTrypticTests(unittest.TestCase):
    def catalog(self):
        config = small_config(SIM_SPECIES_MIN="3", SIM_SPECIES_MAX="4")
        rng = np.random.default_rng(5)
        catalog, _ = build_catalog(build_design(config, rng), config, rng)
        return catalog, config

    def test_zero_rate_returns_catalog(self) -> None:
        catalog, config = self.catalog()
        self.assertIs(
            inject_semi_tryptic(catalog, 0.0, "Mix1", 0.0, config, np.random.default_rng(0)),
            catalog,
        )

    def test_truncated_species_follow_parent(self) -> None:
        catalog, config = self.catalog()
        injected = inject_semi_tryptic(catalog, 1.0, "Mix1", 0.1, config, np.random.default_rng(0))
        added = injected.iloc[len(catalog):]
        self.assertGreater(len(added), 0)
        parents = catalog.set_index("species")
        for row in added.itertuples(index=False):
            parent = parents.loc[row.parent]
            self.assertTrue(row.semi)
            self.assertTrue(parent.sequence.startswith(row.sequence))
            self.assertGreaterEqual(len(row.sequence), 6)
            self.assertNotIn(row.sequence[-1], "KR")
            self.assertEqual(row.protein, parent.protein)
            self.assertLessEqual(row.a0, 0.05 * parent.a0)
            self.assertGreaterEqual(row.a0, 0.01 * parent.a0)
            self.assertEqual((row.scale_Mix1, row.scale_Mix2), (1.0, 0.1))
        pd.testing.assert_frame_equal(injected.iloc[: len(catalog)], catalog)


class CompetitionTests(unittest.TestCase):
    def test_separated_features_are_untouched(self) -> None:
        features = competing([(100.0, 100.0, 2.0, "foreground"), (1000.0, 200.0, 2.0, "background")])
        adjusted = apply_competition(features, 1.0)
        np.testing.assert_allclose(adjusted["suppression"], [1.0, 1.0])
        np.testing.assert_allclose(adjusted["A"], features["A"])

    def test_overlap_suppresses_foreground_only(self) -> None:
        features = competing([(100.0, 100.0, 2.0, "foreground"), (300.0, 103.0, 2.0, "background")])
        adjusted = apply_competition(features, 1.0)
        self.assertAlmostEqual(adjusted.loc[0, "A"], 100.0 / 4.0)
        self.assertEqual(adjusted.loc[1, "A"], 300.0)

    def test_reach_extends_competition(self) -> None:
        features = competing([(100.0, 100.0, 2.0, "foreground"), (100.0, 118.0, 2.0, "background")])
        # the 2-sigma extents are 10 s apart
        adjusted = apply_competition(features, 1.0, reach=10.0)
        self.assertAlmostEqual(adjusted.loc[0, "suppression"], 1.0 / (1.0 + np.exp(-1.0)))

    def test_strength_zero_disables(self) -> None:
        features = competing([(100.0, 100.0, 2.0, "foreground"), (300.0, 100.0, 2.0, "background")])
        self.assertEqual(apply_competition(features, 0.0).loc[0, "A"], 100.0)

    def test_detection_floor_uses_run_median(self) -> None:
        features = competing(
            [(1.0, 10.0, 2.0, "foreground"), (100.0, 50.0, 2.0, "foreground"), (100.0, 90.0, 2.0, "background")]
        )
        flagged = detect(features, 0.05)
        self.assertEqual(list(flagged["detected"]), [False, True, True])


class RasterTests(unittest.TestCase):
    def params(self) -> FeatureParams:
        return FeatureParams(1e4, 3.0, 2.0, 500.0, isotope_spacing(2), 1.0, 0.01)

    def test_grid_is_whole_seconds_from_zero(self) -> None:
        times, mzs = feature_grid(self.params())
        self.assertEqual(times.min(), 0.0)
        np.testing.assert_array_equal(times, np.round(times))
        self.assertEqual(len(np.unique(mzs)), 20)

    def test_overlapping_points_add_up(self) -> None:
        row = {
            "A": 1e4, "mu": 30.0, "sigma": 2.0, "zeta0": 500.0, "charge": 2, "lam": 1.0, "rho": 0.01,
        }
        single = render_raster("S1", "r1", pd.DataFrame([row]), 0.0, np.random.default_rng(0))
        double = render_raster("S1", "r1", pd.DataFrame([row, row]), 0.0, np.random.default_rng(0))
        np.testing.assert_allclose(double.intensities, 2.0 * single.intensities)

    def test_no_features_gives_empty_raster(self) -> None:
        empty = render_raster("S1", "r1", pd.DataFrame(), 0.0, np.random.default_rng(0))
        self.assertEqual(empty.size, 0)


class SimulationTests(unittest.TestCase):
    def test_same_seed_same_dataset(self) -> None:
        first = simulate(small_config(SIM_SEED="11"))
        second = simulate(small_config(SIM_SEED="11"))
        self.assertEqual(first.identifications, second.identifications)
        self.assertEqual(sorted(first.rasters), sorted(second.rasters))
        for run, raster in first.rasters.items():
            np.testing.assert_array_equal(raster.intensities, second.rasters[run].intensities)
        pd.testing.assert_frame_equal(first.truth.features, second.truth.features)

    def test_different_seed_differs(self) -> None:
        first = simulate(small_config(SIM_SEED="11"))
        second = simulate(small_config(SIM_SEED="12"))
        self.assertNotEqual(first.proteins, second.proteins)

    def test_dataset_layout(self) -> None:
        dataset = simulate(small_config(SIM_TECHNICAL_REPLICATES="2"))
        self.assertEqual(
            sorted(dataset.rasters),
            ["Mix1_01__r1", "Mix1_01__r2", "Mix1_02__r1", "Mix1_02__r2",
             "Mix2_01__r1", "Mix2_01__r2", "Mix2_02__r1", "Mix2_02__r2"],
        )
        self.assertEqual(dataset.samples.samples_of("Mix2"), ["Mix2_01", "Mix2_02"])
        self.assertEqual(list(dataset.truth.features.columns), list(TRUTH_COLUMNS))
        self.assertEqual(
            int(dataset.truth.features["identifications"].sum()), len(dataset.identifications)
        )
        mapped = {sequence for sequence, _ in dataset.protein_map.pairs()}
        self.assertTrue(all(record.species.sequence in mapped for record in dataset.identifications))
        self.assertEqual(set(dataset.truth.directions), set(dataset.design.accessions))

    def test_zero_semi_rate_keeps_base_draws(self) -> None:
        plain = simulate(small_config(SIM_SEED="4"))
        explicit = simulate(small_config(SIM_SEED="4", SIM_SEMI_TRYPTIC_RATE="0"))
        self.assertEqual(plain.identifications, explicit.identifications)
        self.assertFalse(plain.catalog["semi"].any())

    def test_semi_injection_keeps_proteome(self) -> None:
        plain = simulate(small_config(SIM_SEED="4"))
        injected = simulate(small_config(SIM_SEED="4", SIM_SEMI_TRYPTIC_RATE="0.5"))
        self.assertEqual(plain.proteins, injected.proteins)
        base = injected.catalog.loc[~injected.catalog["semi"]].reset_index(drop=True)
        pd.testing.assert_frame_equal(base, plain.catalog)

    def test_pipeline_env_names_classes(self) -> None:
        text = pipeline_env(small_config(SIM_SEED="9"))
        self.assertIn("LFQ_CASE_CLASS=Mix1\n", text)
        self.assertIn("LFQ_CONTROL_CLASS=Mix2\n", text)
        self.assertIn("LFQ_SEED=9\n", text)
        self.assertTrue(text.endswith("LFQ_OUT_DIR=out\n"))


if __name__ == "__main__":
    unittest.main()
