from __future__ import annotations

import unittest

import numpy as np
import pandas as pd

from lfquant.models import DataError, Group, Measure, ProteinMap, QuantMatrix, RollupLevel
from lfquant.rollup import entity_sequence, protein_elements, rollup_matrix

NAN = np.nan
SPECIES = ["AAAPEPTIDEK+2", "AAAPEPTIDEK+3", "GGGPEPTIDER+2", "MMMPEPTIDEK+2"]


def protein_map() -> ProteinMap:
    return ProteinMap.from_pairs(
        [
            ("AAAPEPTIDEK", "P1"),
            ("GGGPEPTIDER", "P1"),
            ("GGGPEPTIDER", "P2"),
            ("MMMPEPTIDEK", "P3"),
        ]
    )


def species_matrix() -> QuantMatrix:
    frame = pd.DataFrame(
        {
            "S1": [1.0, 2.0, 4.0, NAN],
            "S2": [NAN, 3.0, NAN, NAN],
            "S3": [5.0, NAN, 1.0, 2.0],
        },
        index=SPECIES,
    )
    groups = {"S1": Group.CASE, "S2": Group.CASE, "S3": Group.CONTROL}
    return QuantMatrix(Measure.ION_ABUNDANCE, RollupLevel.SPECIES, frame, groups)


class RollupTests(unittest.TestCase):
    def test_species_sum_into_peptides(self) -> None:
        peptides = rollup_matrix(species_matrix(), RollupLevel.PEPTIDE, protein_map())
        self.assertEqual(peptides.level, RollupLevel.PEPTIDE)
        self.assertEqual(peptides.entities, ["AAAPEPTIDEK", "GGGPEPTIDER", "MMMPEPTIDEK"])
        self.assertEqual(peptides.values.loc["AAAPEPTIDEK", "S1"], 3.0)
        self.assertEqual(peptides.values.loc["AAAPEPTIDEK", "S2"], 3.0)
        self.assertEqual(peptides.groups, species_matrix().groups)

    def test_all_missing_constituents_stay_missing(self) -> None:
        peptides = rollup_matrix(species_matrix(), RollupLevel.PEPTIDE, protein_map())
        self.assertTrue(np.isnan(peptides.values.loc["MMMPEPTIDEK", "S1"]))
        self.assertTrue(np.isnan(peptides.values.loc["GGGPEPTIDER", "S2"]))

    def test_shared_peptide_counts_toward_every_protein(self) -> None:
        proteins = rollup_matrix(species_matrix(), RollupLevel.PROTEIN, protein_map())
        self.assertEqual(proteins.entities, ["P1", "P2", "P3"])
        self.assertEqual(proteins.values.loc["P1", "S1"], 7.0)
        self.assertEqual(proteins.values.loc["P2", "S1"], 4.0)
        self.assertEqual(proteins.values.loc["P2", "S3"], 1.0)

    def test_two_steps_equal_one_step(self) -> None:
        pm = protein_map()
        direct = rollup_matrix(species_matrix(), RollupLevel.PROTEIN, pm)
        staged = rollup_matrix(
            rollup_matrix(species_matrix(), RollupLevel.PEPTIDE, pm), RollupLevel.PROTEIN, pm
        )
        pd.testing.assert_frame_equal(direct.values, staged.values)

    def test_same_level_is_a_copy(self) -> None:
        m = species_matrix()
        same = rollup_matrix(m, RollupLevel.SPECIES, protein_map())
        pd.testing.assert_frame_equal(same.values, m.values)
        self.assertIsNot(same.values, m.values)

    def test_cannot_roll_down(self) -> None:
        proteins = rollup_matrix(species_matrix(), RollupLevel.PROTEIN, protein_map())
        with self.assertRaises(DataError):
            rollup_matrix(proteins, RollupLevel.PEPTIDE, protein_map())

    def test_unmapped_sequence_is_named(self) -> None:
        pm = ProteinMap.from_pairs([("AAAPEPTIDEK", "P1")])
        with self.assertRaises(DataError) as raised:
            rollup_matrix(species_matrix(), RollupLevel.PROTEIN, pm)
        self.assertIn("GGGPEPTIDER", str(raised.exception))


class ProteinElementTests(unittest.TestCase):
    def test_species_elements_per_protein(self) -> None:
        elements = protein_elements(protein_map(), species_matrix(), RollupLevel.SPECIES)
        by_protein = {item.protein: item for item in elements}
        self.assertEqual(by_protein["P1"].K, 3)
        self.assertEqual(by_protein["P2"].elements, ("GGGPEPTIDER+2",))

    def test_protein_level_has_one_element(self) -> None:
        proteins = rollup_matrix(species_matrix(), RollupLevel.PROTEIN, protein_map())
        elements = protein_elements(protein_map(), proteins, RollupLevel.PROTEIN)
        self.assertTrue(all(item.elements == (item.protein,) for item in elements))

    def test_level_must_match_matrix(self) -> None:
        with self.assertRaises(DataError):
            protein_elements(protein_map(), species_matrix(), RollupLevel.PEPTIDE)

    def test_entity_sequence_strips_charge_and_modifications(self) -> None:
        self.assertEqual(entity_sequence("PEPM[147.035]IDEK+3", RollupLevel.SPECIES), "PEPMIDEK")
        self.assertEqual(entity_sequence("PEPMIDEK", RollupLevel.PEPTIDE), "PEPMIDEK")


if __name__ == "__main__":
    unittest.main()
