from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .models import ClassRule, DataError, DesignTable, Direction
from .stats import TauResult

LOGGER = logging.getLogger(__name__)

AUC_DECIMALS = 3


@dataclass(frozen=True)
class RocCurve:
    points: pd.DataFrame
    auc: float
    positives: int
    negatives: int


def design_to_truth(
    design: DesignTable, case_class: str, control_class: str
) -> dict[str, Direction]:
    for name in (case_class, control_class):
        if name not in design.classes:
            raise DataError(f"Design has no class {name}")
    truth = {}
    for accession, case, control in zip(
        design.accessions,
        design.frame[case_class].to_numpy(dtype=float),
        design.frame[control_class].to_numpy(dtype=float),
    ):
        if case > control:
            truth[accession] = Direction.UP
        elif case < control:
            truth[accession] = Direction.DOWN
        else:
            truth[accession] = Direction.NULL
    return truth


def scores_from_results(results: Sequence[TauResult]) -> dict[str, float]:
    return {result.protein: 1.0 - result.p_value for result in results}


def roc(scores: Mapping[str, float], truth: Mapping[str, Direction]) -> RocCurve:
    """ROC of pooled up/down positives against null negatives.

    Proteins missing from either mapping are not scored.
    """
    proteins = sorted(set(scores) & set(truth))
    values = np.array([scores[protein] for protein in proteins], dtype=float)
    positive = np.array([truth[protein] is not Direction.NULL for protein in proteins])
    positives, negatives = int(positive.sum()), int((~positive).sum())
    if positives == 0 or negatives == 0:
        raise DataError(
            f"ROC needs positive and negative proteins (positives={positives}, negatives={negatives})"
        )

    thresholds = np.unique(values)[::-1]
    tpr = [0.0]
    fpr = [0.0]
    for threshold in thresholds:
        called = values >= threshold
        tpr.append(float((called & positive).sum()) / positives)
        fpr.append(float((called & ~positive).sum()) / negatives)
    points = pd.DataFrame(
        {"threshold": np.concatenate(([np.inf], thresholds)), "fpr": fpr, "tpr": tpr}
    )
    widths = np.diff(fpr)
    heights = 0.5 * (np.asarray(tpr[1:]) + np.asarray(tpr[:-1]))
    auc = float(np.sum(widths * heights))
    return RocCurve(points, auc, positives, negatives)


def confusion_at_fdr(
    results: Sequence[TauResult],
    truth: Mapping[str, Direction] | None,
    rule: ClassRule,
    alpha: float,
) -> pd.DataFrame:
    """Significant calls by direction and accession class."""
    if not 0.0 < alpha <= 1.0:
        raise DataError(f"alpha must be within (0, 1], got {alpha}")
    columns = ["foreground", "background", "other"]
    table = pd.DataFrame(0, index=pd.Index(["up", "down"], name="call"), columns=columns)
    for result in results:
        if truth is not None and result.protein not in truth:
            continue
        if result.q_value > alpha or result.direction is Direction.NULL:
            continue
        table.at[result.direction.value, rule.label(result.protein)] += 1
    return table
