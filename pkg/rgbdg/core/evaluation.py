"""
Matching proposals against ground truth and aggregating the outcomes.

Boxes use inclusive pixel corners: a box spans ``max - min + 1`` pixels per
axis, centres are ``(min + max) / 2``, and the enclosing-box diagonal is
measured between outer pixel edges so it is never zero.
"""
from __future__ import annotations
from enum import Enum
from typing import Dict, Iterable, List, Optional

import numpy as np
from pydantic import BaseModel, Field, model_validator

from rgbdg.core.clustering import ProposalSet
from rgbdg.core.scene_model import BoundingBox, Category, Mode
from rgbdg.utils.errors import ZeroMarginError

# candidates inspected per scene
MATCH_DEPTH = 3
# expected count below which a chi-squared approximation is considered unreliable
LOW_EXPECTED = 5.0


class MatchedRank(str, Enum):
    FIRST = "first"
    SECOND = "second"
    THIRD = "third"
    NONE = "none"


RANK_ORDER = [MatchedRank.FIRST, MatchedRank.SECOND, MatchedRank.THIRD, MatchedRank.NONE]


def iou(a: BoundingBox, b: BoundingBox) -> float:
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min) + 1
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min) + 1
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def diou_matching_score(candidate: BoundingBox, target: BoundingBox) -> float:
    """1 - L_DIoU = IoU - rho^2 / c^2, in (-1, 1]."""
    overlap = iou(candidate, target)
    (cx1, cy1), (cx2, cy2) = candidate.center, target.center
    rho2 = (cx1 - cx2) ** 2 + (cy1 - cy2) ** 2
    ew = max(candidate.x_max, target.x_max) - min(candidate.x_min, target.x_min) + 1
    eh = max(candidate.y_max, target.y_max) - min(candidate.y_min, target.y_min) + 1
    c2 = float(ew * ew + eh * eh)
    if c2 == 0.0:
        return overlap
    return overlap - rho2 / c2


class MatchReport(BaseModel):
    scene_id: str
    mode: Mode
    category: Optional[Category] = None
    matched_rank: MatchedRank
    scores: List[float] = Field(default_factory=list, max_length=MATCH_DEPTH)

    @model_validator(mode="after")
    def _check_consistency(self) -> "MatchReport":
        if self.matched_rank != MatchedRank.NONE:
            idx = RANK_ORDER.index(self.matched_rank)
            if idx >= len(self.scores) or self.scores[idx] <= 0.0:
                raise ValueError(f"{self.matched_rank.value} match needs a positive score at that rank")
            if any(s > 0.0 for s in self.scores[:idx]):
                raise ValueError("earlier ranks must not match")
        elif any(s > 0.0 for s in self.scores):
            raise ValueError("a positive score implies a match")
        return self


def match_rank(proposals: ProposalSet, target: BoundingBox, category: Optional[Category] = None) -> MatchReport:
    scores = [diou_matching_score(p.box, target) for p in proposals.top(MATCH_DEPTH)]
    matched = MatchedRank.NONE
    for i, s in enumerate(scores):
        if s > 0.0:
            matched = RANK_ORDER[i]
            break
    return MatchReport(
        scene_id=proposals.scene_id,
        mode=proposals.mode,
        category=category,
        matched_rank=matched,
        scores=scores,
    )


class ContingencyTable(BaseModel):
    rows: List[str]
    columns: List[str] = Field(default_factory=lambda: [r.value for r in RANK_ORDER])
    counts: List[List[int]]

    @model_validator(mode="after")
    def _check_shape(self) -> "ContingencyTable":
        if len(self.counts) != len(self.rows) or any(len(r) != len(self.columns) for r in self.counts):
            raise ValueError("counts must be rows x columns")
        if any(c < 0 for r in self.counts for c in r):
            raise ValueError("counts must be non-negative")
        return self

    def row(self, label: str) -> List[int]:
        return self.counts[self.rows.index(label)]

    def row_total(self, label: str) -> int:
        return sum(self.row(label))

    def mode_of(self, label: str) -> Optional[str]:
        """Most frequent outcome for a row; ties go to the better rank."""
        counts = self.row(label)
        if sum(counts) == 0:
            return None
        return self.columns[int(np.argmax(counts))]

    def percentages(self, label: str) -> List[float]:
        counts = self.row(label)
        total = sum(counts)
        return [100.0 * c / total if total else 0.0 for c in counts]


def aggregate(
    reports: Iterable[MatchReport],
    category_filter: Optional[Category] = None,
    modes: Optional[List[Mode]] = None,
) -> ContingencyTable:
    """Outcome counts per mode. Counting is order-independent."""
    reports = list(reports)
    if modes is None:
        seen = {r.mode for r in reports}
        modes = [m for m in Mode if m in seen]
    labels = [m.value for m in modes]
    counts: Dict[str, List[int]] = {label: [0] * len(RANK_ORDER) for label in labels}
    for r in reports:
        if category_filter is not None and r.category != category_filter:
            continue
        if r.mode.value in counts:
            counts[r.mode.value][RANK_ORDER.index(r.matched_rank)] += 1
    return ContingencyTable(rows=labels, counts=[counts[label] for label in labels])


class ChiSquaredResult(BaseModel):
    statistic: float
    dof: int
    n: int
    min_expected: float
    low_expected: bool


def chi_squared(table: ContingencyTable) -> ChiSquaredResult:
    """Pearson statistic with expected counts from the margins (no p-value)."""
    observed = np.asarray(table.counts, dtype=np.float64)
    if observed.size == 0:
        raise ZeroMarginError("table is empty")
    row_sums = observed.sum(axis=1)
    col_sums = observed.sum(axis=0)
    if np.any(row_sums == 0):
        raise ZeroMarginError(f"rows with zero total: {[table.rows[i] for i in np.flatnonzero(row_sums == 0)]}")
    if np.any(col_sums == 0):
        raise ZeroMarginError(f"columns with zero total: {[table.columns[i] for i in np.flatnonzero(col_sums == 0)]}")
    total = observed.sum()
    expected = np.outer(row_sums, col_sums) / total
    statistic = float(((observed - expected) ** 2 / expected).sum())
    dof = (observed.shape[0] - 1) * (observed.shape[1] - 1)
    min_expected = float(expected.min())
    return ChiSquaredResult(
        statistic=statistic,
        dof=dof,
        n=int(total),
        min_expected=min_expected,
        low_expected=min_expected < LOW_EXPECTED,
    )


class CategorySummary(BaseModel):
    n_scenes: int
    table: ContingencyTable
    mode_of: Dict[str, Optional[str]]
    percentages: Dict[str, List[float]]
    chi_squared: Optional[ChiSquaredResult] = None
    chi_squared_error: Optional[str] = None


class EvaluationReport(BaseModel):
    modes: List[Mode]
    scenes: List[MatchReport]
    categories: Dict[str, CategorySummary]


def summarize(reports: List[MatchReport], modes: List[Mode], category: Optional[Category] = None) -> CategorySummary:
    table = aggregate(reports, category_filter=category, modes=modes)
    try:
        chi, chi_err = chi_squared(table), None
    except ZeroMarginError as e:
        chi, chi_err = None, f"{e.code}: {e.message}"
    scene_ids = {r.scene_id for r in reports if category is None or r.category == category}
    return CategorySummary(
        n_scenes=len(scene_ids),
        table=table,
        mode_of={label: table.mode_of(label) for label in table.rows},
        percentages={label: table.percentages(label) for label in table.rows},
        chi_squared=chi,
        chi_squared_error=chi_err,
    )


def build_report(reports: List[MatchReport], modes: List[Mode]) -> EvaluationReport:
    """Whole-dataset, easy and difficult summaries over per-scene match reports."""
    categories = {"all": summarize(reports, modes)}
    for cat in Category:
        categories[cat.value] = summarize(reports, modes, cat)
    return EvaluationReport(modes=modes, scenes=reports, categories=categories)
