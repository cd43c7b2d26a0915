"""Balance diagnostics for matched designs.

Two views: exact category counts of the template and of every matched
sample (with cells that differ from the template flagged), and
standardized differences in indicator means between each exposure level
and the template, before and after matching.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import CovariateSchema, Dataset
from .design import MatchedDesign

__all__ = ["BalanceTable", "balance_table", "smd", "SmdReport", "smd_report"]


@dataclass
class BalanceTable:
    """Counts per (covariate, category): template column plus one per level."""

    schema: CovariateSchema
    levels: list[str]
    template: np.ndarray  # (K,)
    counts: np.ndarray  # (K, n_levels)

    @property
    def flags(self) -> np.ndarray:
        """``(K, n_levels)`` boolean mask of cells differing from the template."""
        return self.counts != self.template[:, None]

    def deviation(self, level: str) -> int:
        j = self.levels.index(level)
        return int(np.abs(self.counts[:, j] - self.template).sum())

    def flagged_cells(self) -> list[tuple[str, str, str, int, int]]:
        """``(covariate, category, level, template count, level count)`` per flagged cell."""
        labels = self.schema.indicator_labels()
        out = []
        for i, j in zip(*np.nonzero(self.flags)):
            out.append((labels[i][0], labels[i][1], self.levels[j], int(self.template[i]), int(self.counts[i, j])))
        return out

    def rows(self) -> list[list]:
        labels = self.schema.indicator_labels()
        return [
            [cov, cat, int(self.template[i])] + [int(v) for v in self.counts[i]]
            for i, (cov, cat) in enumerate(labels)
        ]

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["covariate", "category", "template"] + self.levels)
            w.writerows(self.rows())

    def to_dict(self) -> dict:
        return {
            "levels": self.levels,
            "rows": [
                {"covariate": r[0], "category": r[1], "template": r[2], "levels": dict(zip(self.levels, r[3:]))}
                for r in self.rows()
            ],
            "deviation": {lv: self.deviation(lv) for lv in self.levels},
            "flagged": [
                {"covariate": c, "category": k, "level": lv, "template": t, "count": n}
                for c, k, lv, t, n in self.flagged_cells()
            ],
        }

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")


def balance_table(design: MatchedDesign, x: np.ndarray) -> BalanceTable:
    """Exact category counts of the template and each matched sample.

    ``x`` is the covariate matrix the design's unit indices refer to.
    """
    tmpl, per = design.counts(x)
    counts = np.column_stack([per[lv].counts for lv in design.levels])
    return BalanceTable(design.schema, list(design.levels), tmpl.counts, counts)


def smd(
    before: tuple[np.ndarray, np.ndarray],
    after: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[float, float]:
    """Standardized mean differences of one variable before and after matching.

    Both use the same denominator, the pooled standard deviation
    ``sqrt((s1^2 + s2^2) / 2)`` of the two before-matching groups, so that
    matching cannot shrink it. When that SD is zero the difference is 0
    if the means agree and NaN (indeterminate) otherwise.
    """
    b1, b2 = (np.asarray(g, dtype=float) for g in before)
    if b1.size < 2 or b2.size < 2:
        raise ValueError("before-matching groups need at least two units each")
    sd = math.sqrt((b1.var(ddof=1) + b2.var(ddof=1)) / 2.0)

    def std_diff(g1, g2) -> float:
        diff = float(np.mean(g1) - np.mean(g2))
        if sd == 0.0:
            return 0.0 if diff == 0.0 else math.nan
        return diff / sd

    s_before = std_diff(b1, b2)
    if after is None:
        return s_before, math.nan
    a1, a2 = (np.asarray(g, dtype=float) for g in after)
    return s_before, std_diff(a1, a2)


@dataclass
class SmdReport:
    """Per level and indicator: SMD between the level and the template.

    "Before" compares every unit of the level with the template, "after"
    the matched sample with the template.
    """

    labels: list[tuple[str, str]]
    levels: list[str]
    before: np.ndarray  # (K, n_levels)
    after: np.ndarray  # (K, n_levels)

    def records(self) -> list[tuple[str, str, str, float, float]]:
        out = []
        for j, lv in enumerate(self.levels):
            for i, (cov, cat) in enumerate(self.labels):
                out.append((lv, cov, cat, float(self.before[i, j]), float(self.after[i, j])))
        return out

    def write_csv(self, path: str | Path) -> None:
        """Plot data: one row per (level, indicator) with before and after SMD."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["level", "covariate", "category", "smd_before", "smd_after"])
            for lv, cov, cat, b, a in self.records():
                w.writerow([lv, cov, cat, _fmt(b), _fmt(a)])

    def to_dict(self) -> dict:
        return {
            "levels": self.levels,
            "records": [
                {"level": lv, "covariate": c, "category": k, "smd_before": _num(b), "smd_after": _num(a)}
                for lv, c, k, b, a in self.records()
            ],
            "max_abs_after": _num(float(np.nanmax(np.abs(self.after)))) if self.after.size else 0.0,
        }


def _fmt(v: float) -> str:
    return "NA" if math.isnan(v) else repr(round(v, 12))


def _num(v: float):
    return None if math.isnan(v) else round(v, 12)


def smd_report(design: MatchedDesign, dataset: Dataset, levels: Sequence[str] | None = None) -> SmdReport:
    levels = list(levels) if levels is not None else list(design.levels)
    ind = dataset.schema.indicators(dataset.x)
    tmpl = ind[design.template]
    K = ind.shape[1]
    before = np.zeros((K, len(levels)))
    after = np.zeros((K, len(levels)))
    for j, lv in enumerate(levels):
        whole = ind[dataset.level(lv)]
        matched = ind[design.matches[lv].units]
        for i in range(K):
            before[i, j], after[i, j] = smd((whole[:, i], tmpl[:, i]), (matched[:, i], tmpl[:, i]))
    return SmdReport(dataset.schema.indicator_labels(), levels, before, after)
