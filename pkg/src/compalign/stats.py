"""Rank correlation between metric scores and human ratings.

Kendall's tau is the tie-corrected tau-b, computed in O(n log n) with Knight's
merge-sort pair counting. Spearman's rho is the Pearson correlation of
average-tie ranks. Both return None for a constant input vector instead of NaN.
"""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import InputError

log = logging.getLogger(__name__)

MEAN_MODEL = "Mean"
ALL_CATEGORIES = "all"


def _pair(xs: Sequence[float], ys: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.ndim != 1 or y.ndim != 1:
        raise InputError("correlation inputs must be 1-D")
    if len(x) != len(y):
        raise InputError(f"length mismatch: {len(x)} vs {len(y)}")
    if len(x) < 2:
        raise InputError("need at least two paired observations")
    if np.isnan(x).any() or np.isnan(y).any():
        raise InputError("NaN in correlation input")
    return x, y


def _tied_pairs(sorted_values: np.ndarray) -> int:
    """Number of tied pairs in an already sorted 1-D array."""
    if len(sorted_values) == 0:
        return 0
    change = np.flatnonzero(np.diff(sorted_values) != 0)
    bounds = np.concatenate(([0], change + 1, [len(sorted_values)]))
    counts = np.diff(bounds)
    return int((counts * (counts - 1) // 2).sum())


def _count_inversions(values: list[float]) -> int:
    """Pairs i < j with values[i] > values[j] (strict), by bottom-up merge sort."""
    a = list(values)
    n = len(a)
    buf = [0.0] * n
    inversions = 0
    width = 1
    while width < n:
        for lo in range(0, n, 2 * width):
            mid = min(lo + width, n)
            hi = min(lo + 2 * width, n)
            i, j, k = lo, mid, lo
            while i < mid and j < hi:
                if a[j] < a[i]:
                    buf[k] = a[j]
                    inversions += mid - i
                    j += 1
                else:
                    buf[k] = a[i]
                    i += 1
                k += 1
            buf[k : k + mid - i] = a[i:mid]
            k += mid - i
            buf[k : k + hi - j] = a[j:hi]
        a, buf = buf, a
        width *= 2
    return inversions


def kendall_tau(xs: Sequence[float], ys: Sequence[float]) -> float | None:
    """Kendall's tau-b; None when either vector is constant."""
    x, y = _pair(xs, ys)
    n = len(x)
    n0 = n * (n - 1) // 2
    order = np.lexsort((y, x))
    x, y = x[order], y[order]
    tied_x = _tied_pairs(x)
    # pairs tied in both coordinates are adjacent after the lexicographic sort
    joint = np.concatenate(([True], (np.diff(x) != 0) | (np.diff(y) != 0), [True]))
    runs = np.diff(np.flatnonzero(joint))
    tied_xy = int((runs * (runs - 1) // 2).sum())
    discordant = _count_inversions(y.tolist())
    tied_y = _tied_pairs(np.sort(y))
    denom_x = n0 - tied_x
    denom_y = n0 - tied_y
    if denom_x == 0 or denom_y == 0:
        return None
    # concordant - discordant = n0 - tied_x - tied_y + tied_xy - 2 * discordant
    numerator = n0 - tied_x - tied_y + tied_xy - 2 * discordant
    tau = numerator / math.sqrt(denom_x * denom_y)
    return min(1.0, max(-1.0, tau))


def average_ranks(values: Sequence[float]) -> np.ndarray:
    """1-based ranks; tied values share the mean of the ranks they span."""
    v = np.asarray(values, dtype=float)
    order = np.argsort(v, kind="mergesort")
    sorted_v = v[order]
    ranks = np.empty(len(v), dtype=float)
    start = 0
    n = len(v)
    while start < n:
        stop = start + 1
        while stop < n and sorted_v[stop] == sorted_v[start]:
            stop += 1
        ranks[order[start:stop]] = (start + 1 + stop) / 2.0
        start = stop
    return ranks


def spearman_rho(xs: Sequence[float], ys: Sequence[float]) -> float | None:
    x, y = _pair(xs, ys)
    rx = average_ranks(x)
    ry = average_ranks(y)
    dx = rx - rx.mean()
    dy = ry - ry.mean()
    sxx = float(np.dot(dx, dx))
    syy = float(np.dot(dy, dy))
    if sxx == 0.0 or syy == 0.0:
        return None
    rho = float(np.dot(dx, dy)) / math.sqrt(sxx * syy)
    return min(1.0, max(-1.0, rho))


class Normalized(NamedTuple):
    values: list[float]
    degenerate: bool


def min_max_normalize(values: Sequence[float]) -> Normalized:
    """Rescale to [0, 1]; a constant vector maps to all 0.5 and is flagged."""
    if len(values) == 0:
        raise InputError("cannot normalize an empty list")
    lo, hi = min(values), max(values)
    if hi == lo:
        return Normalized([0.5] * len(values), True)
    span = hi - lo
    return Normalized([(v - lo) / span for v in values], False)


class Sample(NamedTuple):
    metric: float
    human: float
    model: str
    category: str


@dataclass(frozen=True)
class CorrelationReport:
    """One row of a correlation table.

    ``model == "Mean"`` rows average over models; ``category == "all"`` rows
    average over categories. ``n`` is the sample count for a group row and the
    number of averaged groups for a mean row.
    """

    model: str
    category: str
    n: int
    tau: float | None
    rho: float | None
    degenerate: bool = False

    @property
    def is_mean(self) -> bool:
        return self.model == MEAN_MODEL or self.category == ALL_CATEGORIES

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "category": self.category,
            "n": self.n,
            "tau": self.tau,
            "rho": self.rho,
            "degenerate": self.degenerate,
        }

    @classmethod
    def from_dict(cls, d) -> "CorrelationReport":
        return cls(
            str(d["model"]),
            str(d["category"]),
            int(d["n"]),
            None if d.get("tau") is None else float(d["tau"]),
            None if d.get("rho") is None else float(d["rho"]),
            bool(d.get("degenerate", False)),
        )


def correlate_group(model: str, category: str, metric: Sequence[float], human: Sequence[float]) -> CorrelationReport:
    nm = min_max_normalize(metric)
    nh = min_max_normalize(human)
    if nm.degenerate or nh.degenerate:
        return CorrelationReport(model, category, len(metric), None, None, True)
    # correlations are rank-based, so they are computed on the raw vectors:
    # min-max rescaling can merge values a few ulps apart into artificial ties
    tau = kendall_tau(metric, human)
    rho = spearman_rho(metric, human)
    return CorrelationReport(model, category, len(metric), tau, rho, tau is None or rho is None)


def _mean_row(model: str, category: str, rows: list[CorrelationReport]) -> CorrelationReport:
    usable = [r for r in rows if not r.degenerate]
    if not usable:
        return CorrelationReport(model, category, 0, None, None, True)
    return CorrelationReport(
        model,
        category,
        len(usable),
        math.fsum(r.tau for r in usable) / len(usable),
        math.fsum(r.rho for r in usable) / len(usable),
    )


def mean_rows(groups: Sequence[CorrelationReport]) -> list[CorrelationReport]:
    """Per-category means over models, per-model means over categories, grand mean."""
    by_cat: dict[str, list] = defaultdict(list)
    by_model: dict[str, list] = defaultdict(list)
    for g in groups:
        by_cat[g.category].append(g)
        by_model[g.model].append(g)
    out = [_mean_row(MEAN_MODEL, c, rows) for c, rows in by_cat.items()]
    out += [_mean_row(m, ALL_CATEGORIES, rows) for m, rows in by_model.items()]
    out.append(_mean_row(MEAN_MODEL, ALL_CATEGORIES, list(groups)))
    return out


@dataclass
class CorrelationTable:
    groups: list[CorrelationReport]
    means: list[CorrelationReport]
    skipped: list[tuple[str, str, int]] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    @property
    def rows(self) -> list[CorrelationReport]:
        return self.groups + self.means

    def to_dict(self) -> dict:
        return {
            "groups": [r.to_dict() for r in self.groups],
            "means": [r.to_dict() for r in self.means],
            "skipped": [{"model": m, "category": c, "n": n} for m, c, n in self.skipped],
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d) -> "CorrelationTable":
        return cls(
            [CorrelationReport.from_dict(r) for r in d.get("groups", ())],
            [CorrelationReport.from_dict(r) for r in d.get("means", ())],
            [(s["model"], s["category"], int(s["n"])) for s in d.get("skipped", ())],
            dict(d.get("metadata", {})),
        )


def correlation_report(samples: Iterable[Sample | tuple]) -> CorrelationTable:
    """Correlate each (model, category) group; groups keep first-appearance order."""
    grouped: dict[tuple[str, str], list[Sample]] = defaultdict(list)
    for s in samples:
        s = Sample(*s)
        grouped[(s.model, s.category)].append(s)
    groups, skipped = [], []
    for (model, category), rows in grouped.items():
        if len(rows) < 2:
            log.warning("skipping group (%s, %s): %d sample(s), need 2", model, category, len(rows))
            skipped.append((model, category, len(rows)))
            continue
        groups.append(correlate_group(model, category, [r.metric for r in rows], [r.human for r in rows]))
    return CorrelationTable(
        groups,
        mean_rows(groups) if groups else [],
        skipped,
        {
            "tau": "kendall tau-b",
            "rho": "spearman, average ranks for ties",
            "normalization": "min-max per (model, category) group; correlations are invariant to it",
        },
    )


def _fmt(v: float | None, decimals: int) -> str:
    return "n/a" if v is None else f"{v:.{decimals}f}"


def render_table(table: CorrelationTable | Sequence[CorrelationReport], decimals: int = 4) -> str:
    """Aligned text table: model rows, a tau/rho column pair per category, Mean row last."""
    rows = table.rows if isinstance(table, CorrelationTable) else list(table)
    cells = {(r.model, r.category): r for r in rows}
    categories = [c for c in dict.fromkeys(r.category for r in rows) if c != ALL_CATEGORIES]
    if any(r.category == ALL_CATEGORIES for r in rows):
        categories.append(ALL_CATEGORIES)
    models = [m for m in dict.fromkeys(r.model for r in rows) if m != MEAN_MODEL]
    if any(r.model == MEAN_MODEL for r in rows):
        models.append(MEAN_MODEL)

    header1 = ["Model"] + [x for c in categories for x in (c, "")]
    header2 = [""] + ["tau", "rho"] * len(categories)
    body = []
    for m in models:
        line = [m]
        for c in categories:
            r = cells.get((m, c))
            line += ["-", "-"] if r is None else [_fmt(r.tau, decimals), _fmt(r.rho, decimals)]
        body.append(line)
    grid = [header1, header2] + body
    widths = [max(len(row[i]) for row in grid) for i in range(len(header1))]

    def fmt(row):
        return "  ".join(cell.ljust(widths[0]) if i == 0 else cell.rjust(widths[i]) for i, cell in enumerate(row))

    rule = "-" * len(fmt(header1))
    lines = [fmt(header1), fmt(header2), rule]
    for row in body:
        if row[0] == MEAN_MODEL:
            lines.append(rule)
        lines.append(fmt(row))
    return "\n".join(lines) + "\n"
