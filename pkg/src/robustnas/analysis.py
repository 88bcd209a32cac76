"""Descriptive statistics over a search history: accuracy/robustness grouped
by active-vertex count, edge count, and per-layer-type active-node counts.

Statistics are over every scored individual the search evaluated, not just
the survivors, and use population (divide-by-N) standard deviation.
"""

from __future__ import annotations

import csv
import io
import json
import re
import statistics
from dataclasses import dataclass
from typing import Iterable, Sequence

from .arch import Architecture, LayerType, active_nodes
from .fitness import ScoredIndividual

__all__ = [
    "StatsRow",
    "PROPERTIES",
    "property_value",
    "group_stats",
    "all_stats",
    "emit_table",
    "parse_csv",
]

PROPERTIES = ("vertex_count", "edge_count") + tuple(
    f"layer_type_count({lt.value})" for lt in LayerType
)

_LAYER_COUNT_RE = re.compile(r"layer_type_count\((\w+)\)")


@dataclass(frozen=True)
class StatsRow:
    property_name: str
    key: int
    sample_count: int
    mean_accuracy_pct: float
    std_accuracy_pct: float
    mean_robustness_pct: float
    std_robustness_pct: float

    def __post_init__(self):
        if self.sample_count < 1:
            raise ValueError("sample_count must be >= 1")
        if self.std_accuracy_pct < 0 or self.std_robustness_pct < 0:
            raise ValueError("standard deviations must be non-negative")
        for mean in (self.mean_accuracy_pct, self.mean_robustness_pct):
            if not (0.0 <= mean <= 100.0):
                raise ValueError(f"mean {mean} outside [0, 100]")


def property_value(property_name: str, arch: Architecture) -> int:
    """The grouping key of one architecture under the named property.

    Vertex and layer-type counts look only at active nodes; a dangling
    vertex contributes to neither.
    """
    if property_name == "vertex_count":
        return len(active_nodes(arch.block))
    if property_name == "edge_count":
        return len(arch.block.edges)
    match = _LAYER_COUNT_RE.fullmatch(property_name)
    if match:
        try:
            layer_type = LayerType(match.group(1))
        except ValueError:
            raise ValueError(f"unknown layer type in property {property_name!r}") from None
        return sum(
            1 for v in active_nodes(arch.block) if arch.block.node(v).layer_type is layer_type
        )
    raise ValueError(f"unknown property {property_name!r}")


def group_stats(history: Sequence[ScoredIndividual], property_name: str) -> list[StatsRow]:
    """One row per observed key; rows partition the history exactly.

    History entries must carry scores; filter out failed evaluations before
    calling (the CLI does this with a warning).
    """
    if not history:
        raise ValueError("empty history: nothing to analyze")
    groups: dict[int, list[ScoredIndividual]] = {}
    for ind in history:
        if ind.scores is None:
            raise ValueError(
                f"member {ind.member_id} has no scores; filter failed evaluations before analysis"
            )
        groups.setdefault(property_value(property_name, ind.arch), []).append(ind)
    rows = []
    for key in sorted(groups):
        members = groups[key]
        accs = [m.scores.accuracy_pct for m in members]
        robs = [m.scores.robustness_pct for m in members]
        rows.append(
            StatsRow(
                property_name=property_name,
                key=key,
                sample_count=len(members),
                mean_accuracy_pct=statistics.fmean(accs),
                std_accuracy_pct=statistics.pstdev(accs),
                mean_robustness_pct=statistics.fmean(robs),
                std_robustness_pct=statistics.pstdev(robs),
            )
        )
    return rows


def all_stats(history: Sequence[ScoredIndividual]) -> list[StatsRow]:
    rows: list[StatsRow] = []
    for prop in PROPERTIES:
        rows.extend(group_stats(history, prop))
    return rows


_CSV_COLUMNS = ("property", "key", "count", "acc_mean", "acc_std", "rob_mean", "rob_std")


def emit_table(rows: Iterable[StatsRow], fmt: str = "csv") -> str:
    """Render rows sorted by (property, key); "csv" or "json"."""
    ordered = sorted(rows, key=lambda r: (r.property_name, r.key))
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(_CSV_COLUMNS)
        for r in ordered:
            # str(float) round-trips exactly, so parse_csv reconstructs rows.
            writer.writerow(
                [
                    r.property_name,
                    r.key,
                    r.sample_count,
                    r.mean_accuracy_pct,
                    r.std_accuracy_pct,
                    r.mean_robustness_pct,
                    r.std_robustness_pct,
                ]
            )
        return buf.getvalue()
    if fmt == "json":
        records = [
            {
                "property": r.property_name,
                "key": r.key,
                "count": r.sample_count,
                "acc_mean": r.mean_accuracy_pct,
                "acc_std": r.std_accuracy_pct,
                "rob_mean": r.mean_robustness_pct,
                "rob_std": r.std_robustness_pct,
            }
            for r in ordered
        ]
        return json.dumps(records, indent=2) + "\n"
    raise ValueError(f"unknown table format {fmt!r}")


def parse_csv(text: str) -> list[StatsRow]:
    """Inverse of the CSV emitter (used by tests and downstream tooling)."""
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if tuple(header or ()) != _CSV_COLUMNS:
        raise ValueError(f"unexpected CSV header {header!r}")
    rows = []
    for record in reader:
        if not record:
            continue
        prop, key, count, acc_mean, acc_std, rob_mean, rob_std = record
        rows.append(
            StatsRow(
                property_name=prop,
                key=int(key),
                sample_count=int(count),
                mean_accuracy_pct=float(acc_mean),
                std_accuracy_pct=float(acc_std),
                mean_robustness_pct=float(rob_mean),
                std_robustness_pct=float(rob_std),
            )
        )
    return rows
