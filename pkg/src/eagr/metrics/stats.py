"""Per-layer statistics over many insertions."""

from __future__ import annotations

from collections.abc import Iterable

import pandas as pd
from pydantic import BaseModel, Field

from eagr.metrics.costs import reprice
from eagr.models import CostMode, InsertionReport, LayerKind

FIRST_POOL = "pool0"
CSV_COLUMNS = ["layer", "mean_flops", "p_pos_change", "p_feat_change", "prune_rate"]
FRAME_COLUMNS = CSV_COLUMNS + [
    "kind", "p_change", "mean_pos_changed", "mean_feat_changed", "mean_messages"
]


class LayerTotals(BaseModel):
    kind: LayerKind
    flops: int = 0
    messages: int = 0
    position_events: int = Field(default=0, description="Insertions with any position change")
    feature_events: int = Field(default=0, description="Insertions with any feature change")
    change_events: int = Field(default=0, description="Insertions with any change at all")
    position_nodes: int = 0
    feature_nodes: int = 0
    voxels_touched: int = 0
    voxels_pruned: int = 0

    def merge(self, other: LayerTotals) -> LayerTotals:
        data = self.model_dump()
        for key, value in other.model_dump().items():
            if key != "kind":
                data[key] += value
        return LayerTotals(**data)


class RunStats(BaseModel):
    """Accumulated measurements; ``merge`` is associative so shards combine in any grouping."""

    insertions: int = 0
    total_flops: int = 0
    pruned_at: dict[str, int] = Field(
        default_factory=dict, description="Pooling layer -> insertions fully pruned there"
    )
    layers: dict[str, LayerTotals] = Field(default_factory=dict)
    order: list[str] = Field(default_factory=list, description="Layer names in network order")

    def add(self, report: InsertionReport) -> None:
        self.insertions += 1
        self.total_flops += report.total_flops
        if report.pruned_at is not None:
            self.pruned_at[report.pruned_at] = self.pruned_at.get(report.pruned_at, 0) + 1
        for s in report.layers:
            if s.layer not in self.layers:
                self.layers[s.layer] = LayerTotals(kind=s.kind)
                self.order.append(s.layer)
            t = self.layers[s.layer]
            t.flops += s.flops
            t.messages += s.messages
            t.position_events += int(s.position_changed > 0)
            t.feature_events += int(s.feature_changed > 0 or s.new_nodes > 0)
            t.change_events += int(
                s.new_nodes + s.new_edges + s.position_changed + s.feature_changed > 0
            )
            t.position_nodes += s.position_changed
            t.feature_nodes += s.feature_changed
            t.voxels_touched += s.voxels_touched
            t.voxels_pruned += s.voxels_pruned

    def merge(self, other: RunStats) -> RunStats:
        pruned = dict(self.pruned_at)
        for name, count in other.pruned_at.items():
            pruned[name] = pruned.get(name, 0) + count
        layers = {name: t.model_copy() for name, t in self.layers.items()}
        order = list(self.order)
        for name in other.order:
            if name in layers:
                layers[name] = layers[name].merge(other.layers[name])
            else:
                layers[name] = other.layers[name].model_copy()
                order.append(name)
        return RunStats(
            insertions=self.insertions + other.insertions,
            total_flops=self.total_flops + other.total_flops,
            pruned_at=pruned,
            layers=layers,
            order=order,
        )

    @property
    def mean_flops(self) -> float:
        return self.total_flops / self.insertions if self.insertions else 0.0

    @property
    def phi(self) -> float:
        """Fraction of insertions whose change set survives the first pooling layer."""
        if not self.insertions:
            return 0.0
        return 1.0 - self.pruned_at.get(FIRST_POOL, 0) / self.insertions

    @property
    def full_tree_prune_rate(self) -> float:
        """Fraction of insertions stopped at some pooling layer."""
        if not self.insertions:
            return 0.0
        return sum(self.pruned_at.values()) / self.insertions

    @property
    def voxel_prune_rate(self) -> float:
        touched = sum(t.voxels_touched for t in self.layers.values())
        pruned = sum(t.voxels_pruned for t in self.layers.values())
        return pruned / touched if touched else 0.0

    def to_frame(self) -> pd.DataFrame:
        """One row per layer in network order."""
        n = max(self.insertions, 1)
        rows = []
        for name in self.order:
            t = self.layers[name]
            rows.append(
                {
                    "layer": name,
                    "kind": t.kind.value,
                    "mean_flops": t.flops / n,
                    "p_pos_change": t.position_events / n,
                    "p_feat_change": t.feature_events / n,
                    "p_change": t.change_events / n,
                    "prune_rate": t.voxels_pruned / t.voxels_touched if t.voxels_touched else 0.0,
                    "mean_pos_changed": t.position_nodes / n,
                    "mean_feat_changed": t.feature_nodes / n,
                    "mean_messages": t.messages / n,
                }
            )
        return pd.DataFrame(rows, columns=FRAME_COLUMNS)

    def summary(self) -> dict:
        return {
            "insertions": self.insertions,
            "mean_flops": self.mean_flops,
            "phi": self.phi,
            "full_tree_prune_rate": self.full_tree_prune_rate,
            "voxel_prune_rate": self.voxel_prune_rate,
        }


def aggregate_stats(reports: Iterable[InsertionReport], mode: CostMode | None = None) -> RunStats:
    """Fold reports into RunStats, optionally repricing every insertion first."""
    stats = RunStats()
    for report in reports:
        stats.add(report if mode is None else reprice(report, mode))
    return stats
