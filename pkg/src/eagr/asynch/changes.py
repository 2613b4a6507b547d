"""Change sets passed between layers during one insertion."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from eagr.graph.layer_graph import Position


@dataclass
class ChangeRecord:
    """How one pre-existing node differs from its cached state.

    Old values are snapshots taken before the layer that produced them updated its
    arrays. A moved node keeps ``old_feature`` set even when its feature is unchanged.
    """

    position_changed: bool = False
    feature_changed: bool = False
    old_position: Position | None = None
    old_feature: np.ndarray | None = None


@dataclass
class ChangeSet:
    """Changes entering a layer.

    ``retimed`` holds pooled nodes whose floored mean time moved while (x, y) stayed put.
    Only later pooling layers read pooled time, so these carry no cost and are not
    changes in any count.
    """

    records: dict[int, ChangeRecord] = field(default_factory=dict)
    new_nodes: list[int] = field(default_factory=list)
    new_edges: list[tuple[int, int]] = field(default_factory=list)
    retimed: dict[int, Position] = field(default_factory=dict)

    @property
    def empty(self) -> bool:
        """Nothing a layer would have to compute."""
        return not (self.records or self.new_nodes or self.new_edges)

    @property
    def position_changed(self) -> int:
        return sum(1 for r in self.records.values() if r.position_changed)

    @property
    def feature_changed(self) -> int:
        return sum(1 for r in self.records.values() if r.feature_changed)

    def moved(self) -> dict[int, Position]:
        """Old positions of every node whose position record or time changed."""
        out = {k: r.old_position for k, r in self.records.items() if r.position_changed}
        out.update(self.retimed)
        return out
