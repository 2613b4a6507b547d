"""Pydantic models for engine reports, detections and run artifacts."""

from __future__ import annotations

from enum import Enum

from pydantic import BaseModel, Field, field_validator


# --- Enums ---


class ModelSize(str, Enum):
    NANO = "nano"
    SMALL = "small"
    MEDIUM = "medium"
    LARGE = "large"


class CostMode(str, Enum):
    SPLINE3D = "spline3d"
    SPLINE = "spline"
    LUT = "lut"


class LayerKind(str, Enum):
    CONV = "conv"
    SKIP = "skip"
    POOL = "pool"


# --- Graph ---


class GraphStats(BaseModel):
    """Summary of an event graph for `build-graph --stats`."""

    nodes: int = Field(ge=0)
    edges: int = Field(ge=0)
    max_in_degree: int = Field(ge=0)
    mean_in_degree: float = Field(ge=0)
    degree_histogram: dict[str, int] = Field(
        default_factory=dict, description="In-degree value -> node count"
    )


# --- Insertion reports ---


class CostTally(BaseModel):
    """Counts of priced operations in one layer for one insertion.

    FLOPs follow from the counts and the layer's channel sizes; see
    ``eagr.metrics.costs.tally_flops``.
    """

    recomp_nodes: int = 0
    recomp_messages: int = 0
    root_updates: int = 0
    dest_updates: int = 0
    new_edges: int = 0
    adds: int = 0


class LayerStats(BaseModel):
    """Per-layer measurements for one asynchronous insertion."""

    layer: str
    kind: LayerKind
    c_in: int = Field(ge=0)
    c_out: int = Field(ge=0)
    new_nodes: int = 0
    position_changed: int = Field(default=0, description="Nodes entering with a moved position")
    feature_changed: int = Field(default=0, description="Nodes entering with a changed feature")
    new_edges: int = Field(default=0, description="Edges entering that did not exist before")
    flops: int = 0
    messages: int = Field(default=0, description="Message evaluations (new or replaced)")
    tally: CostTally = Field(default_factory=CostTally)
    voxels_touched: int = 0
    voxels_pruned: int = 0
    output_empty: bool = Field(
        default=False, description="Pooling only: nothing left to propagate after this layer"
    )


class InsertionReport(BaseModel):
    """Everything measured while inserting one event asynchronously."""

    index: int = Field(ge=0, description="Position of the event in the stream")
    node: int = Field(ge=0, description="Input-graph node index of the event")
    in_degree: int = Field(ge=0)
    layers: list[LayerStats] = Field(default_factory=list)
    pruned_at: str | None = Field(
        default=None, description="First pooling layer whose output change set was empty"
    )
    total_flops: int = 0
    head_changes: dict[str, int] = Field(
        default_factory=dict, description="Head name -> output nodes whose outputs changed"
    )
    head_max_delta: float = 0.0

    def layer(self, name: str) -> LayerStats:
        for stats in self.layers:
            if stats.layer == name:
                return stats
        raise KeyError(name)


# --- Verification ---


class Discrepancy(BaseModel):
    """One cached activation that disagrees with a from-scratch pass."""

    layer: str
    node: int
    max_abs_error: float
    detail: str = ""


# --- Detection ---


class Detection(BaseModel):
    """A decoded bounding box in pixel coordinates."""

    class_id: int = Field(ge=0)
    score: float = Field(ge=0, le=1)
    cx: float
    cy: float
    w: float = Field(gt=0)
    h: float = Field(gt=0)
    head: int = Field(ge=1, description="1 = 14x10 head, 2 = 7x5 head")
    voxel: tuple[int, int]

    @field_validator("score", mode="before")
    @classmethod
    def _clip_score(cls, value: float) -> float:
        # sigmoid products can land a hair outside [0, 1]
        return min(max(float(value), 0.0), 1.0)

    def to_record(self) -> dict:
        return {
            "class": self.class_id,
            "score": self.score,
            "cx": self.cx,
            "cy": self.cy,
            "w": self.w,
            "h": self.h,
            "head": self.head,
        }


# --- Run artifacts ---


class RunReport(BaseModel):
    """Everything `infer-async` writes: the run settings and one report per insertion."""

    source: str = Field(description="Event stream the run consumed")
    model_size: ModelSize
    warmup: int = Field(ge=0, description="Events used to initialize the cache")
    pruning: bool = True
    position_rounding: bool = True
    dense_flops: int = Field(default=0, ge=0, description="FLOPs of one dense pass after warm-up")
    insertions: list[InsertionReport] = Field(default_factory=list)
