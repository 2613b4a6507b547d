"""JSON schemas of the report files, and report validation."""

from __future__ import annotations

from pathlib import Path
from typing import Any

from pydantic import BaseModel

from eagr.models import Detection, GraphStats, InsertionReport, RunReport
from eagr.output.writer import write_json

# file stem -> model; infer-async reports, per-insertion records, detections, graph stats
REPORT_MODELS: dict[str, type[BaseModel]] = {
    "run_report": RunReport,
    "insertion_report": InsertionReport,
    "detection": Detection,
    "graph_stats": GraphStats,
}


def validate_report_json(data: dict | str) -> RunReport:
    """Validate and parse a JSON object or string as a RunReport.

    Raises:
        pydantic.ValidationError: If validation fails.
    """
    if isinstance(data, str):
        return RunReport.model_validate_json(data)
    return RunReport.model_validate(data)


def export_schemas(output_dir: str | Path | None = None) -> dict[str, dict[str, Any]]:
    """Schemas keyed by ``<stem>.schema.json``; also written to ``output_dir`` if given."""
    schemas = {f"{stem}.schema.json": m.model_json_schema() for stem, m in REPORT_MODELS.items()}
    if output_dir:
        for name, schema in schemas.items():
            write_json(schema, Path(output_dir) / name)
    return schemas
