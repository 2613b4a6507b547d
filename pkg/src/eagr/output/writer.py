"""Artifact writer: JSON with stable formatting, CSV tables."""

from __future__ import annotations

import json
import math
from datetime import datetime
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
from pydantic import BaseModel

from eagr.config import Settings

SIGNIFICANT_DIGITS = 9


def _normalize(value: Any) -> Any:
    if isinstance(value, BaseModel):
        return _normalize(value.model_dump(mode="json"))
    if isinstance(value, dict):
        return {str(k): _normalize(v) for k, v in value.items()}
    if isinstance(value, np.ndarray):
        return _normalize(value.tolist())
    if isinstance(value, (list, tuple)):
        return [_normalize(v) for v in value]
    if isinstance(value, float) and math.isfinite(value):
        return float(format(value, f".{SIGNIFICANT_DIGITS}g"))
    if isinstance(value, np.generic):
        return _normalize(value.item())
    return value


def dumps(payload: Any) -> str:
    """Sorted keys, indent 2, floats to 9 significant digits."""
    return json.dumps(_normalize(payload), sort_keys=True, indent=2)


def write_json(payload: Any, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(payload) + "\n", encoding="utf-8")
    return path


def write_csv(frame: pd.DataFrame, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=f"%.{SIGNIFICANT_DIGITS}g")
    return path


class ArtifactWriter:
    """Writes named artifacts into one run directory.

    JSON payloads may be pydantic models, dicts or lists; DataFrames become CSV.
    """

    def __init__(self, settings: Settings, run_dir: Path | None = None, label: str = "run"):
        self.settings = settings
        if run_dir is None:
            stamp = datetime.now().strftime("%Y%m%d-%H%M%S")
            run_dir = settings.runs_dir / f"{label}-{stamp}"
        self.run_dir = Path(run_dir)

    def write_all(self, artifacts: dict[str, Any]) -> dict[str, Path]:
        """Write every artifact; returns artifact name -> path."""
        self.run_dir.mkdir(parents=True, exist_ok=True)
        written = {}
        for name, payload in artifacts.items():
            path = self.run_dir / name
            if isinstance(payload, pd.DataFrame):
                written[name] = write_csv(payload, path)
            else:
                written[name] = write_json(payload, path)
        return written
