"""Application configuration via environment variables."""

from __future__ import annotations

from pathlib import Path

from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    """Settings loaded from environment with EAGR_ prefix."""

    model_config = {
        "env_prefix": "EAGR_",
        "env_file": ".env",
        "env_file_encoding": "utf-8",
        "extra": "ignore",
    }

    # Event graph
    radius: float = 0.01
    max_neighbors: int = 16
    beta: float = 1e-6  # per microsecond

    # Network
    model_size: str = "small"
    n_cls: int = 2
    bn_eps: float = 1e-5
    input_convs: int = 2

    # Asynchronous engine
    tolerance: float = 1e-4  # relative, unit floor
    pruning: bool = True
    position_rounding: bool = True

    # Detection
    score_thresh: float = 0.1
    nms_iou: float = 0.65

    # Synthetic scenes
    contrast: float = 0.2  # log-brightness threshold
    step_us: int = 100

    # Paths
    runs_dir: Path = Path("runs")

    verbose: bool = False

    def ensure_dirs(self) -> None:
        """Create required directories if they don't exist."""
        self.runs_dir.mkdir(parents=True, exist_ok=True)
