"""Synthetic event streams from the log-brightness contrast rule.

Every pixel keeps a reference log level. The scene is sampled on the pixel grid every
``step_us`` microseconds; whenever the change since the reference reaches the contrast
threshold C the pixel fires one event per whole multiple of C, with the sign of the
change, and the reference moves by the same amount.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from eagr.events.stream import EventStream, SensorGeometry

PATTERNS = ("bar", "blob", "dots")
CROSSING_EPS = 1e-9  # tolerates log levels that hit the threshold exactly


class UnknownPatternError(ValueError):
    """Requested scene name is not one of the built-in patterns."""


@dataclass
class SceneConfig:
    pattern: str = "bar"
    # px per microsecond; None picks a default motion spanning the sensor over the run
    velocity: tuple[float, float] | None = None
    # log-contrast of the bar / dots against the background
    log_step: float = 0.5
    bar_width: float = 3.0
    blob_sigma: float = 6.0
    blob_amplitude: float = 1.0
    n_dots: int = 24
    dot_radius: float = 2.0


class _Scene:
    """Log-brightness field L(x, y, t) on the pixel-centre grid."""

    def __init__(self, cfg: SceneConfig, geometry: SensorGeometry, duration_us: int, rng):
        self.cfg = cfg
        self.width = geometry.width
        self.height = geometry.height
        self.duration = max(int(duration_us), 1)
        ys, xs = np.mgrid[0 : geometry.height, 0 : geometry.width]
        self.px = xs + 0.5
        self.py = ys + 0.5
        if cfg.pattern == "dots":
            self.dots = np.column_stack(
                [rng.uniform(0, self.width, cfg.n_dots), rng.uniform(0, self.height, cfg.n_dots)]
            )

    def _velocity(self, default: tuple[float, float]) -> tuple[float, float]:
        return self.cfg.velocity if self.cfg.velocity is not None else default

    def log_level(self, t: float) -> np.ndarray:
        cfg = self.cfg
        if cfg.pattern == "bar":
            vx, _ = self._velocity(((self.width + cfg.bar_width) / self.duration, 0.0))
            left = -cfg.bar_width + vx * t
            inside = (self.px >= left) & (self.px < left + cfg.bar_width)
            return np.where(inside, cfg.log_step, 0.0)
        if cfg.pattern == "blob":
            vx, vy = self._velocity((0.5 * self.width / self.duration, 0.0))
            cx = 0.25 * self.width + vx * t
            cy = 0.5 * self.height + vy * t
            r2 = (self.px - cx) ** 2 + (self.py - cy) ** 2
            return cfg.blob_amplitude * np.exp(-r2 / (2.0 * cfg.blob_sigma**2))
        vx, vy = self._velocity((0.25 * self.width / self.duration, 0.0))
        level = np.zeros_like(self.px)
        for x0, y0 in self.dots:
            dx = (self.px - (x0 + vx * t)) % self.width
            dy = (self.py - (y0 + vy * t)) % self.height
            dx = np.minimum(dx, self.width - dx)
            dy = np.minimum(dy, self.height - dy)
            covered = dx**2 + dy**2 <= cfg.dot_radius**2
            level = np.maximum(level, np.where(covered, cfg.log_step, 0.0))
        return level


def generate_synthetic(
    geometry: SensorGeometry,
    pattern: SceneConfig | str,
    contrast: float,
    duration_us: int,
    seed: int = 0,
    step_us: int = 100,
) -> EventStream:
    """Integrate a built-in scene into an event stream.

    Args:
        geometry: Sensor size.
        pattern: Scene config or one of ``PATTERNS``.
        contrast: Threshold C on the log-brightness change (> 0).
        duration_us: Simulated time span.
        seed: Seed for scene randomness (dot placement).
        step_us: Sampling period of the scene.

    Returns:
        Time-ordered stream; within one step, pixels fire in raster order.
    """
    cfg = SceneConfig(pattern=pattern) if isinstance(pattern, str) else pattern
    if cfg.pattern not in PATTERNS:
        raise UnknownPatternError(f"Unknown pattern {cfg.pattern!r}; expected one of {PATTERNS}")
    if contrast <= 0:
        raise ValueError(f"Contrast threshold must be positive, got {contrast}")

    rng = np.random.default_rng(seed)
    scene = _Scene(cfg, geometry, duration_us, rng)
    ref = scene.log_level(0.0)

    xs, ys, ts, ps = [], [], [], []
    for k in range(1, int(duration_us) // step_us + 1):
        t = k * step_us
        diff = scene.log_level(float(t)) - ref
        up = np.floor(np.maximum(diff, 0.0) / contrast + CROSSING_EPS).astype(np.int64)
        down = np.floor(np.maximum(-diff, 0.0) / contrast + CROSSING_EPS).astype(np.int64)
        ref = ref + (up - down) * contrast
        counts = (up + down).ravel()
        if not counts.any():
            continue
        flat = np.repeat(np.arange(counts.size), counts)
        xs.append(flat % geometry.width)
        ys.append(flat // geometry.width)
        ts.append(np.full(flat.size, t, dtype=np.uint64))
        ps.append(np.where(up.ravel()[flat] > 0, 1, -1))

    if not ts:
        return EventStream.from_arrays(geometry, *(np.zeros(0, dtype=int) for _ in range(4)))
    return EventStream.from_arrays(
        geometry, np.concatenate(xs), np.concatenate(ys), np.concatenate(ts), np.concatenate(ps)
    )


def voxel_anchors(geometry: SensorGeometry, grid: tuple[int, int], every: int = 1) -> list:
    """One pixel near the centre of every ``every``-th voxel of an (g_x, g_y) grid."""
    gx, gy = grid
    anchors = []
    for vy in range(0, gy, every):
        for vx in range(0, gx, every):
            x = int((vx + 0.5) * geometry.width / gx)
            y = int((vy + 0.5) * geometry.height / gy)
            anchors.append((min(x, geometry.width - 1), min(y, geometry.height - 1)))
    return anchors


def burst_stream(
    geometry: SensorGeometry,
    anchors: list[tuple[int, int]],
    repeats: int,
    period_us: int = 100,
    polarity: int = 1,
) -> EventStream:
    """Anchor pixels firing in round-robin at a fixed period.

    Concentrates many events on the same few pooling voxels, which is where max-pooling
    pruning does most of its work.
    """
    n = len(anchors)
    ax = np.array([a[0] for a in anchors], dtype=np.int64)
    ay = np.array([a[1] for a in anchors], dtype=np.int64)
    t = np.repeat(np.arange(1, repeats + 1, dtype=np.uint64) * period_us, n)
    return EventStream.from_arrays(
        geometry, np.tile(ax, repeats), np.tile(ay, repeats), t, np.full(n * repeats, polarity)
    )


def jitter_stream(
    geometry: SensorGeometry,
    anchors: list[tuple[int, int]],
    n: int,
    spread: tuple[int, int] = (1, 2),
    max_dt: int = 50,
    seed: int = 0,
) -> EventStream:
    """Random events within ``spread`` pixels of randomly chosen anchors.

    Each anchor's events stay inside one first-pool voxel when ``spread`` is smaller than
    half the voxel pitch. Unlike ``burst_stream``, pixels and polarities vary, so a new
    node's features rarely tie with those of earlier members.
    """
    if not anchors:
        raise ValueError("jitter_stream needs at least one anchor")
    rng = np.random.default_rng(seed)
    a = np.asarray(anchors, dtype=np.int64).reshape(-1, 2)
    pick = rng.integers(0, len(a), n)
    sx, sy = spread
    x = np.clip(a[pick, 0] + rng.integers(-sx, sx + 1, n), 0, geometry.width - 1)
    y = np.clip(a[pick, 1] + rng.integers(-sy, sy + 1, n), 0, geometry.height - 1)
    t = np.cumsum(rng.integers(1, max_dt + 1, n))
    return EventStream.from_arrays(geometry, x, y, t, rng.choice([-1, 1], n))
