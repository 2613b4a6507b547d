#!/usr/bin/env python3
"""Check asynchronous against dense head outputs over many seeded streams.

For every seed a synthetic stream (1000 events by default) is generated, the cache is
initialized on the first 80% of it, and after each remaining insertion the head outputs
are compared with a from-scratch pass. Runs from a checkout without installing the `eagr` CLI.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
from dotenv import load_dotenv
from rich.console import Console
from rich.table import Table

REPO_ROOT = Path(__file__).resolve().parents[1]
SRC_DIR = REPO_ROOT / "src"
if str(SRC_DIR) not in sys.path:
    sys.path.insert(0, str(SRC_DIR))

console = Console()


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Seeded asynchronous-vs-dense equivalence sweep."
    )
    parser.add_argument("--seeds", type=int, default=20, help="Seeds 0..N-1.")
    parser.add_argument(
        "--pattern",
        default="jitter",
        help="jitter (events around first-pool voxel centres) or a scene: bar, blob, dots.",
    )
    parser.add_argument("--width", type=int, default=304)
    parser.add_argument("--height", type=int, default=240)
    parser.add_argument("--duration-us", type=int, default=50_000, help="Scene patterns only.")
    parser.add_argument("--max-events", type=int, default=1000, help="Events per stream.")
    parser.add_argument("--config", default="small", help="Model size.")
    parser.add_argument("--radius", type=float, default=0.01)
    parser.add_argument("--tolerance", type=float, default=None)
    parser.add_argument("--verbose", action="store_true", help="Print every seed as it ends.")
    return parser


def _worst(session, model, dense_forward) -> float:
    fresh = dense_forward(model, session.graph)
    worst = 0.0
    for mine, ref in zip(session.outputs, fresh.outputs):
        if not np.array_equal(mine.voxels, ref.voxels):
            return float("inf")
        for name in ("reg", "cls", "obj"):
            a, b = getattr(mine, name), getattr(ref, name)
            if a.size:
                scale = np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
                worst = max(worst, float(np.max(np.abs(a - b) / scale)))
    return worst


def main() -> int:
    from eagr.asynch.engine import AsyncSession
    from eagr.config import Settings
    from eagr.events.stream import SensorGeometry
    from eagr.events.synthetic import generate_synthetic, jitter_stream, voxel_anchors
    from eagr.graph.event_graph import build_graph
    from eagr.models import ModelSize
    from eagr.network.architecture import ModelConfig
    from eagr.network.model import build_model, dense_forward

    load_dotenv(REPO_ROOT / ".env")
    parser = _build_parser()
    args = parser.parse_args()
    if args.seeds < 1:
        parser.error("--seeds must be >= 1")

    settings = Settings()
    tolerance = settings.tolerance if args.tolerance is None else args.tolerance
    geometry = SensorGeometry(args.width, args.height)
    config = ModelConfig(
        size=ModelSize(args.config),
        width=args.width,
        height=args.height,
        radius=args.radius,
    )

    table = Table(title="Equivalence sweep")
    table.add_column("Seed", justify="right")
    table.add_column("Events", justify="right")
    table.add_column("Insertions", justify="right")
    table.add_column("Max rel. error", justify="right")
    failures = 0
    for seed in range(args.seeds):
        if args.pattern == "jitter":
            anchors = voxel_anchors(geometry, config.pool_specs[0].grid, every=6)
            stream = jitter_stream(geometry, anchors, args.max_events, spread=(3, 3), seed=seed)
        else:
            stream = generate_synthetic(
                geometry, args.pattern, settings.contrast, args.duration_us, seed=seed
            ).head(args.max_events)
        model = build_model(config, seed)
        warm = len(stream) * 4 // 5
        graph = build_graph(stream.head(warm), config.radius, config.max_neighbors, config.beta)
        session = AsyncSession(model, graph)
        worst = 0.0
        for offset, event in enumerate(stream.slice(warm)):
            session.insert(event, index=warm + offset)
            worst = max(worst, _worst(session, model, dense_forward))
        ok = worst <= tolerance
        failures += not ok
        style = "green" if ok else "red"
        table.add_row(
            str(seed), str(len(stream)), str(len(stream) - warm), f"[{style}]{worst:.2e}[/{style}]"
        )
        if args.verbose:
            console.print(f"seed {seed}: max relative error {worst:.2e}")

    console.print(table)
    if failures:
        console.print(f"[red]{failures} of {args.seeds} seeds exceeded {tolerance:g}[/red]")
        return 1
    console.print(f"[green]All {args.seeds} seeds within {tolerance:g}[/green]")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
