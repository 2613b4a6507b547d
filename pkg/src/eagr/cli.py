"""Typer CLI for the EAGR event-graph inference engine."""

from __future__ import annotations

import contextlib
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import pandas as pd
import typer
from dotenv import load_dotenv
from pydantic import ValidationError
from rich.console import Console
from rich.table import Table
from typer.core import TyperGroup

# Newer typer vendors click as typer._click; catch the UsageError it actually raises
try:
    from typer._click.exceptions import UsageError
except ImportError:
    from click import UsageError

from eagr.config import Settings
from eagr.events.stream import EventFormatError, EventStream, SensorGeometry, StreamOrderError
from eagr.models import ModelSize

# Load .env early so EAGR_* settings apply to every command
load_dotenv()

USAGE_ERROR = 1
DATA_ERROR = 2
VERIFY_FAILED = 3


class _Group(TyperGroup):
    """Usage errors exit 1; exit 2 is reserved for bad input data."""

    def make_context(self, *args, **kwargs):
        try:
            return super().make_context(*args, **kwargs)
        except UsageError as e:
            e.exit_code = USAGE_ERROR
            raise

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except UsageError as e:
            e.exit_code = USAGE_ERROR
            raise


app = typer.Typer(
    name="eagr",
    cls=_Group,
    help="Asynchronous event-graph detection: build graphs, run dense or per-event inference.",
    no_args_is_help=True,
)
console = Console()


@contextlib.contextmanager
def _data_errors():
    """Map unreadable or inconsistent inputs to exit code 2."""
    from eagr.layers.lut import LutCoverageError
    from eagr.network.weights import ShapeMismatchError, WeightFormatError

    try:
        yield
    except (
        EventFormatError,
        StreamOrderError,
        WeightFormatError,
        ShapeMismatchError,
        LutCoverageError,
        ValidationError,
        FileNotFoundError,
    ) as e:
        console.print(f"[red]Error:[/red] {e}")
        raise typer.Exit(code=DATA_ERROR) from e


def _settings(verbose: bool = False) -> Settings:
    settings = Settings()
    settings.verbose = settings.verbose or verbose
    return settings


def _emit(payload, out: Path | None) -> None:
    """JSON to ``out`` if given, else to stdout."""
    from eagr.output.writer import dumps, write_json

    if out is None:
        typer.echo(dumps(payload))
    else:
        write_json(payload, out)
        console.print(f"[green]Written:[/green] {out}")


def _read(path: Path) -> EventStream:
    from eagr.events.stream import read_stream

    return read_stream(path)


def _model(
    settings: Settings,
    size: ModelSize,
    geometry: SensorGeometry,
    model_path: Path | None,
    seed: int,
    c_input: int,
    input_convs: int | None,
):
    from eagr.network.architecture import ModelConfig
    from eagr.network.model import build_model
    from eagr.network.weights import load_weights

    config = ModelConfig(
        size=size,
        n_cls=settings.n_cls,
        width=geometry.width,
        height=geometry.height,
        radius=settings.radius,
        max_neighbors=settings.max_neighbors,
        beta=settings.beta,
        c_input=c_input,
        input_convs=input_convs or settings.input_convs,
        bn_eps=settings.bn_eps,
    )
    if model_path is None:
        return build_model(config, seed)
    return build_model(config, load_weights(model_path))


def _split(stream: EventStream, warmup: int | None) -> int:
    n = len(stream) * 4 // 5 if warmup is None else warmup
    if not 0 <= n <= len(stream):
        raise typer.BadParameter(f"warmup {n} outside 0..{len(stream)}", param_hint="--warmup")
    return n


# Options shared by model-using commands
SizeOpt = typer.Option(ModelSize.SMALL, "--config", "-c", help="Model size")
ModelOpt = typer.Option(None, "--model", "-m", help=".eagw weights (random if omitted)")
SeedOpt = typer.Option(0, "--seed", help="Seed for random weights or synthetic data")
CInputOpt = typer.Option(16, "--c-input", min=1, help="Channels of the first block")
InputConvsOpt = typer.Option(None, "--input-convs", min=1, max=3, help="Convs in the first block")
VerboseOpt = typer.Option(False, "--verbose", "-v", help="Verbose output")


@app.command("gen-synthetic")
def gen_synthetic(
    pattern: str = typer.Option("bar", "--pattern", help="Scene: bar, blob or dots"),
    width: int = typer.Option(304, "--width", min=1),
    height: int = typer.Option(240, "--height", min=1),
    contrast: float = typer.Option(None, "--contrast", help="Log-intensity threshold C"),
    duration_us: int = typer.Option(50_000, "--duration-us", min=1),
    seed: int = SeedOpt,
    out: Path = typer.Option(..., "--out", "-o", help="Output .evb path"),
) -> None:
    """Generate a synthetic event stream from a moving scene."""
    from eagr.events.stream import write_stream
    from eagr.events.synthetic import PATTERNS, generate_synthetic

    settings = _settings()
    if pattern not in PATTERNS:
        raise typer.BadParameter(f"choose from {', '.join(PATTERNS)}", param_hint="--pattern")
    stream = generate_synthetic(
        SensorGeometry(width, height),
        pattern,
        contrast if contrast is not None else settings.contrast,
        duration_us,
        seed=seed,
        step_us=settings.step_us,
    )
    write_stream(stream, out)
    console.print(f"[green]{len(stream)} events[/green] -> {out}")


@app.command("build-graph")
def build_graph_cmd(
    input_path: Path = typer.Option(..., "--in", help="Input .evb stream"),
    radius: float = typer.Option(None, "--radius", help="Neighborhood radius R"),
    max_neighbors: int = typer.Option(None, "--max-neighbors", min=1),
    stats: bool = typer.Option(False, "--stats", help="Print graph statistics as JSON"),
    out: Path | None = typer.Option(None, "--out", "-o", help="Write statistics JSON here"),
) -> None:
    """Build the event graph of a stream and report its size."""
    from eagr.graph.event_graph import build_graph

    settings = _settings()
    with _data_errors():
        stream = _read(input_path)
        graph = build_graph(
            stream,
            radius if radius is not None else settings.radius,
            max_neighbors if max_neighbors is not None else settings.max_neighbors,
            settings.beta,
        )
    summary = graph.stats()
    if stats or out is not None:
        _emit(summary, out)
    else:
        console.print(f"{summary.nodes} nodes, {summary.edges} edges")


@app.command("init-weights")
def init_weights_cmd(
    size: ModelSize = SizeOpt,
    seed: int = SeedOpt,
    c_input: int = CInputOpt,
    input_convs: int = InputConvsOpt,
    out: Path = typer.Option(..., "--out", "-o", help="Output .eagw path"),
) -> None:
    """Write randomly initialized weights."""
    from eagr.network.weights import save_weights

    settings = _settings()
    model = _model(settings, size, SensorGeometry(304, 240), None, seed, c_input, input_convs)
    save_weights(model.weights, out)
    console.print(
        f"[green]{size.value}[/green]: {model.parameter_count} parameters, "
        f"depth {model.depth} -> {out}"
    )


@app.command("infer-dense")
def infer_dense(
    input_path: Path = typer.Option(..., "--in", help="Input .evb stream"),
    model_path: Path | None = ModelOpt,
    size: ModelSize = SizeOpt,
    seed: int = SeedOpt,
    c_input: int = CInputOpt,
    input_convs: int = InputConvsOpt,
    score_thresh: float = typer.Option(None, "--score-thresh", min=0.0, max=1.0),
    nms_iou: float = typer.Option(None, "--nms-iou", min=0.0, max=1.0),
    out: Path | None = typer.Option(None, "--out", "-o", help="Detections JSON"),
) -> None:
    """Run one from-scratch pass over a whole stream and decode detections."""
    from eagr.detect.decode import detect
    from eagr.graph.event_graph import build_graph
    from eagr.network.model import dense_forward

    settings = _settings()
    with _data_errors():
        stream = _read(input_path)
        model = _model(settings, size, stream.geometry, model_path, seed, c_input, input_convs)
        cfg = model.config
        graph = build_graph(stream, cfg.radius, cfg.max_neighbors, cfg.beta)
        state = dense_forward(model, graph)
    try:
        found = detect(
            state.outputs,
            stream.geometry,
            score_thresh if score_thresh is not None else settings.score_thresh,
            nms_iou if nms_iou is not None else settings.nms_iou,
        )
    except ValueError as e:
        raise typer.BadParameter(str(e)) from e
    _emit([d.to_record() for d in found], out)


def _run_table(title: str, stats, dense: int | None = None) -> Table:
    table = Table(title=title)
    table.add_column("Metric", style="cyan")
    table.add_column("Value", justify="right", style="green")
    summary = stats.summary()
    table.add_row("insertions", str(summary["insertions"]))
    table.add_row("mean FLOPs/ev", f"{summary['mean_flops']:,.0f}")
    if dense is not None:
        table.add_row("dense FLOPs", f"{dense:,}")
        ratio = dense / summary["mean_flops"] if summary["mean_flops"] else float("inf")
        table.add_row("dense / async", f"{ratio:,.1f}")
    table.add_row("phi (first pool)", f"{summary['phi']:.3f}")
    table.add_row("full-tree prune rate", f"{summary['full_tree_prune_rate']:.3f}")
    table.add_row("voxel prune rate", f"{summary['voxel_prune_rate']:.3f}")
    return table


@app.command("infer-async")
def infer_async(
    input_path: Path = typer.Option(..., "--in", help="Input .evb stream"),
    model_path: Path | None = ModelOpt,
    size: ModelSize = SizeOpt,
    seed: int = SeedOpt,
    c_input: int = CInputOpt,
    input_convs: int = InputConvsOpt,
    warmup: int = typer.Option(None, "--warmup", min=0, help="Events for initialization"),
    pruning: bool = typer.Option(None, "--pruning/--no-pruning"),
    rounding: bool = typer.Option(None, "--rounding/--no-rounding"),
    report: Path = typer.Option(..., "--report", help="Per-insertion report JSON"),
    verbose: bool = VerboseOpt,
) -> None:
    """Initialize on a warm-up prefix, then insert the remaining events one at a time."""
    from eagr.asynch.engine import AsyncSession, EngineOptions
    from eagr.graph.event_graph import build_graph
    from eagr.metrics.costs import dense_flops
    from eagr.metrics.stats import aggregate_stats
    from eagr.models import RunReport

    settings = _settings(verbose)
    options = EngineOptions(
        settings.pruning if pruning is None else pruning,
        settings.position_rounding if rounding is None else rounding,
    )
    with _data_errors():
        stream = _read(input_path)
        n = _split(stream, warmup)
        model = _model(settings, size, stream.geometry, model_path, seed, c_input, input_convs)
        cfg = model.config
        graph = build_graph(stream.head(n), cfg.radius, cfg.max_neighbors, cfg.beta)
        session = AsyncSession(model, graph, options, settings)
        dense = dense_flops(model, graph, session.cache.state)
        reports = session.run(stream.slice(n), start=n)
    run = RunReport(
        source=str(input_path),
        model_size=size,
        warmup=n,
        pruning=options.pruning,
        position_rounding=options.position_rounding,
        dense_flops=dense,
        insertions=reports,
    )
    _emit(run, report)
    console.print(_run_table("Asynchronous run", aggregate_stats(reports), dense))


@app.command("verify-equivalence")
def verify_equivalence(
    input_path: Path = typer.Option(..., "--in", help="Input .evb stream"),
    model_path: Path | None = ModelOpt,
    size: ModelSize = SizeOpt,
    seed: int = SeedOpt,
    c_input: int = CInputOpt,
    input_convs: int = InputConvsOpt,
    warmup: int = typer.Option(None, "--warmup", min=0, help="Default: 80% of the stream"),
    every: int = typer.Option(1, "--every", min=1, help="Audit every K insertions"),
    tolerance: float = typer.Option(None, "--tolerance", min=0.0),
    out: Path | None = typer.Option(None, "--out", "-o", help="Summary JSON"),
    verbose: bool = VerboseOpt,
) -> None:
    """Stream events asynchronously and audit the cache against dense recomputation."""
    from eagr.asynch.engine import AsyncSession, EngineOptions
    from eagr.graph.event_graph import build_graph

    settings = _settings(verbose)
    tol = settings.tolerance if tolerance is None else tolerance
    options = EngineOptions(settings.pruning, settings.position_rounding)
    with _data_errors():
        stream = _read(input_path)
        n = _split(stream, warmup)
        model = _model(settings, size, stream.geometry, model_path, seed, c_input, input_convs)
        cfg = model.config
        graph = build_graph(stream.head(n), cfg.radius, cfg.max_neighbors, cfg.beta)
        session = AsyncSession(model, graph, options, settings)
        audits, problems = 1, session.audit(tol)
        rest = stream.slice(n)
        for i, event in enumerate(rest, start=1):
            if problems:
                break
            session.insert(event, index=n + i - 1)
            if i % every == 0 or i == len(rest):
                audits += 1
                problems = session.audit(tol)
    summary = {
        "insertions": session.cache.insertions,
        "audits": audits,
        "tolerance": tol,
        "discrepancies": [p.model_dump() for p in problems],
    }
    _emit(summary, out)
    if problems:
        table = Table(title="Cache discrepancies")
        table.add_column("Layer", style="cyan")
        table.add_column("Node", justify="right")
        table.add_column("Max error", justify="right", style="red")
        for p in problems[:20]:
            table.add_row(p.layer, str(p.node), f"{p.max_abs_error:.3g}")
        console.print(table)
        raise typer.Exit(code=VERIFY_FAILED)
    console.print(f"[green]Equivalent[/green] over {audits} audits")


def _bench_one(path: Path, settings, size, model_path, seed, c_input, input_convs, warmup):
    from eagr.graph.event_graph import build_graph
    from eagr.metrics.costs import dense_flops
    from eagr.metrics.stats import aggregate_stats
    from eagr.metrics.sweeps import stream_reports

    stream = _read(path)
    n = _split(stream, warmup)
    model = _model(settings, size, stream.geometry, model_path, seed, c_input, input_convs)
    cfg = model.config
    dense = dense_flops(model, build_graph(stream.head(n), cfg.radius, cfg.max_neighbors, cfg.beta))
    return aggregate_stats(stream_reports(model, stream, n)), dense, model, stream, n


@app.command()
def bench(
    inputs: list[Path] = typer.Option(..., "--in", help="Input .evb streams (repeatable)"),
    model_path: Path | None = ModelOpt,
    size: ModelSize = SizeOpt,
    seed: int = SeedOpt,
    c_input: int = CInputOpt,
    input_convs: int = InputConvsOpt,
    warmup: int = typer.Option(None, "--warmup", min=0, help="Default: 80% of each stream"),
    workers: int = typer.Option(1, "--workers", min=1, help="Streams processed in parallel"),
    ablation: bool = typer.Option(False, "--ablation", help="Also print the cost ablation"),
    sweep: bool = typer.Option(
        False, "--channel-sweep", help="phi at the first pool for c_input 8, 16, 24 and 32"
    ),
    sweep_seeds: int = typer.Option(3, "--sweep-seeds", min=1, help="Weight seeds per size"),
    save: bool = typer.Option(False, "--save", help="Write summary and tables to a run directory"),
    out: Path | None = typer.Option(None, "--out", "-o", help="Summary JSON (default: stdout)"),
) -> None:
    """Dense-pass FLOPs against mean asynchronous FLOPs per event."""
    from eagr.metrics.stats import RunStats
    from eagr.metrics.sweeps import ablation as run_ablation
    from eagr.metrics.sweeps import channel_sweep, non_decreasing
    from eagr.output.writer import ArtifactWriter

    settings = _settings()
    args = (settings, size, model_path, seed, c_input, input_convs, warmup)
    with _data_errors():
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda p: _bench_one(p, *args), inputs))
    stats = RunStats()
    for shard, *_ in results:
        stats = stats.merge(shard)
    dense = sum(r[1] for r in results) // len(results)
    mean = stats.summary()["mean_flops"]
    payload = {
        "dense_flops": dense,
        "streams": len(results),
        "ratio": dense / mean if mean else None,
        **stats.summary(),
    }
    tables = [_run_table("Benchmark", stats, dense)]
    artifacts = {"layers.csv": stats.to_frame()}
    if ablation:
        frames = [run_ablation(model, stream, n) for _, _, model, stream, n in results]
        table_df = pd.concat(frames).groupby("variant", sort=False, as_index=False).mean()
        table = Table(title="Cost ablation")
        for col in ("Variant", "FLOPs/ev", "Relative"):
            table.add_column(col)
        for row in table_df.itertuples():
            table.add_row(row.variant, f"{row.mean_flops:,.0f}", f"{row.relative:.3f}")
        tables.append(table)
        payload["ablation"] = table_df.to_dict(orient="records")
        artifacts["ablation.csv"] = table_df
    if sweep:
        seeds = range(seed, seed + sweep_seeds)
        per_stream = [
            channel_sweep(stream, seed=seeds, warmup=n, config=model.config)
            for _, _, model, stream, n in results
        ]
        phi = {c: sum(s[c] for s in per_stream) / len(per_stream) for c in per_stream[0]}
        trend = non_decreasing(phi)
        table = Table(title=f"First-pool channel sweep ({sweep_seeds} seeds)")
        table.add_column("c_input", justify="right")
        table.add_column("phi", justify="right")
        for c, v in phi.items():
            table.add_row(str(c), f"{v:.3f}")
        tables.append(table)
        payload["channel_sweep"] = {"phi": phi, "non_decreasing": trend}
        artifacts["channel_sweep.csv"] = pd.DataFrame(
            {"c_input": list(phi), "phi": list(phi.values())}
        )
    _emit(payload, out)
    for table in tables:
        console.print(table)
    if save:
        writer = ArtifactWriter(settings, label="bench")
        writer.write_all({"summary.json": payload, **artifacts})
        console.print(f"[green]Artifacts:[/green] {writer.run_dir}")


@app.command()
def stats(
    report: Path = typer.Option(..., "--report", help="Report JSON from infer-async"),
    out: Path | None = typer.Option(None, "--out", "-o", help="stats.json or stats.csv"),
) -> None:
    """Aggregate per-layer statistics from an asynchronous run report."""
    from eagr.metrics.stats import CSV_COLUMNS, aggregate_stats
    from eagr.output.schemas import validate_report_json
    from eagr.output.writer import write_csv

    with _data_errors():
        run = validate_report_json(report.read_text(encoding="utf-8"))
    result = aggregate_stats(run.insertions)
    frame = result.to_frame()
    if out is not None and out.suffix == ".csv":
        write_csv(frame[CSV_COLUMNS], out)
        console.print(f"[green]Written:[/green] {out}")
        return
    payload = {"summary": result.summary(), "layers": frame.to_dict(orient="records")}
    _emit(payload, out)


@app.command()
def schemas(
    out_dir: Path | None = typer.Option(
        None, "--out-dir", help="Write one .schema.json per file type (default: stdout)"
    ),
) -> None:
    """JSON schemas of the report, insertion, detection and graph-stats files."""
    from eagr.output.schemas import export_schemas

    exported = export_schemas(out_dir)
    if out_dir is None:
        _emit(exported, None)
        return
    for name in exported:
        console.print(f"[green]Written:[/green] {out_dir / name}")


if __name__ == "__main__":
    app()
