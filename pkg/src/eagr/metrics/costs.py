"""Closed-form FLOP costs.

Multiplies and adds count one FLOP each; ReLU, max and comparisons are free.

  message (LUT)      (2 c_in - 1) c_out
  message (spline)   (2 (d+1)^m - 1) c_in c_out + (2 c_in - 1) c_out
  C_root             (2 c_in + 1) c_out
  C_recomp(n)        n * message + (n - 1) c_out, and 0 when n = 0
  C_update(n_dst)    n_dst * (message + 2 c_out)
  new edge           message + c_out
  residual add       c_out
"""

from __future__ import annotations

from eagr.graph.layer_graph import LayerGraph
from eagr.models import CostMode, CostTally, InsertionReport, LayerKind
from eagr.network.model import DenseOutput, Model, dense_forward

SPLINE_DEGREE = 1


def flops_per_message(
    mode: CostMode, c_in: int, c_out: int, d: int = SPLINE_DEGREE, m: int | None = None
) -> int:
    mode = CostMode(mode)
    matvec = (2 * c_in - 1) * c_out
    if mode is CostMode.LUT:
        return matvec
    if m is None:
        m = 3 if mode is CostMode.SPLINE3D else 2
    return (2 * (d + 1) ** m - 1) * c_in * c_out + matvec


def cost_root(c_in: int, c_out: int) -> int:
    return (2 * c_in + 1) * c_out


def cost_recomp(n_src: int, c_in: int, c_out: int, mode: CostMode = CostMode.LUT) -> int:
    if n_src == 0:
        return 0
    return n_src * flops_per_message(mode, c_in, c_out) + (n_src - 1) * c_out


def cost_update(n_dst: int, c_in: int, c_out: int, mode: CostMode = CostMode.LUT) -> int:
    """Replace one message per destination: subtract the old one, add the new one."""
    return n_dst * (flops_per_message(mode, c_in, c_out) + 2 * c_out)


def cost_new_edge(c_in: int, c_out: int, mode: CostMode = CostMode.LUT) -> int:
    return flops_per_message(mode, c_in, c_out) + c_out


def tally_flops(tally: CostTally, c_in: int, c_out: int, mode: CostMode = CostMode.LUT) -> int:
    """FLOPs of one layer's counted operations."""
    msg = flops_per_message(mode, c_in, c_out)
    recomp = tally.recomp_messages * msg + (tally.recomp_messages - tally.recomp_nodes) * c_out
    return (
        recomp
        + tally.root_updates * cost_root(c_in, c_out)
        + tally.dest_updates * (msg + 2 * c_out)
        + tally.new_edges * (msg + c_out)
        + tally.adds * c_out
    )


def insertion_cost(report: InsertionReport, mode: CostMode = CostMode.LUT) -> dict[str, int]:
    """Per-layer FLOPs of one insertion, recomputed from its operation counts."""
    return {
        s.layer: 0 if s.kind is LayerKind.POOL else tally_flops(s.tally, s.c_in, s.c_out, mode)
        for s in report.layers
    }


def reprice(report: InsertionReport, mode: CostMode) -> InsertionReport:
    """Same insertion priced under another message cost."""
    costs = insertion_cost(report, mode)
    layers = [s.model_copy(update={"flops": costs[s.layer]}) for s in report.layers]
    return report.model_copy(update={"layers": layers, "total_flops": sum(costs.values())})


def dense_flops(
    model: Model,
    graph: LayerGraph,
    state: DenseOutput | None = None,
    mode: CostMode = CostMode.LUT,
) -> int:
    """FLOPs of one from-scratch pass: every node pays C_root + C_recomp(in-degree)."""
    if state is None:
        state = dense_forward(model, graph)
    total = 0
    for spec in model.specs:
        g = state.levels[spec.level].graph
        n = g.num_nodes
        total += n * cost_root(spec.c_in, spec.c_out)
        if spec.root_only:
            continue
        total += sum(
            cost_recomp(g.in_degree(i), spec.c_in, spec.c_out, mode) for i in range(n)
        )
    for index, (_, c_out) in enumerate(model.config.block_channels):
        total += state.levels[index].graph.num_nodes * c_out
    return total
