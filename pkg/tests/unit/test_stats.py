"""Unit tests for run statistics aggregation."""

from eagr.metrics.stats import CSV_COLUMNS, RunStats, aggregate_stats
from eagr.models import CostMode, CostTally, InsertionReport, LayerKind, LayerStats


def make_report(index: int, pruned_at: str | None, flops: int = 10) -> InsertionReport:
    tally = CostTally(root_updates=1)
    conv = LayerStats(
        layer="block1.conv1", kind=LayerKind.CONV, c_in=3, c_out=2, new_nodes=1,
        flops=flops, messages=2, tally=tally,
    )
    pool = LayerStats(
        layer="pool0", kind=LayerKind.POOL, c_in=2, c_out=2, new_nodes=1,
        voxels_touched=1, voxels_pruned=1 if pruned_at else 0, output_empty=pruned_at is not None,
    )
    return InsertionReport(
        index=index, node=index, in_degree=2, layers=[conv, pool], pruned_at=pruned_at,
        total_flops=flops,
    )


class TestRunStats:
    def test_all_pruned_at_first_pool(self):
        stats = aggregate_stats(make_report(i, "pool0") for i in range(4))
        assert stats.phi == 0.0
        assert stats.full_tree_prune_rate == 1.0
        assert stats.voxel_prune_rate == 1.0

    def test_never_pruned(self):
        stats = aggregate_stats(make_report(i, None) for i in range(4))
        assert stats.phi == 1.0
        assert stats.full_tree_prune_rate == 0.0

    def test_later_prune_passes_first_pool(self):
        stats = aggregate_stats([make_report(0, "pool2"), make_report(1, "pool0")])
        assert stats.phi == 0.5
        assert stats.full_tree_prune_rate == 1.0

    def test_empty(self):
        stats = RunStats()
        assert (stats.mean_flops, stats.phi, stats.voxel_prune_rate) == (0.0, 0.0, 0.0)

    def test_mean_flops(self):
        stats = aggregate_stats([make_report(0, None, 10), make_report(1, None, 30)])
        assert stats.mean_flops == 20.0

    def test_merge_is_associative(self):
        a = aggregate_stats([make_report(0, "pool0", 5)])
        b = aggregate_stats([make_report(1, None, 7)])
        c = aggregate_stats([make_report(2, "pool1", 9)])
        left, right = a.merge(b).merge(c), a.merge(b.merge(c))
        assert left.model_dump() == right.model_dump()
        assert left.insertions == 3 and left.total_flops == 21

    def test_merge_equals_single_pass(self):
        reports = [make_report(i, "pool0" if i % 2 else None, i) for i in range(6)]
        merged = aggregate_stats(reports[:2]).merge(aggregate_stats(reports[2:]))
        assert merged.model_dump() == aggregate_stats(reports).model_dump()

    def test_frame(self):
        stats = aggregate_stats([make_report(0, "pool0"), make_report(1, None)])
        frame = stats.to_frame()
        assert list(frame["layer"]) == ["block1.conv1", "pool0"]
        assert set(CSV_COLUMNS) <= set(frame.columns)
        conv = frame.set_index("layer").loc["block1.conv1"]
        assert conv["p_feat_change"] == 1.0
        assert frame.set_index("layer").loc["pool0", "prune_rate"] == 0.5

    def test_reprice_on_aggregate(self):
        lut = aggregate_stats([make_report(0, None)])
        spline = aggregate_stats([make_report(0, None)], CostMode.SPLINE)
        assert lut.total_flops == 10
        assert spline.total_flops == (2 * 3 + 1) * 2

    def test_summary_keys(self):
        summary = aggregate_stats([make_report(0, None)]).summary()
        assert set(summary) == {
            "insertions", "mean_flops", "phi", "full_tree_prune_rate", "voxel_prune_rate"
        }
