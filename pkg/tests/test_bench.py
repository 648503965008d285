"""Benchmark harness: statistics, table, record serialization, determinism."""

import json

from cobos.agents import ControllerKind
from cobos.bench import (
    BenchRow,
    ExperimentGrid,
    emit_latency_report,
    emit_plot_data,
    emit_records_jsonl,
    emit_summary_csv,
    emit_table,
    nearest_rank,
    run_grid,
    summarize,
)


def row(case=1, inst=0, seed=0, method="cobos", normalized=1.0, mode="on", solve_ms=()):
    return BenchRow(
        case_id=case,
        instance=inst,
        seed_index=seed,
        rejection=mode,
        method=method,
        run_seed=seed,
        status="completed",
        makespan=int(normalized * 100),
        bound=100,
        normalized=normalized,
        n_solves=len(solve_ms),
        solve_ms=list(solve_ms),
    )


class TestNearestRank:
    def test_spec_example(self):
        values = [round(1.0 + 0.1 * k, 1) for k in range(11)]  # 1.0 .. 2.0
        assert nearest_rank(values, 0.10) == 1.1

    def test_extremes(self):
        values = [1.0, 2.0, 3.0]
        assert nearest_rank(values, 0.90) == 3.0
        assert nearest_rank(values, 0.10) == 1.0


class TestSummarize:
    def test_constant_values(self):
        rows = [row(seed=i, normalized=1.0) for i in range(5)]
        (s,) = summarize(rows)
        assert s.mean == 1.0
        assert s.std == 0.0
        assert s.p10 == s.p90 == 1.0

    def test_known_statistics(self):
        values = [1.0, 1.1, 1.2, 1.3, 1.4, 1.5, 1.6, 1.7, 1.8, 1.9, 2.0]
        rows = [row(seed=i, normalized=v) for i, v in enumerate(values)]
        (s,) = summarize(rows)
        assert abs(s.mean - sum(values) / len(values)) < 1e-12
        assert s.p10 == 1.1
        assert s.p90 == 1.9

    def test_latency_stats(self):
        rows = [row(seed=0, solve_ms=[5.0, 1.0]), row(seed=1, solve_ms=[3.0])]
        (s,) = summarize(rows)
        assert s.lat_max_ms == 5.0
        assert abs(s.lat_mean_ms - 3.0) < 1e-12


class TestEmitters:
    def test_table_contains_methods_and_cases(self):
        rows = [row(case=c, method=m, normalized=1.1) for c in (1, 2) for m in ("cobos", "ra", "md", "da")]
        table = emit_table(summarize(rows))
        for label in ("CoBOS", "RA", "MD", "DA", "mean", "p10", "p90", "std"):
            assert label in table

    def test_records_jsonl_stable(self):
        rows = [row(seed=i) for i in range(3)]
        text = emit_records_jsonl(rows)
        assert text == emit_records_jsonl(rows)
        lines = text.strip().split("\n")
        assert len(lines) == 3
        parsed = json.loads(lines[0])
        assert list(parsed.keys()) == [
            "case", "instance", "seed_index", "rejection", "method",
            "run_seed", "status", "makespan", "bound", "normalized", "n_solves",
            "trace_ok",
        ]

    def test_plot_data_groups_values(self):
        rows = [row(method="cobos", normalized=1.1), row(method="ra", normalized=1.3)]
        data = emit_plot_data(rows)
        assert data["1"]["cobos"] == [1.1]
        assert data["1"]["ra"] == [1.3]

    def test_latency_report_splits_initial(self):
        rows = [row(method="cobos", solve_ms=[900.0, 5.0, 7.0])]
        report = emit_latency_report(rows)
        cell = report["1"]["cobos"]
        assert cell["initial_ms"]["max"] == 900.0
        assert cell["reschedule_ms"]["max"] == 7.0

    def test_summary_csv_header(self):
        text = emit_summary_csv(summarize([row()]))
        assert text.splitlines()[0] == "case,method,n,mean,std,p10,p90,lat_mean_ms,lat_max_ms"


class TestGrid:
    def test_tiny_grid_runs_and_is_deterministic(self):
        grid = ExperimentGrid(
            cases=(1, 3),
            methods=(ControllerKind.COBOS, ControllerKind.DA),
            n_instances=2,
            n_seeds=2,
            rejection_modes=("on",),
        )
        rows_a = run_grid(grid, base_seed=0, workers=1)
        rows_b = run_grid(grid, base_seed=0, workers=2)
        assert emit_records_jsonl(rows_a) == emit_records_jsonl(rows_b)
        assert len(rows_a) == grid.total_runs == 2 * 2 * 2 * 2
        assert all(r.normalized is not None and r.normalized >= 1.0 for r in rows_a)

    def test_grid_from_json_roundtrip(self):
        grid = ExperimentGrid.from_json({"cases": [1], "methods": ["da"], "n_instances": 1, "n_seeds": 1})
        assert grid.cases == (1,)
        assert grid.methods == (ControllerKind.DA,)
        assert grid.total_runs == 2  # both rejection modes by default
