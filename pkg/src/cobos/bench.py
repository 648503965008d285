"""Batch experiment harness.

Runs the method x case x instance x seed x rejection-mode grid, normalizes
every makespan by the perfect-information optimum of the same realized
world, and reduces to the summary table. Fully deterministic for a given
grid and base seed: worker count changes wall time, never content.
"""

from __future__ import annotations

import csv
import io
import json
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

from .agents import ControllerKind
from .cases import CaseSpec, generate_case
from .domain import check_schedule
from .sim import (
    RealizedOutcomes,
    RunStatus,
    SimConfig,
    derive_seed,
    run_sim,
    sample_outcomes,
    trace_to_schedule,
)
from .solver import SolveStatus, lower_bound_perfect_information


class EmptyCell(Exception):
    pass


@dataclass(frozen=True)
class ExperimentGrid:
    cases: tuple[int, ...] = (1, 2, 3, 4, 5, 6, 7)
    methods: tuple[ControllerKind, ...] = (
        ControllerKind.COBOS,
        ControllerKind.RA,
        ControllerKind.MD,
        ControllerKind.DA,
    )
    n_instances: int = 10
    n_seeds: int = 25
    rejection_modes: tuple[str, ...] = ("on", "off")
    parallelism: int = 1
    true_estimates: bool = False
    case_overrides: dict = field(default_factory=dict, hash=False, compare=False)

    @property
    def total_runs(self) -> int:
        return (
            len(self.cases)
            * len(self.methods)
            * self.n_instances
            * self.n_seeds
            * len(self.rejection_modes)
        )

    @staticmethod
    def from_json(obj: dict) -> "ExperimentGrid":
        return ExperimentGrid(
            cases=tuple(obj.get("cases", (1, 2, 3, 4, 5, 6, 7))),
            methods=tuple(ControllerKind(m) for m in obj.get("methods", ("cobos", "ra", "md", "da"))),
            n_instances=int(obj.get("n_instances", 10)),
            n_seeds=int(obj.get("n_seeds", 25)),
            rejection_modes=tuple(obj.get("rejection_modes", ("on", "off"))),
            parallelism=int(obj.get("parallelism", 1)),
            true_estimates=bool(obj.get("true_estimates", False)),
            case_overrides=dict(obj.get("case_overrides", {})),
        )


@dataclass
class BenchRow:
    case_id: int
    instance: int
    seed_index: int
    rejection: str
    method: str
    run_seed: int
    status: str
    makespan: int | None
    bound: int | None
    normalized: float | None
    n_solves: int
    trace_ok: bool | None = None
    solve_ms: list[float] = field(default_factory=list)

    def sort_key(self) -> tuple:
        return (self.case_id, self.instance, self.seed_index, self.rejection, self.method)

    def to_json(self) -> dict:
        # Stable key order; wall-clock latencies are reported separately.
        return {
            "case": self.case_id,
            "instance": self.instance,
            "seed_index": self.seed_index,
            "rejection": self.rejection,
            "method": self.method,
            "run_seed": self.run_seed,
            "status": self.status,
            "makespan": self.makespan,
            "bound": self.bound,
            "normalized": self.normalized,
            "n_solves": self.n_solves,
            "trace_ok": self.trace_ok,
        }


@dataclass
class SummaryRow:
    case_id: int
    method: str
    n: int
    mean: float
    std: float
    p10: float
    p90: float
    lat_mean_ms: float
    lat_max_ms: float


def nearest_rank(values: list[float], q: float) -> float:
    """Nearest-rank percentile: the ceil(q*n)-th smallest value."""
    if not values:
        raise EmptyCell("no values")
    ordered = sorted(values)
    rank = max(1, -(-int(q * 100) * len(ordered) // 100))
    return ordered[rank - 1]


def _instance_unit(args: tuple) -> list[BenchRow]:
    grid_obj, case_id, instance, base_seed = args
    grid = ExperimentGrid.from_json(grid_obj)
    spec = CaseSpec(case_id=case_id, seed=base_seed * 1000 + instance, **grid.case_overrides)
    job = generate_case(spec)
    rows: list[BenchRow] = []
    for seed_index in range(grid.n_seeds):
        run_seed = derive_seed(base_seed, "run", case_id, instance, seed_index)
        outcomes = sample_outcomes(job, run_seed)
        # One exact bound per distinct realized world; rejection mode only
        # matters when a rejection was actually drawn.
        bound_cache: dict[bool, int | None] = {}
        bounds: dict[str, int | None] = {}
        for mode in grid.rejection_modes:
            with_rejections = mode == "on" and any(outcomes.rejections.values())
            if with_rejections not in bound_cache:
                realized = outcomes if with_rejections else RealizedOutcomes(
                    durations=outcomes.durations, rejections={}
                )
                result = lower_bound_perfect_information(job, realized)
                bound_cache[with_rejections] = (
                    result.objective if result.status is SolveStatus.OPTIMAL else None
                )
            bounds[mode] = bound_cache[with_rejections]
        for mode in grid.rejection_modes:
            bound = bounds.get(mode)
            for method in grid.methods:
                config = SimConfig(
                    rejection_enabled=(mode == "on"),
                    resample_estimates=not grid.true_estimates,
                )
                trace_ok = None
                try:
                    record = run_sim(job, method, run_seed, config)
                    status = record.status.value
                    makespan = record.makespan
                    n_solves = record.n_solves
                    solve_ms = [l.wall_ms for l in record.latencies if l.solved]
                    if record.status is RunStatus.COMPLETED:
                        executed = trace_to_schedule(record.trace, job)
                        trace_ok = check_schedule(job, executed).ok
                except Exception as exc:  # recorded in-row, never aborts the grid
                    status = f"error: {exc}"
                    makespan = None
                    n_solves = 0
                    solve_ms = []
                normalized = None
                if makespan is not None and bound:
                    normalized = makespan / bound
                rows.append(
                    BenchRow(
                        case_id=case_id,
                        instance=instance,
                        seed_index=seed_index,
                        rejection=mode,
                        method=method.value,
                        run_seed=run_seed,
                        status=status,
                        makespan=makespan,
                        bound=bound,
                        normalized=normalized,
                        n_solves=n_solves,
                        trace_ok=trace_ok,
                        solve_ms=solve_ms,
                    )
                )
    return rows


def run_grid(grid: ExperimentGrid, base_seed: int = 0, workers: int | None = None) -> list[BenchRow]:
    """Execute every cell of the grid; deterministic row set."""
    workers = workers if workers is not None else grid.parallelism
    grid_obj = {
        "cases": list(grid.cases),
        "methods": [m.value for m in grid.methods],
        "n_instances": grid.n_instances,
        "n_seeds": grid.n_seeds,
        "rejection_modes": list(grid.rejection_modes),
        "true_estimates": grid.true_estimates,
        "case_overrides": grid.case_overrides,
    }
    units = [
        (grid_obj, case_id, instance, base_seed)
        for case_id in grid.cases
        for instance in range(grid.n_instances)
    ]
    rows: list[BenchRow] = []
    if workers <= 1:
        for unit in units:
            rows.extend(_instance_unit(unit))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for chunk in pool.map(_instance_unit, units):
                rows.extend(chunk)
    rows.sort(key=BenchRow.sort_key)
    return rows


def summarize(rows: list[BenchRow]) -> list[SummaryRow]:
    """Per (case, method) statistics over normalized makespans."""
    cells: dict[tuple[int, str], list[BenchRow]] = {}
    for row in rows:
        cells.setdefault((row.case_id, row.method), []).append(row)
    out = []
    for (case_id, method) in sorted(cells):
        bucket = cells[(case_id, method)]
        values = [r.normalized for r in bucket if r.normalized is not None]
        if not values:
            raise EmptyCell(f"case {case_id} method {method}")
        lats = [ms for r in bucket for ms in r.solve_ms]
        out.append(
            SummaryRow(
                case_id=case_id,
                method=method,
                n=len(values),
                mean=statistics.fmean(values),
                std=statistics.stdev(values) if len(values) > 1 else 0.0,
                p10=nearest_rank(values, 0.10),
                p90=nearest_rank(values, 0.90),
                lat_mean_ms=statistics.fmean(lats) if lats else 0.0,
                lat_max_ms=max(lats) if lats else 0.0,
            )
        )
    return out


METHOD_ORDER = ["cobos", "ra", "md", "da"]
METHOD_LABEL = {"cobos": "CoBOS", "ra": "RA", "md": "MD", "da": "DA"}


def emit_table(rows: list[SummaryRow]) -> str:
    """Normalized-makespan table: mean, 10th, 90th percentile and std per
    method and case, lower is better."""
    cases = sorted({r.case_id for r in rows})
    by = {(r.case_id, r.method): r for r in rows}
    buf = io.StringIO()
    header = "case      " + "".join(f"{c:>8}" for c in cases)
    for stat, pick in (
        ("mean", lambda r: r.mean),
        ("p10", lambda r: r.p10),
        ("p90", lambda r: r.p90),
        ("std", lambda r: r.std),
    ):
        buf.write(f"-- {stat} --\n{header}\n")
        for method in METHOD_ORDER:
            cells = []
            for c in cases:
                r = by.get((c, method))
                cells.append(f"{pick(r):8.3f}" if r else " " * 8)
            buf.write(f"{METHOD_LABEL[method]:<10}" + "".join(cells) + "\n")
    return buf.getvalue()


def emit_summary_csv(rows: list[SummaryRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["case", "method", "n", "mean", "std", "p10", "p90", "lat_mean_ms", "lat_max_ms"])
    for r in rows:
        writer.writerow(
            [r.case_id, r.method, r.n, f"{r.mean:.6f}", f"{r.std:.6f}", f"{r.p10:.6f}",
             f"{r.p90:.6f}", f"{r.lat_mean_ms:.3f}", f"{r.lat_max_ms:.3f}"]
        )
    return buf.getvalue()


def emit_plot_data(rows: list[BenchRow]) -> dict:
    """Per (case, method) normalized-makespan value lists for plotting."""
    out: dict[str, dict[str, list[float]]] = {}
    for row in rows:
        if row.normalized is None:
            continue
        out.setdefault(str(row.case_id), {}).setdefault(row.method, []).append(row.normalized)
    return out


def emit_records_jsonl(rows: list[BenchRow]) -> str:
    return "".join(json.dumps(r.to_json(), separators=(",", ":")) + "\n" for r in rows)


def emit_latency_report(rows: list[BenchRow]) -> dict:
    """Solver wall-time distribution per (case, method); initial solve and
    reschedules reported separately, like the decision-duration figure."""
    out: dict[str, dict] = {}
    per_cell: dict[tuple[int, str], tuple[list[float], list[float]]] = {}
    for row in rows:
        if not row.solve_ms:
            continue
        initial, resched = per_cell.setdefault((row.case_id, row.method), ([], []))
        initial.append(row.solve_ms[0])
        resched.extend(row.solve_ms[1:])
    for (case_id, method), (initial, resched) in sorted(per_cell.items()):
        entry = out.setdefault(str(case_id), {}).setdefault(method, {})
        entry["initial_ms"] = {
            "mean": round(statistics.fmean(initial), 3),
            "max": round(max(initial), 3),
        }
        if resched:
            ordered = sorted(resched)
            entry["reschedule_ms"] = {
                "mean": round(statistics.fmean(ordered), 3),
                "p99": round(nearest_rank(ordered, 0.99), 3),
                "max": round(ordered[-1], 3),
                "n": len(ordered),
            }
    return out


def write_outputs(rows: list[BenchRow], out_dir) -> None:
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "records.jsonl").write_text(emit_records_jsonl(rows))
    summary = summarize(rows)
    (out / "summary.csv").write_text(emit_summary_csv(summary))
    (out / "table.txt").write_text(emit_table(summary))
    (out / "plotdata.json").write_text(json.dumps(emit_plot_data(rows), separators=(",", ":")))
    (out / "latencies.json").write_text(json.dumps(emit_latency_report(rows), indent=2))
