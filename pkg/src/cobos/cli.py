"""Command line entry points: gen, run, bench, serve."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .agents import ControllerKind
from .bench import ExperimentGrid, run_grid, write_outputs
from .cases import CaseSpec, generate_case
from .domain import dump_job, load_job, validate_job
from .sim import SimConfig, run_sim


def _load_job_arg(args) -> object:
    if getattr(args, "job", None):
        job = load_job(Path(args.job).read_text())
    else:
        job = generate_case(CaseSpec(case_id=args.case, seed=args.case_seed))
    report = validate_job(job)
    if not report.ok:
        sys.exit(f"invalid job: {report}")
    return job


def cmd_gen(args) -> None:
    job = generate_case(CaseSpec(case_id=args.case, seed=args.seed))
    text = dump_job(job)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)


def cmd_run(args) -> None:
    job = _load_job_arg(args)
    config = SimConfig(
        rejection_enabled=not args.no_rejection,
        resample_estimates=not args.true_estimates,
    )
    record = run_sim(job, ControllerKind(args.method), args.seed, config)
    payload = record.to_json()
    if args.out:
        Path(args.out).write_text(json.dumps(payload, indent=2) + "\n")
    print(
        f"status={record.status.value} makespan={record.makespan} "
        f"events={len(record.trace)} solves={record.n_solves}"
    )


def cmd_bench(args) -> None:
    if args.grid:
        grid = ExperimentGrid.from_json(json.loads(Path(args.grid).read_text()))
    else:
        grid = ExperimentGrid(
            n_instances=args.instances,
            n_seeds=args.seeds,
            true_estimates=args.true_estimates,
        )
    rows = run_grid(grid, base_seed=args.seed, workers=args.workers)
    out_dir = Path(args.out)
    write_outputs(rows, out_dir)
    print(f"{len(rows)} runs -> {out_dir}")
    print((out_dir / "table.txt").read_text())


def cmd_serve(args) -> None:
    import uvicorn

    from .service import create_app

    static = args.static if args.static and Path(args.static).is_dir() else None
    app = create_app(default_tick_ms=args.tick_ms, static_dir=static)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")


def main(argv: list[str] | None = None) -> None:
    parser = argparse.ArgumentParser(prog="cobos", description="constraint-based online scheduling toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a benchmark case job file")
    gen.add_argument("--case", type=int, required=True, choices=range(1, 8))
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", type=str, default=None)
    gen.set_defaults(func=cmd_gen)

    run = sub.add_parser("run", help="run one closed-loop simulation")
    run.add_argument("--job", type=str, default=None, help="job file (JSON)")
    run.add_argument("--case", type=int, default=7, choices=range(1, 8))
    run.add_argument("--case-seed", type=int, default=0)
    run.add_argument("--method", type=str, default="cobos", choices=[k.value for k in ControllerKind])
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--true-estimates", action="store_true", help="plan with exact duration estimates")
    run.add_argument("--no-rejection", action="store_true")
    run.add_argument("--out", type=str, default=None, help="write the run record JSON here")
    run.set_defaults(func=cmd_run)

    bench = sub.add_parser("bench", help="run the benchmark grid")
    bench.add_argument("--grid", type=str, default=None, help="grid config JSON")
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    bench.add_argument("--out", type=str, default="bench-out")
    bench.add_argument("--instances", type=int, default=10)
    bench.add_argument("--seeds", type=int, default=25)
    bench.add_argument("--true-estimates", action="store_true")
    bench.set_defaults(func=cmd_bench)

    serve = sub.add_parser("serve", help="start the run service")
    serve.add_argument("--host", type=str, default="127.0.0.1")
    serve.add_argument("--port", type=int, default=int(os.environ.get("COBOS_PORT", "8075")))
    serve.add_argument("--tick-ms", type=float, default=1000.0)
    serve.add_argument("--static", type=str, default=None, help="serve UI assets from this directory")
    serve.set_defaults(func=cmd_serve)

    args = parser.parse_args(argv)
    args.func(args)


if __name__ == "__main__":
    main()
