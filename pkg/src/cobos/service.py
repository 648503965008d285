"""Run lifecycle service: live ticked runs over HTTP and WebSocket.

A run is one simulation engine stepped by a wall-clock loop (1 tick = 1 s
by default, configurable down to free-running). Simulated runs behave
exactly like ``run_sim``; interactive runs route the human worker's
accept / reject / complete inputs into a live seat, while robot actors
stay simulated. Consumers read immutable state snapshots and an
append-only, sequence-numbered event feed.
"""

from __future__ import annotations

import itertools
import json
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

from fastapi import FastAPI, HTTPException, WebSocket, WebSocketDisconnect

from .agents import CobosController, ControllerKind, make_controller
from .cases import CaseSpec, generate_case
from .domain import (
    ActorState,
    Job,
    JobFormatError,
    Phase,
    TaskState,
    job_from_json,
    validate_job,
)
from .sim import (
    EventKind,
    LiveHumanSeat,
    RunRecord,
    SimConfig,
    SimEngine,
    derive_seed,
    resample_estimates,
    sample_outcomes,
)


class RunMode(str, Enum):
    SIMULATED = "simulated"
    INTERACTIVE = "interactive"


class UnknownRun(Exception):
    pass


class RunNotInteractive(Exception):
    pass


class RunEnded(Exception):
    pass


class NotRequested(Exception):
    pass


@dataclass
class FeedEntry:
    seq: int
    payload: dict

    def to_json(self) -> dict:
        return {"seq": self.seq, "event": self.payload}


class LiveRun:
    """One ticked run: engine, event feed, input routing."""

    def __init__(
        self,
        run_id: str,
        job: Job,
        method: ControllerKind,
        mode: RunMode,
        seed: int,
        tick_ms: float,
        resample: bool = False,
    ):
        self.id = run_id
        self.job = job
        self.method = method
        self.mode = mode
        self.seed = seed
        self.tick_ms = tick_ms
        self.lock = threading.RLock()
        self.feed: list[FeedEntry] = []
        self._published = 0
        self._last_version = 0
        self._applied_inputs: set[tuple] = set()
        self._stop = threading.Event()
        self.paused = False

        outcomes = sample_outcomes(job, seed)
        visible = resample_estimates(job, seed) if resample else job
        controller = make_controller(method, visible, seed=derive_seed(seed, "controller"))
        self.live_humans: dict[str, LiveHumanSeat] = {}
        if mode is RunMode.INTERACTIVE:
            for actor in job.actors:
                if not actor.is_robot:
                    self.live_humans[actor.id] = LiveHumanSeat(actor.id)
        config = SimConfig(resample_estimates=resample)
        self.controller = controller
        self.engine = SimEngine(job, controller, outcomes, config, live_humans=self.live_humans)
        self.thread = threading.Thread(target=self._loop, name=f"run-{run_id}", daemon=True)

    # -- loop -----------------------------------------------------------------

    def start(self) -> None:
        self.thread.start()

    def stop(self) -> None:
        self._stop.set()
        if self.thread.is_alive():
            self.thread.join(timeout=5)

    def _loop(self) -> None:
        while not self._stop.is_set() and self.engine.status is None:
            started = time.perf_counter()
            if not self.paused:
                with self.lock:
                    self.engine.step()
                    self._publish()
            if self.tick_ms > 0:
                elapsed = (time.perf_counter() - started) * 1000.0
                time.sleep(max(0.0, (self.tick_ms - elapsed) / 1000.0))
        with self.lock:
            self._publish()

    def _publish(self) -> None:
        for event in self.engine.trace[self._published :]:
            self.feed.append(FeedEntry(len(self.feed) + 1, event.to_json()))
        self._published = len(self.engine.trace)
        version = getattr(self.controller, "schedule_version", 0)
        if version != self._last_version and getattr(self.controller, "schedule", None) is not None:
            self._last_version = version
            self.feed.append(
                FeedEntry(
                    len(self.feed) + 1,
                    {
                        "kind": "schedule_updated",
                        "t": self.engine.now,
                        "version": version,
                        "schedule": _schedule_json(self.controller.schedule),
                    },
                )
            )

    # -- inputs -----------------------------------------------------------------

    def human_input(self, kind: str, task_id: str) -> dict:
        with self.lock:
            if self.mode is not RunMode.INTERACTIVE:
                raise RunNotInteractive(self.id)
            if self.engine.status is not None:
                raise RunEnded(self.id)
            if task_id not in self.engine.tasks:
                raise NotRequested(f"unknown task {task_id}")
            tr = self.engine.tasks[task_id]
            seat = self._seat_for(task_id, kind)
            if kind in ("accept", "reject"):
                if self.engine.pending_offers.get(task_id) is None:
                    if (task_id, kind) in self._applied_inputs:
                        return {"ok": True, "duplicate": True}
                    raise NotRequested(f"task {task_id} is not awaiting a decision")
                key = (task_id, kind)
                if key in self._applied_inputs:
                    return {"ok": True, "duplicate": True}
                self._applied_inputs.add(key)
                if kind == "accept":
                    seat.offer_accept(task_id)
                else:
                    seat.offer_reject(task_id)
                return {"ok": True}
            if kind == "complete":
                if tr.state is not TaskState.IN_PROGRESS or tr.phase is None:
                    raise NotRequested(f"task {task_id} is not in progress")
                if tr.actor not in self.live_humans:
                    raise NotRequested(f"task {task_id} is not handled by the live worker")
                key = (task_id, "complete", int(tr.phase))
                if key in self._applied_inputs:
                    return {"ok": True, "duplicate": True}
                self._applied_inputs.add(key)
                seat.complete(task_id, tr.phase)
                return {"ok": True, "phase": int(tr.phase)}
            raise NotRequested(f"unknown input kind {kind!r}")

    def _seat_for(self, task_id: str, kind: str) -> LiveHumanSeat:
        tr = self.engine.tasks[task_id]
        actor = self.engine.pending_offers.get(task_id) or tr.actor
        seat = self.live_humans.get(actor or "")
        if seat is None:
            raise NotRequested(f"task {task_id} is not directed at the live worker")
        return seat

    # -- views -----------------------------------------------------------------

    def snapshot(self) -> dict:
        with self.lock:
            engine = self.engine
            obs_states = {}
            phases = {}
            for tid, tr in engine.tasks.items():
                if tr.state in (TaskState.UNAVAILABLE, TaskState.AVAILABLE):
                    ready = all(engine.tasks[d].exec_done for d in engine.deps_exec[tid])
                    obs_states[tid] = (TaskState.AVAILABLE if ready else TaskState.UNAVAILABLE).value
                else:
                    obs_states[tid] = tr.state.value
                if tr.phase is not None:
                    phases[tid] = int(tr.phase)

            realized: dict[str, list[dict]] = {a.id: [] for a in self.job.actors}
            open_bars: dict[tuple[str, int], dict] = {}
            for ev in engine.trace:
                if ev.kind is EventKind.PHASE_STARTED:
                    bar = {"task": ev.task, "phase": int(ev.phase), "start": ev.tick, "end": None}
                    realized[ev.actor].append(bar)
                    open_bars[(ev.task, int(ev.phase))] = bar
                elif ev.kind is EventKind.PHASE_ENDED:
                    bar = open_bars.get((ev.task, int(ev.phase)))
                    if bar is not None:
                        bar["end"] = ev.tick

            planned: dict[str, list[dict]] = {a.id: [] for a in self.job.actors}
            schedule = getattr(self.controller, "schedule", None)
            if schedule is not None:
                for tid, actor in schedule.assignment.items():
                    tr = engine.tasks[tid]
                    if tr.state is TaskState.COMPLETED:
                        continue
                    for phase in Phase:
                        planned[actor].append(
                            {
                                "task": tid,
                                "phase": int(phase),
                                "start": schedule.phase_start[(tid, phase)],
                                "end": schedule.phase_end[(tid, phase)],
                            }
                        )

            offers = {
                tid: actor
                for tid, actor in engine.pending_offers.items()
            }
            actors = []
            for spec in self.job.actors:
                tid = engine.actor_task[spec.id]
                if tid is None:
                    state = ActorState.IDLE
                else:
                    tr = engine.tasks[tid]
                    if tr.waiting:
                        state = ActorState.WAITING
                    elif tr.phase is Phase.PREP:
                        state = ActorState.PREPARING
                    elif tr.phase is Phase.EXEC:
                        state = ActorState.EXECUTING
                    else:
                        state = ActorState.COMPLETING
                actors.append(
                    {
                        "id": spec.id,
                        "kind": spec.kind.value,
                        "state": state.value,
                        "current_task": tid,
                        "pending_offer": next((t for t, a in offers.items() if a == spec.id), None),
                    }
                )

            completed = sum(1 for tr in engine.tasks.values() if tr.state is TaskState.COMPLETED)
            total = len(engine.tasks)
            snapshot = {
                "id": self.id,
                "status": engine.status.value if engine.status else "running",
                "mode": self.mode.value,
                "method": self.method.value,
                "seed": self.seed,
                "now": engine.now,
                "paused": self.paused,
                "actors": actors,
                "tasks": [
                    {
                        "id": t.id,
                        "state": obs_states[t.id],
                        "phase": phases.get(t.id),
                        "actor": engine.tasks[t.id].actor,
                        "deps": sorted(self.job.dependencies_of(t.id)),
                        "area": t.shared_area,
                        "estimates": {str(int(p)): t.duration_estimate[p] for p in Phase},
                    }
                    for t in sorted(self.job.tasks, key=lambda x: x.id)
                ],
                "gantt": {"realized": realized, "planned": planned},
                "rejected": sorted(engine.rejected),
                "schedule_version": self._last_version,
                "makespan": engine.makespan,
                "progress": {
                    "completed": completed,
                    "total": total,
                    "elapsed": engine.now,
                },
                "seq": len(self.feed),
            }
            return snapshot

    def events_since(self, cursor: int) -> list[dict]:
        with self.lock:
            return [entry.to_json() for entry in self.feed[cursor:]]

    def record(self) -> RunRecord | None:
        with self.lock:
            if self.engine.status is None:
                return None
            rec = RunRecord(
                seed=self.seed,
                method=self.method.value,
                status=self.engine.status,
                makespan=self.engine.makespan,
                trace=list(self.engine.trace),
                latencies=list(self.engine.latencies),
                n_solves=self.engine.n_solves,
            )
            return rec


def _schedule_json(schedule) -> dict:
    out = {"makespan": schedule.makespan, "assignment": dict(sorted(schedule.assignment.items())), "bars": []}
    for tid in sorted(schedule.assignment):
        for phase in Phase:
            out["bars"].append(
                {
                    "task": tid,
                    "actor": schedule.assignment[tid],
                    "phase": int(phase),
                    "start": schedule.phase_start[(tid, phase)],
                    "end": schedule.phase_end[(tid, phase)],
                }
            )
    return out


class RunRegistry:
    def __init__(self, default_tick_ms: float):
        self.default_tick_ms = default_tick_ms
        self.runs: dict[str, LiveRun] = {}
        self._ids = itertools.count(1)
        self.lock = threading.Lock()

    def create(self, job: Job, method: ControllerKind, mode: RunMode, seed: int, tick_ms: float | None) -> LiveRun:
        with self.lock:
            run_id = f"run-{next(self._ids)}"
            run = LiveRun(
                run_id,
                job,
                method,
                mode,
                seed,
                self.default_tick_ms if tick_ms is None else tick_ms,
            )
            self.runs[run_id] = run
        run.start()
        return run

    def get(self, run_id: str) -> LiveRun:
        run = self.runs.get(run_id)
        if run is None:
            raise UnknownRun(run_id)
        return run

    def delete(self, run_id: str) -> None:
        run = self.get(run_id)
        run.stop()
        with self.lock:
            self.runs.pop(run_id, None)

    def shutdown(self) -> None:
        for run in list(self.runs.values()):
            run.stop()


def create_app(default_tick_ms: float = 1000.0, static_dir: str | None = None) -> FastAPI:
    app = FastAPI(title="cobos run service")
    registry = RunRegistry(default_tick_ms)
    app.state.registry = registry

    @app.post("/runs")
    def create_run(body: dict) -> dict:
        if "case" in body:
            job = generate_case(CaseSpec(case_id=int(body["case"]), seed=int(body.get("case_seed", 0))))
        else:
            try:
                job = job_from_json(body.get("job") or {})
            except JobFormatError as exc:
                raise HTTPException(status_code=400, detail=f"InvalidJob: {exc}") from exc
        report = validate_job(job)
        if not report.ok:
            raise HTTPException(status_code=400, detail=f"InvalidJob: {report}")
        try:
            method = ControllerKind(body.get("method", "cobos"))
            mode = RunMode(body.get("mode", "simulated"))
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        seed = int(body.get("seed", 0))
        tick_ms = body.get("tick_ms")
        run = registry.create(job, method, mode, seed, None if tick_ms is None else float(tick_ms))
        return {"id": run.id}

    @app.get("/runs")
    def list_runs() -> dict:
        return {
            "runs": [
                {
                    "id": run.id,
                    "mode": run.mode.value,
                    "method": run.method.value,
                    "status": run.engine.status.value if run.engine.status else "running",
                }
                for run in sorted(registry.runs.values(), key=lambda r: r.id)
            ]
        }

    def _get_run(run_id: str) -> LiveRun:
        try:
            return registry.get(run_id)
        except UnknownRun as exc:
            raise HTTPException(status_code=404, detail=f"UnknownRun: {run_id}") from exc

    @app.get("/runs/{run_id}/state")
    def get_state(run_id: str) -> dict:
        return _get_run(run_id).snapshot()

    @app.post("/runs/{run_id}/input")
    def post_input(run_id: str, body: dict) -> dict:
        run = _get_run(run_id)
        kind = str(body.get("kind", ""))
        task = str(body.get("task", ""))
        try:
            return run.human_input(kind, task)
        except RunNotInteractive as exc:
            raise HTTPException(status_code=409, detail=f"RunNotInteractive: {exc}") from exc
        except RunEnded as exc:
            raise HTTPException(status_code=409, detail=f"RunEnded: {exc}") from exc
        except NotRequested as exc:
            raise HTTPException(status_code=409, detail=f"NotRequested: {exc}") from exc

    @app.post("/runs/{run_id}/pause")
    def pause(run_id: str, body: dict | None = None) -> dict:
        run = _get_run(run_id)
        run.paused = bool((body or {}).get("paused", True))
        return {"ok": True, "paused": run.paused}

    @app.get("/runs/{run_id}/events")
    def poll_events(run_id: str, cursor: int = 0) -> dict:
        run = _get_run(run_id)
        return {"events": run.events_since(cursor)}

    @app.get("/runs/{run_id}/record")
    def get_record(run_id: str) -> dict:
        run = _get_run(run_id)
        record = run.record()
        if record is None:
            raise HTTPException(status_code=409, detail="run still live")
        return record.to_json()

    @app.delete("/runs/{run_id}")
    def delete_run(run_id: str) -> dict:
        _get_run(run_id)
        registry.delete(run_id)
        return {"ok": True}

    @app.websocket("/runs/{run_id}/events")
    async def events_ws(websocket: WebSocket, run_id: str) -> None:
        await websocket.accept()
        try:
            run = registry.get(run_id)
        except UnknownRun:
            await websocket.close(code=4404)
            return
        cursor = int(websocket.query_params.get("from", 0))
        import asyncio

        try:
            while True:
                entries = run.events_since(cursor)
                for entry in entries:
                    await websocket.send_text(json.dumps(entry, separators=(",", ":")))
                    cursor = entry["seq"]
                if run.engine.status is not None and not run.events_since(cursor):
                    break
                await asyncio.sleep(0.02)
        except WebSocketDisconnect:
            return
        await websocket.close()

    if static_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")

    @app.on_event("shutdown")
    def _shutdown() -> None:
        registry.shutdown()

    return app
