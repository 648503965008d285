"""Probabilistic closed-loop multi-actor simulation.

One engine drives both batch runs (``run_sim``) and the live service: each
tick it hands the controller an observation, routes requests through actor
seats (compliant robots behind a behavior tree, humans that may reject),
samples nothing at run time — every uncontrollable outcome is drawn up
front from the seeded generator and revealed only when it happens — and
enforces shared-area exclusion with earliest-request arbitration.

Tick order: observe, decide, answer requests, start accepted work, fire
phase transitions (ends before entries), check termination. A phase end at
tick t is delivered in the observation of tick t+1.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field
from enum import Enum

from .btree import RobotSeat
from .domain import (
    ActorState,
    Job,
    Observation,
    Phase,
    PHASES,
    Schedule,
    Task,
    TaskState,
)
from .agents import Controller, ControllerKind, ScheduleInfeasible, make_controller


def derive_seed(*parts) -> int:
    """Stable 63-bit stream seed from heterogeneous parts."""
    text = "/".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1


@dataclass(frozen=True)
class RealizedOutcomes:
    """Everything uncontrollable, sampled before the run starts."""

    durations: dict[tuple[str, Phase, str], int]
    rejections: dict[tuple[str, str], bool]


def _draw_duration(rng: random.Random, dist) -> int:
    if rng.random() < dist.failure_probability:
        value = rng.normalvariate(dist.failure_mean, dist.failure_std)
    else:
        value = rng.normalvariate(dist.normal_mean, dist.normal_std)
    return max(1, round(value))


def sample_outcomes(job: Job, seed: int) -> RealizedOutcomes:
    """Draw all durations and rejection decisions for one run.

    Iteration order is fixed (tasks by id, phases ascending, actors by list
    order) so a seed always yields the same outcomes.
    """
    actor_order = [a.id for a in job.actors]
    humans = {a.id for a in job.actors if not a.is_robot}
    durations: dict[tuple[str, Phase, str], int] = {}
    rng = random.Random(derive_seed(seed, "durations"))
    for task in sorted(job.tasks, key=lambda t: t.id):
        for phase in PHASES:
            for actor in actor_order:
                if actor not in task.eligible_actors:
                    continue
                dist = task.duration_distribution[(phase, actor)]
                durations[(task.id, phase, actor)] = _draw_duration(rng, dist)
    rejections: dict[tuple[str, str], bool] = {}
    rng = random.Random(derive_seed(seed, "rejections"))
    for task in sorted(job.tasks, key=lambda t: t.id):
        for actor in actor_order:
            if actor in task.eligible_actors and actor in humans:
                prob = task.rejection_probability.get(actor, 0.0)
                rejections[(task.id, actor)] = rng.random() < prob
    return RealizedOutcomes(durations=durations, rejections=rejections)


def resample_estimates(job: Job, seed: int) -> Job:
    """A copy of the job whose estimates are fresh draws from the true
    distributions — the controller's (generally wrong) beliefs."""
    rng = random.Random(derive_seed(seed, "estimates"))
    new_tasks = []
    for task in sorted(job.tasks, key=lambda t: t.id):
        estimates = {}
        for phase in PHASES:
            dist = task.duration_distribution[(phase, task.eligible_actors[0])]
            estimates[phase] = _draw_duration(rng, dist)
        new_tasks.append(
            Task(
                id=task.id,
                eligible_actors=task.eligible_actors,
                duration_estimate=estimates,
                duration_distribution=task.duration_distribution,
                rejection_probability=task.rejection_probability,
                shared_area=task.shared_area,
            )
        )
    by_id = {t.id: t for t in new_tasks}
    horizon = max(job.horizon, 4 * sum(t.total_estimate for t in new_tasks))
    return Job(
        tasks=tuple(by_id[t.id] for t in job.tasks),
        edges=job.edges,
        actors=job.actors,
        shared_areas=job.shared_areas,
        horizon=horizon,
    )


# ---------------------------------------------------------------------------
# Events and run records
# ---------------------------------------------------------------------------


class EventKind(str, Enum):
    REQUESTED = "requested"
    ACCEPTED = "accepted"
    REJECTED = "rejected"
    PHASE_STARTED = "phase_started"
    PHASE_ENDED = "phase_ended"
    WAIT_STARTED = "wait_started"
    WAIT_ENDED = "wait_ended"
    AREA_ENTERED = "area_entered"
    AREA_LEFT = "area_left"
    RUN_ENDED = "run_ended"


@dataclass(frozen=True)
class Event:
    tick: int
    kind: EventKind
    task: str | None = None
    actor: str | None = None
    phase: Phase | None = None
    area: str | None = None

    def to_json(self) -> dict:
        out: dict = {"t": self.tick, "kind": self.kind.value}
        if self.task is not None:
            out["task"] = self.task
        if self.actor is not None:
            out["actor"] = self.actor
        if self.phase is not None:
            out["phase"] = int(self.phase)
        if self.area is not None:
            out["area"] = self.area
        return out

    @staticmethod
    def from_json(obj: dict) -> "Event":
        return Event(
            tick=obj["t"],
            kind=EventKind(obj["kind"]),
            task=obj.get("task"),
            actor=obj.get("actor"),
            phase=Phase(obj["phase"]) if "phase" in obj else None,
            area=obj.get("area"),
        )


class RunStatus(str, Enum):
    COMPLETED = "completed"
    TASK_UNASSIGNABLE = "task_unassignable"
    DEADLOCK = "deadlock"


@dataclass
class StepLatency:
    tick: int
    wall_ms: float
    solved: bool


@dataclass
class RunRecord:
    seed: int
    method: str
    status: RunStatus
    makespan: int | None
    trace: list[Event]
    latencies: list[StepLatency] = field(default_factory=list)
    n_solves: int = 0

    def canonical_json(self) -> str:
        """Deterministic serialization: wall-clock latencies excluded."""
        payload = {
            "seed": self.seed,
            "method": self.method,
            "status": self.status.value,
            "makespan": self.makespan,
            "n_solves": self.n_solves,
            "trace": [e.to_json() for e in self.trace],
        }
        return json.dumps(payload, separators=(",", ":"))

    def to_json(self) -> dict:
        payload = json.loads(self.canonical_json())
        payload["latencies"] = [
            {"t": l.tick, "ms": round(l.wall_ms, 3), "solved": l.solved} for l in self.latencies
        ]
        return payload


class IncompleteTrace(Exception):
    pass


class DeadlockDetected(Exception):
    pass


def trace_to_schedule(trace: list[Event], job: Job) -> Schedule:
    """Reconstruct the executed schedule from a completed run's trace."""
    assignment: dict[str, str] = {}
    phase_start: dict[tuple[str, Phase], int] = {}
    phase_end: dict[tuple[str, Phase], int] = {}
    for ev in trace:
        if ev.kind is EventKind.PHASE_STARTED:
            assignment.setdefault(ev.task, ev.actor)
            phase_start[(ev.task, ev.phase)] = ev.tick
        elif ev.kind is EventKind.PHASE_ENDED:
            phase_end[(ev.task, ev.phase)] = ev.tick
    for task in job.tasks:
        for phase in PHASES:
            if (task.id, phase) not in phase_start or (task.id, phase) not in phase_end:
                raise IncompleteTrace(f"missing phase {phase.name} of {task.id}")
    makespan = max(phase_end[(t.id, Phase.DONE)] for t in job.tasks)
    return Schedule(
        assignment=assignment,
        phase_start=phase_start,
        phase_end=phase_end,
        makespan=makespan,
    )


# ---------------------------------------------------------------------------
# Actor seats
# ---------------------------------------------------------------------------


class HumanSeat:
    """Simulated worker: pre-sampled accept/reject, pre-sampled durations."""

    def __init__(self, actor_id: str, outcomes: RealizedOutcomes, rejection_enabled: bool):
        self.actor_id = actor_id
        self.outcomes = outcomes
        self.rejection_enabled = rejection_enabled

    def decide(self, task_id: str) -> str:
        if self.rejection_enabled and self.outcomes.rejections.get((task_id, self.actor_id)):
            return "reject"
        return "accept"

    def phase_duration(self, task_id: str, phase: Phase) -> int | None:
        return self.outcomes.durations[(task_id, phase, self.actor_id)]


class LiveHumanSeat:
    """Interactive worker: decisions and completions arrive via inputs."""

    def __init__(self, actor_id: str):
        self.actor_id = actor_id
        self.decisions: dict[str, str] = {}
        self.completions: set[tuple[str, Phase]] = set()

    def decide(self, task_id: str) -> str:
        return self.decisions.pop(task_id, "pending")

    def phase_duration(self, task_id: str, phase: Phase) -> int | None:
        return None  # ends only on a completion input

    def offer_accept(self, task_id: str) -> None:
        self.decisions[task_id] = "accept"

    def offer_reject(self, task_id: str) -> None:
        self.decisions[task_id] = "reject"

    def complete(self, task_id: str, phase: Phase) -> None:
        self.completions.add((task_id, phase))

    def take_completion(self, task_id: str, phase: Phase) -> bool:
        if (task_id, phase) in self.completions:
            self.completions.discard((task_id, phase))
            return True
        return False


@dataclass
class SimConfig:
    deadline_ms: float | None = 900.0
    rejection_enabled: bool = True
    resample_estimates: bool = False
    max_ticks: int | None = None
    # Scripted human-proximity windows per robot actor: the robot evades,
    # pausing its phase clock, while now is inside any [start, end) window.
    evade_windows: dict[str, list[tuple[int, int]]] = field(default_factory=dict)


class _TaskRun:
    __slots__ = (
        "task",
        "state",
        "actor",
        "phase",
        "phase_started",
        "phase_due",
        "waiting",
        "request_tick",
        "exec_done",
    )

    def __init__(self, task: Task):
        self.task = task
        self.state = TaskState.UNAVAILABLE
        self.actor: str | None = None
        self.phase: Phase | None = None
        self.phase_started = 0
        self.phase_due: int | None = 0
        self.waiting = False
        self.request_tick = 0
        self.exec_done = False


class SimEngine:
    """One closed-loop run, stepped one tick at a time."""

    def __init__(
        self,
        job: Job,
        controller: Controller,
        outcomes: RealizedOutcomes,
        config: SimConfig,
        live_humans: dict[str, LiveHumanSeat] | None = None,
    ):
        self.job = job
        self.controller = controller
        self.outcomes = outcomes
        self.config = config
        self.now = 0
        self.trace: list[Event] = []
        self.latencies: list[StepLatency] = []
        self.n_solves = 0
        self.status: RunStatus | None = None
        self.makespan: int | None = None
        self.rejected: set[tuple[str, str]] = set()
        self.pending_offers: dict[str, str] = {}
        self.pending_completions: list[tuple[str, Phase, int]] = []
        self.tasks: dict[str, _TaskRun] = {t.id: _TaskRun(t) for t in job.tasks}
        self.area_occupant: dict[str, str | None] = {a: None for a in job.shared_areas}
        self.actor_task: dict[str, str | None] = {a.id: None for a in job.actors}
        self.robot_seats: dict[str, RobotSeat] = {
            a.id: RobotSeat() for a in job.actors if a.is_robot
        }
        self.human_seats: dict[str, HumanSeat | LiveHumanSeat] = {}
        for a in job.actors:
            if a.is_robot:
                continue
            if live_humans and a.id in live_humans:
                self.human_seats[a.id] = live_humans[a.id]
            else:
                self.human_seats[a.id] = HumanSeat(a.id, outcomes, config.rejection_enabled)
        self.deps_exec: dict[str, list[str]] = {
            t.id: job.dependencies_of(t.id) for t in job.tasks
        }
        self.max_ticks = config.max_ticks if config.max_ticks is not None else 10 * job.horizon + 100

    # -- observation ---------------------------------------------------------

    def observation(self) -> Observation:
        task_states: dict[str, TaskState] = {}
        task_phases: dict[str, Phase] = {}
        for tid, tr in self.tasks.items():
            if tr.state is TaskState.IN_PROGRESS:
                task_phases[tid] = tr.phase  # type: ignore[assignment]
            if tr.state in (TaskState.UNAVAILABLE, TaskState.AVAILABLE):
                ready = all(self.tasks[d].exec_done for d in self.deps_exec[tid])
                tr.state = TaskState.AVAILABLE if ready else TaskState.UNAVAILABLE
            task_states[tid] = tr.state
        actor_states: dict[str, ActorState] = {}
        for aid in self.actor_task:
            tid = self.actor_task[aid]
            if tid is None:
                actor_states[aid] = ActorState.IDLE
            else:
                tr = self.tasks[tid]
                if tr.waiting:
                    actor_states[aid] = ActorState.WAITING
                elif tr.phase is Phase.PREP:
                    actor_states[aid] = ActorState.PREPARING
                elif tr.phase is Phase.EXEC:
                    actor_states[aid] = ActorState.EXECUTING
                else:
                    actor_states[aid] = ActorState.COMPLETING
        completions = tuple(sorted(self.pending_completions))
        self.pending_completions = []
        return Observation(
            now=self.now,
            task_states=task_states,
            task_phases=task_phases,
            actor_states=actor_states,
            rejected=frozenset(self.rejected),
            phase_completions=completions,
        )

    # -- helpers ---------------------------------------------------------------

    def _emit(self, kind: EventKind, **kw) -> None:
        self.trace.append(Event(tick=self.now, kind=kind, **kw))

    def _start_prep(self, tid: str, actor: str) -> None:
        tr = self.tasks[tid]
        tr.state = TaskState.IN_PROGRESS
        tr.actor = actor
        tr.phase = Phase.PREP
        tr.phase_started = self.now
        dur = self._phase_duration(tid, actor, Phase.PREP)
        tr.phase_due = None if dur is None else self.now + dur
        self.actor_task[actor] = tid
        self._emit(EventKind.PHASE_STARTED, task=tid, actor=actor, phase=Phase.PREP)

    def _phase_duration(self, tid: str, actor: str, phase: Phase) -> int | None:
        seat = self.human_seats.get(actor)
        if seat is not None:
            return seat.phase_duration(tid, phase)
        return self.outcomes.durations[(tid, phase, actor)]

    def _phase_work_done(self, tr: _TaskRun) -> bool:
        actor = tr.actor or ""
        seat = self.human_seats.get(actor)
        if isinstance(seat, LiveHumanSeat):
            return seat.take_completion(tr.task.id, tr.phase)  # type: ignore[arg-type]
        return tr.phase_due is not None and self.now >= tr.phase_due

    def _evading(self, actor: str) -> bool:
        for (start, end) in self.config.evade_windows.get(actor, ()):
            if start <= self.now < end:
                return True
        return False

    def _answer_human(self, tid: str, actor: str, fresh: bool) -> None:
        seat = self.human_seats[actor]
        verdict = seat.decide(tid)
        if verdict == "accept":
            self._emit(EventKind.ACCEPTED, task=tid, actor=actor)
            self.pending_offers.pop(tid, None)
            if self.actor_task[actor] is None:
                self._start_prep(tid, actor)
        elif verdict == "reject":
            self._emit(EventKind.REJECTED, task=tid, actor=actor)
            self.rejected.add((tid, actor))
            self.pending_offers.pop(tid, None)
        elif fresh:
            self.pending_offers[tid] = actor

    # -- one tick ---------------------------------------------------------------

    def step(self) -> None:
        import time as _time

        obs = self.observation()

        t0 = _time.perf_counter()
        try:
            requests = self.controller.step(obs)
        except ScheduleInfeasible:
            self.status = RunStatus.TASK_UNASSIGNABLE
            self._emit(EventKind.RUN_ENDED)
            return
        wall = (_time.perf_counter() - t0) * 1000.0
        solved = getattr(self.controller, "last_step_solved", False)
        self.latencies.append(StepLatency(self.now, wall, solved))
        if solved:
            self.n_solves += 1

        # Answer requests; unanswered live-human offers are re-polled below.
        for req in requests:
            tid, actor = req.task, req.actor
            self._emit(EventKind.REQUESTED, task=tid, actor=actor)
            tr = self.tasks[tid]
            tr.request_tick = self.now
            if actor in self.robot_seats:
                self._emit(EventKind.ACCEPTED, task=tid, actor=actor)
                self.robot_seats[actor].blackboard.enqueue(tid)
            else:
                self._answer_human(tid, actor, fresh=True)
        for tid in sorted(self.pending_offers):
            self._answer_human(tid, self.pending_offers[tid], fresh=False)

        # Robot behavior trees: evade > work queue > home.
        for aid in sorted(self.robot_seats):
            seat = self.robot_seats[aid]
            busy = self.actor_task[aid] is not None
            seat.step(human_close=self._evading(aid), busy=busy)
            if seat.evading and busy:
                tid = self.actor_task[aid]
                tr = self.tasks[tid]  # paused: phase clock stretches
                if tr.phase_due is not None:
                    tr.phase_due += 1
            elif seat.started_task is not None:
                self._start_prep(seat.started_task, aid)

        self._transitions()

        if all(tr.state is TaskState.COMPLETED for tr in self.tasks.values()):
            self.makespan = self._final_makespan()
            self.status = RunStatus.COMPLETED
            self._emit(EventKind.RUN_ENDED)
            return

        self._check_progress(requests)
        self.now += 1
        if self.status is None and self.now > self.max_ticks:
            self.status = RunStatus.DEADLOCK
            self._emit(EventKind.RUN_ENDED)

    def _final_makespan(self) -> int:
        ends = [
            ev.tick
            for ev in self.trace
            if ev.kind is EventKind.PHASE_ENDED and ev.phase is Phase.DONE
        ]
        return max(ends) if ends else 0

    def _transitions(self) -> None:
        # Ends first: completions free actors, exec ends free areas and
        # release dependents; then waiting/finished-prep tasks enter.
        for aid in self.actor_task:
            tid = self.actor_task[aid]
            if tid is None:
                continue
            tr = self.tasks[tid]
            if tr.phase is Phase.DONE and self._phase_work_done(tr):
                self._emit(EventKind.PHASE_ENDED, task=tid, actor=aid, phase=Phase.DONE)
                self.pending_completions.append((tid, Phase.DONE, self.now))
                tr.state = TaskState.COMPLETED
                tr.phase = None
                tr.phase_due = self.now
                self.actor_task[aid] = None

        for aid in self.actor_task:
            tid = self.actor_task[aid]
            if tid is None:
                continue
            tr = self.tasks[tid]
            if tr.phase is Phase.EXEC and self._phase_work_done(tr):
                self._emit(EventKind.PHASE_ENDED, task=tid, actor=aid, phase=Phase.EXEC)
                self.pending_completions.append((tid, Phase.EXEC, self.now))
                tr.exec_done = True
                area = tr.task.shared_area
                if area is not None:
                    self.area_occupant[area] = None
                    self._emit(EventKind.AREA_LEFT, task=tid, actor=aid, area=area)
                tr.phase = Phase.DONE
                tr.phase_started = self.now
                dur = self._phase_duration(tid, aid, Phase.DONE)
                tr.phase_due = None if dur is None else self.now + dur
                self._emit(EventKind.PHASE_STARTED, task=tid, actor=aid, phase=Phase.DONE)

        # Execution entries: prep finished (or already waiting), dependencies
        # executed, shared area free. Earliest request wins contested areas.
        candidates: list[tuple[int, int, str, str]] = []
        actor_index = {a.id: i for i, a in enumerate(self.job.actors)}
        for aid in self.actor_task:
            tid = self.actor_task[aid]
            if tid is None:
                continue
            tr = self.tasks[tid]
            if tr.phase is not Phase.PREP:
                continue
            if tr.waiting or self._phase_work_done(tr):
                candidates.append((tr.request_tick, actor_index[aid], tid, aid))
        for (_, _, tid, aid) in sorted(candidates):
            tr = self.tasks[tid]
            deps_ok = all(self.tasks[d].exec_done for d in self.deps_exec[tid])
            area = tr.task.shared_area
            area_ok = area is None or self.area_occupant[area] is None
            if deps_ok and area_ok:
                if tr.waiting:
                    tr.waiting = False
                    self._emit(EventKind.WAIT_ENDED, task=tid, actor=aid)
                self._emit(EventKind.PHASE_ENDED, task=tid, actor=aid, phase=Phase.PREP)
                self.pending_completions.append((tid, Phase.PREP, self.now))
                if area is not None:
                    self.area_occupant[area] = tid
                    self._emit(EventKind.AREA_ENTERED, task=tid, actor=aid, area=area)
                tr.phase = Phase.EXEC
                tr.phase_started = self.now
                dur = self._phase_duration(tid, aid, Phase.EXEC)
                tr.phase_due = None if dur is None else self.now + dur
                self._emit(EventKind.PHASE_STARTED, task=tid, actor=aid, phase=Phase.EXEC)
            elif not tr.waiting:
                tr.waiting = True
                self._emit(EventKind.WAIT_STARTED, task=tid, actor=aid)

    def _check_progress(self, requests) -> None:
        if requests or self.pending_completions:
            return
        if any(t is not None for t in self.actor_task.values()):
            return
        if any(seat.blackboard.queue for seat in self.robot_seats.values()):
            return
        if any(isinstance(s, LiveHumanSeat) for s in self.human_seats.values()):
            return  # a live human may still act
        # All idle with nothing queued: check whether anything can ever run.
        completable: set[str] = {
            tid for tid, tr in self.tasks.items() if tr.state is TaskState.COMPLETED
        }
        changed = True
        while changed:
            changed = False
            for tid, tr in self.tasks.items():
                if tid in completable:
                    continue
                task = tr.task
                actor_ok = any((tid, a) not in self.rejected for a in task.eligible_actors)
                deps_ok = all(d in completable for d in self.deps_exec[tid])
                if actor_ok and deps_ok:
                    completable.add(tid)
                    changed = True
        stuck = [tid for tid in self.tasks if tid not in completable]
        if not stuck:
            return  # controller may be holding for a scheduled future start
        all_rejected = any(
            all((tid, a) in self.rejected for a in self.tasks[tid].task.eligible_actors)
            for tid in stuck
        )
        self.status = RunStatus.TASK_UNASSIGNABLE if all_rejected else RunStatus.DEADLOCK
        self._emit(EventKind.RUN_ENDED)

    def run(self) -> RunRecord:
        while self.status is None:
            self.step()
        return RunRecord(
            seed=0,
            method=self.controller.kind.value,
            status=self.status,
            makespan=self.makespan,
            trace=self.trace,
            latencies=self.latencies,
            n_solves=self.n_solves,
        )


def run_sim(
    job: Job,
    controller: ControllerKind,
    seed: int,
    config: SimConfig | None = None,
) -> RunRecord:
    """Run one seeded closed-loop simulation to completion."""
    config = config or SimConfig()
    outcomes = sample_outcomes(job, seed)
    visible_job = resample_estimates(job, seed) if config.resample_estimates else job
    agent = make_controller(
        controller, visible_job, seed=derive_seed(seed, "controller"), deadline_ms=config.deadline_ms
    )
    engine = SimEngine(job, agent, outcomes, config)
    record = engine.run()
    record.seed = seed
    return record
