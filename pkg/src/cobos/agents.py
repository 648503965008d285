"""Decision-making controllers: map observations to task requests.

Four interchangeable policies fill the agent seat of the closed loop:

* ``cobos`` re-solves the constraint model whenever an event arrives
  (phase completion, rejection, first overrun detection) and dispatches
  by the current schedule, holding idle actors for planned future starts.
* ``ra`` assigns a uniformly random executable task the moment an actor
  idles.
* ``md`` greedily picks the executable task with the largest total
  duration estimate.
* ``da`` scores executable tasks by unfinished dependents, then duration,
  and balances allocatable tasks onto the least-loaded idle actor.

All controllers are deterministic given (job, seed).
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from enum import Enum

from .domain import ActorState, Job, Observation, Phase, Schedule, TaskState
from .solver import (
    Fact,
    FactKind,
    SchedulingModel,
    SolveResult,
    SolveStatus,
    TaskUnassignable,
    build_model,
    solve,
)


class ScheduleInfeasible(Exception):
    pass


class ControllerKind(str, Enum):
    COBOS = "cobos"
    RA = "ra"
    MD = "md"
    DA = "da"


@dataclass(frozen=True)
class AgentRequest:
    actor: str
    task: str
    issue_tick: int


class Controller:
    """Shared bookkeeping: outstanding requests and started/rejected sets."""

    kind: ControllerKind

    def __init__(self, job: Job):
        self.job = job
        self.tasks = job.task_map()
        self.actor_order = [a.id for a in job.actors]
        self.outstanding: dict[str, tuple[str, int]] = {}
        self.known_started: set[str] = set()
        self.known_rejected: set[tuple[str, str]] = set()
        self.last_step_solved = False

    def step(self, obs: Observation) -> list[AgentRequest]:
        raise NotImplementedError

    def _sync_requests(self, obs: Observation) -> None:
        for tid, state in obs.task_states.items():
            if state in (TaskState.IN_PROGRESS, TaskState.COMPLETED) and tid not in self.known_started:
                self.known_started.add(tid)
                self.outstanding.pop(tid, None)
        for pair in obs.rejected - self.known_rejected:
            self.known_rejected.add(pair)
            pending = self.outstanding.get(pair[0])
            if pending is not None and pending[0] == pair[1]:
                self.outstanding.pop(pair[0])

    def _executable(self, obs: Observation, actor: str, claimed: set[str]) -> list[str]:
        out = []
        for tid in sorted(obs.task_states):
            if obs.task_states[tid] is not TaskState.AVAILABLE:
                continue
            if tid in claimed or tid in self.outstanding:
                continue
            task = self.tasks[tid]
            if actor not in task.eligible_actors:
                continue
            if (tid, actor) in obs.rejected:
                continue
            out.append(tid)
        return out

    def _idle_actors(self, obs: Observation) -> list[str]:
        # An actor with an unanswered offer is not given a second one.
        engaged = {actor for (actor, _) in self.outstanding.values()}
        return [
            a
            for a in self.actor_order
            if obs.actor_states.get(a) is ActorState.IDLE and a not in engaged
        ]

    def _issue(self, obs: Observation, actor: str, task: str, requests: list[AgentRequest]) -> None:
        self.outstanding[task] = (actor, obs.now)
        requests.append(AgentRequest(actor=actor, task=task, issue_tick=obs.now))


class RandomAllocation(Controller):
    kind = ControllerKind.RA

    def __init__(self, job: Job, seed: int):
        super().__init__(job)
        self.rng = random.Random(seed)

    def step(self, obs: Observation) -> list[AgentRequest]:
        self.last_step_solved = False
        self._sync_requests(obs)
        requests: list[AgentRequest] = []
        claimed: set[str] = set()
        for actor in self._idle_actors(obs):
            pool = self._executable(obs, actor, claimed)
            if not pool:
                continue
            task = self.rng.choice(pool)
            claimed.add(task)
            self._issue(obs, actor, task, requests)
        return requests


class MaxDuration(Controller):
    kind = ControllerKind.MD

    def step(self, obs: Observation) -> list[AgentRequest]:
        self.last_step_solved = False
        self._sync_requests(obs)
        requests: list[AgentRequest] = []
        claimed: set[str] = set()
        for actor in self._idle_actors(obs):
            pool = self._executable(obs, actor, claimed)
            if not pool:
                continue
            task = min(pool, key=lambda t: (-self.tasks[t].total_estimate, t))
            claimed.add(task)
            self._issue(obs, actor, task, requests)
        return requests


class DynamicAllocation(Controller):
    """Myopic scorer with load balancing, no look-ahead to the schedule end."""

    kind = ControllerKind.DA

    def __init__(self, job: Job):
        super().__init__(job)
        self.workload: dict[str, int] = {a.id: 0 for a in job.actors}
        self.dependents = {t.id: job.dependents_of(t.id) for t in job.tasks}

    def _score(self, obs: Observation, tid: str) -> tuple[int, int, str]:
        pending = sum(
            1 for d in self.dependents[tid] if obs.task_states.get(d) is not TaskState.COMPLETED
        )
        return (-pending, -self.tasks[tid].total_estimate, tid)

    def step(self, obs: Observation) -> list[AgentRequest]:
        self.last_step_solved = False
        self._sync_requests(obs)
        requests: list[AgentRequest] = []
        claimed: set[str] = set()
        idle = self._idle_actors(obs)
        while idle:
            choices: dict[str, str] = {}
            for actor in idle:
                pool = self._executable(obs, actor, claimed)
                if pool:
                    choices[actor] = min(pool, key=lambda t: self._score(obs, t))
            if not choices:
                break
            by_task: dict[str, list[str]] = {}
            for actor in idle:
                if actor in choices:
                    by_task.setdefault(choices[actor], []).append(actor)
            progressed = False
            for task in sorted(by_task):
                contenders = by_task[task]
                winner = min(
                    contenders,
                    key=lambda a: (self.workload[a], self.actor_order.index(a)),
                )
                claimed.add(task)
                self.workload[winner] += self.tasks[task].total_estimate
                self._issue(obs, winner, task, requests)
                idle.remove(winner)
                progressed = True
            if not progressed:
                break
        return requests


class CobosController(Controller):
    """Event-driven rescheduling against the online constraint model."""

    kind = ControllerKind.COBOS

    def __init__(
        self,
        job: Job,
        deadline_ms: float | None = 900.0,
        initial_deadline_ms: float | None = 3000.0,
    ):
        super().__init__(job)
        self.deadline_ms = deadline_ms
        self.initial_deadline_ms = initial_deadline_ms
        self.model: SchedulingModel = build_model(job)
        self.schedule: Schedule | None = None
        self.schedule_version = 0
        self.last_result: SolveResult | None = None
        self.known_ended: set[tuple[str, Phase]] = set()
        self.overrun_seen: set[tuple[str, Phase]] = set()

    def step(self, obs: Observation) -> list[AgentRequest]:
        self.last_step_solved = False
        event = self.schedule is None
        self.model.assert_fact(Fact(FactKind.NOW_IS, tick=obs.now))

        # Newly observed starts: the starter is whoever we asked last.
        for tid in sorted(obs.task_states):
            state = obs.task_states[tid]
            if state in (TaskState.IN_PROGRESS, TaskState.COMPLETED) and tid not in self.known_started:
                pending = self.outstanding.pop(tid, None)
                if pending is None:
                    raise ScheduleInfeasible(f"task {tid} started without a request")
                actor, _issued = pending
                # Work observed in progress now began on the previous tick.
                self.model.assert_fact(
                    Fact(FactKind.TASK_STARTED, task=tid, actor=actor, tick=obs.now - 1)
                )
                self.known_started.add(tid)

        for (tid, phase, end_tick) in sorted(obs.phase_completions):
            if (tid, phase) in self.known_ended:
                continue
            self.model.assert_fact(Fact(FactKind.PHASE_ENDED, task=tid, phase=phase, tick=end_tick))
            self.known_ended.add((tid, phase))
            event = True

        for pair in sorted(obs.rejected - self.known_rejected):
            tid, actor = pair
            self.known_rejected.add(pair)
            pending = self.outstanding.get(tid)
            if pending is not None and pending[0] == actor:
                self.outstanding.pop(tid)
            try:
                self.model.assert_fact(Fact(FactKind.TASK_REJECTED, task=tid, actor=actor))
            except TaskUnassignable as exc:
                raise ScheduleInfeasible(str(exc)) from exc
            event = True

        # Overruns against the currently held schedule. Every re-assertion
        # moves the provisional phase end, so the plan is refreshed while an
        # overrun is active, not only on first detection: acting on the
        # stale plan would hold idle actors for tasks that keep slipping.
        if self.schedule is not None:
            for tid in sorted(obs.task_states):
                if obs.task_states[tid] is not TaskState.IN_PROGRESS:
                    continue
                phase = obs.task_phases[tid]
                if (tid, phase) in self.known_ended:
                    continue
                planned_end = self.schedule.phase_end.get((tid, phase))
                if planned_end is None or obs.now < planned_end:
                    continue
                self.model.assert_fact(
                    Fact(FactKind.PHASE_OVERRUN, task=tid, phase=phase, tick=obs.now)
                )
                self.overrun_seen.add((tid, phase))
                event = True

        if event:
            # The very first decision builds the whole plan and may run
            # longer, like the initial solve of a fresh model; reschedules
            # stay within the online cadence.
            budget = self.initial_deadline_ms if self.schedule is None else self.deadline_ms
            result = solve(self.model, deadline_ms=budget, hint=self.schedule)
            self.last_result = result
            self.last_step_solved = True
            if result.status is SolveStatus.INFEASIBLE:
                unassignable = self.model.unassignable_tasks()
                raise ScheduleInfeasible(
                    f"model infeasible (unassignable: {unassignable})"
                )
            if result.ok:
                self.schedule = result.schedule
                self.schedule_version += 1
            elif self.schedule is None:
                raise ScheduleInfeasible("no schedule within deadline")

        return self._dispatch(obs)

    def _dispatch(self, obs: Observation) -> list[AgentRequest]:
        # Time-extended assignment: each idle actor gets its next scheduled
        # task once the planned start is due. Preparation may begin before
        # the dependencies' execution completes (the waiting phase absorbs
        # the join), exactly as the schedule plans it.
        requests: list[AgentRequest] = []
        if self.schedule is None:
            return requests
        claimed: set[str] = set()
        for actor in self._idle_actors(obs):
            best: tuple[int, str] | None = None
            for tid, assigned in self.schedule.assignment.items():
                if assigned != actor or tid in self.known_started:
                    continue
                if tid in claimed or tid in self.outstanding:
                    continue
                if obs.task_states.get(tid) in (TaskState.IN_PROGRESS, TaskState.COMPLETED):
                    continue
                if (tid, actor) in obs.rejected:
                    continue
                planned = self.schedule.phase_start[(tid, Phase.PREP)]
                if planned > obs.now:
                    continue  # hold the actor until the scheduled start
                key = (planned, tid)
                if best is None or key < best:
                    best = key
            if best is not None:
                claimed.add(best[1])
                self._issue(obs, actor, best[1], requests)
        return requests


def make_controller(kind: ControllerKind, job: Job, seed: int, deadline_ms: float | None = 900.0) -> Controller:
    if kind is ControllerKind.COBOS:
        return CobosController(job, deadline_ms=deadline_ms)
    if kind is ControllerKind.RA:
        return RandomAllocation(job, seed)
    if kind is ControllerKind.MD:
        return MaxDuration(job)
    return DynamicAllocation(job)
