"""Exact makespan-minimizing scheduler with online fact management.

The model has, per task, a preparation start and an execution start; the
execution and completion phases have fixed durations, while the preparation
phase is elastic (it absorbs waiting for dependencies and shared areas).
All temporal constraints are difference constraints, so for any fixed
assignment and fixed per-resource orderings the earliest schedule is the
least fixpoint of a longest-path relaxation, and that schedule is optimal
for those decisions.

Search is depth-first branch and bound:

  1. enumerate assignments of allocatable tasks (tasks by id, actors in
     list order), pruning with load and critical-path bounds;
  2. for a complete assignment, repeatedly compute the relaxed earliest
     schedule; if two tasks sharing an actor or area overlap, branch on
     their order (earlier relaxed start first), otherwise the relaxation is
     a feasible schedule.

Everything is deterministic: fixed variable, value and conflict-scan
orders. The wall-clock deadline only matters when a solve is cut short.

Observations enter as facts (starts, phase ends, overruns, rejections,
clock advances) that pin variables or remove duration constraints, exactly
mirroring the four online update cases.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from enum import Enum

from .domain import (
    InvalidJob,
    Job,
    Phase,
    PHASES,
    Schedule,
    validate_job,
)


class ContradictoryFact(Exception):
    pass


class TaskUnassignable(Exception):
    def __init__(self, task_id: str):
        super().__init__(f"all eligible actors rejected task {task_id}")
        self.task_id = task_id


class FactKind(str, Enum):
    TASK_STARTED = "task_started"
    PHASE_ENDED = "phase_ended"
    PHASE_OVERRUN = "phase_overrun"
    TASK_REJECTED = "task_rejected"
    NOW_IS = "now_is"


@dataclass(frozen=True)
class Fact:
    kind: FactKind
    task: str | None = None
    actor: str | None = None
    phase: Phase | None = None
    tick: int = 0


class SolveStatus(str, Enum):
    OPTIMAL = "optimal"
    FEASIBLE = "feasible"
    INFEASIBLE = "infeasible"
    TIMEOUT = "timeout"


@dataclass
class SolveStats:
    nodes: int = 0
    propagations: int = 0
    wall_ms: float = 0.0


@dataclass
class SolveResult:
    status: SolveStatus
    schedule: Schedule | None
    objective: int | None
    bound: int
    stats: SolveStats
    fact_count: int = 0

    @property
    def ok(self) -> bool:
        return self.status in (SolveStatus.OPTIMAL, SolveStatus.FEASIBLE)


@dataclass
class _TaskFacts:
    """Online state of one task, derived from asserted facts."""

    started_at: int | None = None
    actor: str | None = None
    # Firm phase-end pins (from PhaseEnded). Index by phase.
    ended: dict[Phase, int] = field(default_factory=dict)
    # Provisional end pins (from PhaseOverrun), replaced on re-assert /
    # superseded by a firm end.
    overrun: dict[Phase, int] = field(default_factory=dict)

    def end_pin(self, phase: Phase) -> int | None:
        if phase in self.ended:
            return self.ended[phase]
        return self.overrun.get(phase)


class SchedulingModel:
    """The constraint model plus its append-only fact log.

    ``durations`` maps (task, phase, actor) to the duration used when the
    phase has not been observed; by default these come from the task
    estimates and are identical per actor. The perfect-information bound
    passes realized per-actor durations instead.
    """

    def __init__(self, job: Job, durations: dict[tuple[str, Phase, str], int], horizon: int):
        self.job = job
        self.durations = durations
        self.horizon = horizon
        self.facts: list[Fact] = []
        self.now = 0
        self.rejected: set[tuple[str, str]] = set()
        self.state: dict[str, _TaskFacts] = {t.id: _TaskFacts() for t in job.tasks}
        self._tasks = {t.id: t for t in job.tasks}

    # -- fact management ----------------------------------------------------

    def assert_fact(self, fact: Fact) -> "SchedulingModel":
        if fact.kind is FactKind.NOW_IS:
            if fact.tick < 0:
                raise ContradictoryFact("clock must be non-negative")
            self.now = max(self.now, fact.tick)
            self.facts.append(fact)
            return self

        task = self._tasks.get(fact.task or "")
        if task is None:
            raise ContradictoryFact(f"unknown task {fact.task!r}")
        st = self.state[task.id]

        if fact.kind is FactKind.TASK_STARTED:
            if fact.actor not in task.eligible_actors:
                raise ContradictoryFact(f"{fact.actor} is not eligible for {task.id}")
            if (task.id, fact.actor) in self.rejected:
                raise ContradictoryFact(f"{fact.actor} already rejected {task.id}")
            if st.started_at is not None:
                raise ContradictoryFact(f"{task.id} already started")
            st.started_at = fact.tick
            st.actor = fact.actor

        elif fact.kind is FactKind.PHASE_ENDED:
            self._check_phase_open(st, task.id, fact.phase, fact.tick)
            if fact.phase in st.ended:
                raise ContradictoryFact(f"{task.id} phase {fact.phase.name} already ended")
            st.ended[fact.phase] = fact.tick
            st.overrun.pop(fact.phase, None)

        elif fact.kind is FactKind.PHASE_OVERRUN:
            self._check_phase_open(st, task.id, fact.phase, fact.tick + 1)
            if fact.phase in st.ended:
                raise ContradictoryFact(f"{task.id} phase {fact.phase.name} already ended")
            # Extend the running phase to the next tick; re-asserts replace.
            st.overrun[fact.phase] = fact.tick + 1

        elif fact.kind is FactKind.TASK_REJECTED:
            if st.actor == fact.actor:
                raise ContradictoryFact(f"{task.id} already started by {fact.actor}")
            if fact.actor not in task.eligible_actors:
                raise ContradictoryFact(f"{fact.actor} is not eligible for {task.id}")
            self.rejected.add((task.id, fact.actor))
            self.facts.append(fact)
            if st.started_at is None and all(
                (task.id, a) in self.rejected for a in task.eligible_actors
            ):
                raise TaskUnassignable(task.id)
            return self

        self.facts.append(fact)
        return self

    def _check_phase_open(self, st: _TaskFacts, tid: str, phase: Phase | None, tick: int) -> None:
        if phase is None:
            raise ContradictoryFact("phase fact without a phase")
        if st.started_at is None:
            raise ContradictoryFact(f"{tid} has not started")
        prev_end = st.started_at if phase is Phase.PREP else st.ended.get(Phase(phase - 1))
        if prev_end is None:
            raise ContradictoryFact(f"{tid} phase {Phase(phase - 1).name} has not ended")
        if tick <= prev_end:
            raise ContradictoryFact(f"{tid} phase {phase.name} end {tick} <= phase start {prev_end}")

    def unassignable_tasks(self) -> list[str]:
        out = []
        for t in self.job.tasks:
            if self.state[t.id].started_at is None and all(
                (t.id, a) in self.rejected for a in t.eligible_actors
            ):
                out.append(t.id)
        return out

    # -- derived views used by the search ------------------------------------

    def effective_horizon(self) -> int:
        # Stretch past pinned facts so late observations never wipe domains.
        latest = self.now
        for st in self.state.values():
            if st.started_at is not None:
                latest = max(latest, st.started_at)
            for v in list(st.ended.values()) + list(st.overrun.values()):
                latest = max(latest, v)
        slack = 4 * max(1, self.job.total_estimate())
        return max(self.horizon, latest + slack)


def default_horizon(job: Job) -> int:
    return min(4 * max(1, job.total_estimate()), job.horizon)


def build_model(
    job: Job,
    durations: dict[tuple[str, Phase, str], int] | None = None,
    horizon: int | None = None,
) -> SchedulingModel:
    """Build the scheduling model for a validated job."""
    report = validate_job(job)
    if not report.ok:
        raise InvalidJob(report)
    if durations is None:
        durations = {
            (t.id, p, a): t.duration_estimate[p]
            for t in job.tasks
            for p in PHASES
            for a in t.eligible_actors
        }
    return SchedulingModel(job, durations, horizon if horizon is not None else default_horizon(job))


def lower_bound_perfect_information(job: Job, realized) -> SolveResult:
    """Optimal makespan when every duration and rejection is known upfront.

    ``realized`` carries ``durations`` per (task, phase, actor) and
    ``rejections`` per (task, actor). Solved to proven optimality (no
    deadline); used to normalize simulated makespans.
    """
    model = build_model(job, durations=dict(realized.durations))
    try:
        for (tid, actor), rejected in sorted(realized.rejections.items()):
            if rejected:
                model.assert_fact(Fact(FactKind.TASK_REJECTED, task=tid, actor=actor))
    except TaskUnassignable:
        return SolveResult(SolveStatus.INFEASIBLE, None, None, 0, SolveStats(), len(model.facts))
    return solve(model, deadline_ms=None)


# ---------------------------------------------------------------------------
# Search
# ---------------------------------------------------------------------------


def solve(
    model: SchedulingModel,
    deadline_ms: float | None = 1000.0,
    hint: Schedule | None = None,
) -> SolveResult:
    """Exact depth-first branch and bound over the model snapshot.

    ``hint`` optionally carries the previous solution when re-solving
    online; replaying its assignment and orderings under the new facts
    gives a near-optimal incumbent in one propagation pass. Hints steer
    the search order only, never correctness.
    """
    t0 = time.perf_counter()
    search = _Search(model, deadline_ms, hint)
    status, schedule, objective, bound = search.run()
    stats = SolveStats(
        nodes=search.nodes,
        propagations=search.propagations,
        wall_ms=(time.perf_counter() - t0) * 1000.0,
    )
    return SolveResult(status, schedule, objective, bound, stats, fact_count=len(model.facts))


class _Infeasible(Exception):
    pass


class _Search:
    def __init__(
        self,
        model: SchedulingModel,
        deadline_ms: float | None,
        hint: Schedule | None = None,
    ):
        self.model = model
        self.deadline = None if deadline_ms is None else time.perf_counter() + deadline_ms / 1000.0
        self.nodes = 0
        self.propagations = 0
        self.timed_out = False
        self.stop_first = False
        self.hint_schedule = hint
        self.hint = dict(hint.assignment) if hint is not None else {}

        job = model.job
        self.tasks = sorted(job.tasks, key=lambda t: t.id)
        self.n = len(self.tasks)
        self.index = {t.id: k for k, t in enumerate(self.tasks)}
        self.actor_ids = [a.id for a in job.actors]
        self.horizon = model.effective_horizon()

        # Candidate actors per task after facts (list order preserved).
        self.options: list[list[str]] = []
        for t in self.tasks:
            st = model.state[t.id]
            if st.actor is not None:
                opts = [st.actor]
            else:
                opts = [a for a in self.actor_ids if a in t.eligible_actors and (t.id, a) not in model.rejected]
            self.options.append(opts)
        self.infeasible = any(not opts for opts in self.options)
        if self.infeasible:
            return  # run() reports right away; derived tables are meaningless

        # Per-task temporal pins. A firm phase-1 end pins the exec start; a
        # provisional overrun extension only floors it (phase 1 is elastic,
        # so an equality could contradict area occupancy elsewhere). The
        # fixed-duration phases take overrun extensions as equalities.
        self.s1_pin: list[int | None] = []
        self.s2_pin: list[int | None] = []
        self.s2_floor: list[int | None] = []
        self.d2_obs: list[int | None] = []
        self.d3_obs: list[int | None] = []
        for t in self.tasks:
            st = model.state[t.id]
            self.s1_pin.append(st.started_at)
            s2 = st.ended.get(Phase.PREP)
            self.s2_pin.append(s2)
            self.s2_floor.append(st.overrun.get(Phase.PREP))
            e2 = st.end_pin(Phase.EXEC)
            self.d2_obs.append(None if e2 is None or s2 is None else e2 - s2)
            e3 = st.end_pin(Phase.DONE)
            self.d3_obs.append(None if e3 is None or e2 is None else e3 - e2)

        self.deps: list[list[int]] = [[] for _ in range(self.n)]
        for (i, j) in job.edges:
            self.deps[self.index[i]].append(self.index[j])
        for lst in self.deps:
            lst.sort()

        # Earliest tick a task can occupy its actor from; pinned starts may
        # lie in the past, unstarted tasks are released at `now`.
        self.release = [
            self.s1_pin[k] if self.s1_pin[k] is not None else model.now for k in range(self.n)
        ]
        self.actor_index = {a: i for i, a in enumerate(self.actor_ids)}

        # Transitive dependency closures as bitmasks: forced resource orders
        # and symmetry detection both need them.
        topo = self._topo_order()
        self.dep_mask = [0] * self.n
        for k in topo:
            m = 0
            for j in self.deps[k]:
                m |= self.dep_mask[j] | (1 << j)
            self.dep_mask[k] = m
        direct_dependents: list[list[int]] = [[] for _ in range(self.n)]
        for i in range(self.n):
            for j in self.deps[i]:
                direct_dependents[j].append(i)
        self.succ_mask = [0] * self.n
        for k in reversed(topo):
            m = 0
            for i in direct_dependents[k]:
                m |= self.succ_mask[i] | (1 << i)
            self.succ_mask[k] = m

        # Interchangeable-task groups: identical eligibility, durations,
        # area, dependency structure, and no observation pins. Any schedule
        # permuting such tasks maps to one with them in id order.
        self.twin_prev: list[int] = [-1] * self.n
        twin_index: dict[tuple, int] = {}
        for k in range(self.n):
            t = self.tasks[k]
            if self.s1_pin[k] is not None or self.s2_pin[k] is not None:
                continue
            durs = tuple(
                (a, self._d1_floor(k, a), self._dur(k, Phase.EXEC, a), self._dur(k, Phase.DONE, a))
                for a in self.options[k]
            )
            key = (tuple(self.options[k]), durs, t.shared_area, self.dep_mask[k], self.succ_mask[k])
            if key in twin_index:
                self.twin_prev[k] = twin_index[key]
            twin_index[key] = k

        # Branch fixed tasks first (no choice), then allocatable ones,
        # largest span first so load bounds bite early.
        def max_span(k: int) -> int:
            return max((self._span(k, a) for a in self.options[k]), default=0)

        self.assign_order = sorted(
            range(self.n), key=lambda k: (len(self.options[k]) > 1, -max_span(k), k)
        )

        # Assignment-independent downstream tails (min durations) give every
        # task a sound completion deadline during assignment enumeration.
        d3_max = [
            max((self._dur(k, Phase.DONE, a) for a in self.options[k]), default=0)
            for k in range(self.n)
        ]
        tail_min = [0] * self.n
        chain_after = [0] * self.n
        for k in reversed(topo):
            best_chain = 0
            for i in direct_dependents[k]:
                cand = self._min_dur(i, Phase.EXEC) + tail_min[i]
                if cand > best_chain:
                    best_chain = cand
            chain_after[k] = best_chain
            tail_min[k] = max(self._min_dur(k, Phase.DONE), best_chain)
        self.after_span_min = [max(0, chain_after[k] - d3_max[k]) for k in range(self.n)]

        # Incumbent.
        self.best_obj: int | None = None
        self.best_schedule: Schedule | None = None
        self.root_bound = 0

    # -- duration helpers -----------------------------------------------------

    def _dur(self, k: int, phase: Phase, actor: str) -> int:
        obs = self.d2_obs[k] if phase is Phase.EXEC else self.d3_obs[k] if phase is Phase.DONE else None
        if obs is not None:
            return obs
        return self.model.durations[(self.tasks[k].id, phase, actor)]

    def _min_dur(self, k: int, phase: Phase) -> int:
        return min(self._dur(k, phase, a) for a in self.options[k])

    def _d1_floor(self, k: int, actor: str) -> int:
        # Elastic phase 1: at least the given duration until its end is
        # observed. In the online model the given value is the estimate; the
        # perfect-information model supplies realized per-actor durations.
        if self.s2_pin[k] is not None:
            return 1
        return max(1, self.model.durations[(self.tasks[k].id, Phase.PREP, actor)])

    def _d1_floor_min(self, k: int) -> int:
        return min(self._d1_floor(k, a) for a in self.options[k])

    # -- top level -------------------------------------------------------------

    def run(self) -> tuple[SolveStatus, Schedule | None, int | None, int]:
        if self.n == 0:
            empty = Schedule(assignment={}, phase_start={}, phase_end={}, makespan=0)
            return SolveStatus.OPTIMAL, empty, 0, 0

        if self.infeasible:
            return SolveStatus.INFEASIBLE, None, None, 0

        self.root_bound = self._global_bound()
        n_actors = len(self.actor_ids)

        # Feasible reference: replay the hinted schedule if any, else dive to
        # the first leaf, balanced assignment first.
        upper_sched: Schedule | None = None
        try:
            self.stop_first = True
            try:
                replayed = self._replay_hint()
                if not replayed:
                    seed = self._balanced_assignment()
                    if seed is not None:
                        self._sequence(seed)
                if self.best_obj is None:
                    self._assign(0, [None] * self.n, [0] * n_actors, [self.horizon] * n_actors)
            except _FoundSolution:
                pass
            upper_sched = self.best_schedule
        except _Timeout:
            if self.best_obj is not None:
                return SolveStatus.FEASIBLE, self.best_schedule, self.best_obj, self.root_bound
            return SolveStatus.TIMEOUT, None, None, self.root_bound

        if upper_sched is None:
            return SolveStatus.INFEASIBLE, None, None, self.root_bound
        upper = upper_sched.makespan

        # Destructive probing: a probe at `level` either proves no schedule
        # ends by `level` (raise the floor) or finds one (lower the
        # ceiling). Cold solves probe the root bound first (often exact);
        # hinted re-solves probe just under the dive, which usually matches
        # the incumbent plan and needs one proof. Then bisection.
        lower = self.root_bound
        first = True
        try:
            while lower < upper:
                if first and self.hint:
                    level = upper - 1
                elif first:
                    level = lower
                else:
                    level = (lower + upper) // 2
                first = False
                self.best_obj = level + 1  # admissible schedules end <= level
                self.best_schedule = None
                try:
                    self._assign(0, [None] * self.n, [0] * n_actors, [self.horizon] * n_actors)
                except _FoundSolution:
                    upper_sched = self.best_schedule
                    upper = upper_sched.makespan  # type: ignore[union-attr]
                    # Later probes refine locally around the newest solution.
                    self.hint_schedule = upper_sched
                    self.hint = dict(upper_sched.assignment)  # type: ignore[union-attr]
                else:
                    lower = level + 1
        except _Timeout:
            return SolveStatus.FEASIBLE, upper_sched, upper, lower
        return SolveStatus.OPTIMAL, upper_sched, upper, upper

    def _global_bound(self) -> int:
        # Critical path over minimum durations, a work-balance bound, and
        # per-resource energy bounds (shared areas, single-option actors).
        cp = [0] * self.n
        for k in self._topo_order():
            rel = self.s1_pin[k] if self.s1_pin[k] is not None else self.model.now
            s2 = max(
                [rel + self._d1_floor_min(k)]
                + [cp[j] for j in self.deps[k]]
            )
            if self.s2_pin[k] is not None:
                s2 = max(s2, self.s2_pin[k])
            elif self.s2_floor[k] is not None:
                s2 = max(s2, self.s2_floor[k])
            cp[k] = s2 + self._min_dur(k, Phase.EXEC)
        path = max(cp[k] + self._min_dur(k, Phase.DONE) for k in range(self.n))
        total = sum(
            self._d1_floor_min(k) + self._min_dur(k, Phase.EXEC) + self._min_dur(k, Phase.DONE)
            for k in range(self.n)
        )
        balance = -(-total // max(1, len(self.actor_ids)))
        bound = max(path, balance)

        by_area: dict[str, list[int]] = {}
        for k in range(self.n):
            area = self.tasks[k].shared_area
            if area is not None:
                by_area.setdefault(area, []).append(k)
        for tasks in by_area.values():
            if len(tasks) < 2:
                continue
            rel = min(cp[k] - self._min_dur(k, Phase.EXEC) for k in tasks)
            busy = sum(self._min_dur(k, Phase.EXEC) for k in tasks)
            post = min(self._min_dur(k, Phase.DONE) for k in tasks)
            bound = max(bound, rel + busy + post)

        by_fixed: dict[str, list[int]] = {}
        for k in range(self.n):
            if len(self.options[k]) == 1:
                by_fixed.setdefault(self.options[k][0], []).append(k)
        for actor, tasks in by_fixed.items():
            rel = min(self.release[k] for k in tasks)
            busy = sum(self._span(k, actor) for k in tasks)
            bound = max(bound, rel + busy)
        return bound

    def _topo_order(self) -> list[int]:
        order: list[int] = []
        seen = [0] * self.n
        for root in range(self.n):
            if seen[root]:
                continue
            stack = [(root, False)]
            while stack:
                node, expanded = stack.pop()
                if expanded:
                    order.append(node)
                    continue
                if seen[node]:
                    continue
                seen[node] = 1
                stack.append((node, True))
                for j in self.deps[node]:
                    if not seen[j]:
                        stack.append((j, False))
        return order

    def _check_deadline(self) -> None:
        if self.deadline is not None and time.perf_counter() > self.deadline:
            self.timed_out = True
            raise _Timeout()

    # -- assignment enumeration -------------------------------------------------

    def _span(self, k: int, actor: str) -> int:
        return self._d1_floor(k, actor) + self._dur(k, Phase.EXEC, actor) + self._dur(k, Phase.DONE, actor)

    def _balanced_assignment(self) -> list[str | None] | None:
        # Deterministic greedy: tasks by id, least-loaded eligible actor.
        # A hinted actor (previous solution) wins while still eligible.
        chosen: list[str | None] = [None] * self.n
        loads = [0] * len(self.actor_ids)
        for k in range(self.n):
            opts = self.options[k]
            if not opts:
                return None
            hinted = self.hint.get(self.tasks[k].id)
            if hinted in opts:
                best = hinted
            else:
                best = min(opts, key=lambda a: (loads[self.actor_index[a]], self.actor_index[a]))
            chosen[k] = best
            loads[self.actor_index[best]] += self._span(k, best)
        return chosen

    def _assign(self, depth: int, chosen: list[str | None], loads: list[int], rels: list[int]) -> None:
        if depth == self.n:
            self._sequence(chosen)  # complete assignment
            return
        k = self.assign_order[depth]
        self.nodes += 1
        if self.nodes % 512 == 0:
            self._check_deadline()
        twin = self.twin_prev[k]
        opts = self.options[k]
        if len(opts) > 1:
            # Feasible-first value order: hinted actor, then least loaded.
            hinted = self.hint.get(self.tasks[k].id)
            opts = sorted(
                opts,
                key=lambda a: (a != hinted, loads[self.actor_index[a]], self.actor_index[a]),
            )
        for actor in opts:
            ai = self.actor_index[actor]
            if twin >= 0 and chosen[twin] is not None and ai < self.actor_index[chosen[twin]]:
                continue  # interchangeable with an earlier task: keep id order
            span = self._span(k, actor)
            old_rel = rels[ai]
            loads[ai] += span
            rels[ai] = min(old_rel, self.release[k])
            chosen[k] = actor
            lb = self.root_bound
            for x in range(len(loads)):
                if loads[x] and rels[x] + loads[x] > lb:
                    lb = rels[x] + loads[x]
            if (self.best_obj is None or lb < self.best_obj) and not self._committed_overload(
                ai, chosen
            ):
                self._assign(depth + 1, chosen, loads, rels)
            loads[ai] -= span
            rels[ai] = old_rel
            chosen[k] = None

    def _committed_overload(self, ai: int, chosen: list[str | None]) -> bool:
        """Deadline-aware overload of one actor's committed tasks."""
        if self.best_obj is None:
            return False
        capped = self.best_obj - 1
        actor = self.actor_ids[ai]
        items = []
        for t in range(self.n):
            if chosen[t] == actor:
                items.append((capped - self.after_span_min[t], self.release[t], self._span(t, actor)))
        if len(items) < 2:
            return False
        items.sort()
        rels: list[int] = []
        lens: list[int] = []
        for (dl, r, p) in items:
            lo, hi = 0, len(rels)
            while lo < hi:
                mid = (lo + hi) // 2
                if rels[mid] < r:
                    lo = mid + 1
                else:
                    hi = mid
            rels.insert(lo, r)
            lens.insert(lo, p)
            ect = 0
            acc = 0
            for s in range(len(rels) - 1, -1, -1):
                acc += lens[s]
                if rels[s] + acc > ect:
                    ect = rels[s] + acc
            if ect > dl:
                return True
        return False

    # -- sequencing stage ---------------------------------------------------------

    def _replay_hint(self) -> bool:
        """Evaluate the hinted schedule's decisions under current facts."""
        hint = self.hint_schedule
        if hint is None:
            return False
        chosen: list[str | None] = []
        for k in range(self.n):
            actor = hint.assignment.get(self.tasks[k].id)
            if actor is None or actor not in self.options[k]:
                return False
            if (self.tasks[k].id, Phase.PREP) not in hint.phase_start:
                return False
            chosen.append(actor)
        before = self.best_obj
        self._sequence(chosen, replay=hint)
        return self.best_obj is not None and self.best_obj != before

    def _sequence(self, chosen: list[str | None], replay: Schedule | None = None) -> None:
        n = self.n
        actor_of = [a for a in chosen]  # type: ignore[misc]
        d1 = [self._d1_floor(k, actor_of[k]) for k in range(n)]
        d2 = [self._dur(k, Phase.EXEC, actor_of[k]) for k in range(n)]
        d3 = [self._dur(k, Phase.DONE, actor_of[k]) for k in range(n)]
        dd23 = [d2[k] + d3[k] for k in range(n)]

        nv = 2 * n  # v[2k] = prep start, v[2k+1] = exec start
        lb = [0] * nv
        ub = [0] * nv
        horizon = self.horizon
        for k in range(n):
            p1, p2 = self.s1_pin[k], self.s2_pin[k]
            lb[2 * k] = p1 if p1 is not None else self.model.now
            ub[2 * k] = p1 if p1 is not None else horizon
            if p2 is not None:
                lb[2 * k + 1] = p2
                ub[2 * k + 1] = p2
            else:
                floor = self.s2_floor[k]
                lb[2 * k + 1] = floor if floor is not None else 0
                ub[2 * k + 1] = horizon - dd23[k]
            if ub[2 * k + 1] < lb[2 * k + 1]:
                return

        adj: list[list[tuple[int, int]]] = [[] for _ in range(nv)]
        for k in range(n):
            if self.s2_pin[k] is None:
                adj[2 * k].append((2 * k + 1, d1[k]))
            for j in self.deps[k]:
                adj[2 * j + 1].append((2 * k + 1, d2[j]))

        by_actor: dict[str, list[int]] = {}
        for k in range(n):
            by_actor.setdefault(actor_of[k], []).append(k)
        actor_pairs: list[tuple[int, int]] = []
        for a in self.actor_ids:
            tasks = by_actor.get(a, [])
            for x in range(len(tasks)):
                for y in range(x + 1, len(tasks)):
                    actor_pairs.append((tasks[x], tasks[y]))
        by_area: dict[str, list[int]] = {}
        for k in range(n):
            area = self.tasks[k].shared_area
            if area is not None:
                by_area.setdefault(area, []).append(k)
        area_pairs: list[tuple[int, int]] = []
        for area in sorted(by_area):
            tasks = by_area[area]
            for x in range(len(tasks)):
                for y in range(x + 1, len(tasks)):
                    p = (tasks[x], tasks[y])
                    # Same-actor pairs are already disjoint via the span order.
                    if actor_of[p[0]] != actor_of[p[1]]:
                        area_pairs.append(p)

        # Orders that are forced before any branching: a dependency fixes the
        # resource order of its endpoints, and interchangeable same-actor
        # tasks are kept in id order (symmetry breaking).
        decided: set[tuple[int, int]] = set()
        for (i, j) in actor_pairs:
            if (self.dep_mask[i] >> j) & 1:
                first, second = j, i
            elif (self.dep_mask[j] >> i) & 1:
                first, second = i, j
            elif self._seq_twins(i, j, d1, d2, d3):
                first, second = i, j
            else:
                continue
            adj[2 * first + 1].append((2 * second, dd23[first]))
            decided.add((i, j))
        for (i, j) in area_pairs:
            if (self.dep_mask[i] >> j) & 1:
                first, second = j, i
            elif (self.dep_mask[j] >> i) & 1:
                first, second = i, j
            else:
                continue
            adj[2 * first + 1].append((2 * second + 1, d2[first]))
            decided.add((i, j))

        if replay is not None:
            # Replaying a previous solution: chain every resource in its
            # order, which settles all disjunctions in one propagation pass.
            for a in self.actor_ids:
                group = sorted(
                    by_actor.get(a, []),
                    key=lambda k: (replay.phase_start[(self.tasks[k].id, Phase.PREP)], k),
                )
                for x, y in zip(group, group[1:]):
                    adj[2 * x + 1].append((2 * y, dd23[x]))
            for area in sorted(by_area):
                group = sorted(
                    by_area[area],
                    key=lambda k: (replay.phase_start[(self.tasks[k].id, Phase.EXEC)], k),
                )
                for x, y in zip(group, group[1:]):
                    adj[2 * x + 1].append((2 * y + 1, d2[x]))

        # Reverse adjacency mirrors adj for latest-start propagation.
        radj: list[list[tuple[int, int]]] = [[] for _ in range(nv)]
        for u in range(nv):
            for (v, w) in adj[u]:
                radj[v].append((u, w))

        # Latest starts: windows from pins, the horizon, and (in a probe)
        # the makespan level under test.
        level = None if self.best_obj is None else self.best_obj - 1
        lst = list(ub)
        if level is not None:
            for k in range(n):
                cap2 = level - dd23[k]
                if cap2 < lst[2 * k + 1]:
                    lst[2 * k + 1] = cap2

        values = list(lb)
        if not self._fixpoint_back(lst, values, radj):
            return
        if not self._fixpoint(values, lst, adj):
            return

        # Minimum possible span of a task on its actor; exact when both
        # endpoints are pinned by observations.
        span = []
        for k in range(n):
            if self.s1_pin[k] is not None and self.s2_pin[k] is not None:
                span.append(self.s2_pin[k] - self.s1_pin[k] + dd23[k])
            else:
                span.append(d1[k] + dd23[k])

        # Longest downstream chain after a task's execution end (its own
        # completion phase at minimum). Lets bounds see dependents.
        dependents: list[list[int]] = [[] for _ in range(n)]
        for k in range(n):
            for j in self.deps[k]:
                dependents[j].append(k)
        tail = [0] * n
        for k in reversed(self._topo_order()):
            t = d3[k]
            for m in dependents[k]:
                cand = d2[m] + tail[m]
                if cand > t:
                    t = cand
            tail[k] = t

        pairs = [("actor", i, j) for (i, j) in actor_pairs] + [
            ("area", i, j) for (i, j) in area_pairs
        ]

        # Branch first toward the hinted order of each pair, when known.
        pref: dict[tuple[int, int], bool] = {}
        hint = self.hint_schedule
        if hint is not None and replay is None:
            for (kind, i, j) in pairs:
                phase = Phase.PREP if kind == "actor" else Phase.EXEC
                si = hint.phase_start.get((self.tasks[i].id, phase))
                sj = hint.phase_start.get((self.tasks[j].id, phase))
                if si is not None and sj is not None:
                    pref[(i, j)] = (si, i) <= (sj, j)
        ctx = _SeqContext(
            values=values,
            lst=lst,
            adj=adj,
            radj=radj,
            d1=d1,
            d2=d2,
            d3=d3,
            dd23=dd23,
            span=span,
            tail=tail,
            actor_of=actor_of,
            pairs=pairs,
            by_actor=by_actor,
            by_area=by_area,
            decided=decided,
            pref=pref,
        )
        if replay is not None:
            makespan = max(values[2 * k + 1] + dd23[k] for k in range(n))
            self._record_solution(ctx, makespan)
            return
        self._seq_dfs(ctx)

    def _seq_twins(self, i: int, j: int, d1: list[int], d2: list[int], d3: list[int]) -> bool:
        if self.s1_pin[i] is not None or self.s1_pin[j] is not None:
            return False
        if self.s2_pin[i] is not None or self.s2_pin[j] is not None:
            return False
        return (
            d1[i] == d1[j]
            and d2[i] == d2[j]
            and d3[i] == d3[j]
            and self.tasks[i].shared_area == self.tasks[j].shared_area
            and self.dep_mask[i] == self.dep_mask[j]
            and self.succ_mask[i] == self.succ_mask[j]
        )

    def _fixpoint(self, values: list[int], hi: list[int], adj: list[list[tuple[int, int]]]) -> bool:
        work = list(range(len(values)))
        in_work = [True] * len(values)
        props = 0
        while work:
            u = work.pop()
            in_work[u] = False
            vu = values[u]
            for (v, w) in adj[u]:
                cand = vu + w
                if cand > values[v]:
                    if cand > hi[v]:
                        self.propagations += props
                        return False
                    values[v] = cand
                    props += 1
                    if not in_work[v]:
                        in_work[v] = True
                        work.append(v)
        self.propagations += props
        return True

    def _fixpoint_back(self, lst: list[int], lo: list[int], radj: list[list[tuple[int, int]]]) -> bool:
        work = list(range(len(lst)))
        in_work = [True] * len(lst)
        while work:
            v = work.pop()
            in_work[v] = False
            lv = lst[v]
            for (u, w) in radj[v]:
                cand = lv - w
                if cand < lst[u]:
                    if cand < lo[u]:
                        return False
                    lst[u] = cand
                    if not in_work[u]:
                        in_work[u] = True
                        work.append(u)
        return True

    def _relax_from(self, ctx: "_SeqContext", start: int, trail: list[tuple[int, int]]) -> bool:
        # Incremental earliest-start relaxation after raising `start`. Fails
        # when a value leaves its window (pins, horizon, probe level).
        values, lst, adj = ctx.values, ctx.lst, ctx.adj
        work = [start]
        props = 0
        while work:
            u = work.pop()
            vu = values[u]
            for (v, w) in adj[u]:
                cand = vu + w
                if cand > values[v]:
                    if cand > lst[v]:
                        self.propagations += props
                        return False
                    trail.append((v, values[v]))
                    values[v] = cand
                    props += 1
                    work.append(v)
            if props > 64 * len(values) * len(values):
                # Positive cycle safety valve; treat as infeasible.
                self.propagations += props
                return False
        self.propagations += props
        return True

    def _relax_back(self, ctx: "_SeqContext", start: int, trail_hi: list[tuple[int, int]]) -> bool:
        # Incremental latest-start relaxation after lowering `start`.
        values, lst, radj = ctx.values, ctx.lst, ctx.radj
        work = [start]
        props = 0
        while work:
            v = work.pop()
            lv = lst[v]
            for (u, w) in radj[v]:
                cand = lv - w
                if cand < lst[u]:
                    if cand < values[u]:
                        self.propagations += props
                        return False
                    trail_hi.append((u, lst[u]))
                    lst[u] = cand
                    props += 1
                    work.append(u)
        self.propagations += props
        return True

    def _node_bound(self, ctx: "_SeqContext") -> int:
        """Max of the path relaxation and per-resource suffix (energy) bounds."""
        values, d2, dd23, span, tail = ctx.values, ctx.d2, ctx.dd23, ctx.span, ctx.tail
        bound = 0
        for k in range(self.n):
            e = values[2 * k + 1] + d2[k] + tail[k]
            if e > bound:
                bound = e
        for tasks in ctx.by_actor.values():
            post = min(tail[k] - ctx.d3[k] for k in tasks)  # work left after the last span
            items = sorted((values[2 * k], span[k]) for k in tasks)
            running = sum(sp for _, sp in items) + post
            for rel, sp in items:
                if rel + running > bound:
                    bound = rel + running
                running -= sp
        for tasks in ctx.by_area.values():
            post = min(tail[k] for k in tasks)
            items = sorted((values[2 * k + 1], d2[k]) for k in tasks)
            running = sum(sp for _, sp in items) + post
            for rel, sp in items:
                if rel + running > bound:
                    bound = rel + running
                running -= sp
        return bound

    def _edge_find(self, ctx: "_SeqContext", trail: list[tuple[int, int]]) -> str:
        """Edge finding per resource over the current time windows.

        Deadlines come from each task's latest start. If a deadline-prefix
        set cannot finish in time the node is dead; if it cannot finish once
        a later-deadline task is squeezed in, that task must follow the
        whole set and its release jumps to the set's earliest completion
        envelope. Returns "dead", "changed" or "stable".
        """
        if self.best_obj is None:
            return "stable"  # no useful deadlines while diving
        values, lst, span, d2, dd23 = ctx.values, ctx.lst, ctx.span, ctx.d2, ctx.dd23
        updates: dict[int, int] = {}
        for tasks in ctx.by_actor.values():
            if len(tasks) < 2:
                continue
            items = sorted(
                (lst[2 * k + 1] + dd23[k], values[2 * k], span[k], 2 * k) for k in tasks
            )
            if not self._ef_scan(items, updates):
                return "dead"
        for tasks in ctx.by_area.values():
            if len(tasks) < 2:
                continue
            items = sorted(
                (lst[2 * k + 1] + d2[k], values[2 * k + 1], d2[k], 2 * k + 1) for k in tasks
            )
            if not self._ef_scan(items, updates):
                return "dead"
        raised = False
        for node in sorted(updates):
            release = updates[node]
            if release > ctx.values[node]:
                if release > ctx.lst[node]:
                    return "dead"
                trail.append((node, ctx.values[node]))
                ctx.values[node] = release
                if not self._relax_from(ctx, node, trail):
                    return "dead"
                raised = True
        return "changed" if raised else "stable"

    @staticmethod
    def _ef_scan(items: list[tuple[int, int, int, int]], updates: dict[int, int]) -> bool:
        # items sorted by deadline ascending: (deadline, release, length, node).
        m = len(items)
        rels: list[int] = []  # prefix members, kept sorted by release
        lens: list[int] = []
        for idx in range(m):
            dl, r, p, _node = items[idx]
            lo, hi = 0, len(rels)
            while lo < hi:
                mid = (lo + hi) // 2
                if rels[mid] < r:
                    lo = mid + 1
                else:
                    hi = mid
            rels.insert(lo, r)
            lens.insert(lo, p)
            k = len(rels)
            suffix = [0] * (k + 1)
            for s in range(k - 1, -1, -1):
                suffix[s] = suffix[s + 1] + lens[s]
            env = [rels[s] + suffix[s] for s in range(k)]
            ect = max(env)
            if ect > dl:
                return False  # the set alone overloads its deadline window
            pmax = [0] * k
            acc = env[0]
            for s in range(k):
                if env[s] > acc:
                    acc = env[s]
                pmax[s] = acc
            smax = [0] * k
            acc = env[k - 1]
            for s in range(k - 1, -1, -1):
                if env[s] > acc:
                    acc = env[s]
                smax[s] = acc
            for jdx in range(idx + 1, m):
                _dl2, r2, p2, node2 = items[jdx]
                lo, hi = 0, k
                while lo < hi:
                    mid = (lo + hi) // 2
                    if rels[mid] < r2:
                        lo = mid + 1
                    else:
                        hi = mid
                q = lo
                ect_c = r2 + p2 + suffix[q]
                if q > 0 and pmax[q - 1] + p2 > ect_c:
                    ect_c = pmax[q - 1] + p2
                if q < k and smax[q] > ect_c:
                    ect_c = smax[q]
                if ect_c > dl:
                    prev = updates.get(node2)
                    if prev is None or ect > prev:
                        updates[node2] = ect
        return True

    # An ordering decision (a before b) is one directed edge:
    #   actor resource: s1_b >= s2_a + d2_a + d3_a   (spans disjoint)
    #   shared area:    s2_b >= s2_a + d2_a          (exec intervals disjoint)

    def _order_edge(self, ctx: "_SeqContext", kind: str, a: int, b: int) -> tuple[int, int, int]:
        if kind == "actor":
            return (2 * a + 1, 2 * b, ctx.dd23[a])
        return (2 * a + 1, 2 * b + 1, ctx.d2[a])

    def _saturate(
        self,
        ctx: "_SeqContext",
        undecided: list[tuple[str, int, int]],
        trail: list[tuple[int, int]],
        trail_hi: list[tuple[int, int]],
        added: list[tuple[int, int]],
        keys: list[tuple[int, int]],
    ) -> bool:
        """Pairwise disjunctive propagation: force orders whose reverse is dead.

        A direction 'a before b' is dead when the earliest slot it leaves
        for b lies past b's latest start.
        """
        values, lst, dd23, d2 = ctx.values, ctx.lst, ctx.dd23, ctx.d2
        decided = ctx.decided
        changed = True
        while changed:
            changed = False
            for p in undecided:
                kind, i, j = p
                if (i, j) in decided:
                    continue
                if kind == "actor":
                    ni, nj = 2 * i, 2 * j
                    after_i = values[ni + 1] + dd23[i]  # where j could start if i first
                    after_j = values[nj + 1] + dd23[j]
                else:
                    ni, nj = 2 * i + 1, 2 * j + 1
                    after_i = values[ni] + d2[i]
                    after_j = values[nj] + d2[j]
                ij_ok = after_i <= lst[nj]
                ji_ok = after_j <= lst[ni]
                if ij_ok:
                    if ji_ok:
                        continue
                    a, b = i, j
                elif ji_ok:
                    a, b = j, i
                else:
                    return False
                if not self._push_order(ctx, kind, a, b, (i, j), trail, trail_hi, added, keys):
                    return False
                changed = True
            if changed:
                undecided[:] = [p for p in undecided if (p[1], p[2]) not in decided]
        return True

    def _push_order(
        self,
        ctx: "_SeqContext",
        kind: str,
        a: int,
        b: int,
        key: tuple[int, int],
        trail: list[tuple[int, int]],
        trail_hi: list[tuple[int, int]],
        added: list[tuple[int, int]],
        keys: list[tuple[int, int]],
    ) -> bool:
        src, dst, w = self._order_edge(ctx, kind, a, b)
        ctx.adj[src].append((dst, w))
        ctx.radj[dst].append((src, w))
        ctx.decided.add(key)
        added.append((src, dst))
        keys.append(key)
        cand = ctx.values[src] + w
        if cand > ctx.values[dst]:
            if cand > ctx.lst[dst]:
                return False
            trail.append((dst, ctx.values[dst]))
            ctx.values[dst] = cand
            if not self._relax_from(ctx, dst, trail):
                return False
        back = ctx.lst[dst] - w
        if back < ctx.lst[src]:
            if back < ctx.values[src]:
                return False
            trail_hi.append((src, ctx.lst[src]))
            ctx.lst[src] = back
            if not self._relax_back(ctx, src, trail_hi):
                return False
        return True

    def _select_conflict(
        self, ctx: "_SeqContext", undecided: list[tuple[str, int, int]]
    ) -> tuple[str, int, int, bool] | None:
        """Pick the chronologically first overlapping pair.

        Resolving conflicts left to right builds schedules the way a
        dispatcher would, which finds tight schedules quickly; ties go to
        the pair where both orders hurt most.
        """
        values, dd23, d2 = ctx.values, ctx.dd23, ctx.d2
        best = None
        best_key: tuple[int, int] | None = None
        for (kind, i, j) in undecided:
            if kind == "actor":
                si, sj = values[2 * i], values[2 * j]
                ei = values[2 * i + 1] + dd23[i]
                ej = values[2 * j + 1] + dd23[j]
                if si >= ej or sj >= ei:
                    continue
                d_ij = ei - sj  # push on j if i goes first
                d_ji = ej - si
            else:
                si, sj = values[2 * i + 1], values[2 * j + 1]
                if si >= sj + d2[j] or sj >= si + d2[i]:
                    continue
                d_ij = si + d2[i] - sj
                d_ji = sj + d2[j] - si
            overlap_at = si if si > sj else sj
            score = d_ij if d_ij < d_ji else d_ji
            key = (overlap_at, -score)
            if best_key is None or key < best_key:
                best_key = key
                best = (kind, i, j, d_ij <= d_ji)
        return best

    def _seq_dfs(self, ctx: "_SeqContext") -> None:
        self.nodes += 1
        if self.nodes % 512 == 0:
            self._check_deadline()

        decided = ctx.decided
        undecided = [p for p in ctx.pairs if (p[1], p[2]) not in decided]
        trail: list[tuple[int, int]] = []
        trail_hi: list[tuple[int, int]] = []
        added: list[tuple[int, int]] = []
        added_keys: list[tuple[int, int]] = []

        while True:
            ok = self._saturate(ctx, undecided, trail, trail_hi, added, added_keys)
            if not ok:
                break
            bound = self._node_bound(ctx)
            if self.best_obj is not None and bound >= self.best_obj:
                ok = False
                break
            state = self._edge_find(ctx, trail)
            if state == "dead":
                ok = False
                break
            if state == "stable":
                break
        if ok:
            conflict = self._select_conflict(ctx, undecided)
            if conflict is None:
                makespan = max(ctx.values[2 * k + 1] + ctx.dd23[k] for k in range(self.n))
                self._record_solution(ctx, makespan)
            else:
                kind, i, j, ij_first = conflict
                ij_first = ctx.pref.get((i, j), ij_first)
                order = [(i, j), (j, i)] if ij_first else [(j, i), (i, j)]
                for (a, b) in order:
                    child_trail: list[tuple[int, int]] = []
                    child_hi: list[tuple[int, int]] = []
                    child_added: list[tuple[int, int]] = []
                    child_keys: list[tuple[int, int]] = []
                    if self._push_order(
                        ctx, kind, a, b, (i, j), child_trail, child_hi, child_added, child_keys
                    ):
                        self._seq_dfs(ctx)
                    for (var, old) in reversed(child_trail):
                        ctx.values[var] = old
                    for (var, old) in reversed(child_hi):
                        ctx.lst[var] = old
                    for (src, dst) in reversed(child_added):
                        ctx.adj[src].pop()
                        ctx.radj[dst].pop()
                    for key in child_keys:
                        ctx.decided.discard(key)

        for (var, old) in reversed(trail):
            ctx.values[var] = old
        for (var, old) in reversed(trail_hi):
            ctx.lst[var] = old
        for (src, dst) in reversed(added):
            ctx.adj[src].pop()
            ctx.radj[dst].pop()
        for key in added_keys:
            ctx.decided.discard(key)

    def _record_solution(self, ctx: "_SeqContext", makespan: int) -> None:
        if self.best_obj is not None and makespan >= self.best_obj:
            return
        values = ctx.values
        assignment = {self.tasks[k].id: ctx.actor_of[k] for k in range(self.n)}
        phase_start: dict[tuple[str, Phase], int] = {}
        phase_end: dict[tuple[str, Phase], int] = {}
        for k in range(self.n):
            tid = self.tasks[k].id
            s1, s2 = values[2 * k], values[2 * k + 1]
            e2 = s2 + ctx.d2[k]
            e3 = e2 + ctx.d3[k]
            phase_start[(tid, Phase.PREP)] = s1
            phase_end[(tid, Phase.PREP)] = s2
            phase_start[(tid, Phase.EXEC)] = s2
            phase_end[(tid, Phase.EXEC)] = e2
            phase_start[(tid, Phase.DONE)] = e2
            phase_end[(tid, Phase.DONE)] = e3
        self.best_obj = makespan
        self.best_schedule = Schedule(
            assignment=assignment,
            phase_start=phase_start,
            phase_end=phase_end,
            makespan=makespan,
        )
        if self.stop_first:
            raise _FoundSolution()


@dataclass
class _SeqContext:
    values: list[int]  # earliest starts (least fixpoint)
    lst: list[int]  # latest starts within the active makespan level
    adj: list[list[tuple[int, int]]]
    radj: list[list[tuple[int, int]]]
    d1: list[int]
    d2: list[int]
    d3: list[int]
    dd23: list[int]
    span: list[int]
    tail: list[int]
    actor_of: list[str]
    pairs: list[tuple[str, int, int]]
    by_actor: dict[str, list[int]]
    by_area: dict[str, list[int]]
    decided: set[tuple[int, int]]
    pref: dict[tuple[int, int], bool]


class _Timeout(Exception):
    pass


class _FoundSolution(Exception):
    pass
