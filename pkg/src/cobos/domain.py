"""Core vocabulary: jobs, tasks, phases, actors, schedules, observations.

Everything here is a plain value type. Instances are never mutated after
construction, so they can be shared freely between the solver, the
simulation and the service.

Time is measured in integer ticks (1 tick = 1 simulated second).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum, IntEnum


class Phase(IntEnum):
    """The three phases of a task. Ordering PREP < EXEC < DONE is load-bearing."""

    PREP = 1
    EXEC = 2
    DONE = 3


PHASES = (Phase.PREP, Phase.EXEC, Phase.DONE)

PHASE_NAMES = {Phase.PREP: "prep", Phase.EXEC: "exec", Phase.DONE: "done"}
PHASE_BY_NAME = {v: k for k, v in PHASE_NAMES.items()}


class ActorKind(str, Enum):
    ROBOT = "robot"
    HUMAN = "human"


class TaskState(str, Enum):
    """Lifecycle of a task as seen in observations. COMPLETED is absorbing."""

    UNAVAILABLE = "unavailable"
    AVAILABLE = "available"
    IN_PROGRESS = "in_progress"
    COMPLETED = "completed"


class ActorState(str, Enum):
    IDLE = "idle"
    PREPARING = "preparing"
    WAITING = "waiting"
    EXECUTING = "executing"
    COMPLETING = "completing"


@dataclass(frozen=True)
class DurationDist:
    """Bimodal duration model: a normal mode and a slower failure mode.

    Sampled values are rounded to integer ticks and clamped to >= 1.
    """

    normal_mean: float
    normal_std: float
    failure_mean: float
    failure_std: float
    failure_probability: float

    def validate(self) -> list[str]:
        problems = []
        if self.normal_mean <= 0:
            problems.append("normal_mean must be positive")
        if self.normal_std < 0 or self.failure_std < 0:
            problems.append("std must be non-negative")
        if self.failure_mean < self.normal_mean:
            problems.append("failure_mean must be >= normal_mean")
        if not 0.0 <= self.failure_probability <= 1.0:
            problems.append("failure_probability must be in [0, 1]")
        return problems

    @staticmethod
    def default_for(estimate: int) -> DurationDist:
        # Defaults: failures double the duration; spreads scale with the mean.
        m = float(estimate)
        return DurationDist(
            normal_mean=m,
            normal_std=0.1 * m,
            failure_mean=2.0 * m,
            failure_std=0.2 * m,
            failure_probability=0.1,
        )


@dataclass(frozen=True)
class Task:
    """One sub-task: three phases, duration estimates, per-actor uncertainty.

    A task with one eligible actor is "fixed"; with several it is
    "allocatable" and its assignment is a scheduling decision.
    """

    id: str
    eligible_actors: tuple[str, ...]
    duration_estimate: dict[Phase, int]
    duration_distribution: dict[tuple[Phase, str], DurationDist]
    rejection_probability: dict[str, float]
    shared_area: str | None = None

    @property
    def allocatable(self) -> bool:
        return len(self.eligible_actors) > 1

    @property
    def total_estimate(self) -> int:
        return sum(self.duration_estimate[p] for p in PHASES)

    def __hash__(self) -> int:
        return hash(self.id)


@dataclass(frozen=True)
class ActorSpec:
    id: str
    kind: ActorKind

    @property
    def is_robot(self) -> bool:
        return self.kind is ActorKind.ROBOT


@dataclass(frozen=True)
class Job:
    """A decomposable job: tasks, dependency DAG, actors, shared areas.

    An edge (i, j) means task i depends on task j: i's execution phase may
    only start after j's execution phase has ended.
    """

    tasks: tuple[Task, ...]
    edges: tuple[tuple[str, str], ...]
    actors: tuple[ActorSpec, ...]
    shared_areas: tuple[str, ...]
    horizon: int

    def task_map(self) -> dict[str, Task]:
        return {t.id: t for t in self.tasks}

    def actor_map(self) -> dict[str, ActorSpec]:
        return {a.id: a for a in self.actors}

    def dependencies_of(self, task_id: str) -> list[str]:
        return [j for (i, j) in self.edges if i == task_id]

    def dependents_of(self, task_id: str) -> list[str]:
        return [i for (i, j) in self.edges if j == task_id]

    def total_estimate(self) -> int:
        return sum(t.total_estimate for t in self.tasks)


@dataclass(frozen=True)
class Schedule:
    """A complete assignment plus phase interval times and the makespan."""

    assignment: dict[str, str]
    phase_start: dict[tuple[str, Phase], int]
    phase_end: dict[tuple[str, Phase], int]
    makespan: int

    def span(self, task_id: str) -> tuple[int, int]:
        return self.phase_start[(task_id, Phase.PREP)], self.phase_end[(task_id, Phase.DONE)]


@dataclass(frozen=True)
class Observation:
    """Per-tick snapshot handed to controllers.

    ``phase_completions`` lists only completions newly observed this tick;
    ``rejected`` is cumulative and never shrinks.
    """

    now: int
    task_states: dict[str, TaskState]
    task_phases: dict[str, Phase]
    actor_states: dict[str, ActorState]
    rejected: frozenset[tuple[str, str]]
    phase_completions: tuple[tuple[str, Phase, int], ...]


@dataclass(frozen=True)
class Violation:
    kind: str
    subject: str
    detail: str = ""

    def __str__(self) -> str:
        return f"{self.kind}({self.subject})" + (f": {self.detail}" if self.detail else "")


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    def add(self, kind: str, subject: str, detail: str = "") -> None:
        self.violations.append(Violation(kind, subject, detail))

    @property
    def ok(self) -> bool:
        return not self.violations

    def has(self, kind: str) -> bool:
        return any(v.kind == kind for v in self.violations)

    def __str__(self) -> str:
        return "valid" if self.ok else "; ".join(str(v) for v in self.violations)


class CycleDetected(Exception):
    def __init__(self, members: list[str]):
        super().__init__(f"dependency cycle through {members}")
        self.members = members


class InvalidJob(Exception):
    def __init__(self, report: ValidationReport):
        super().__init__(str(report))
        self.report = report


def validate_job(job: Job) -> ValidationReport:
    """Check every Job invariant. The report is the result, not an error channel."""
    report = ValidationReport()
    task_ids = [t.id for t in job.tasks]
    seen: set[str] = set()
    for tid in task_ids:
        if tid in seen:
            report.add("DuplicateTask", tid)
        seen.add(tid)
    actor_ids = [a.id for a in job.actors]
    if len(set(actor_ids)) != len(actor_ids):
        report.add("DuplicateActor", ",".join(actor_ids))
    if not job.actors:
        report.add("NoActors", "-")
    actor_by_id = {a.id: a for a in job.actors}
    areas = set(job.shared_areas)

    for t in job.tasks:
        if not t.eligible_actors:
            report.add("NoEligibleActors", t.id)
        for a in t.eligible_actors:
            if a not in actor_by_id:
                report.add("UnknownActor", a, f"referenced by task {t.id}")
        if t.shared_area is not None and t.shared_area not in areas:
            report.add("UnknownArea", t.shared_area, f"referenced by task {t.id}")
        for p in PHASES:
            est = t.duration_estimate.get(p)
            if est is None or est < 1:
                report.add("BadEstimate", t.id, f"phase {p.name} estimate must be >= 1")
        for a in t.eligible_actors:
            prob = t.rejection_probability.get(a, 0.0)
            if not 0.0 <= prob <= 1.0:
                report.add("BadRejectionProbability", t.id, f"{a}: {prob}")
            elif prob > 0.0 and a in actor_by_id and actor_by_id[a].is_robot:
                report.add("BadRejectionProbability", t.id, f"robot {a} must have probability 0")
            for p in PHASES:
                dist = t.duration_distribution.get((p, a))
                if dist is None:
                    report.add("MissingDistribution", t.id, f"phase {p.name}, actor {a}")
                else:
                    for problem in dist.validate():
                        report.add("BadDistribution", t.id, f"phase {p.name}, actor {a}: {problem}")

    known = set(task_ids)
    for (i, j) in job.edges:
        for end in (i, j):
            if end not in known:
                report.add("UnknownTask", end, f"edge ({i}, {j})")
        if i == j:
            report.add("SelfDependency", i)

    cycle = _find_cycle(task_ids, job.edges)
    if cycle:
        report.add("CycleDetected", ",".join(cycle))

    if job.horizon < job.total_estimate():
        report.add("HorizonTooSmall", str(job.horizon), f"needs >= {job.total_estimate()}")
    return report


def _find_cycle(task_ids: list[str], edges: tuple[tuple[str, str], ...]) -> list[str] | None:
    # Iterative DFS over the "depends on" relation; returns one cycle if any.
    adj: dict[str, list[str]] = {t: [] for t in task_ids}
    for (i, j) in edges:
        if i in adj and j in adj:
            adj[i].append(j)
    color: dict[str, int] = {t: 0 for t in task_ids}  # 0 new, 1 on stack, 2 done
    parent: dict[str, str] = {}
    for root in task_ids:
        if color[root] != 0:
            continue
        stack = [(root, iter(adj[root]))]
        color[root] = 1
        while stack:
            node, it = stack[-1]
            advanced = False
            for nxt in it:
                if color[nxt] == 0:
                    color[nxt] = 1
                    parent[nxt] = node
                    stack.append((nxt, iter(adj[nxt])))
                    advanced = True
                    break
                if color[nxt] == 1:
                    cycle = [nxt, node]
                    cur = node
                    while cur != nxt and cur in parent:
                        cur = parent[cur]
                        if cur != nxt:
                            cycle.append(cur)
                    return sorted(set(cycle))
            if not advanced:
                color[node] = 2
                stack.pop()
    return None


def topological_layers(job: Job) -> list[set[str]]:
    """Group tasks by longest dependency chain length.

    Layer 0 holds tasks with no dependencies; a task sits one layer above
    its deepest dependency. Raises CycleDetected on cyclic input.
    """
    task_ids = [t.id for t in job.tasks]
    cycle = _find_cycle(task_ids, job.edges)
    if cycle:
        raise CycleDetected(cycle)
    depth: dict[str, int] = {}

    deps: dict[str, list[str]] = {t: [] for t in task_ids}
    for (i, j) in job.edges:
        deps[i].append(j)

    def depth_of(tid: str) -> int:
        if tid in depth:
            return depth[tid]
        d = 0 if not deps[tid] else 1 + max(depth_of(j) for j in deps[tid])
        depth[tid] = d
        return d

    for tid in task_ids:
        depth_of(tid)
    n_layers = 1 + max(depth.values(), default=0)
    layers: list[set[str]] = [set() for _ in range(n_layers)]
    for tid, d in depth.items():
        layers[d].add(tid)
    return layers


def check_schedule(job: Job, schedule: Schedule) -> ValidationReport:
    """Verify every Schedule invariant against the job.

    Durations are taken from the schedule itself (end - start), so the same
    checker validates planned schedules and executed traces; only
    consistency, exclusivity, precedence and contiguity are enforced.
    """
    report = ValidationReport()
    tasks = job.task_map()
    actor_ids = {a.id for a in job.actors}

    for tid in schedule.assignment:
        if tid not in tasks:
            report.add("UnknownTask", tid, "assignment references task not in job")
    for t in job.tasks:
        actor = schedule.assignment.get(t.id)
        if actor is None:
            report.add("UnassignedTask", t.id)
            continue
        if actor not in actor_ids:
            report.add("UnknownActor", actor, f"assigned to {t.id}")
        elif actor not in t.eligible_actors:
            report.add("IneligibleActor", t.id, f"assigned to {actor}")

    def interval(tid: str, p: Phase) -> tuple[int, int] | None:
        s = schedule.phase_start.get((tid, p))
        e = schedule.phase_end.get((tid, p))
        if s is None or e is None:
            report.add("MissingInterval", tid, f"phase {p.name}")
            return None
        return (s, e)

    spans: dict[str, tuple[int, int]] = {}
    for t in job.tasks:
        if t.id not in schedule.assignment:
            continue
        ivs = [interval(t.id, p) for p in PHASES]
        if any(iv is None for iv in ivs):
            continue
        for p, (s, e) in zip(PHASES, ivs):
            if e - s < 1:
                report.add("BadDuration", t.id, f"phase {p.name}: [{s}, {e})")
        if ivs[0][1] != ivs[1][0] or ivs[1][1] != ivs[2][0]:
            report.add("ContiguityBroken", t.id)
        spans[t.id] = (ivs[0][0], ivs[2][1])

    for (i, j) in job.edges:
        si = schedule.phase_start.get((i, Phase.EXEC))
        ej = schedule.phase_end.get((j, Phase.EXEC))
        if si is not None and ej is not None and si < ej:
            report.add("PrecedenceViolated", f"{i}<-{j}", f"exec start {si} < dep exec end {ej}")

    by_actor: dict[str, list[str]] = {}
    for tid, actor in schedule.assignment.items():
        by_actor.setdefault(actor, []).append(tid)
    for actor, tids in sorted(by_actor.items()):
        tids = [t for t in tids if t in spans]
        tids.sort(key=lambda t: spans[t][0])
        for a, b in zip(tids, tids[1:]):
            if spans[a][1] > spans[b][0]:
                report.add("ActorOverlap", actor, f"{a} and {b}")

    by_area: dict[str, list[str]] = {}
    for t in job.tasks:
        if t.shared_area is not None and t.id in spans:
            by_area.setdefault(t.shared_area, []).append(t.id)
    for area, tids in sorted(by_area.items()):
        execs = sorted(
            ((schedule.phase_start[(t, Phase.EXEC)], schedule.phase_end[(t, Phase.EXEC)], t) for t in tids)
        )
        for (s1, e1, t1), (s2, e2, t2) in zip(execs, execs[1:]):
            if e1 > s2:
                report.add("SharedAreaOverlap", area, f"{t1} and {t2}")

    if spans:
        true_makespan = max(schedule.phase_end[(t, Phase.DONE)] for t in spans)
        if schedule.makespan != true_makespan:
            report.add("BadMakespan", str(schedule.makespan), f"max completion end is {true_makespan}")
    return report


# ---------------------------------------------------------------------------
# Job file format (JSON). Field names are part of the external contract;
# unknown fields are rejected.
# ---------------------------------------------------------------------------

_TASK_KEYS = {"id", "eligible_actors", "estimates", "dist", "reject_prob", "shared_area"}
_JOB_KEYS = {"tasks", "edges", "actors", "horizon"}
_DIST_KEYS = {"mean", "std", "failure_mean", "failure_std", "failure_prob"}


class JobFormatError(Exception):
    pass


def _reject_unknown(obj: dict, allowed: set[str], where: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise JobFormatError(f"unknown field(s) {sorted(unknown)} in {where}")


def _dist_to_json(d: DurationDist) -> dict:
    return {
        "mean": d.normal_mean,
        "std": d.normal_std,
        "failure_mean": d.failure_mean,
        "failure_std": d.failure_std,
        "failure_prob": d.failure_probability,
    }


def _dist_from_json(obj: dict, where: str) -> DurationDist:
    _reject_unknown(obj, _DIST_KEYS, where)
    try:
        return DurationDist(
            normal_mean=float(obj["mean"]),
            normal_std=float(obj["std"]),
            failure_mean=float(obj["failure_mean"]),
            failure_std=float(obj["failure_std"]),
            failure_probability=float(obj["failure_prob"]),
        )
    except KeyError as exc:
        raise JobFormatError(f"missing distribution field {exc} in {where}") from None


def job_to_json(job: Job) -> dict:
    """Emit the canonical job file structure."""
    tasks = []
    for t in sorted(job.tasks, key=lambda x: x.id):
        entry: dict = {
            "id": t.id,
            "eligible_actors": sorted(t.eligible_actors),
            "estimates": {PHASE_NAMES[p]: t.duration_estimate[p] for p in PHASES},
        }
        dist: dict = {}
        for p in PHASES:
            per_actor = {a: t.duration_distribution[(p, a)] for a in t.eligible_actors if (p, a) in t.duration_distribution}
            if not per_actor:
                continue
            values = list(per_actor.values())
            if all(v == values[0] for v in values):
                dist[PHASE_NAMES[p]] = _dist_to_json(values[0])
            else:
                dist[PHASE_NAMES[p]] = {a: _dist_to_json(v) for a, v in sorted(per_actor.items())}
        if dist:
            entry["dist"] = dist
        rejects = {a: p for a, p in t.rejection_probability.items() if p > 0.0}
        if rejects:
            # All positive rejection probabilities are human-side and equal by
            # construction; emit the scalar form.
            entry["reject_prob"] = next(iter(sorted(rejects.items())))[1]
        if t.shared_area is not None:
            entry["shared_area"] = t.shared_area
        tasks.append(entry)
    return {
        "tasks": tasks,
        "edges": [[i, j] for (i, j) in sorted(job.edges)],
        "actors": [{"id": a.id, "kind": a.kind.value} for a in job.actors],
        "horizon": job.horizon,
    }


def job_from_json(obj: dict) -> Job:
    """Parse the job file structure; raises JobFormatError on malformed input."""
    if not isinstance(obj, dict):
        raise JobFormatError("job file must be a JSON object")
    _reject_unknown(obj, _JOB_KEYS, "job")
    for key in _JOB_KEYS:
        if key not in obj:
            raise JobFormatError(f"missing field '{key}' in job")

    actors = []
    for a in obj["actors"]:
        _reject_unknown(a, {"id", "kind"}, f"actor {a.get('id')}")
        try:
            kind = ActorKind(a["kind"])
        except ValueError:
            raise JobFormatError(f"unknown actor kind {a.get('kind')!r}") from None
        actors.append(ActorSpec(id=str(a["id"]), kind=kind))
    actor_kinds = {a.id: a.kind for a in actors}

    tasks = []
    areas: set[str] = set()
    for t in obj["tasks"]:
        _reject_unknown(t, _TASK_KEYS, f"task {t.get('id')}")
        tid = str(t["id"])
        eligible = tuple(str(a) for a in t["eligible_actors"])
        est_obj = t["estimates"]
        _reject_unknown(est_obj, set(PHASE_BY_NAME), f"estimates of task {tid}")
        estimates = {}
        for name, phase in PHASE_BY_NAME.items():
            if name not in est_obj:
                raise JobFormatError(f"missing estimate '{name}' in task {tid}")
            estimates[phase] = int(est_obj[name])

        dists: dict[tuple[Phase, str], DurationDist] = {}
        dist_obj = t.get("dist", {})
        _reject_unknown(dist_obj, set(PHASE_BY_NAME), f"dist of task {tid}")
        for name, phase in PHASE_BY_NAME.items():
            spec = dist_obj.get(name)
            if spec is None:
                for a in eligible:
                    dists[(phase, a)] = DurationDist.default_for(estimates[phase])
            elif set(spec) <= _DIST_KEYS:
                shared = _dist_from_json(spec, f"task {tid} phase {name}")
                for a in eligible:
                    dists[(phase, a)] = shared
            else:
                for a, sub in spec.items():
                    if a not in eligible:
                        raise JobFormatError(f"dist for non-eligible actor {a!r} in task {tid}")
                    dists[(phase, a)] = _dist_from_json(sub, f"task {tid} phase {name} actor {a}")
                for a in eligible:
                    if (phase, a) not in dists:
                        raise JobFormatError(f"missing dist for actor {a!r} in task {tid} phase {name}")

        reject_prob = float(t.get("reject_prob", 0.0))
        rejection = {
            a: (reject_prob if actor_kinds.get(a) is ActorKind.HUMAN else 0.0) for a in eligible
        }
        area = t.get("shared_area")
        if area is not None:
            area = str(area)
            areas.add(area)
        tasks.append(
            Task(
                id=tid,
                eligible_actors=eligible,
                duration_estimate=estimates,
                duration_distribution=dists,
                rejection_probability=rejection,
                shared_area=area,
            )
        )

    edges = []
    for e in obj["edges"]:
        if not isinstance(e, list) or len(e) != 2:
            raise JobFormatError(f"edge must be a pair, got {e!r}")
        edges.append((str(e[0]), str(e[1])))

    return Job(
        tasks=tuple(tasks),
        edges=tuple(edges),
        actors=tuple(actors),
        shared_areas=tuple(sorted(areas)),
        horizon=int(obj["horizon"]),
    )


def dump_job(job: Job) -> str:
    return json.dumps(job_to_json(job), indent=2, sort_keys=False)


def load_job(text: str) -> Job:
    return job_from_json(json.loads(text))
