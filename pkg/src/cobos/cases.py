"""Generators for the seven benchmark case classes.

The ladder of difficulty:

  1  fixed tasks per actor, no dependencies (ND), shared-area contention
  2  case 1 plus freely allocatable, human-rejectable tasks (CD)
  3  per-structure dependency chains crossing actors (XD)
  4  case 3 plus allocatable tasks (CD)
  5  larger dense DAG, fixed eligibility (CD)
  6  case 5 plus allocatable tasks (CD)
  7  seeded random layered DAG, random eligibility and allocation (CD)

Sizes are desk-scale defaults chosen to keep exact solving fast; every
knob is on CaseSpec. Jobs are deterministic in (case, seed).
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from enum import Enum

from .domain import (
    ActorKind,
    ActorSpec,
    DurationDist,
    Job,
    Phase,
    PHASES,
    Task,
    validate_job,
)

AREA = "assembly"
ROBOT = "robot"
HUMAN = "human"


class Taxonomy(str, Enum):
    ND = "ND"  # no dependencies
    XD = "XD"  # cross-schedule dependencies
    CD = "CD"  # complex dependencies


CASE_TAXONOMY = {1: Taxonomy.ND, 2: Taxonomy.CD, 3: Taxonomy.XD, 4: Taxonomy.CD,
                 5: Taxonomy.CD, 6: Taxonomy.CD, 7: Taxonomy.CD}


class InvalidSpec(Exception):
    pass


@dataclass(frozen=True)
class CaseSpec:
    case_id: int
    seed: int = 0
    tasks_per_actor: int = 4          # cases 1/2
    structures: int = 3               # cases 3/4
    chain_length: int = 3             # cases 3/4
    dag_tasks: int = 16               # cases 5/6
    dag_depth: int = 4                # cases 5/6
    random_tasks: tuple[int, int] = (18, 22)  # case 7 size range
    random_depth: int = 5
    allocatable_fraction: float = 0.5
    rejection_range: tuple[float, float] = (0.1, 0.4)
    area_fraction: float = 0.5        # how many tasks pass through the area

    @property
    def taxonomy(self) -> Taxonomy:
        return CASE_TAXONOMY[self.case_id]

    def validate(self) -> None:
        if self.case_id not in CASE_TAXONOMY:
            raise InvalidSpec(f"unknown case id {self.case_id}")
        if not 0.0 <= self.allocatable_fraction <= 1.0:
            raise InvalidSpec("allocatable_fraction must be in [0, 1]")
        if self.tasks_per_actor < 1 or self.dag_tasks < 2 or self.structures < 1:
            raise InvalidSpec("sizes must be positive")


def _actors() -> tuple[ActorSpec, ActorSpec]:
    return (ActorSpec(ROBOT, ActorKind.ROBOT), ActorSpec(HUMAN, ActorKind.HUMAN))


def _durations(rng: random.Random) -> dict[Phase, int]:
    return {
        Phase.PREP: rng.randint(2, 5),
        Phase.EXEC: rng.randint(3, 8),
        Phase.DONE: rng.randint(1, 3),
    }


def _make_task(
    rng: random.Random,
    tid: str,
    eligible: tuple[str, ...],
    estimates: dict[Phase, int],
    area: str | None,
    reject: float,
) -> Task:
    dists = {
        (p, a): DurationDist.default_for(estimates[p]) for p in PHASES for a in eligible
    }
    rejection = {a: (reject if a == HUMAN else 0.0) for a in eligible}
    return Task(
        id=tid,
        eligible_actors=eligible,
        duration_estimate=estimates,
        duration_distribution=dists,
        rejection_probability=rejection,
        shared_area=area,
    )


def _finish(tasks: list[Task], edges: list[tuple[str, str]]) -> Job:
    total = sum(t.total_estimate for t in tasks)
    job = Job(
        tasks=tuple(tasks),
        edges=tuple(edges),
        actors=_actors(),
        shared_areas=(AREA,) if any(t.shared_area for t in tasks) else (),
        horizon=6 * total,
    )
    report = validate_job(job)
    if not report.ok:  # generator bug, not user input
        raise InvalidSpec(str(report))
    return job


def _alloc_flags(rng: random.Random, n: int, fraction: float) -> list[bool]:
    """Deterministically mark floor(n*fraction) tasks allocatable, >=1 if asked."""
    count = int(round(n * fraction))
    if fraction > 0.0:
        count = max(1, count)
    flags = [i < count for i in range(n)]
    rng.shuffle(flags)
    return flags


def _pick_area(rng: random.Random, fraction: float) -> str | None:
    return AREA if rng.random() < fraction else None


def _pairs_case12(spec: CaseSpec, rng: random.Random, allocatable: bool) -> Job:
    n = 2 * spec.tasks_per_actor
    flags = _alloc_flags(rng, n, spec.allocatable_fraction if allocatable else 0.0)
    tasks = []
    for k in range(n):
        owner = ROBOT if k % 2 == 0 else HUMAN
        eligible = (ROBOT, HUMAN) if flags[k] else (owner,)
        reject = rng.uniform(*spec.rejection_range) if flags[k] and allocatable else 0.0
        tasks.append(
            _make_task(
                rng,
                f"t{k:02d}",
                eligible,
                _durations(rng),
                _pick_area(rng, spec.area_fraction),
                round(reject, 3),
            )
        )
    return _finish(tasks, [])


def _chains_case34(spec: CaseSpec, rng: random.Random, allocatable: bool) -> Job:
    tasks: list[Task] = []
    edges: list[tuple[str, str]] = []
    n = spec.structures * spec.chain_length
    flags = _alloc_flags(rng, n, spec.allocatable_fraction if allocatable else 0.0)
    k = 0
    for s in range(spec.structures):
        prev: str | None = None
        for step in range(spec.chain_length):
            tid = f"s{s}c{step}"
            # Alternate owners along the chain so structures cross actors.
            owner = ROBOT if (s + step) % 2 == 0 else HUMAN
            eligible = (ROBOT, HUMAN) if flags[k] else (owner,)
            reject = rng.uniform(*spec.rejection_range) if flags[k] and allocatable else 0.0
            tasks.append(
                _make_task(
                    rng,
                    tid,
                    eligible,
                    _durations(rng),
                    _pick_area(rng, spec.area_fraction),
                    round(reject, 3),
                )
            )
            if prev is not None:
                edges.append((tid, prev))
            prev = tid
            k += 1
    return _finish(tasks, edges)


def _dag_case56(spec: CaseSpec, rng: random.Random, allocatable: bool) -> Job:
    n = spec.dag_tasks
    depth = spec.dag_depth
    layer_of = [min(depth - 1, i * depth // n) for i in range(n)]
    flags = _alloc_flags(rng, n, spec.allocatable_fraction if allocatable else 0.0)
    tasks = []
    names = [f"t{k:02d}" for k in range(n)]
    for k in range(n):
        owner = ROBOT if k % 2 == 0 else HUMAN
        eligible = (ROBOT, HUMAN) if flags[k] else (owner,)
        reject = rng.uniform(*spec.rejection_range) if flags[k] and allocatable else 0.0
        tasks.append(
            _make_task(
                rng,
                names[k],
                eligible,
                _durations(rng),
                _pick_area(rng, spec.area_fraction),
                round(reject, 3),
            )
        )
    edges = []
    for k in range(n):
        if layer_of[k] == 0:
            continue
        prev_layer = [m for m in range(n) if layer_of[m] == layer_of[k] - 1]
        deps = rng.sample(prev_layer, k=min(len(prev_layer), rng.randint(1, 3)))
        for d in sorted(deps):
            edges.append((names[k], names[d]))
    return _finish(tasks, edges)


def _random_case7(spec: CaseSpec, rng: random.Random) -> Job:
    n = rng.randint(*spec.random_tasks)
    depth = min(spec.random_depth, n)
    layer_of = [0] * n
    for k in range(n):
        layer_of[k] = rng.randrange(depth)
    # Layer 0 must be non-empty; renumber layers compactly.
    used = sorted(set(layer_of))
    remap = {layer: i for i, layer in enumerate(used)}
    layer_of = [remap[x] for x in layer_of]
    flags = _alloc_flags(rng, n, spec.allocatable_fraction)
    names = [f"t{k:02d}" for k in range(n)]
    tasks = []
    for k in range(n):
        if flags[k]:
            eligible: tuple[str, ...] = (ROBOT, HUMAN)
        else:
            eligible = (rng.choice([ROBOT, HUMAN]),)
        reject = rng.uniform(*spec.rejection_range) if HUMAN in eligible and len(eligible) > 1 else 0.0
        tasks.append(
            _make_task(
                rng,
                names[k],
                eligible,
                _durations(rng),
                _pick_area(rng, spec.area_fraction),
                round(reject, 3),
            )
        )
    edges = []
    for k in range(n):
        if layer_of[k] == 0:
            continue
        prev_layer = [m for m in range(n) if layer_of[m] == layer_of[k] - 1]
        if not prev_layer:
            continue
        deps = rng.sample(prev_layer, k=min(len(prev_layer), rng.randint(1, 2)))
        for d in sorted(deps):
            edges.append((names[k], names[d]))
    # Keep collaboration non-degenerate: both actors must have work.
    fixed_owners = {t.eligible_actors[0] for t in tasks if len(t.eligible_actors) == 1}
    if fixed_owners and len(fixed_owners) < 2 and not any(len(t.eligible_actors) > 1 for t in tasks):
        missing = HUMAN if ROBOT in fixed_owners else ROBOT
        t0 = tasks[0]
        tasks[0] = _make_task(rng, t0.id, (missing,), t0.duration_estimate, t0.shared_area, 0.0)
    return _finish(tasks, edges)


def generate_case(spec: CaseSpec) -> Job:
    """Build the seeded job for a case spec; output always validates."""
    spec.validate()
    rng = random.Random((spec.case_id, spec.seed).__repr__())
    if spec.case_id == 1:
        return _pairs_case12(spec, rng, allocatable=False)
    if spec.case_id == 2:
        return _pairs_case12(spec, rng, allocatable=True)
    if spec.case_id == 3:
        return _chains_case34(spec, rng, allocatable=False)
    if spec.case_id == 4:
        return _chains_case34(spec, rng, allocatable=True)
    if spec.case_id == 5:
        return _dag_case56(spec, rng, allocatable=False)
    if spec.case_id == 6:
        return _dag_case56(spec, rng, allocatable=True)
    return _random_case7(spec, rng)


def generate_instance_set(case_id: int, n_instances: int, base_seed: int = 0, **overrides) -> list[Job]:
    """n distinct seeded instances of one case."""
    if n_instances < 1:
        raise InvalidSpec("n_instances must be >= 1")
    out = []
    for i in range(n_instances):
        spec = CaseSpec(case_id=case_id, seed=base_seed * 1000 + i, **overrides)
        out.append(generate_case(spec))
    return out
