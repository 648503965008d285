"""Shared test helpers: small-job builders and the brute-force oracle.

The oracle enumerates every assignment and every precedence-respecting
per-resource ordering, evaluating each combination with a naive
sweep-to-fixpoint over the difference constraints. It shares no code with
the solver's search.
"""

from __future__ import annotations

import itertools
import random

from cobos.domain import ActorKind, ActorSpec, DurationDist, Job, Phase, PHASES, Task


def make_task(tid, actors, est, area=None, reject=0.0):
    actors = tuple(actors)
    dists = {}
    for idx, p in enumerate(PHASES):
        for a in actors:
            dists[(p, a)] = DurationDist.default_for(est[idx])
    rejection = {a: (reject if a.startswith("h") else 0.0) for a in actors}
    return Task(
        id=tid,
        eligible_actors=actors,
        duration_estimate={Phase.PREP: est[0], Phase.EXEC: est[1], Phase.DONE: est[2]},
        duration_distribution=dists,
        rejection_probability=rejection,
        shared_area=area,
    )


def make_job(tasks, edges=(), actors=None, horizon=None):
    if actors is None:
        actors = (ActorSpec("h1", ActorKind.HUMAN), ActorSpec("r1", ActorKind.ROBOT))
    areas = tuple(sorted({t.shared_area for t in tasks if t.shared_area is not None}))
    total = sum(t.total_estimate for t in tasks)
    return Job(
        tasks=tuple(tasks),
        edges=tuple(edges),
        actors=tuple(actors),
        shared_areas=areas,
        horizon=horizon if horizon is not None else max(10, 6 * total),
    )


def random_small_job(seed, max_tasks=6, n_actors=2, area_prob=0.5, edge_prob=0.35, alloc_prob=0.5):
    """Seeded random job small enough for exhaustive checking."""
    rng = random.Random(seed)
    n = rng.randint(3, max_tasks)
    actor_ids = ["h1", "r1", "r2"][:n_actors]
    actors = tuple(
        ActorSpec(a, ActorKind.HUMAN if a.startswith("h") else ActorKind.ROBOT) for a in actor_ids
    )
    tasks = []
    for k in range(n):
        tid = f"t{k:02d}"
        if rng.random() < alloc_prob:
            eligible = list(actor_ids)
        else:
            eligible = [rng.choice(actor_ids)]
        est = (rng.randint(1, 4), rng.randint(1, 5), rng.randint(1, 3))
        area = "area" if rng.random() < area_prob else None
        tasks.append(make_task(tid, eligible, est, area=area))
    edges = []
    for i in range(n):
        for j in range(i):
            if rng.random() < edge_prob:
                edges.append((f"t{i:02d}", f"t{j:02d}"))  # later task depends on earlier
    return make_job(tasks, edges, actors)


# ---------------------------------------------------------------------------
# Brute-force optimum
# ---------------------------------------------------------------------------


def _dependency_closure(job):
    ids = [t.id for t in job.tasks]
    closure = {t: set() for t in ids}
    for (i, j) in job.edges:
        closure[i].add(j)
    changed = True
    while changed:
        changed = False
        for i in ids:
            extra = set()
            for j in closure[i]:
                extra |= closure[j]
            if not extra <= closure[i]:
                closure[i] |= extra
                changed = True
    return closure


def _respects_precedence(order, closure):
    members = set(order)
    seen = set()
    for t in order:
        if (closure[t] & members) - seen:
            return False
        seen.add(t)
    return True


def _evaluate(job, assignment, actor_orders, area_orders, durations):
    """Least fixpoint over the difference constraints; None if infeasible."""
    d = {}
    for t in job.tasks:
        a = assignment[t.id]
        d[t.id] = tuple(durations[(t.id, p, a)] for p in PHASES)
    s1 = {t.id: 0 for t in job.tasks}
    s2 = {t.id: d[t.id][0] for t in job.tasks}

    horizon = job.horizon * 10 + 1000
    for _ in range(3 * len(job.tasks) ** 2 + 10):
        changed = False
        for t in job.tasks:
            lo = s1[t.id] + d[t.id][0]
            if s2[t.id] < lo:
                s2[t.id] = lo
                changed = True
        for (i, j) in job.edges:
            lo = s2[j] + d[j][1]
            if s2[i] < lo:
                s2[i] = lo
                changed = True
        for order in actor_orders.values():
            for u, v in zip(order, order[1:]):
                lo = s2[u] + d[u][1] + d[u][2]
                if s1[v] < lo:
                    s1[v] = lo
                    changed = True
        for order in area_orders.values():
            for u, v in zip(order, order[1:]):
                lo = s2[u] + d[u][1]
                if s2[v] < lo:
                    s2[v] = lo
                    changed = True
        if any(v > horizon for v in s2.values()):
            return None
        if not changed:
            break
    else:
        return None
    return max(s2[t.id] + d[t.id][1] + d[t.id][2] for t in job.tasks)


def brute_force_optimum(job, durations=None, rejected=()):
    """Minimum makespan over all assignments x all per-resource orderings."""
    if durations is None:
        durations = {
            (t.id, p, a): t.duration_estimate[p]
            for t in job.tasks
            for p in PHASES
            for a in t.eligible_actors
        }
    rejected = set(rejected)
    closure = _dependency_closure(job)
    ids = sorted(t.id for t in job.tasks)
    task_by_id = job.task_map()
    choice_lists = []
    for tid in ids:
        opts = [a for a in task_by_id[tid].eligible_actors if (tid, a) not in rejected]
        if not opts:
            return None
        choice_lists.append(opts)

    perm_cache = {}

    def valid_perms(members):
        key = tuple(sorted(members))
        if key not in perm_cache:
            perm_cache[key] = [
                p for p in itertools.permutations(key) if _respects_precedence(p, closure)
            ]
        return perm_cache[key]

    by_area = {}
    for t in job.tasks:
        if t.shared_area is not None:
            by_area.setdefault(t.shared_area, []).append(t.id)
    area_names = sorted(by_area)
    area_combos = list(itertools.product(*(valid_perms(by_area[a]) for a in area_names)))

    best = None
    for combo in itertools.product(*choice_lists):
        assignment = dict(zip(ids, combo))
        by_actor = {}
        for tid, a in assignment.items():
            by_actor.setdefault(a, []).append(tid)
        actor_names = sorted(by_actor)
        for actor_combo in itertools.product(*(valid_perms(by_actor[a]) for a in actor_names)):
            actor_orders = dict(zip(actor_names, actor_combo))
            for area_combo in area_combos:
                area_orders = dict(zip(area_names, area_combo))
                m = _evaluate(job, assignment, actor_orders, area_orders, durations)
                if m is not None and (best is None or m < best):
                    best = m
    return best
