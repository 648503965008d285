"""Domain types, validation, layering, schedule checking, job file format."""

import json

import pytest
from hypothesis import given, settings, strategies as st

from cobos.domain import (
    ActorKind,
    ActorSpec,
    CycleDetected,
    Job,
    JobFormatError,
    Phase,
    PHASES,
    Schedule,
    check_schedule,
    dump_job,
    job_from_json,
    job_to_json,
    load_job,
    topological_layers,
    validate_job,
)
from util import make_job, make_task, random_small_job


def simple_schedule(job, assignment, starts, durations):
    phase_start = {}
    phase_end = {}
    for tid, s in starts.items():
        t = s
        for p, d in zip(PHASES, durations[tid]):
            phase_start[(tid, p)] = t
            phase_end[(tid, p)] = t + d
            t += d
    makespan = max(phase_end[(tid, Phase.DONE)] for tid in starts)
    return Schedule(assignment=assignment, phase_start=phase_start, phase_end=phase_end, makespan=makespan)


class TestValidateJob:
    def test_cycle_detected(self):
        job = make_job(
            [make_task("a", ["r1"], (1, 1, 1)), make_task("b", ["r1"], (1, 1, 1))],
            edges=[("a", "b"), ("b", "a")],
        )
        report = validate_job(job)
        assert report.has("CycleDetected")

    def test_unknown_actor(self):
        job = make_job([make_task("a", ["x"], (1, 1, 1))])
        report = validate_job(job)
        assert report.has("UnknownActor")

    def test_unknown_edge_endpoint(self):
        job = make_job([make_task("a", ["r1"], (1, 1, 1))], edges=[("a", "ghost")])
        assert validate_job(job).has("UnknownTask")

    def test_robot_rejection_probability_flagged(self):
        task = make_task("a", ["r1"], (1, 1, 1))
        task = task.__class__(
            id="a",
            eligible_actors=("r1",),
            duration_estimate=task.duration_estimate,
            duration_distribution=task.duration_distribution,
            rejection_probability={"r1": 0.5},
            shared_area=None,
        )
        assert validate_job(make_job([task])).has("BadRejectionProbability")

    def test_horizon_too_small(self):
        job = make_job([make_task("a", ["r1"], (2, 3, 1))], horizon=4)
        assert validate_job(job).has("HorizonTooSmall")

    def test_random_jobs_valid(self):
        for seed in range(30):
            assert validate_job(random_small_job(seed)).ok


class TestTopologicalLayers:
    def test_chain(self):
        job = make_job(
            [make_task(t, ["r1"], (1, 1, 1)) for t in ("a", "b", "c")],
            edges=[("c", "b"), ("b", "a")],
        )
        assert topological_layers(job) == [{"a"}, {"b"}, {"c"}]

    def test_no_edges_single_layer(self):
        job = make_job([make_task(t, ["r1"], (1, 1, 1)) for t in ("a", "b")])
        assert topological_layers(job) == [{"a", "b"}]

    def test_cycle_raises(self):
        job = make_job(
            [make_task(t, ["r1"], (1, 1, 1)) for t in ("a", "b")],
            edges=[("a", "b"), ("b", "a")],
        )
        with pytest.raises(CycleDetected):
            topological_layers(job)

    def test_layers_match_independent_longest_path(self):
        # Independent check: recursive longest-chain depth per task.
        for seed in range(12):
            job = random_small_job(seed)
            deps = {t.id: job.dependencies_of(t.id) for t in job.tasks}

            def depth(tid):
                return 0 if not deps[tid] else 1 + max(depth(d) for d in deps[tid])

            layers = topological_layers(job)
            for tid in deps:
                assert tid in layers[depth(tid)]


class TestCheckSchedule:
    def test_single_task_arithmetic(self):
        job = make_job([make_task("a", ["r1"], (2, 3, 1))])
        sched = simple_schedule(job, {"a": "r1"}, {"a": 0}, {"a": (2, 3, 1)})
        assert sched.makespan == 6
        assert check_schedule(job, sched).ok

    def test_actor_overlap_detected(self):
        job = make_job([make_task("a", ["r1"], (1, 1, 1)), make_task("b", ["r1"], (1, 1, 1))])
        sched = simple_schedule(
            job, {"a": "r1", "b": "r1"}, {"a": 0, "b": 1}, {"a": (1, 1, 1), "b": (1, 1, 1)}
        )
        assert check_schedule(job, sched).has("ActorOverlap")

    def test_area_overlap_detected(self):
        job = make_job(
            [make_task("a", ["r1"], (1, 2, 1), area="area"), make_task("b", ["h1"], (1, 2, 1), area="area")]
        )
        sched = simple_schedule(
            job, {"a": "r1", "b": "h1"}, {"a": 0, "b": 1}, {"a": (1, 2, 1), "b": (1, 2, 1)}
        )
        assert check_schedule(job, sched).has("SharedAreaOverlap")

    def test_precedence_violation(self):
        job = make_job(
            [make_task("a", ["r1"], (1, 1, 1)), make_task("b", ["h1"], (1, 1, 1))],
            edges=[("a", "b")],  # a depends on b
        )
        sched = simple_schedule(
            job, {"a": "r1", "b": "h1"}, {"a": 0, "b": 0}, {"a": (1, 1, 1), "b": (1, 1, 1)}
        )
        assert check_schedule(job, sched).has("PrecedenceViolated")

    def test_contiguity_and_makespan(self):
        job = make_job([make_task("a", ["r1"], (1, 1, 1))])
        sched = Schedule(
            assignment={"a": "r1"},
            phase_start={("a", Phase.PREP): 0, ("a", Phase.EXEC): 2, ("a", Phase.DONE): 3},
            phase_end={("a", Phase.PREP): 1, ("a", Phase.EXEC): 3, ("a", Phase.DONE): 4},
            makespan=5,
        )
        report = check_schedule(job, sched)
        assert report.has("ContiguityBroken")
        assert report.has("BadMakespan")

    def test_ineligible_actor(self):
        job = make_job([make_task("a", ["r1"], (1, 1, 1))])
        sched = simple_schedule(job, {"a": "h1"}, {"a": 0}, {"a": (1, 1, 1)})
        assert check_schedule(job, sched).has("IneligibleActor")


class TestJobFileFormat:
    def test_roundtrip_structural_equality(self):
        for seed in range(20):
            job = random_small_job(seed)
            assert job_from_json(job_to_json(job)) == job

    def test_text_roundtrip(self):
        job = random_small_job(3)
        assert load_job(dump_job(job)) == job

    def test_unknown_field_rejected(self):
        payload = job_to_json(random_small_job(0))
        payload["extra"] = 1
        with pytest.raises(JobFormatError):
            job_from_json(payload)

    def test_unknown_task_field_rejected(self):
        payload = job_to_json(random_small_job(0))
        payload["tasks"][0]["surprise"] = True
        with pytest.raises(JobFormatError):
            job_from_json(payload)

    def test_missing_estimate_rejected(self):
        payload = job_to_json(random_small_job(0))
        del payload["tasks"][0]["estimates"]["prep"]
        with pytest.raises(JobFormatError):
            job_from_json(payload)

    def test_default_distributions_when_dist_omitted(self):
        payload = {
            "tasks": [
                {"id": "a", "eligible_actors": ["r1"], "estimates": {"prep": 2, "exec": 4, "done": 1}}
            ],
            "edges": [],
            "actors": [{"id": "r1", "kind": "robot"}],
            "horizon": 100,
        }
        job = job_from_json(payload)
        dist = job.tasks[0].duration_distribution[(Phase.EXEC, "r1")]
        assert dist.normal_mean == 4.0
        assert dist.failure_mean == 8.0

    @given(st.integers(min_value=0, max_value=10_000))
    @settings(max_examples=25, deadline=None)
    def test_roundtrip_property(self, seed):
        job = random_small_job(seed)
        assert job_from_json(json.loads(json.dumps(job_to_json(job)))) == job


def test_reject_prob_only_for_humans():
    job = random_small_job(11, alloc_prob=1.0)
    task = job.tasks[0]
    for actor, prob in task.rejection_probability.items():
        if actor.startswith("r"):
            assert prob == 0.0
