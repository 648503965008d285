"""Run service: lifecycle, transparency, interactive inputs, event feed."""

import json
import time

import pytest
from fastapi.testclient import TestClient

from cobos.agents import ControllerKind
from cobos.cases import CaseSpec, generate_case
from cobos.domain import job_to_json
from cobos.service import create_app
from cobos.sim import run_sim
from util import make_job, make_task


@pytest.fixture()
def client():
    app = create_app(default_tick_ms=0)
    with TestClient(app) as c:
        yield c
    app.state.registry.shutdown()


def wait_done(client, run_id, timeout=30.0):
    deadline = time.time() + timeout
    while time.time() < deadline:
        snap = client.get(f"/runs/{run_id}/state").json()
        if snap["status"] != "running":
            return snap
        time.sleep(0.02)
    raise AssertionError("run did not finish in time")


def wait_for(predicate, timeout=10.0):
    deadline = time.time() + timeout
    while time.time() < deadline:
        value = predicate()
        if value:
            return value
        time.sleep(0.02)
    raise AssertionError("condition not reached in time")


def interactive_job():
    # The long robot-only task keeps r1 busy, so the allocatable task is
    # planned onto the human; the human-only task depends on it, making it
    # deterministically the first offer to the worker.
    return make_job(
        [
            make_task("t_robot", ["r1"], (4, 8, 2)),
            make_task("a_shared", ["h1", "r1"], (2, 3, 1), reject=0.0),
            make_task("t_human", ["h1"], (2, 2, 1)),
        ],
        edges=[("t_human", "a_shared")],
    )


class TestLifecycle:
    def test_create_list_state_delete(self, client):
        job = generate_case(CaseSpec(case_id=1, seed=0))
        r = client.post(
            "/runs", json={"job": job_to_json(job), "method": "da", "mode": "simulated", "seed": 5}
        )
        assert r.status_code == 200
        run_id = r.json()["id"]
        listing = client.get("/runs").json()["runs"]
        assert any(item["id"] == run_id for item in listing)
        snap = wait_done(client, run_id)
        assert snap["status"] == "completed"
        assert snap["makespan"] is not None
        assert client.delete(f"/runs/{run_id}").json() == {"ok": True}
        assert client.get(f"/runs/{run_id}/state").status_code == 404

    def test_malformed_job_rejected(self, client):
        r = client.post("/runs", json={"job": {"tasks": []}, "method": "da", "mode": "simulated"})
        assert r.status_code == 400
        assert "InvalidJob" in r.json()["detail"]

    def test_invalid_job_report_surfaced(self, client):
        job = job_to_json(generate_case(CaseSpec(case_id=1, seed=0)))
        job["edges"] = [["t00", "t01"], ["t01", "t00"]]
        r = client.post("/runs", json={"job": job, "method": "da", "mode": "simulated"})
        assert r.status_code == 400
        assert "Cycle" in r.json()["detail"]

    def test_unknown_run_404(self, client):
        assert client.get("/runs/nope/state").status_code == 404


class TestTransparency:
    def test_simulated_service_run_matches_run_sim(self, client):
        job = generate_case(CaseSpec(case_id=3, seed=1))
        r = client.post(
            "/runs", json={"job": job_to_json(job), "method": "cobos", "mode": "simulated", "seed": 17}
        )
        run_id = r.json()["id"]
        wait_done(client, run_id)
        service_record = client.get(f"/runs/{run_id}/record").json()
        direct = run_sim(job, ControllerKind.COBOS, seed=17)
        direct_payload = json.loads(direct.canonical_json())
        service_canonical = {k: service_record[k] for k in direct_payload}
        assert service_canonical == direct_payload


class TestEventFeed:
    def test_sequence_numbers_and_resume(self, client):
        job = generate_case(CaseSpec(case_id=1, seed=0))
        r = client.post(
            "/runs", json={"job": job_to_json(job), "method": "md", "mode": "simulated", "seed": 3}
        )
        run_id = r.json()["id"]
        wait_done(client, run_id)
        events = client.get(f"/runs/{run_id}/events", params={"cursor": 0}).json()["events"]
        seqs = [e["seq"] for e in events]
        assert seqs == list(range(1, len(events) + 1))
        resume_at = len(events) // 2
        tail = client.get(f"/runs/{run_id}/events", params={"cursor": resume_at}).json()["events"]
        assert [e["seq"] for e in tail] == seqs[resume_at:]

    def test_websocket_streams_all_events(self, client):
        job = generate_case(CaseSpec(case_id=1, seed=0))
        r = client.post(
            "/runs", json={"job": job_to_json(job), "method": "md", "mode": "simulated", "seed": 3}
        )
        run_id = r.json()["id"]
        wait_done(client, run_id)
        collected = []
        with client.websocket_connect(f"/runs/{run_id}/events?from=0") as ws:
            while True:
                try:
                    collected.append(json.loads(ws.receive_text()))
                except Exception:
                    break
        polled = client.get(f"/runs/{run_id}/events", params={"cursor": 0}).json()["events"]
        assert collected == polled

    def test_reschedule_events_carry_valid_schedules(self, client):
        from cobos.domain import Phase, Schedule, check_schedule

        job = generate_case(CaseSpec(case_id=4, seed=0))
        r = client.post(
            "/runs", json={"job": job_to_json(job), "method": "cobos", "mode": "simulated", "seed": 1}
        )
        run_id = r.json()["id"]
        wait_done(client, run_id)
        events = client.get(f"/runs/{run_id}/events", params={"cursor": 0}).json()["events"]
        updates = [e["event"] for e in events if e["event"]["kind"] == "schedule_updated"]
        assert updates
        sched = updates[-1]["schedule"]
        phase_start = {}
        phase_end = {}
        for bar in sched["bars"]:
            phase_start[(bar["task"], Phase(bar["phase"]))] = bar["start"]
            phase_end[(bar["task"], Phase(bar["phase"]))] = bar["end"]
        rebuilt = Schedule(
            assignment=sched["assignment"],
            phase_start=phase_start,
            phase_end=phase_end,
            makespan=sched["makespan"],
        )
        report = check_schedule(job, rebuilt)
        assert report.ok, str(report)


class TestInteractive:
    def create(self, client, job=None, method="cobos", seed=11):
        job = job or interactive_job()
        r = client.post(
            "/runs",
            json={
                "job": job_to_json(job),
                "method": method,
                "mode": "interactive",
                "seed": seed,
                "tick_ms": 5,
            },
        )
        assert r.status_code == 200
        return r.json()["id"]

    def pending_offer(self, client, run_id, task=None):
        def check():
            snap = client.get(f"/runs/{run_id}/state").json()
            for actor in snap["actors"]:
                if actor["pending_offer"] and (task is None or actor["pending_offer"] == task):
                    return actor["pending_offer"], snap
            return None

        return wait_for(check)

    def test_accept_starts_task(self, client):
        run_id = self.create(client)
        offered, _ = self.pending_offer(client, run_id)
        r = client.post(f"/runs/{run_id}/input", json={"kind": "accept", "task": offered})
        assert r.json()["ok"]

        def started():
            snap = client.get(f"/runs/{run_id}/state").json()
            task = next(t for t in snap["tasks"] if t["id"] == offered)
            return task["state"] == "in_progress" or None

        wait_for(started)

    def test_reject_reroutes_task(self, client):
        run_id = self.create(client)
        offered, _ = self.pending_offer(client, run_id, task="a_shared")
        r = client.post(f"/runs/{run_id}/input", json={"kind": "reject", "task": "a_shared"})
        assert r.json()["ok"]

        def rerouted():
            snap = client.get(f"/runs/{run_id}/state").json()
            if ["a_shared", "h1"] in [list(p) for p in snap["rejected"]]:
                task = next(t for t in snap["tasks"] if t["id"] == "a_shared")
                if task["actor"] == "r1" or task["state"] in ("in_progress", "completed"):
                    return snap
            return None

        snap = wait_for(rerouted)
        # the reschedule moved the task onto the robot row
        events = client.get(f"/runs/{run_id}/events", params={"cursor": 0}).json()["events"]
        updates = [e["event"] for e in events if e["event"]["kind"] == "schedule_updated"]
        assert updates
        assert updates[-1]["schedule"]["assignment"]["a_shared"] == "r1"

    def test_complete_phase_advances_and_late_completion_shifts_plan(self, client):
        run_id = self.create(client)
        offered, _ = self.pending_offer(client, run_id, task="a_shared")
        client.post(f"/runs/{run_id}/input", json={"kind": "accept", "task": "a_shared"})

        def in_progress():
            snap = client.get(f"/runs/{run_id}/state").json()
            task = next(t for t in snap["tasks"] if t["id"] == "a_shared")
            return snap if task["state"] == "in_progress" else None

        snap = wait_for(in_progress)

        def planned_start_of_dependent():
            events = client.get(f"/runs/{run_id}/events", params={"cursor": 0}).json()["events"]
            for e in reversed(events):
                if e["event"]["kind"] == "schedule_updated":
                    sched = e["event"]["schedule"]
                    for bar in sched["bars"]:
                        if bar["task"] == "t_human" and bar["phase"] == 1:
                            return bar["start"]
            return None

        before = wait_for(lambda: planned_start_of_dependent())
        # stall well past the scheduled prep end, then complete
        time.sleep(0.4)
        r = client.post(f"/runs/{run_id}/input", json={"kind": "complete", "task": "a_shared"})
        assert r.json()["ok"]

        def advanced():
            s = client.get(f"/runs/{run_id}/state").json()
            task = next(t for t in s["tasks"] if t["id"] == "a_shared")
            return s if (task["phase"] or 0) >= 2 else None

        wait_for(advanced)
        # the late completion pushed the dependent task's planned start out
        after = wait_for(lambda: planned_start_of_dependent())
        assert after > before

    def test_inputs_idempotent(self, client):
        run_id = self.create(client)
        offered, _ = self.pending_offer(client, run_id)
        first = client.post(f"/runs/{run_id}/input", json={"kind": "accept", "task": offered}).json()
        second = client.post(f"/runs/{run_id}/input", json={"kind": "accept", "task": offered}).json()
        assert first == {"ok": True}
        assert second.get("duplicate") is True

    def test_not_requested_and_mode_errors(self, client):
        run_id = self.create(client)
        r = client.post(f"/runs/{run_id}/input", json={"kind": "reject", "task": "t_human"})
        # t_human may or may not be offered yet; force the clear error with a bogus task
        r = client.post(f"/runs/{run_id}/input", json={"kind": "reject", "task": "ghost"})
        assert r.status_code == 409
        assert "NotRequested" in r.json()["detail"]

        job = generate_case(CaseSpec(case_id=1, seed=0))
        sim = client.post(
            "/runs", json={"job": job_to_json(job), "method": "da", "mode": "simulated", "seed": 1}
        ).json()["id"]
        r = client.post(f"/runs/{sim}/input", json={"kind": "accept", "task": "t00"})
        assert r.status_code in (409,)
        detail = r.json()["detail"]
        assert "RunNotInteractive" in detail or "RunEnded" in detail
