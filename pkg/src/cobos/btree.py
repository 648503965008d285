"""Minimal behavior-tree engine driving the robot actor.

Composite nodes (sequence, selector, parallel) process their children's
tick results; leaves are condition checks or actions resolved against a
world view. The robot's task queue lives on a blackboard: first-added
tasks run first, and a completed task whose effect was undone can be
re-queued ahead of everything else.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable


class TickStatus(str, Enum):
    RUNNING = "running"
    SUCCESS = "success"
    FAILURE = "failure"


class NodeKind(str, Enum):
    SEQUENCE = "sequence"
    SELECTOR = "selector"
    PARALLEL = "parallel"
    CONDITION = "condition"
    ACTION = "action"


class UnknownLeafId(Exception):
    pass


@dataclass
class BTNode:
    kind: NodeKind
    ref: str | None = None  # predicate / action id for leaves
    children: list["BTNode"] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.kind in (NodeKind.CONDITION, NodeKind.ACTION):
            if self.children:
                raise ValueError("leaves have no children")
            if not self.ref:
                raise ValueError("leaf needs a predicate or action id")
        elif not self.children:
            raise ValueError(f"{self.kind.value} needs at least one child")

    def dump(self, indent: int = 0) -> str:
        pad = "  " * indent
        label = self.kind.value + (f":{self.ref}" if self.ref else "")
        lines = [pad + label]
        for child in self.children:
            lines.append(child.dump(indent + 1))
        return "\n".join(lines)


def sequence(*children: BTNode) -> BTNode:
    return BTNode(NodeKind.SEQUENCE, children=list(children))


def selector(*children: BTNode) -> BTNode:
    return BTNode(NodeKind.SELECTOR, children=list(children))


def parallel(*children: BTNode) -> BTNode:
    return BTNode(NodeKind.PARALLEL, children=list(children))


def condition(ref: str) -> BTNode:
    return BTNode(NodeKind.CONDITION, ref=ref)


def action(ref: str) -> BTNode:
    return BTNode(NodeKind.ACTION, ref=ref)


class Blackboard:
    """Key-value store plus the robot's FIFO task queue."""

    def __init__(self) -> None:
        self.data: dict[str, Any] = {}
        self.queue: list[str] = []

    def enqueue(self, task_id: str) -> None:
        if task_id not in self.queue:
            self.queue.append(task_id)

    def requeue_front(self, task_id: str) -> None:
        # Repair path: a completed task whose effect was undone jumps the line.
        if task_id in self.queue:
            self.queue.remove(task_id)
        self.queue.insert(0, task_id)

    def peek(self) -> str | None:
        return self.queue[0] if self.queue else None

    def pop(self) -> str | None:
        return self.queue.pop(0) if self.queue else None


# World views provide named predicates and actions:
#   predicates: () -> bool
#   actions:    () -> TickStatus
Predicate = Callable[[], bool]
Action = Callable[[], TickStatus]


def tick(tree: BTNode, blackboard: Blackboard, world: "WorldView") -> TickStatus:
    if tree.kind is NodeKind.SEQUENCE:
        for child in tree.children:
            status = tick(child, blackboard, world)
            if status is not TickStatus.SUCCESS:
                return status
        return TickStatus.SUCCESS
    if tree.kind is NodeKind.SELECTOR:
        for child in tree.children:
            status = tick(child, blackboard, world)
            if status is not TickStatus.FAILURE:
                return status
        return TickStatus.FAILURE
    if tree.kind is NodeKind.PARALLEL:
        # Succeed-on-all: running while any child runs, fail if any fails.
        statuses = [tick(child, blackboard, world) for child in tree.children]
        if any(s is TickStatus.FAILURE for s in statuses):
            return TickStatus.FAILURE
        if any(s is TickStatus.RUNNING for s in statuses):
            return TickStatus.RUNNING
        return TickStatus.SUCCESS
    if tree.kind is NodeKind.CONDITION:
        pred = world.predicates.get(tree.ref or "")
        if pred is None:
            raise UnknownLeafId(tree.ref)
        return TickStatus.SUCCESS if pred() else TickStatus.FAILURE
    pred = world.actions.get(tree.ref or "")
    if pred is None:
        raise UnknownLeafId(tree.ref)
    return pred()


@dataclass
class WorldView:
    predicates: dict[str, Predicate]
    actions: dict[str, Action]


def robot_tree() -> BTNode:
    """Robot priorities: evade a close human, work the queue, else go home."""
    return selector(
        sequence(condition("human_close"), action("evade")),
        sequence(condition("task_queued"), action("execute_front_task")),
        action("go_home"),
    )


class RobotSeat:
    """Binds robot_tree to a simulation actor.

    The engine owns phase mechanics; the seat decides, each tick, whether
    the robot evades (pausing its phase clock), advances its current or
    next queued task, or idles at home.
    """

    def __init__(self) -> None:
        self.tree = robot_tree()
        self.blackboard = Blackboard()
        self.evading = False
        self.started_task: str | None = None  # set when execute pops a task

    def step(self, human_close: bool, busy: bool, undone_tasks: set[str] | None = None) -> TickStatus:
        self.evading = False
        self.started_task = None
        for tid in sorted(undone_tasks or ()):
            self.blackboard.requeue_front(tid)

        def evade() -> TickStatus:
            self.evading = True
            return TickStatus.RUNNING

        def execute_front() -> TickStatus:
            if not busy:
                self.started_task = self.blackboard.pop()
            return TickStatus.RUNNING

        def go_home() -> TickStatus:
            return TickStatus.RUNNING

        world = WorldView(
            predicates={
                "human_close": lambda: human_close,
                "task_queued": lambda: busy or bool(self.blackboard.queue),
            },
            actions={
                "evade": evade,
                "execute_front_task": execute_front,
                "go_home": go_home,
            },
        )
        return tick(self.tree, self.blackboard, world)
