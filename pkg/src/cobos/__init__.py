"""Constraint-based online scheduling for human-robot collaboration.

An exact makespan-minimizing scheduler over three-phase tasks, an
event-driven rescheduling controller with greedy baselines, a seeded
probabilistic multi-actor simulation, a benchmark harness, and a live run
service for interactive operation.
"""

__version__ = "0.1.0"
