"""Monte Carlo evaluation of closed-loop safety.

The true continuous model generates states and observations; the backend is
only used as the controller's filter. Every trial draws from its own RNG
stream seeded by ``(seed, trial)``, so results do not depend on how trials are
scheduled.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ContractViolation, DegenerateObservationError
from .model import PodtshsModel, sample_initial, sample_observation, sample_transition


@dataclass
class TrajectoryRecord:
    """One simulated trial.

    ``first_unsafe`` is the first step whose state left the safe set (``-1``
    if none). A trial stops at its first unsafe step, since the safety
    indicator product is already zero.
    """

    trial: int
    states: list
    actions: list
    observations: list
    safe: list
    filter_failed: bool = False

    @property
    def success(self) -> bool:
        return bool(all(self.safe)) and not self.filter_failed

    @property
    def first_unsafe(self) -> int:
        for n, ok in enumerate(self.safe):
            if not ok:
                return n
        return -1


@dataclass
class McEstimate:
    """Success count and normal-approximation 95% interval."""

    trials: int
    successes: int
    seed: int
    filter_failures: int = 0
    records: list = field(default_factory=list, repr=False)

    @property
    def estimate(self) -> float:
        return self.successes / self.trials

    @property
    def half_width(self) -> float:
        p = self.estimate
        return 1.96 * math.sqrt(p * (1.0 - p) / self.trials)

    def summary(self) -> dict:
        return {
            "trials": self.trials,
            "successes": self.successes,
            "estimate": self.estimate,
            "half_width": self.half_width,
            "filter_failures": self.filter_failures,
            "seed": self.seed,
        }


def _run(model: PodtshsModel, choose: Callable[[int, object], int], trials: int, seed: int,
         backend=None, keep_records: bool = True) -> McEstimate:
    if trials <= 0:
        raise ContractViolation("trials must be positive")
    N = model.horizon
    successes = 0
    filter_failures = 0
    records = []
    for i in range(trials):
        rng = np.random.default_rng([seed, i])
        s = sample_initial(model, rng)
        states, actions, observations = [s], [], []
        safe = [model.in_safe_set(s.x, s.q)]
        belief = backend.initial_belief(model.mu0) if backend is not None else None
        failed = False
        n = 0
        while safe[-1] and n < N:
            u = choose(n, belief)
            s = sample_transition(model, s, u, rng)
            y = sample_observation(model, s, rng)
            actions.append(u)
            observations.append(y)
            states.append(s)
            safe.append(model.in_safe_set(s.x, s.q))
            n += 1
            if backend is not None and safe[-1] and n < N:
                try:
                    belief, _ = backend.update(belief, u, y)
                except DegenerateObservationError:
                    failed = True
                    break
                if hasattr(backend, "normalized"):
                    belief = backend.normalized(belief)
        rec = TrajectoryRecord(i, states, actions, observations, safe, failed)
        successes += rec.success
        filter_failures += failed
        if keep_records:
            records.append(rec)
    return McEstimate(trials, successes, seed, filter_failures, records)


def run_closed_loop(model: PodtshsModel, policy, backend, trials: int, seed: int,
                    keep_records: bool = True) -> McEstimate:
    """Simulate ``policy`` (acting on ``backend`` beliefs) against the true model."""
    if policy.horizon != model.horizon:
        raise ContractViolation(f"policy horizon {policy.horizon} differs from model horizon {model.horizon}")
    return _run(model, lambda n, b: policy.action(n, b), trials, seed, backend, keep_records)


def evaluate_fixed_policy(model: PodtshsModel, action: int, trials: int, seed: int,
                          keep_records: bool = True) -> McEstimate:
    """Simulate the open-loop policy that always applies input index ``action``."""
    if not 0 <= int(action) < model.n_inputs:
        raise ContractViolation(f"input index {action} out of range")
    return _run(model, lambda n, b: int(action), trials, seed, None, keep_records)


CSV_COLUMNS = ("row", "trial", "seed", "success", "first_unsafe_step", "filter_failed", "estimate", "half_width")


def estimate_to_csv(est: McEstimate, header_comment: Optional[str] = None) -> str:
    """One row per trial plus a summary row (``row == "summary"``)."""
    buf = io.StringIO()
    if header_comment:
        for line in header_comment.splitlines():
            buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in est.records:
        w.writerow(("trial", r.trial, est.seed, int(r.success), r.first_unsafe, int(r.filter_failed), "", ""))
    # summary: trial = number of trials, success = number of successes,
    # filter_failed = number of filter failures
    w.writerow(("summary", est.trials, est.seed, est.successes, "", est.filter_failures,
                f"{est.estimate:.6f}", f"{est.half_width:.6f}"))
    return buf.getvalue()
