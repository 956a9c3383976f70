"""Divergence-based early rejection and cost-optimal threshold calibration.

Inpaint workers report, per denoising step, how far the conditional noise
estimate diverges from the unconditional one. Successful insertions show
markedly higher divergence, so a per-step threshold can reject doomed
proposals before paying for the full denoising schedule. Calibration picks
the (step, threshold) pair minimizing expected cost subject to a recall
floor over known-successful traces.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable

import numpy as np

SUCCESS = "success"
FAILURE = "failure"


class CalibrationError(RuntimeError):
    """Raised when calibration is impossible (e.g. no successful traces)."""


@dataclass(frozen=True)
class DivergenceTrace:
    proposal_index: int
    deltas: tuple[float, ...]
    label: str

    def __post_init__(self):
        object.__setattr__(self, "deltas", tuple(float(d) for d in self.deltas))
        if not self.deltas:
            raise ValueError("trace needs at least one delta")
        if any(not np.isfinite(d) or d < 0 for d in self.deltas):
            raise ValueError("deltas must be finite and >= 0")
        if self.label not in (SUCCESS, FAILURE):
            raise ValueError(f"label must be {SUCCESS!r} or {FAILURE!r}")

    @property
    def success(self) -> bool:
        return self.label == SUCCESS


@dataclass(frozen=True)
class CalibrationResult:
    step: int
    threshold: float
    recall: float
    pass_fraction: float
    expected_cost: float
    speedup: float

    def to_json(self) -> dict:
        return {
            "step": self.step,
            "threshold": self.threshold,
            "recall": self.recall,
            "pass_fraction": self.pass_fraction,
            "expected_cost": self.expected_cost,
            "speedup": self.speedup,
        }


def calibration_sweep(traces: list[DivergenceTrace], step_costs: list[float],
                      tau_full: float,
                      target_recall: float) -> list[CalibrationResult]:
    """Best feasible threshold and its cost for every denoising step.

    Per step t, the threshold is the largest observed delta value keeping
    at least target_recall of the SUCCESS traces (a pass is delta >= threshold).
    step_costs[t] is the cumulative per-proposal cost of denoising through
    step t; a proposal passing the check additionally pays tau_full, so the
    expected cost at (t, threshold) over N traces is
    N * (step_costs[t] + pass_fraction * tau_full).
    """
    if not 0.0 < target_recall <= 1.0:
        raise ValueError(f"target_recall must be in (0,1], got {target_recall}")
    if not traces:
        raise CalibrationError("no traces to calibrate on")
    steps = len(traces[0].deltas)
    if any(len(t.deltas) != steps for t in traces):
        raise ValueError("traces disagree on step count")
    if len(step_costs) != steps:
        raise ValueError(f"need {steps} step costs, got {len(step_costs)}")
    if any(b < a for a, b in zip(step_costs, step_costs[1:])):
        raise ValueError("step_costs must be ascending (cumulative)")

    deltas = np.array([t.deltas for t in traces], dtype=np.float64)
    success_mask = np.array([t.success for t in traces])
    if not success_mask.any():
        raise CalibrationError("no successful traces; recall is undefined")

    n = len(traces)
    n_success = int(success_mask.sum())
    sweep: list[CalibrationResult] = []
    for t in range(steps):
        all_sorted = np.sort(deltas[:, t])
        succ_sorted = np.sort(deltas[success_mask, t])
        candidates = np.unique(np.append(all_sorted, np.inf))
        # fraction of successes / of all traces with delta >= candidate
        recalls = 1.0 - np.searchsorted(succ_sorted, candidates, side="left") / n_success
        feasible = candidates[recalls >= target_recall]
        lam = float(feasible.max())  # min delta is always feasible (recall 1)
        recall = 1.0 - np.searchsorted(succ_sorted, lam, side="left") / n_success
        s = 1.0 - np.searchsorted(all_sorted, lam, side="left") / n
        expected = n * (step_costs[t] + s * tau_full)
        sweep.append(CalibrationResult(
            step=t, threshold=lam, recall=float(recall), pass_fraction=float(s),
            expected_cost=float(expected), speedup=float(n * tau_full / expected)))
    return sweep


def calibrate(traces: list[DivergenceTrace], step_costs: list[float],
              tau_full: float, target_recall: float) -> CalibrationResult:
    """Cheapest (step, threshold) meeting the recall floor.

    Ties in expected cost break toward the smaller step.
    """
    sweep = calibration_sweep(traces, step_costs, tau_full, target_recall)
    return min(sweep, key=lambda r: r.expected_cost)


def filter(deltas_at_step: Iterable[float], threshold: float) -> list[bool]:
    """Pass flags for one step: proposal i survives iff delta_i >= threshold."""
    if not np.isfinite(threshold):
        raise ValueError("threshold must be finite")
    return [float(d) >= threshold for d in deltas_at_step]


def dump_traces(traces: Iterable[DivergenceTrace], fp) -> None:
    """Write traces as JSON lines."""
    for t in traces:
        fp.write(json.dumps({"proposal": t.proposal_index,
                             "deltas": list(t.deltas),
                             "label": t.label}) + "\n")


def load_traces(fp) -> list[DivergenceTrace]:
    """Read traces from a JSON-lines stream."""
    out = []
    for line in fp:
        line = line.strip()
        if not line:
            continue
        obj = json.loads(line)
        out.append(DivergenceTrace(obj["proposal"], tuple(obj["deltas"]), obj["label"]))
    return out
