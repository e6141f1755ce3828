"""Split conformal prediction over decision sequences.

A whole multi-robot plan is one calibration example: its nonconformity score
is one minus the lowest per-iteration confidence of the labeled decision. The
empirical quantile of M such scores thresholds the per-iteration local
prediction sets at test time; the Cartesian product of the local sets equals
the brute-force sequence-level set, so membership of a plan is decidable in
O(T) (see ProductSet).

Conventions, kept exactly:
  * quantile = the ceil((M+1)(1-alpha))-th smallest calibration score; when
    that index exceeds M the quantile is the FULL-SET sentinel and prediction
    sets are all of the decision space (coverage holds trivially);
  * set membership uses the strict inequality score > 1 - quantile, so a
    degenerate all-perfect calibration (quantile 0) can produce empty sets;
    planners treat an empty local set like a non-singleton (help path).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from itertools import product

import numpy as np
from scipy import special

from .context import Context
from .errors import BudgetError, InfeasibleAlphaError
from .scenario import (
    DistributionParams,
    Scenario,
    decision_index,
    decision_space,
    label_sequence,
    oracle_plan,
    sample_scenario,
    schedule_for,
)
from .world import IDLE_DECISION


def sequence_ncs(step_scores) -> float:
    """Nonconformity of a labeled sequence: 1 - min over its step scores."""
    scores = list(step_scores)
    if not scores:
        raise ValueError("need at least one step score")
    return 1.0 - min(scores)


@dataclass(frozen=True)
class Quantile:
    """Calibrated threshold; `value` is None for the FULL-SET sentinel."""

    value: float | None
    n_calibration: int
    alpha: float

    @property
    def full_set(self) -> bool:
        return self.value is None

    @property
    def threshold(self) -> float:
        """Scores strictly above this enter the prediction set."""
        if self.value is None:
            return -math.inf
        return 1.0 - self.value


def quantile_index(m: int, alpha: float) -> int:
    """ceil((m+1)(1-alpha)) with a tolerance for float noise on exact integers."""
    return math.ceil((m + 1) * (1.0 - alpha) - 1e-9)


def min_calibration_size(alpha: float) -> int:
    """Smallest M whose quantile index stays within the calibration set."""
    m = 1
    while quantile_index(m, alpha) > m:
        m += 1
    return m


def conformal_quantile(ncs_values, alpha: float) -> Quantile:
    """Empirical conformal quantile of the calibration nonconformity scores.

    Sorts ascending and returns the ceil((M+1)(1-alpha))-th smallest value
    (duplicates count by position). Returns the FULL-SET sentinel when the
    index exceeds M, which happens exactly when M < min_calibration_size(alpha).
    """
    values = [float(v) for v in ncs_values]
    m = len(values)
    if m < 1:
        raise ValueError("need at least one calibration score")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    j = quantile_index(m, alpha)
    if j > m:
        return Quantile(None, m, alpha)
    return Quantile(sorted(values)[j - 1], m, alpha)


@dataclass(frozen=True)
class PredictionSet:
    """Decisions whose score clears the threshold, as decision-space indices."""

    indices: tuple[int, ...]
    scores: tuple[float, ...]  # scores of the members, aligned with indices
    threshold: float
    full_set: bool = False

    @property
    def size(self) -> int:
        return len(self.indices)

    @property
    def is_singleton(self) -> bool:
        return len(self.indices) == 1

    def __contains__(self, index: int) -> bool:
        return index in self.indices


def local_prediction_set(scores, quantile: Quantile) -> PredictionSet:
    """Per-iteration prediction set {d : g(d) > 1 - q}; full S under sentinel."""
    values = tuple(getattr(scores, "scores", scores))
    if quantile.full_set:
        return PredictionSet(
            indices=tuple(range(len(values))),
            scores=values,
            threshold=-math.inf,
            full_set=True,
        )
    thr = quantile.threshold
    indices = tuple(i for i, s in enumerate(values) if s > thr)
    return PredictionSet(
        indices=indices,
        scores=tuple(values[i] for i in indices),
        threshold=thr,
    )


def global_prediction_set(tables, quantile: Quantile, budget: int = 250_000):
    """Brute-force sequence-level set: all plans whose min step score clears
    the threshold. Reference implementation used to check the product set."""
    tables = [tuple(getattr(tab, "scores", tab)) for tab in tables]
    if not tables:
        raise ValueError("need at least one step table")
    size = len(tables[0])
    if any(len(tab) != size for tab in tables):
        raise ValueError("step tables must share one decision space")
    if size ** len(tables) > budget:
        raise BudgetError(
            f"{size}^{len(tables)} plans exceed the enumeration budget {budget}"
        )
    thr = quantile.threshold
    return frozenset(
        plan
        for plan in product(range(size), repeat=len(tables))
        if min(tables[k][i] for k, i in enumerate(plan)) > thr
    )


@dataclass(frozen=True)
class ProductSet:
    """Lazy Cartesian product of local sets; plan membership costs O(T)."""

    local_sets: tuple[PredictionSet, ...]

    def __contains__(self, plan_indices) -> bool:
        plan = tuple(plan_indices)
        if len(plan) != len(self.local_sets):
            return False
        return all(i in ps for ps, i in zip(self.local_sets, plan))

    @property
    def cardinality(self) -> int:
        out = 1
        for ps in self.local_sets:
            out *= ps.size
        return out

    def materialize(self, budget: int = 250_000) -> frozenset:
        if self.cardinality > budget:
            raise BudgetError(f"product set of size {self.cardinality} exceeds {budget}")
        return frozenset(product(*(ps.indices for ps in self.local_sets)))


def product_set(local_sets) -> ProductSet:
    return ProductSet(tuple(local_sets))


# --- calibration records -------------------------------------------------------

@dataclass(frozen=True)
class CalibrationRecord:
    """One labeled sequence: decisions, and the scorer's normalized score of
    each labeled decision (recalibration at a new alpha reuses these)."""

    scenario_id: str
    space_size: int
    label_mode: str  # "oracle" | "selector"
    search_mode: str  # "exact" | "oracle"
    decisions: tuple[tuple[str, str | None], ...]
    decision_indices: tuple[int, ...]
    scores: tuple[float, ...]
    schema_version: int = 1

    def __post_init__(self):
        if not (len(self.decisions) == len(self.decision_indices) == len(self.scores)):
            raise ValueError("record fields must have matching lengths")
        if any(not 0.0 <= s <= 1.0 for s in self.scores):
            raise ValueError("scores must lie in [0, 1]")

    @property
    def sequence_length(self) -> int:
        return len(self.scores)

    @property
    def ncs(self) -> float:
        return sequence_ncs(self.scores)


def calibrate(records, alpha: float) -> Quantile:
    """Sequence-level calibration: lift each record to its min-score NCS, then
    take the conformal quantile."""
    records = list(records)
    if not records:
        raise ValueError("need at least one calibration record")
    return conformal_quantile([r.ncs for r in records], alpha)


def score_label_sequence(
    scenario: Scenario,
    scorer,
    label_mode: str = "oracle",
    schedule=None,
    budget: int | None = None,
):
    """Label one scenario and package it as a CalibrationRecord.

    Returns (record, label result); the label result keeps the full per-step
    score vectors, which the coverage harness reuses to build prediction sets
    for test sequences without re-querying the scorer.
    """
    kwargs = {} if budget is None else {"budget": budget}
    lr = label_sequence(scenario, scorer, schedule=schedule, label_mode=label_mode, **kwargs)
    index = decision_index(scenario.env)
    record = CalibrationRecord(
        scenario_id=scenario.id,
        space_size=len(decision_space(scenario.env)),
        label_mode=label_mode,
        search_mode=lr.mode,
        decisions=tuple((d.kind, d.target) for d in lr.decisions),
        decision_indices=tuple(index[d] for d in lr.decisions),
        scores=lr.scores,
    )
    return record, lr


def build_calibration_set(
    params: DistributionParams,
    m: int,
    scorer,
    start_index: int = 0,
    label_mode: str = "oracle",
    budget: int | None = None,
) -> list[CalibrationRecord]:
    """Sample M scenarios i.i.d. (draw indices start_index..start_index+M-1),
    label each, and record the labeled decisions' scores."""
    if m < 1:
        raise ValueError("calibration size must be >= 1")
    records = []
    for i in range(m):
        scenario = sample_scenario(params, start_index + i)
        record, _ = score_label_sequence(
            scenario, scorer, label_mode=label_mode, budget=budget
        )
        records.append(record)
    return records


# --- joint (whole-team) calibration for the centralized baseline ---------------

@dataclass(frozen=True)
class JointCalibrationRecord:
    """Sequence of per-step joint scores of the labeled team decision, where
    the joint score is the product of the robots' per-decision scores."""

    scenario_id: str
    space_size: int
    n_robots: int
    step_scores: tuple[float, ...]
    label_indices: tuple[tuple[int, ...], ...]  # per step, one index per robot

    @property
    def ncs(self) -> float:
        return sequence_ncs(self.step_scores)


def score_joint_label_sequence(scenario: Scenario, scorer) -> JointCalibrationRecord:
    """Score the canonical labels jointly: at each step every robot is scored
    against the step-start context (no within-step conditioning), and the team
    score is the product over robots."""
    schedule = schedule_for(scenario)
    space = decision_space(scenario.env)
    index = decision_index(scenario.env)
    plan = oracle_plan(scenario)
    n, horizon = scenario.n_robots, scenario.horizon
    history: tuple = ()
    step_scores = []
    label_indices = []
    for t in range(horizon):
        labels = tuple(
            plan[t][r] if t < len(plan) else IDLE_DECISION for r in range(n)
        )
        score = 1.0
        for robot in range(n):
            ctx = Context(scenario=scenario, history=history, cursor=(t, robot))
            vec = scorer.score_all(ctx, space)
            score *= vec.scores[index[labels[robot]]]
        step_scores.append(score)
        label_indices.append(tuple(index[d] for d in labels))
        order = schedule.order_at(t)
        history = history + tuple((t, r, labels[r]) for r in order)
    return JointCalibrationRecord(
        scenario_id=scenario.id,
        space_size=len(space),
        n_robots=n,
        step_scores=tuple(step_scores),
        label_indices=tuple(label_indices),
    )


def build_joint_calibration_set(
    params: DistributionParams, m: int, scorer, start_index: int = 0
) -> list[JointCalibrationRecord]:
    if m < 1:
        raise ValueError("calibration size must be >= 1")
    return [
        score_joint_label_sequence(sample_scenario(params, start_index + i), scorer)
        for i in range(m)
    ]


# --- dataset-conditional adjustment --------------------------------------------

def beta_quantile(a: float, b: float, delta: float) -> float:
    """Quantile of Beta(a, b) at level delta, by bisecting the regularized
    incomplete beta CDF to 1e-10."""
    if a <= 0 or b <= 0:
        raise ValueError("beta shape parameters must be positive")
    if not 0.0 <= delta <= 1.0:
        raise ValueError("delta must be in [0, 1]")
    if delta == 0.0:
        return 0.0
    if delta == 1.0:
        return 1.0
    lo, hi = 0.0, 1.0
    while hi - lo > 1e-10:
        mid = 0.5 * (lo + hi)
        if special.betainc(a, b, mid) < delta:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def dataset_conditional_alpha(m: int, delta: float, target_coverage: float) -> float:
    """Adjusted miscoverage level for coverage that holds for one fixed
    calibration set with confidence 1 - delta.

    Feasibility is certified in the smallest adjustment cell v = 1 (that is,
    floor((M+1) alpha) = 1), whose Beta(M, 1) coverage bound delta**(1/M) is
    the largest available; the returned level is the largest value inside that
    cell, capped at the marginal level 1 - target_coverage. Calibrating at the
    returned level therefore guarantees coverage >= target_coverage with
    probability 1 - delta over the calibration draw.
    """
    if m < 1:
        raise ValueError("calibration size must be >= 1")
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must be in (0, 1)")
    if not 0.0 < target_coverage < 1.0:
        raise ValueError("target coverage must be in (0, 1)")
    bound = beta_quantile(m, 1, delta)  # closed form: delta ** (1 / m)
    if bound < target_coverage:
        m_min = math.ceil(math.log(delta) / math.log(target_coverage))
        raise InfeasibleAlphaError(
            f"M={m} cannot certify coverage {target_coverage} at confidence "
            f"{1 - delta}: bound {bound:.6f}; need M >= {m_min}"
        )
    marginal = 1.0 - target_coverage
    cell_top = 2.0 / (m + 1)  # exclusive upper edge of the v = 1 cell
    return min(marginal, cell_top * (1.0 - 1e-9))


# --- persistence ----------------------------------------------------------------

def record_to_dict(record: CalibrationRecord) -> dict:
    return {
        "schema_version": record.schema_version,
        "scenario_id": record.scenario_id,
        "space_size": record.space_size,
        "label_mode": record.label_mode,
        "search_mode": record.search_mode,
        "decisions": [
            {"k": k, "kind": kind, "target": target, "index": idx, "score": score}
            for k, ((kind, target), idx, score) in enumerate(
                zip(record.decisions, record.decision_indices, record.scores)
            )
        ],
        "sequence_ncs": record.ncs,
    }


def record_from_dict(data: dict) -> CalibrationRecord:
    entries = data["decisions"]
    return CalibrationRecord(
        scenario_id=data["scenario_id"],
        space_size=int(data["space_size"]),
        label_mode=data.get("label_mode", "oracle"),
        search_mode=data.get("search_mode", "oracle"),
        decisions=tuple((e["kind"], e.get("target")) for e in entries),
        decision_indices=tuple(int(e["index"]) for e in entries),
        scores=tuple(float(e["score"]) for e in entries),
        schema_version=int(data.get("schema_version", 1)),
    )


def write_records_jsonl(records, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record_to_dict(record), sort_keys=True))
            fh.write("\n")


def read_records_jsonl(path) -> list[CalibrationRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(record_from_dict(json.loads(line)))
    return records


def quantile_summary(quantile: Quantile, ncs_values) -> dict:
    """Small structured summary of a calibration: level, size, quantile, and a
    ten-bin histogram of the nonconformity scores."""
    values = [float(v) for v in ncs_values]
    counts, edges = np.histogram(values, bins=10, range=(0.0, 1.0))
    return {
        "alpha": quantile.alpha,
        "m": quantile.n_calibration,
        "quantile": "FULL_SET" if quantile.full_set else quantile.value,
        "min_calibration_size": min_calibration_size(quantile.alpha),
        "ncs_histogram": {
            "edges": [float(e) for e in edges],
            "counts": [int(c) for c in counts],
        },
    }
