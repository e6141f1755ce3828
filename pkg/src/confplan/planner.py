"""Planning loops over calibrated prediction sets.

Three modes share one trace format:

  * distributed: robots decide one at a time along the step's robot order;
    a non-singleton (or empty) local set triggers help, first by redrawing the
    step's order (up to the reorder bound, without replacement from the order
    family), then from the user;
  * centralized: the team is treated as one decision maker over the joint
    decision space S^N with a jointly calibrated quantile (reference
    implementation, budget-bounded);
  * argmax: per-iteration argmax with no uncertainty handling (ablation).

Planning is open-loop: the full plan is produced before any execution.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass
from itertools import product

import numpy as np

from .conformal import PredictionSet, Quantile, local_prediction_set
from .context import Context, advance, initial_context, reset_step
from .errors import BudgetError, ConfigError, PlanningAborted
from .scenario import (
    FeasibilityIndex,
    Scenario,
    anchor_decision,
    decision_index,
    decision_space,
    schedule_for,
)
from .world import Decision, IDLE_DECISION, Plan

DISTRIBUTED = "distributed"
CENTRALIZED = "centralized"
ARGMAX = "argmax"

ORACLE_USER = "oracle-user"
INTERACTIVE_USER = "interactive-user"
FAIL_ON_HELP = "fail-on-help"


@dataclass(frozen=True)
class PlannerConfig:
    mode: str = DISTRIBUTED
    alpha: float = 0.1
    reorder_bound: int = 0  # W: reorder attempts per step before user help
    help_policy: str = ORACLE_USER
    order_family_seed: int = 0
    centralized_budget: int = 4096

    def validate(self) -> None:
        if self.mode not in (DISTRIBUTED, CENTRALIZED, ARGMAX):
            raise ConfigError(f"unknown planner mode {self.mode!r}")
        if self.help_policy not in (ORACLE_USER, INTERACTIVE_USER, FAIL_ON_HELP):
            raise ConfigError(f"unknown help policy {self.help_policy!r}")
        if self.reorder_bound < 0:
            raise ConfigError("reorder bound must be >= 0")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError("alpha must be in (0, 1)")


@dataclass(frozen=True)
class HelpEvent:
    kind: str  # "reorder" | "user"
    t: int
    robot: int | None
    presented_indices: tuple[int, ...] = ()
    presented_scores: tuple[float, ...] = ()
    full_set: bool = False
    resolution_index: int | None = None
    coverage_miss: bool = False
    unresolved: bool = False  # fail-on-help converted this into a failure


@dataclass(frozen=True)
class IterationRecord:
    """One distributed iteration: the set a robot saw and what happened."""

    k: int
    t: int
    robot: int
    order: tuple[int, ...]
    set_indices: tuple[int, ...]
    set_scores: tuple[float, ...]
    set_full: bool
    chosen_index: int | None  # None for reorder / failure records
    help: tuple[HelpEvent, ...] = ()

    @property
    def set_size(self) -> int:
        return len(self.set_indices)


@dataclass(frozen=True)
class CentralStepRecord:
    """One centralized step: the joint prediction set over S^N."""

    t: int
    set_tuples: tuple[tuple[int, ...], ...]
    set_scores: tuple[float, ...]
    set_full: bool
    chosen_tuple: tuple[int, ...] | None
    help: tuple[HelpEvent, ...] = ()

    @property
    def set_size(self) -> int:
        return len(self.set_tuples)


@dataclass
class PlanTrace:
    scenario_id: str
    mode: str
    plan: Plan
    records: tuple
    scorer_calls: int
    quantile: Quantile | None
    failed: bool = False

    @property
    def n_sets(self) -> int:
        return len(self.records)

    @property
    def n_singleton(self) -> int:
        return sum(1 for r in self.records if r.set_size == 1)

    @property
    def n_user_help(self) -> int:
        return sum(1 for r in self.records for h in r.help if h.kind == "user")

    @property
    def n_reorder(self) -> int:
        return sum(1 for r in self.records for h in r.help if h.kind == "reorder")

    @property
    def coverage_misses(self) -> int:
        return sum(1 for r in self.records for h in r.help if h.coverage_miss)

    def set_size_histogram(self) -> dict[int, int]:
        hist: dict[int, int] = {}
        for r in self.records:
            hist[r.set_size] = hist.get(r.set_size, 0) + 1
        return hist


# --- feasible-set providers for user help ---------------------------------------

def teacher_feasible_provider(scenario: Scenario):
    """Unique-solution mode: the only acceptable decision is the canonical one."""

    def provide(ctx: Context) -> tuple[Decision, ...]:
        t, robot = ctx.cursor
        return (anchor_decision(scenario, t, robot),)

    return provide


def search_feasible_provider(scenario: Scenario, schedule=None, budget: int | None = None):
    """Multi-feasible mode: enumerate mission-preserving decisions on demand.

    A planner that has already diverged onto a world-infeasible prefix (only
    possible on uncovered trials) gets an empty feasible set back; user help
    then falls back to the presented set.
    """
    kwargs = {} if budget is None else {"budget": budget}
    index = FeasibilityIndex(scenario, schedule or schedule_for(scenario), **kwargs)

    def provide(ctx: Context) -> tuple[Decision, ...]:
        try:
            return index.feasible_for_context(ctx).decisions
        except ValueError:
            return ()

    return provide


# --- user help -------------------------------------------------------------------

def _argmax_indices(indices, scores_by_index) -> int:
    best = None
    best_score = -math.inf
    for i in sorted(indices):
        s = scores_by_index[i]
        if s > best_score:
            best, best_score = i, s
    if best is None:
        raise ValueError("cannot pick from an empty set")
    return best


def resolve_user_help(
    pred_set: PredictionSet,
    scores,
    feasible_indices,
    policy: str,
    space,
    io=None,
) -> tuple[int, bool]:
    """Resolve a non-singleton (or empty) prediction set via the help policy.

    oracle-user: highest-scoring member of (prediction set intersect feasible);
    if the intersection is empty, the highest-scoring feasible decision is
    taken and a coverage miss is flagged. interactive-user: the presented set
    is printed with scores and a selection read from stdin (three invalid
    entries abort the run). Returns (chosen index, coverage_miss).
    """
    values = tuple(getattr(scores, "scores", scores))
    if policy == ORACLE_USER:
        inter = [i for i in feasible_indices if i in pred_set]
        if inter:
            return _argmax_indices(inter, values), False
        if feasible_indices:
            return _argmax_indices(feasible_indices, values), True
        # nothing feasible (only reachable after an uncovered divergence):
        # damage control from whatever was presented
        fallback = pred_set.indices or tuple(range(len(space)))
        return _argmax_indices(fallback, values), True
    if policy == INTERACTIVE_USER:
        presented = pred_set.indices or tuple(range(len(space)))
        out = (io.write if io else sys.stdout.write)
        readline = (io.readline if io else sys.stdin.readline)
        out("help needed; pick one decision:\n")
        for n, i in enumerate(presented, start=1):
            out(f"  [{n}] {space[i].phrase()} (score {values[i]:.4f})\n")
        for _ in range(3):
            out("selection: ")
            raw = readline().strip()
            if raw.isdigit() and 1 <= int(raw) <= len(presented):
                return presented[int(raw) - 1], False
            out("invalid selection\n")
        raise PlanningAborted("three invalid selections; aborting")
    raise ConfigError(f"help policy {policy!r} cannot resolve help")


def _history_to_plan(scenario: Scenario, history) -> Plan:
    steps: dict[int, dict[int, Decision]] = {}
    for t, robot, d in history:
        steps.setdefault(t, {})[robot] = d
    plan = []
    for t in sorted(steps):
        row = steps[t]
        plan.append(tuple(row.get(r, IDLE_DECISION) for r in range(scenario.n_robots)))
    return tuple(plan)


# --- distributed mode --------------------------------------------------------------

def plan_distributed(
    scenario: Scenario,
    scorer,
    quantile: Quantile,
    cfg: PlannerConfig,
    feasible_provider=None,
    io=None,
) -> PlanTrace:
    """Coordinate-descent planning with local prediction sets and help-seeking.

    At each step the robots decide in the scheduled order; a robot whose local
    set is not a singleton (empty counts as needing help) first redraws the
    step's order up to `cfg.reorder_bound` times (without replacement from the
    order family; step restarts from scratch), then asks the user.
    """
    cfg.validate()
    schedule = schedule_for(scenario)
    space = decision_space(scenario.env)
    index = decision_index(scenario.env)
    provider = feasible_provider or teacher_feasible_provider(scenario)
    calls_before = scorer.counter.snapshot()
    ctx = initial_context(scenario, schedule)
    records: list[IterationRecord] = []
    failed = False
    t = 0
    while t < scenario.horizon and not failed:
        order = schedule.order_at(t)
        used = [order]
        w = 0
        pos = 0
        while pos < scenario.n_robots:
            robot = order[pos]
            k = ctx.k
            vec = scorer.score_all(ctx, space)
            ps = local_prediction_set(vec, quantile)
            base = dict(
                k=k,
                t=t,
                robot=robot,
                order=order,
                set_indices=ps.indices,
                set_scores=ps.scores,
                set_full=ps.full_set,
            )
            if ps.is_singleton:
                chosen = ps.indices[0]
                records.append(IterationRecord(**base, chosen_index=chosen))
            else:
                w += 1
                if w <= cfg.reorder_bound:
                    new_order = schedule.reorder(t, attempt=w, used=used)
                    if new_order is not None:
                        records.append(
                            IterationRecord(
                                **base,
                                chosen_index=None,
                                help=(HelpEvent("reorder", t, robot),),
                            )
                        )
                        used.append(new_order)
                        order = new_order
                        ctx = reset_step(ctx, t, new_order)
                        pos = 0
                        continue
                # an empty set presents the whole space (user events always
                # carry a nonempty presented set)
                presented = ps.indices or tuple(range(len(space)))
                presented_scores = ps.scores or vec.scores
                if cfg.help_policy == FAIL_ON_HELP:
                    records.append(
                        IterationRecord(
                            **base,
                            chosen_index=None,
                            help=(
                                HelpEvent(
                                    "user",
                                    t,
                                    robot,
                                    presented_indices=presented,
                                    presented_scores=presented_scores,
                                    full_set=ps.full_set,
                                    unresolved=True,
                                ),
                            ),
                        )
                    )
                    failed = True
                    break
                feasible = provider(ctx)
                feasible_idx = tuple(index[d] for d in feasible)
                chosen, miss = resolve_user_help(
                    ps, vec, feasible_idx, cfg.help_policy, space, io=io
                )
                records.append(
                    IterationRecord(
                        **base,
                        chosen_index=chosen,
                        help=(
                            HelpEvent(
                                "user",
                                t,
                                robot,
                                presented_indices=presented,
                                presented_scores=presented_scores,
                                full_set=ps.full_set,
                                resolution_index=chosen,
                                coverage_miss=miss,
                            ),
                        ),
                    )
                )
            ctx = advance(ctx, space[chosen], schedule, order=order)
            pos += 1
        t += 1
    return PlanTrace(
        scenario_id=scenario.id,
        mode=DISTRIBUTED,
        plan=_history_to_plan(scenario, ctx.history),
        records=tuple(records),
        scorer_calls=scorer.counter.snapshot() - calls_before,
        quantile=quantile,
        failed=failed,
    )


# --- argmax ablation ---------------------------------------------------------------

def plan_argmax(scenario: Scenario, scorer, cfg: PlannerConfig | None = None) -> PlanTrace:
    """Per-iteration argmax; never asks for help and needs no quantile."""
    schedule = schedule_for(scenario)
    space = decision_space(scenario.env)
    calls_before = scorer.counter.snapshot()
    ctx = initial_context(scenario, schedule)
    records = []
    for _ in range(scenario.n_robots * scenario.horizon):
        t, robot = ctx.cursor
        vec = scorer.score_all(ctx, space)
        chosen = vec.argmax
        records.append(
            IterationRecord(
                k=ctx.k,
                t=t,
                robot=robot,
                order=schedule.order_at(t),
                set_indices=(chosen,),
                set_scores=(vec.scores[chosen],),
                set_full=False,
                chosen_index=chosen,
            )
        )
        ctx = advance(ctx, space[chosen], schedule)
    return PlanTrace(
        scenario_id=scenario.id,
        mode=ARGMAX,
        plan=_history_to_plan(scenario, ctx.history),
        records=tuple(records),
        scorer_calls=scorer.counter.snapshot() - calls_before,
        quantile=None,
    )


# --- centralized baseline ------------------------------------------------------------

def joint_teacher_provider(scenario: Scenario):
    """Feasible joint decisions in unique-solution mode: the canonical tuple."""
    index = decision_index(scenario.env)

    def provide(t: int) -> tuple[tuple[int, ...], ...]:
        return (
            tuple(
                index[anchor_decision(scenario, t, r)] for r in range(scenario.n_robots)
            ),
        )

    return provide


def plan_centralized(
    scenario: Scenario,
    scorer,
    quantile: Quantile,
    cfg: PlannerConfig,
    joint_feasible_provider=None,
    io=None,
) -> PlanTrace:
    """Whole-team baseline: one MCQA over the S^N joint decisions per step.

    The joint score of a tuple is the product of the robots' scores given the
    step-start context (no within-step conditioning); the logical query count
    grows by |S|^N per step. Non-singleton joint sets flag the whole team, not
    a specific robot; the reorder mechanism does not apply.
    """
    cfg.validate()
    schedule = schedule_for(scenario)
    space = decision_space(scenario.env)
    n = scenario.n_robots
    joint_count = len(space) ** n
    if joint_count > cfg.centralized_budget:
        raise BudgetError(
            f"|S|^N = {joint_count} exceeds the centralized budget {cfg.centralized_budget}"
        )
    provider = joint_feasible_provider or joint_teacher_provider(scenario)
    calls_before = scorer.counter.snapshot()
    history: tuple = ()
    records: list[CentralStepRecord] = []
    plan: list = []
    failed = False
    for t in range(scenario.horizon):
        vectors = []
        for robot in range(n):
            ctx = Context(scenario=scenario, history=history, cursor=(t, robot))
            vectors.append(
                np.asarray(scorer.score_all(ctx, space, count=False).scores)
            )
        scorer.counter.add(joint_count, tag=scenario.id, t=t)
        joint: list[tuple[tuple[int, ...], float]] = []
        for combo in product(range(len(space)), repeat=n):
            score = 1.0
            for robot, i in enumerate(combo):
                score *= float(vectors[robot][i])
            joint.append((combo, score))
        if quantile.full_set:
            members = joint
            full = True
        else:
            thr = quantile.threshold
            members = [(c, s) for c, s in joint if s > thr]
            full = False
        tuples = tuple(c for c, _ in members)
        scores = tuple(s for _, s in members)
        base = dict(t=t, set_tuples=tuples, set_scores=scores, set_full=full)
        if len(tuples) == 1:
            chosen = tuples[0]
            records.append(CentralStepRecord(**base, chosen_tuple=chosen))
        else:
            if cfg.help_policy == FAIL_ON_HELP:
                records.append(
                    CentralStepRecord(
                        **base,
                        chosen_tuple=None,
                        help=(HelpEvent("user", t, None, unresolved=True),),
                    )
                )
                failed = True
                break
            joint_scores = dict(joint)
            feasible = provider(t)
            inter = [c for c in feasible if c in set(tuples)]
            miss = not inter
            pool = inter or list(feasible)
            if cfg.help_policy == INTERACTIVE_USER:
                chosen = _interactive_joint(tuples or tuple(joint_scores), joint_scores, space, io)
                miss = False
            else:
                chosen = max(pool, key=lambda c: (joint_scores[c], tuple(-i for i in c)))
            records.append(
                CentralStepRecord(
                    **base,
                    chosen_tuple=chosen,
                    help=(
                        HelpEvent(
                            "user",
                            t,
                            None,
                            resolution_index=None,
                            coverage_miss=miss,
                            full_set=full,
                        ),
                    ),
                )
            )
        joint_decision = tuple(space[i] for i in chosen)
        plan.append(joint_decision)
        order = schedule.order_at(t)
        history = history + tuple((t, r, joint_decision[r]) for r in order)
    return PlanTrace(
        scenario_id=scenario.id,
        mode=CENTRALIZED,
        plan=tuple(plan),
        records=tuple(records),
        scorer_calls=scorer.counter.snapshot() - calls_before,
        quantile=quantile,
        failed=failed,
    )


def _interactive_joint(tuples, joint_scores, space, io) -> tuple[int, ...]:
    out = (io.write if io else sys.stdout.write)
    readline = (io.readline if io else sys.stdin.readline)
    out("help needed; pick one joint decision:\n")
    for n, combo in enumerate(tuples, start=1):
        phrase = "; ".join(space[i].phrase() for i in combo)
        out(f"  [{n}] {phrase} (score {joint_scores[combo]:.6f})\n")
    for _ in range(3):
        out("selection: ")
        raw = readline().strip()
        if raw.isdigit() and 1 <= int(raw) <= len(tuples):
            return tuples[int(raw) - 1]
        out("invalid selection\n")
    raise PlanningAborted("three invalid selections; aborting")


# --- trace serialization ---------------------------------------------------------------

def _help_to_dict(h: HelpEvent) -> dict:
    return {
        "kind": h.kind,
        "t": h.t,
        "robot": h.robot,
        "presented_indices": list(h.presented_indices),
        "presented_scores": list(h.presented_scores),
        "full_set": h.full_set,
        "resolution_index": h.resolution_index,
        "coverage_miss": h.coverage_miss,
        "unresolved": h.unresolved,
    }


def trace_to_dict(trace: PlanTrace) -> dict:
    records = []
    for r in trace.records:
        if isinstance(r, IterationRecord):
            records.append(
                {
                    "k": r.k,
                    "t": r.t,
                    "robot": r.robot,
                    "order": list(r.order),
                    "set_indices": list(r.set_indices),
                    "set_size": r.set_size,
                    "set_full": r.set_full,
                    "chosen_index": r.chosen_index,
                    "help": [_help_to_dict(h) for h in r.help],
                }
            )
        else:
            records.append(
                {
                    "t": r.t,
                    "set_size": r.set_size,
                    "set_full": r.set_full,
                    "chosen_tuple": None if r.chosen_tuple is None else list(r.chosen_tuple),
                    "help": [_help_to_dict(h) for h in r.help],
                }
            )
    quantile = None
    if trace.quantile is not None:
        quantile = "FULL_SET" if trace.quantile.full_set else trace.quantile.value
    return {
        "schema_version": 1,
        "scenario_id": trace.scenario_id,
        "mode": trace.mode,
        "failed": trace.failed,
        "quantile": quantile,
        "scorer_calls": trace.scorer_calls,
        "plan": [[{"kind": d.kind, "target": d.target} for d in jd] for jd in trace.plan],
        "records": records,
    }
