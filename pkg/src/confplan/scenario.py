"""Scenario distribution and labeling: sampling, decision space, canonical
plans, feasible-decision enumeration, and auto-regressive label selection.

A scenario bundles the robot count, skill set, mission, horizon, and
environment, plus a seed for its per-step robot-order schedule. Sampling is a
pure function of (params, draw index), so experiments can key independent
streams per trial without sharing state.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from . import world
from .context import (
    Context,
    OrderSchedule,
    advance,
    initial_context,
    step_position,
)
from .errors import BudgetError, ConfigError, GenerationError, NoFeasibleError, OracleError
from .world import (
    ACTION_KINDS,
    CONTAINER_SITE,
    DESTINATION,
    GOTO,
    GRAB,
    IDLE_DECISION,
    OBJECT_SITE,
    OPEN_DOOR,
    PUTDOWN,
    Container,
    Decision,
    Environment,
    InfeasibleDecision,
    Location,
    Mission,
    Plan,
    SafetyConstraint,
    SemanticObject,
    SubTask,
    validate_environment,
    violates_safety,
)

DEFAULT_OBJECT_LABELS = ("apple", "kettle", "tomato", "bread", "potato", "knife")
DEFAULT_CONTAINER_LABELS = ("fridge", "drawer", "cabinet")
DEFAULT_DESTINATION_LABELS = ("table", "sink", "counter", "shelf", "stove")

EXACT_SEARCH_BUDGET = 10**6
_GENERATION_RETRIES = 32


@dataclass(frozen=True)
class DistributionParams:
    """Knobs of the scenario distribution; all ranges are inclusive.

    `n_enclosed`, when set, encloses exactly that many objects (needed for
    profiles that must pin the decision-space size); otherwise each object is
    enclosed independently with `enclosure_prob`.
    """

    n_robots: tuple[int, int] = (1, 2)
    n_subtasks: tuple[int, int] = (1, 2)
    n_objects: tuple[int, int] = (2, 3)
    n_containers: tuple[int, int] = (0, 1)
    n_destinations: tuple[int, int] = (1, 2)
    enclosure_prob: float = 0.35
    n_enclosed: tuple[int, int] | None = None
    safety_prob: float = 0.25
    multi_destination_prob: float = 0.0
    horizon_slack: int = 1
    object_labels: tuple[str, ...] = DEFAULT_OBJECT_LABELS
    container_labels: tuple[str, ...] = DEFAULT_CONTAINER_LABELS
    destination_labels: tuple[str, ...] = DEFAULT_DESTINATION_LABELS
    rng_seed: int = 0
    schema_version: int = 1


def validate_params(params: DistributionParams) -> None:
    def check_range(name: str, rng: tuple[int, int], lo_min: int) -> None:
        lo, hi = rng
        if lo > hi or lo < lo_min:
            raise ConfigError(f"{name} range {rng} is empty or below {lo_min}")

    check_range("n_robots", params.n_robots, 1)
    check_range("n_subtasks", params.n_subtasks, 0)
    check_range("n_objects", params.n_objects, 0)
    check_range("n_containers", params.n_containers, 0)
    check_range("n_destinations", params.n_destinations, 1)
    if params.n_enclosed is not None:
        check_range("n_enclosed", params.n_enclosed, 0)
    for name in ("enclosure_prob", "safety_prob", "multi_destination_prob"):
        p = getattr(params, name)
        if not 0.0 <= p <= 1.0:
            raise ConfigError(f"{name} must be in [0, 1], got {p}")
    if params.horizon_slack < 0:
        raise ConfigError("horizon_slack must be >= 0")
    if params.n_subtasks[0] == 0 and params.horizon_slack < 1:
        raise ConfigError("horizon_slack must be >= 1 when missions may be empty")
    if not params.object_labels or not params.destination_labels:
        raise ConfigError("label pools must be nonempty")
    if params.n_containers[1] > 0 and not params.container_labels:
        raise ConfigError("container label pool must be nonempty")
    if params.rng_seed < 0:
        raise ConfigError("rng_seed must be nonnegative")


@dataclass(frozen=True)
class Scenario:
    """One sampled planning problem; immutable and hashable."""

    id: str
    n_robots: int
    skills: tuple[str, ...]
    mission: Mission
    horizon: int
    env: Environment
    order_seed: int


def schedule_for(scenario: Scenario) -> OrderSchedule:
    return OrderSchedule(n_robots=scenario.n_robots, seed=scenario.order_seed)


# --- decision space ----------------------------------------------------------

@lru_cache(maxsize=2048)
def decision_space(env: Environment) -> tuple[Decision, ...]:
    """The ordered set of all decisions any robot can declare in `env`.

    Order: GoTo over loose objects, containers, then destinations; Grab over
    objects; PutDown over destinations; OpenDoor over containers; Idle last.
    Objects that start inside a container are reached via the container's GoTo
    entry, so they add no GoTo decision of their own.
    """
    destinations = [loc for loc in env.locations if loc.kind == DESTINATION]
    space: list[Decision] = []
    space.extend(Decision(GOTO, o.id) for o in env.objects if o.inside is None)
    space.extend(Decision(GOTO, c.id) for c in env.containers)
    space.extend(Decision(GOTO, loc.id) for loc in destinations)
    space.extend(Decision(GRAB, o.id) for o in env.objects)
    space.extend(Decision(PUTDOWN, loc.id) for loc in destinations)
    space.extend(Decision(OPEN_DOOR, c.id) for c in env.containers)
    space.append(IDLE_DECISION)
    return tuple(space)


@lru_cache(maxsize=2048)
def decision_index(env: Environment) -> dict[Decision, int]:
    return {d: i for i, d in enumerate(decision_space(env))}


# --- sampling ----------------------------------------------------------------

def _randint(rng: np.random.Generator, bounds: tuple[int, int]) -> int:
    lo, hi = bounds
    return int(rng.integers(lo, hi + 1))


def _cycled(rng: np.random.Generator, pool: tuple[str, ...], count: int) -> list[str]:
    shuffled = list(pool)
    rng.shuffle(shuffled)
    return [shuffled[i % len(shuffled)] for i in range(count)]


def _draw_scene(params: DistributionParams, rng: np.random.Generator):
    n_robots = _randint(rng, params.n_robots)
    k = _randint(rng, params.n_subtasks)
    n_obj = max(_randint(rng, params.n_objects), k)
    n_cont = _randint(rng, params.n_containers)
    n_dest = _randint(rng, params.n_destinations)

    obj_labels = _cycled(rng, params.object_labels, n_obj)
    cont_labels = _cycled(rng, params.container_labels, n_cont) if n_cont else []
    dest_labels = _cycled(rng, params.destination_labels, n_dest)

    if n_cont and n_obj:
        if params.n_enclosed is not None:
            count = min(_randint(rng, params.n_enclosed), n_obj)
            enclosed = sorted(int(i) for i in rng.choice(n_obj, size=count, replace=False))
        else:
            enclosed = [i for i in range(n_obj) if rng.random() < params.enclosure_prob]
        container_of = {i: int(rng.integers(n_cont)) for i in enclosed}
    else:
        container_of = {}

    dest_locs = tuple(
        Location(f"loc-dest-{i + 1}", dest_labels[i], DESTINATION) for i in range(n_dest)
    )
    cont_locs = tuple(
        Location(f"loc-cont-{i + 1}", f"{cont_labels[i]} spot", CONTAINER_SITE)
        for i in range(n_cont)
    )
    containers = tuple(
        Container(f"cont-{i + 1}", cont_labels[i], cont_locs[i].id) for i in range(n_cont)
    )
    obj_locs: list[Location] = []
    objects: list[SemanticObject] = []
    for i in range(n_obj):
        oid = f"obj-{i + 1}"
        if i in container_of:
            c = containers[container_of[i]]
            objects.append(SemanticObject(oid, obj_labels[i], c.at, inside=c.id))
        else:
            site = Location(f"loc-obj-{i + 1}", f"{obj_labels[i]} spot", OBJECT_SITE)
            obj_locs.append(site)
            objects.append(SemanticObject(oid, obj_labels[i], site.id))
    env = Environment(
        locations=tuple(obj_locs) + cont_locs + dest_locs,
        objects=tuple(objects),
        containers=containers,
        robot_start=(dest_locs[0].id,) * n_robots,
    )
    validate_environment(env)

    chosen = [int(i) for i in rng.choice(n_obj, size=k, replace=False)] if k else []
    subtasks = []
    for i in chosen:
        multi = n_dest >= 2 and rng.random() < params.multi_destination_prob
        if multi:
            count = _randint(rng, (2, n_dest))
            picks = [int(j) for j in rng.choice(n_dest, size=count, replace=False)]
        else:
            picks = [int(rng.integers(n_dest))]
        subtasks.append(
            SubTask(obj_labels[i], tuple(dest_locs[j].id for j in picks))
        )

    safety = None
    if n_obj and rng.random() < params.safety_prob:
        subtask_labels = {obj_labels[i] for i in chosen}
        if n_robots == 1:
            candidates = [i for i in range(n_obj) if obj_labels[i] not in subtask_labels]
        else:
            candidates = list(range(n_obj))
        if candidates:
            safety = SafetyConstraint(
                robot=int(rng.integers(n_robots)),
                forbidden_object=f"obj-{candidates[int(rng.integers(len(candidates)))] + 1}",
            )

    return env, Mission(tuple(subtasks), safety), n_robots


def sample_scenario(params: DistributionParams, draw_index: int) -> Scenario:
    """Sample the `draw_index`-th scenario of the distribution.

    Deterministic: identical (params, draw_index) always yields the identical
    scenario. Draws are keyed independently, so trial workers can sample
    disjoint index ranges without coordination.
    """
    validate_params(params)
    rng = np.random.default_rng(np.random.SeedSequence((params.rng_seed, draw_index)))
    last_error: Exception | None = None
    for _ in range(_GENERATION_RETRIES):
        try:
            env, mission, n_robots = _draw_scene(params, rng)
            plan = _build_oracle(env, mission, n_robots)
            horizon = max(1, len(plan) + params.horizon_slack)
            scenario = Scenario(
                id=f"scn-{params.rng_seed}-{draw_index}",
                n_robots=n_robots,
                skills=ACTION_KINDS,
                mission=mission,
                horizon=horizon,
                env=env,
                order_seed=int(rng.integers(2**31)),
            )
            result = validate_scenario_plan(scenario, plan)
            if not result.complete:
                raise OracleError(f"oracle plan failed validation: {result.reason}")
            return scenario
        except (OracleError, ValueError) as exc:  # resample and try again
            last_error = exc
    raise GenerationError(
        f"could not sample a feasible scenario for draw {draw_index}: {last_error}"
    )


def scenario_stream(params: DistributionParams, start: int, count: int) -> list[Scenario]:
    return [sample_scenario(params, start + i) for i in range(count)]


def default_distribution_params(seed: int = 0) -> DistributionParams:
    """Desk-scale profile: |S| around 9-13, one or two robots, short missions."""
    return DistributionParams(rng_seed=seed)


def reference_distribution_params(seed: int = 0) -> DistributionParams:
    """Household reference profile: 12 objects over 6 labels, one closed
    container holding exactly one of them, one destination. Its decision space
    has exactly 28 entries."""
    return DistributionParams(
        n_robots=(1, 3),
        n_subtasks=(1, 4),
        n_objects=(12, 12),
        n_containers=(1, 1),
        n_destinations=(1, 1),
        n_enclosed=(1, 1),
        safety_prob=0.25,
        multi_destination_prob=0.0,
        horizon_slack=2,
        rng_seed=seed,
    )


# --- canonical plan ----------------------------------------------------------

def _subtask_bindings(env: Environment, mission: Mission) -> list[int]:
    """Bind each sub-task to a distinct object index, in mission order."""
    used: set[int] = set()
    bindings = []
    for st in mission.subtasks:
        idx = next(
            (
                i
                for i, o in enumerate(env.objects)
                if o.label == st.object_label and i not in used
            ),
            None,
        )
        if idx is None:
            raise OracleError(f"no unbound object labelled {st.object_label!r}")
        used.add(idx)
        bindings.append(idx)
    return bindings


def _expansion(env: Environment, obj_idx: int, dest: str) -> list[Decision]:
    obj = env.objects[obj_idx]
    if obj.inside is not None:
        return [
            Decision(GOTO, obj.inside),
            Decision(OPEN_DOOR, obj.inside),
            Decision(GRAB, obj.id),
            Decision(GOTO, dest),
            Decision(PUTDOWN, dest),
        ]
    return [
        Decision(GOTO, obj.id),
        Decision(GRAB, obj.id),
        Decision(GOTO, dest),
        Decision(PUTDOWN, dest),
    ]


def _build_oracle(env: Environment, mission: Mission, n_robots: int) -> Plan:
    """Deterministic canonical plan: sub-tasks assigned greedily in mission
    order to the eligible robot with the shortest timeline; each expands to
    fetch-and-deliver steps with the first allowed destination; robots pad
    with Idle."""
    timelines: list[list[Decision]] = [[] for _ in range(n_robots)]
    safety = mission.safety
    for st, obj_idx in zip(mission.subtasks, _subtask_bindings(env, mission)):
        obj_id = env.objects[obj_idx].id
        eligible = [
            r
            for r in range(n_robots)
            if not (safety is not None and safety.robot == r and safety.forbidden_object == obj_id)
        ]
        if not eligible:
            raise OracleError(f"no robot may handle {obj_id}")
        robot = min(eligible, key=lambda r: (len(timelines[r]), r))
        timelines[robot].extend(_expansion(env, obj_idx, st.destinations[0]))
    length = max((len(tl) for tl in timelines), default=0)
    return tuple(
        tuple(
            timelines[r][t] if t < len(timelines[r]) else IDLE_DECISION
            for r in range(n_robots)
        )
        for t in range(length)
    )


@lru_cache(maxsize=4096)
def oracle_plan(scenario: Scenario, order_schedule: OrderSchedule | None = None) -> Plan:
    """Canonical ground-truth plan; independent of the robot-order schedule
    (the schedule only affects how the plan is flattened into a sequence)."""
    return _build_oracle(scenario.env, scenario.mission, scenario.n_robots)


def anchor_decision(scenario: Scenario, t: int, robot: int) -> Decision:
    """The canonical plan's decision for (t, robot); Idle beyond its length."""
    plan = oracle_plan(scenario)
    if 0 <= t < len(plan):
        return plan[t][robot]
    return IDLE_DECISION


def teacher_sequence(scenario: Scenario, schedule: OrderSchedule) -> tuple[Decision, ...]:
    """The canonical plan flattened along the schedule, Idle-padded to N*H."""
    n = scenario.n_robots
    out = []
    for k in range(n * scenario.horizon):
        t, pos = step_position(k, n)
        out.append(anchor_decision(scenario, t, schedule.order_at(t)[pos]))
    return tuple(out)


def flat_to_plan(
    scenario: Scenario, schedule: OrderSchedule, flat: tuple[Decision, ...]
) -> Plan:
    """Reassemble a flat iteration-ordered sequence into per-step joint decisions."""
    n = scenario.n_robots
    if len(flat) % n:
        raise ValueError("sequence length is not a multiple of the robot count")
    steps = []
    for t in range(len(flat) // n):
        order = schedule.order_at(t)
        joint: list[Decision | None] = [None] * n
        for pos in range(n):
            joint[order[pos]] = flat[t * n + pos]
        steps.append(tuple(joint))
    return tuple(steps)


def validate_scenario_plan(scenario: Scenario, plan: Plan) -> world.ValidationResult:
    return world.validate_plan(
        scenario.env, scenario.mission, scenario.n_robots, scenario.horizon, plan
    )


# --- feasible-decision enumeration -------------------------------------------

@dataclass(frozen=True)
class FeasibleResult:
    decisions: tuple[Decision, ...]
    mode: str  # "exact" | "oracle"


class FeasibilityIndex:
    """Mission-aware feasibility search for one scenario.

    A decision is feasible at iteration k when it is executable in the current
    state and some completion of the remaining iterations accomplishes the
    mission within the horizon. Small instances are decided by exhaustive
    depth-limited search (memoized on step boundaries); beyond the budget the
    enumerator falls back to following the canonical plan only, and the mode is
    reported so experiments can restrict themselves to exact instances.
    """

    def __init__(
        self,
        scenario: Scenario,
        schedule: OrderSchedule | None = None,
        budget: int = EXACT_SEARCH_BUDGET,
    ):
        self.scenario = scenario
        self.schedule = schedule or schedule_for(scenario)
        self.budget = budget
        self.env = scenario.env
        self.mission = scenario.mission
        self.n = scenario.n_robots
        self.space = decision_space(scenario.env)
        self._teacher = teacher_sequence(scenario, self.schedule)
        self._memo: dict = {}

    @property
    def total_iterations(self) -> int:
        return self.n * self.scenario.horizon

    def exact_at(self, k: int) -> bool:
        remaining = self.total_iterations - k
        return remaining * math.log(max(len(self.space), 2)) <= math.log(self.budget)

    def feasible(self, history: tuple[Decision, ...]) -> FeasibleResult:
        """Feasible decisions at iteration len(history), for a flat prefix laid
        out along the scenario's own order schedule."""
        k = len(history)
        if k >= self.total_iterations:
            raise ValueError("sequence already complete")
        entries = []
        for i, d in enumerate(history):
            t, pos = step_position(i, self.n)
            entries.append((t, self.schedule.order_at(t)[pos], d))
        t, pos = step_position(k, self.n)
        return self._feasible(tuple(entries), self.schedule.order_at(t)[pos], k)

    def feasible_for_context(self, ctx: Context) -> FeasibleResult:
        """Feasible decisions for a live planning context (whose step orders
        may differ from the schedule after reorders; existence of a completion
        does not depend on the within-step visiting order)."""
        if ctx.cursor is None:
            raise ValueError("sequence already complete")
        return self._feasible(ctx.history, ctx.cursor[1], ctx.k)

    def _feasible(self, entries, robot: int, k: int) -> FeasibleResult:
        if not self.exact_at(k):
            on_teacher = all(
                d == anchor_decision(self.scenario, t, r) for (t, r, d) in entries
            )
            if not on_teacher:
                raise BudgetError(
                    f"{self.scenario.id}: search budget exceeded off the canonical path"
                )
            t = entries[-1][0] if len(entries) % self.n else len(entries) // self.n
            return FeasibleResult((anchor_decision(self.scenario, t, robot),), "oracle")
        state, t, effects, grabbed, assigned, violated = self._replay(entries)
        if violated:
            return FeasibleResult((), "exact")
        remaining = tuple(r for r in range(self.n) if r not in assigned and r != robot)
        out = []
        for d in self.space:
            eff = self._candidate_effect(state, robot, d, grabbed)
            if eff is None:
                continue
            next_grabbed = grabbed | {d.target} if d.kind == GRAB else grabbed
            if self._exists_mid(state, t, remaining, effects + [eff], next_grabbed):
                out.append(d)
        return FeasibleResult(tuple(out), "exact")

    def _candidate_effect(self, state, robot, d, grabbed):
        if violates_safety(robot, d, self.mission.safety):
            return None
        if d.kind == GRAB and d.target in grabbed:
            return None
        try:
            return world._plan_effect(self.env, state, robot, d)
        except InfeasibleDecision:
            return None

    def _replay(self, entries):
        """Fold (t, robot, decision) entries: full steps applied jointly, the
        trailing partial step kept as unmerged effects."""
        by_step: dict[int, dict[int, Decision]] = {}
        violated = False
        for t, robot, d in entries:
            violated = violated or violates_safety(robot, d, self.mission.safety)
            if robot in by_step.setdefault(t, {}):
                raise ValueError(f"robot {robot} decided twice at step {t}")
            by_step[t][robot] = d
        state = world.initial_state(self.env, self.n)
        current = len(entries) // self.n
        try:
            for t in range(current):
                row = by_step.get(t, {})
                joint = tuple(row.get(r, IDLE_DECISION) for r in range(self.n))
                if len(row) != self.n:
                    raise ValueError(f"step {t} is incomplete in the prefix")
                state = world.apply_joint(self.env, state, joint)
            effects = []
            grabbed: frozenset = frozenset()
            partial = by_step.get(current, {})
            for robot in sorted(partial):
                d = partial[robot]
                if d.kind == GRAB and d.target in grabbed:
                    raise ValueError("prefix grabs one object twice in a step")
                effects.append(world._plan_effect(self.env, state, robot, d))
                if d.kind == GRAB:
                    grabbed = grabbed | {d.target}
        except InfeasibleDecision as exc:
            raise ValueError(f"history prefix is infeasible: {exc}") from exc
        return state, current, effects, grabbed, frozenset(partial), violated

    def _exists_mid(self, state, t, remaining, effects, grabbed) -> bool:
        if not remaining:
            merged = world._merge(self.env, state, effects)
            merged = replace(merged, time=state.time + 1)
            return self._exists_from_step(merged, t + 1)
        robot = remaining[0]
        for d in self.space:
            eff = self._candidate_effect(state, robot, d, grabbed)
            if eff is None:
                continue
            next_grabbed = grabbed | {d.target} if d.kind == GRAB else grabbed
            if self._exists_mid(state, t, remaining[1:], effects + [eff], next_grabbed):
                return True
        return False

    def _exists_from_step(self, state, t) -> bool:
        if world.mission_satisfied(self.env, state, self.mission):
            return True  # idle-pad the rest
        if t >= self.scenario.horizon:
            return False
        key = (t, state)
        cached = self._memo.get(key)
        if cached is not None:
            return cached
        self._memo[key] = False
        result = self._exists_mid(state, t, tuple(range(self.n)), [], frozenset())
        self._memo[key] = result
        return result


def feasible_next_decisions(
    scenario: Scenario,
    history: tuple[Decision, ...],
    schedule: OrderSchedule | None = None,
    budget: int = EXACT_SEARCH_BUDGET,
) -> FeasibleResult:
    """Decisions at iteration len(history) from which the mission stays
    completable within the horizon; see FeasibilityIndex for the search mode."""
    return FeasibilityIndex(scenario, schedule, budget).feasible(history)


# --- label selection ----------------------------------------------------------

def argmax_feasible(
    scores, feasible: tuple[Decision, ...], index: dict[Decision, int]
) -> Decision:
    """Highest-scoring feasible decision; ties go to the lower space index."""
    best: Decision | None = None
    best_score = -math.inf
    for d in sorted(feasible, key=lambda d: index[d]):
        s = scores[index[d]]
        if s > best_score:
            best, best_score = d, s
    if best is None:
        raise NoFeasibleError("empty feasible set")
    return best


def selector_F(ctx: Context, feasible: tuple[Decision, ...], scorer) -> Decision:
    """Pick the feasible decision with the highest scorer confidence."""
    if not feasible:
        raise NoFeasibleError("empty feasible set")
    space = decision_space(ctx.scenario.env)
    vec = scorer.score_all(ctx, space)
    return argmax_feasible(vec.scores, feasible, decision_index(ctx.scenario.env))


@dataclass(frozen=True)
class LabelResult:
    """Ground-truth label sequence plus the scores that back calibration."""

    decisions: tuple[Decision, ...]
    scores: tuple[float, ...]  # normalized score of each labeled decision
    vectors: tuple  # full ScoreVector per iteration
    modes: tuple[str, ...]

    @property
    def mode(self) -> str:
        return "exact" if all(m == "exact" for m in self.modes) else "oracle"


def label_sequence(
    scenario: Scenario,
    scorer,
    schedule: OrderSchedule | None = None,
    label_mode: str = "selector",
    budget: int = EXACT_SEARCH_BUDGET,
) -> LabelResult:
    """Build the calibration label auto-regressively and score each step.

    In "selector" mode each iteration enumerates the feasible decisions and
    takes the scorer's argmax among them; in "oracle" mode the label is the
    canonical plan flattened along the schedule (the unique-solution shortcut).
    The produced sequence is re-validated through the world model.
    """
    if label_mode not in ("selector", "oracle"):
        raise ConfigError(f"unknown label mode {label_mode!r}")
    schedule = schedule or schedule_for(scenario)
    space = decision_space(scenario.env)
    index = decision_index(scenario.env)
    findex = FeasibilityIndex(scenario, schedule, budget) if label_mode == "selector" else None
    ctx = initial_context(scenario, schedule)
    decisions: list[Decision] = []
    scores: list[float] = []
    vectors = []
    modes: list[str] = []
    for _ in range(scenario.n_robots * scenario.horizon):
        vec = scorer.score_all(ctx, space)
        if findex is None:
            t, robot = ctx.cursor
            d = anchor_decision(scenario, t, robot)
            mode = "oracle"
        else:
            fs = findex.feasible(tuple(decisions))
            if not fs.decisions:
                raise NoFeasibleError(f"{scenario.id}: no feasible decision at k={len(decisions)}")
            d = argmax_feasible(vec.scores, fs.decisions, index)
            mode = fs.mode
        decisions.append(d)
        scores.append(vec.scores[index[d]])
        vectors.append(vec)
        modes.append(mode)
        ctx = advance(ctx, d, schedule)
    plan = flat_to_plan(scenario, schedule, tuple(decisions))
    result = validate_scenario_plan(scenario, plan)
    if not result.complete:
        raise OracleError(f"{scenario.id}: label sequence fails validation ({result.reason})")
    return LabelResult(tuple(decisions), tuple(scores), tuple(vectors), tuple(modes))


# --- serialization ------------------------------------------------------------

def params_to_dict(params: DistributionParams) -> dict:
    return {
        "schema_version": params.schema_version,
        "n_robots": list(params.n_robots),
        "n_subtasks": list(params.n_subtasks),
        "n_objects": list(params.n_objects),
        "n_containers": list(params.n_containers),
        "n_destinations": list(params.n_destinations),
        "enclosure_prob": params.enclosure_prob,
        "n_enclosed": None if params.n_enclosed is None else list(params.n_enclosed),
        "safety_prob": params.safety_prob,
        "multi_destination_prob": params.multi_destination_prob,
        "horizon_slack": params.horizon_slack,
        "object_labels": list(params.object_labels),
        "container_labels": list(params.container_labels),
        "destination_labels": list(params.destination_labels),
        "rng_seed": params.rng_seed,
    }


def params_from_dict(data: dict) -> DistributionParams:
    def pair(name, default):
        value = data.get(name, default)
        return None if value is None else (int(value[0]), int(value[1]))

    base = DistributionParams()
    params = DistributionParams(
        n_robots=pair("n_robots", base.n_robots),
        n_subtasks=pair("n_subtasks", base.n_subtasks),
        n_objects=pair("n_objects", base.n_objects),
        n_containers=pair("n_containers", base.n_containers),
        n_destinations=pair("n_destinations", base.n_destinations),
        enclosure_prob=float(data.get("enclosure_prob", base.enclosure_prob)),
        n_enclosed=pair("n_enclosed", None),
        safety_prob=float(data.get("safety_prob", base.safety_prob)),
        multi_destination_prob=float(
            data.get("multi_destination_prob", base.multi_destination_prob)
        ),
        horizon_slack=int(data.get("horizon_slack", base.horizon_slack)),
        object_labels=tuple(data.get("object_labels", base.object_labels)),
        container_labels=tuple(data.get("container_labels", base.container_labels)),
        destination_labels=tuple(data.get("destination_labels", base.destination_labels)),
        rng_seed=int(data.get("rng_seed", base.rng_seed)),
        schema_version=int(data.get("schema_version", 1)),
    )
    validate_params(params)
    return params


def scenario_to_dict(scenario: Scenario) -> dict:
    return {
        "schema_version": 1,
        "id": scenario.id,
        "n_robots": scenario.n_robots,
        "skills": list(scenario.skills),
        "mission": world.mission_to_dict(scenario.mission),
        "horizon": scenario.horizon,
        "env": world.environment_to_dict(scenario.env),
        "order_seed": scenario.order_seed,
        "decision_space_size": len(decision_space(scenario.env)),
    }


def validate_scenario(scenario: Scenario) -> None:
    """Cross-reference checks for externally loaded scenarios."""
    if scenario.n_robots < 1:
        raise ConfigError("scenario needs at least one robot")
    if scenario.horizon < 1:
        raise ConfigError("scenario horizon must be >= 1")
    if len(scenario.env.robot_start) < scenario.n_robots:
        raise ConfigError("environment places fewer robots than the scenario uses")
    labels = {o.label for o in scenario.env.objects}
    locations = {loc.id for loc in scenario.env.locations}
    for st in scenario.mission.subtasks:
        if not st.destinations:
            raise ConfigError(f"sub-task for {st.object_label!r} has no destinations")
        if st.object_label not in labels:
            raise ConfigError(f"no object labelled {st.object_label!r} in the environment")
        missing = set(st.destinations) - locations
        if missing:
            raise ConfigError(f"unknown destinations {sorted(missing)}")
    safety = scenario.mission.safety
    if safety is not None:
        if not 0 <= safety.robot < scenario.n_robots:
            raise ConfigError(f"safety constraint names robot {safety.robot}")
        if safety.forbidden_object not in {o.id for o in scenario.env.objects}:
            raise ConfigError(f"unknown forbidden object {safety.forbidden_object!r}")


def scenario_from_dict(data: dict) -> Scenario:
    scenario = Scenario(
        id=data["id"],
        n_robots=int(data["n_robots"]),
        skills=tuple(data["skills"]),
        mission=world.mission_from_dict(data["mission"]),
        horizon=int(data["horizon"]),
        env=world.environment_from_dict(data["env"]),
        order_seed=int(data["order_seed"]),
    )
    validate_scenario(scenario)
    return scenario


def write_scenarios(scenarios, path) -> None:
    world.dump_json([scenario_to_dict(s) for s in scenarios], path)


def read_scenarios(path) -> list[Scenario]:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if isinstance(data, dict):
        data = [data]
    return [scenario_from_dict(d) for d in data]
