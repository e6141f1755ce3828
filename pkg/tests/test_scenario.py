import dataclasses

import pytest

from confplan import world
from confplan.errors import ConfigError, NoFeasibleError
from confplan.scenario import (
    FeasibilityIndex,
    Scenario,
    anchor_decision,
    decision_space,
    default_distribution_params,
    feasible_next_decisions,
    flat_to_plan,
    label_sequence,
    oracle_plan,
    params_from_dict,
    params_to_dict,
    reference_distribution_params,
    sample_scenario,
    scenario_from_dict,
    scenario_to_dict,
    schedule_for,
    selector_F,
    teacher_sequence,
    validate_scenario_plan,
)
from confplan.scoring import ScoreVector, ScorerSpec, build_scorer
from confplan.world import (
    ACTION_KINDS,
    DESTINATION,
    CONTAINER_SITE,
    GOTO,
    GRAB,
    IDLE_DECISION,
    OBJECT_SITE,
    OPEN_DOOR,
    PUTDOWN,
    Container,
    Decision,
    Environment,
    Location,
    Mission,
    SemanticObject,
    SubTask,
)


def make_scenario(env, mission, n_robots=1, horizon=6, order_seed=0, sid="scn-test"):
    return Scenario(
        id=sid,
        n_robots=n_robots,
        skills=ACTION_KINDS,
        mission=mission,
        horizon=horizon,
        env=env,
        order_seed=order_seed,
    )


def two_object_env(n_robots=1):
    """2 loose objects, 1 container, 1 destination: a 9-decision space."""
    return Environment(
        locations=(
            Location("loc-obj-1", "apple spot", OBJECT_SITE),
            Location("loc-obj-2", "bread spot", OBJECT_SITE),
            Location("loc-cont-1", "fridge spot", CONTAINER_SITE),
            Location("loc-dest-1", "table", DESTINATION),
        ),
        objects=(
            SemanticObject("obj-1", "apple", "loc-obj-1"),
            SemanticObject("obj-2", "bread", "loc-obj-2"),
        ),
        containers=(Container("cont-1", "fridge", "loc-cont-1"),),
        robot_start=("loc-dest-1",) * n_robots,
    )


class StubScorer:
    """Fixed score tables keyed by iteration index; uniform elsewhere."""

    concurrency_safe = True

    def __init__(self, tables=None):
        self.tables = tables or {}
        from confplan.scoring import CallCounter

        self.counter = CallCounter()

    def score_all(self, ctx, space, count=True):
        if count:
            self.counter.add(len(space), tag=ctx.scenario.id, t=ctx.cursor[0])
        raw = self.tables.get(ctx.k)
        if raw is None:
            raw = [0.0] * len(space)
        return ScoreVector.from_raw(raw)


# --- decision space -----------------------------------------------------------


def test_decision_space_size_nine():
    space = decision_space(two_object_env())
    # (2 loose + 1 container + 1 destination) GoTo + 2 Grab + 1 PutDown
    # + 1 OpenDoor + 1 Idle
    assert len(space) == 9
    kinds = [d.kind for d in space]
    assert kinds == [GOTO] * 4 + [GRAB] * 2 + [PUTDOWN] + [OPEN_DOOR] + ["idle"]
    assert space[-1] == IDLE_DECISION


def test_decision_space_empty_env_is_idle_only():
    env = Environment(locations=(), objects=(), containers=(), robot_start=())
    assert decision_space(env) == (IDLE_DECISION,)


def test_reference_profile_reaches_28_decisions():
    params = reference_distribution_params(3)
    for draw in range(5):
        s = sample_scenario(params, draw)
        assert len(decision_space(s.env)) == 28
        assert len({o.label for o in s.env.objects}) == 6
        assert len(s.env.objects) == 12
        assert len(s.skills) == 5


# --- sampling ----------------------------------------------------------------


def test_sampling_is_deterministic_per_draw_index():
    params = default_distribution_params(7)
    a = scenario_to_dict(sample_scenario(params, 4))
    b = scenario_to_dict(sample_scenario(params, 4))
    assert a == b
    # draw order does not matter: index keying, not stream sharing
    c = scenario_to_dict(sample_scenario(params, 2))
    _ = sample_scenario(params, 9)
    d = scenario_to_dict(sample_scenario(params, 2))
    assert c == d


def test_k_zero_missions_have_empty_oracle_and_slack_horizon():
    params = dataclasses.replace(
        default_distribution_params(1),
        n_subtasks=(0, 0),
        safety_prob=0.0,
        horizon_slack=3,
    )
    s = sample_scenario(params, 0)
    assert s.mission.subtasks == ()
    assert oracle_plan(s) == ()
    assert s.horizon == 3
    assert validate_scenario_plan(s, oracle_plan(s)).complete


def test_params_roundtrip_and_validation():
    params = reference_distribution_params(5)
    assert params_from_dict(params_to_dict(params)) == params
    with pytest.raises(ConfigError):
        params_from_dict(params_to_dict(dataclasses.replace(params, n_robots=(2, 1))))


def test_scenario_roundtrip():
    s = sample_scenario(default_distribution_params(11), 3)
    assert scenario_from_dict(scenario_to_dict(s)) == s


def test_sampled_horizon_is_oracle_length_plus_slack():
    params = dataclasses.replace(default_distribution_params(2), horizon_slack=2)
    for draw in range(6):
        s = sample_scenario(params, draw)
        assert s.horizon == len(oracle_plan(s)) + 2


# --- oracle plan ---------------------------------------------------------------


def fig_style_four_delivery_scenario():
    """Four loose objects to two destinations with a single robot."""
    env = Environment(
        locations=(
            Location("loc-obj-1", "tomato spot", OBJECT_SITE),
            Location("loc-obj-2", "apple spot", OBJECT_SITE),
            Location("loc-obj-3", "kettle spot", OBJECT_SITE),
            Location("loc-obj-4", "bread spot", OBJECT_SITE),
            Location("loc-sink", "sink", DESTINATION),
            Location("loc-table", "table", DESTINATION),
        ),
        objects=(
            SemanticObject("obj-1", "tomato", "loc-obj-1"),
            SemanticObject("obj-2", "apple", "loc-obj-2"),
            SemanticObject("obj-3", "kettle", "loc-obj-3"),
            SemanticObject("obj-4", "bread", "loc-obj-4"),
        ),
        containers=(),
        robot_start=("loc-sink",),
    )
    mission = Mission(
        (
            SubTask("tomato", ("loc-sink",)),
            SubTask("apple", ("loc-sink",)),
            SubTask("kettle", ("loc-table",)),
            SubTask("bread", ("loc-table",)),
        )
    )
    return make_scenario(env, mission, n_robots=1, horizon=16)


def test_oracle_four_deliveries_takes_sixteen_steps():
    s = fig_style_four_delivery_scenario()
    plan = oracle_plan(s)
    assert len(plan) == 16  # four sub-tasks, four decisions each
    assert validate_scenario_plan(s, plan).complete


def test_oracle_leaves_extra_robot_idle():
    env = two_object_env(n_robots=3)
    mission = Mission(
        (SubTask("apple", ("loc-dest-1",)), SubTask("bread", ("loc-dest-1",)))
    )
    s = make_scenario(env, mission, n_robots=3, horizon=6)
    plan = oracle_plan(s)
    assert all(jd[2] == IDLE_DECISION for jd in plan)
    assert validate_scenario_plan(s, plan).complete


def test_oracle_respects_safety_assignment():
    env = two_object_env(n_robots=2)
    mission = Mission(
        (SubTask("apple", ("loc-dest-1",)),),
        safety=world.SafetyConstraint(robot=0, forbidden_object="obj-1"),
    )
    s = make_scenario(env, mission, n_robots=2, horizon=5)
    plan = oracle_plan(s)
    assert all(
        not world.violates_safety(0, jd[0], mission.safety) for jd in plan
    )
    assert validate_scenario_plan(s, plan).complete


def test_enclosed_subtask_expands_to_five_steps():
    env = Environment(
        locations=(
            Location("loc-cont-1", "fridge spot", CONTAINER_SITE),
            Location("loc-dest-1", "table", DESTINATION),
        ),
        objects=(SemanticObject("obj-1", "tomato", "loc-cont-1", inside="cont-1"),),
        containers=(Container("cont-1", "fridge", "loc-cont-1"),),
        robot_start=("loc-dest-1",),
    )
    mission = Mission((SubTask("tomato", ("loc-dest-1",)),))
    s = make_scenario(env, mission, horizon=5)
    plan = oracle_plan(s)
    assert [jd[0].kind for jd in plan] == [GOTO, OPEN_DOOR, GRAB, GOTO, PUTDOWN]
    assert validate_scenario_plan(s, plan).complete


# --- feasibility ------------------------------------------------------------------


def test_feasible_with_no_subtasks_is_every_world_feasible_decision():
    env = two_object_env()
    s = make_scenario(env, Mission(()), horizon=2)
    result = feasible_next_decisions(s, ())
    assert result.mode == "exact"
    state = world.initial_state(env, 1)
    expected = tuple(
        d
        for d in decision_space(env)
        if world.decision_feasible(env, state, 0, d)
    )
    assert result.decisions == expected
    assert IDLE_DECISION in result.decisions


def test_feasible_under_tight_horizon_forces_the_door_open():
    env = Environment(
        locations=(
            Location("loc-cont-1", "fridge spot", CONTAINER_SITE),
            Location("loc-dest-1", "table", DESTINATION),
        ),
        objects=(SemanticObject("obj-1", "tomato", "loc-cont-1", inside="cont-1"),),
        containers=(Container("cont-1", "fridge", "loc-cont-1"),),
        robot_start=("loc-dest-1",),
    )
    mission = Mission((SubTask("tomato", ("loc-dest-1",)),))
    s = make_scenario(env, mission, horizon=5)  # exactly the oracle length
    history = (Decision(GOTO, "cont-1"),)
    result = feasible_next_decisions(s, history)
    assert result.mode == "exact"
    assert result.decisions == (Decision(OPEN_DOOR, "cont-1"),)


def test_idle_feasible_for_finished_robot_while_other_works():
    env = two_object_env(n_robots=2)
    mission = Mission((SubTask("apple", ("loc-dest-1",)),))
    s = make_scenario(env, mission, n_robots=2, horizon=5, order_seed=1)
    schedule = schedule_for(s)
    index = FeasibilityIndex(s, schedule)
    # walk the teacher sequence one full step, then ask about the idle robot
    teacher = teacher_sequence(s, schedule)
    n = s.n_robots
    for k in range(n, 2 * n):
        result = index.feasible(teacher[:k])
        t, pos = divmod(k, n)
        robot = schedule.order_at(t)[pos]
        if anchor_decision(s, t, robot) == IDLE_DECISION:
            assert IDLE_DECISION in result.decisions
            break
    else:
        pytest.skip("no idle robot in this step")


def test_exact_feasible_always_contains_oracle_next_decision():
    params = default_distribution_params(23)
    checked = 0
    for draw in range(8):
        s = sample_scenario(params, draw)
        schedule = schedule_for(s)
        index = FeasibilityIndex(s, schedule)
        teacher = teacher_sequence(s, schedule)
        if not index.exact_at(0):
            continue
        for k in range(len(teacher)):
            result = index.feasible(teacher[:k])
            assert teacher[k] in result.decisions
            checked += 1
    assert checked > 0


def test_budget_fallback_reports_oracle_mode():
    s = fig_style_four_delivery_scenario()  # |S| = 13, T = 16: way past 10^3
    schedule = schedule_for(s)
    result = feasible_next_decisions(s, (), schedule, budget=1000)
    assert result.mode == "oracle"
    assert result.decisions == (teacher_sequence(s, schedule)[0],)


# --- selector and labels ------------------------------------------------------------


def test_selector_singleton_ignores_scores():
    env = two_object_env()
    s = make_scenario(env, Mission(()), horizon=1)
    scorer = StubScorer()
    only = (Decision(GOTO, "obj-2"),)
    from confplan.context import initial_context

    ctx = initial_context(s, schedule_for(s))
    assert selector_F(ctx, only, scorer) == only[0]


def test_selector_picks_highest_score_and_breaks_ties_by_index():
    env = two_object_env()
    s = make_scenario(env, Mission(()), horizon=1)
    space = decision_space(env)
    from confplan.context import initial_context

    ctx = initial_context(s, schedule_for(s))
    raw = [0.0] * len(space)
    raw[1], raw[3] = 0.6, 0.3
    scorer = StubScorer({0: raw})
    feas = (space[3], space[1])
    assert selector_F(ctx, feas, scorer) == space[1]
    # exact tie: lower decision-space index wins
    raw_tie = [0.0] * len(space)
    scorer_tie = StubScorer({0: raw_tie})
    assert selector_F(ctx, (space[5], space[2]), scorer_tie) == space[2]
    with pytest.raises(NoFeasibleError):
        selector_F(ctx, (), scorer)


def test_label_sequence_k_zero_is_all_idle():
    params = dataclasses.replace(
        default_distribution_params(1), n_subtasks=(0, 0), safety_prob=0.0
    )
    s = sample_scenario(params, 0)
    scorer = build_scorer(ScorerSpec(kind="oracle-indicator"))
    lr = label_sequence(s, scorer, label_mode="selector")
    assert all(d == IDLE_DECISION for d in lr.decisions)
    assert len(lr.decisions) == s.n_robots * s.horizon


def test_label_with_oracle_indicator_scorer_follows_the_oracle():
    params = dataclasses.replace(default_distribution_params(9), horizon_slack=1)
    for draw in range(4):
        s = sample_scenario(params, draw)
        scorer = build_scorer(ScorerSpec(kind="oracle-indicator"))
        lr = label_sequence(s, scorer, label_mode="selector")
        schedule = schedule_for(s)
        assert lr.decisions == teacher_sequence(s, schedule)
        plan = flat_to_plan(s, schedule, lr.decisions)
        assert validate_scenario_plan(s, plan).complete


def test_label_forced_steps_match_oracle_when_feasible_sets_are_singletons():
    env = Environment(
        locations=(
            Location("loc-cont-1", "fridge spot", CONTAINER_SITE),
            Location("loc-dest-1", "table", DESTINATION),
        ),
        objects=(SemanticObject("obj-1", "tomato", "loc-cont-1", inside="cont-1"),),
        containers=(Container("cont-1", "fridge", "loc-cont-1"),),
        robot_start=("loc-dest-1",),
    )
    mission = Mission((SubTask("tomato", ("loc-dest-1",)),))
    s = make_scenario(env, mission, horizon=5)  # tight horizon: unique plan
    scorer = StubScorer()  # uniform scores: selector must rely on feasibility
    lr = label_sequence(s, scorer, label_mode="selector")
    assert lr.decisions == teacher_sequence(s, schedule_for(s))


def test_label_validates_complete_oracle_mode():
    params = default_distribution_params(31)
    for draw in range(6):
        s = sample_scenario(params, draw)
        scorer = build_scorer(ScorerSpec())  # default noisy-oracle
        lr = label_sequence(s, scorer, label_mode="oracle")
        assert len(lr.decisions) == s.n_robots * s.horizon
        assert len(lr.scores) == len(lr.decisions)
        assert all(0.0 <= v <= 1.0 for v in lr.scores)


def test_oracle_validates_on_a_hundred_scenarios():
    params = default_distribution_params(42)
    multi = dataclasses.replace(
        reference_distribution_params(43), n_robots=(1, 3), multi_destination_prob=0.5,
        n_destinations=(2, 2),
    )
    for profile, count in ((params, 70), (multi, 30)):
        for draw in range(count):
            s = sample_scenario(profile, draw)
            assert validate_scenario_plan(s, oracle_plan(s)).complete


def test_generation_error_after_bounded_retries(monkeypatch):
    import confplan.scenario as scenario_module
    from confplan.errors import GenerationError, OracleError

    def always_fails(env, mission, n_robots):
        raise OracleError("forced failure")

    monkeypatch.setattr(scenario_module, "_build_oracle", always_fails)
    with pytest.raises(GenerationError):
        sample_scenario(default_distribution_params(0), 0)


def test_scenario_from_dict_validates_cross_references():
    s = sample_scenario(default_distribution_params(11), 3)
    data = scenario_to_dict(s)
    import copy

    bad = copy.deepcopy(data)
    bad["mission"]["subtasks"] = [{"object_label": "ghost", "destinations": ["loc-dest-1"]}]
    with pytest.raises(ConfigError):
        scenario_from_dict(bad)
    bad = copy.deepcopy(data)
    bad["mission"]["safety"] = {"robot": 99, "forbidden_object": "obj-1"}
    with pytest.raises(ConfigError):
        scenario_from_dict(bad)
    bad = copy.deepcopy(data)
    bad["n_robots"] = 0
    with pytest.raises(ConfigError):
        scenario_from_dict(bad)
