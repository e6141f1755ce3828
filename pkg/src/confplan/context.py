"""Per-robot decision contexts and the ordered-set machinery.

A context is a structured value: the static scenario description, the history
of committed decisions ordered by (step, position in the step's robot order),
and a cursor naming the robot whose decision comes next. Text is a projection
of the structure (`render_text`), used verbatim by external scorers; synthetic
scorers read the structured fields directly.

Robot orders are drawn per step from a small fixed family of permutations
(identity, rotations, reversal) keyed by the scenario's order seed, so the
calibration and test sequences share the same order-generating distribution.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import TYPE_CHECKING

import numpy as np

from .world import Decision, SKILL_PHRASES

if TYPE_CHECKING:
    from .scenario import Scenario


def order_family(n_robots: int) -> tuple[tuple[int, ...], ...]:
    """The finite family of robot orders: identity, rotations, reversal."""
    if n_robots < 1:
        raise ValueError("need at least one robot")
    identity = tuple(range(n_robots))
    family = [identity]
    for shift in range(1, n_robots):
        rotation = identity[shift:] + identity[:shift]
        if rotation not in family:
            family.append(rotation)
    reverse = tuple(reversed(identity))
    if reverse not in family:
        family.append(reverse)
    return tuple(family)


@dataclass(frozen=True)
class OrderSchedule:
    """Deterministic per-step order draws from the family, keyed by a seed."""

    n_robots: int
    seed: int

    def order_at(self, t: int) -> tuple[int, ...]:
        family = order_family(self.n_robots)
        rng = np.random.default_rng(np.random.SeedSequence((self.seed, t, 0)))
        return family[int(rng.integers(len(family)))]

    def reorder(self, t: int, attempt: int, used) -> tuple[int, ...] | None:
        """Draw a fresh order for step t, without replacement against `used`.

        Returns None once the family is exhausted (the caller falls through to
        user help early).
        """
        family = order_family(self.n_robots)
        remaining = [o for o in family if o not in set(used)]
        if not remaining:
            return None
        rng = np.random.default_rng(np.random.SeedSequence((self.seed, t, attempt)))
        return remaining[int(rng.integers(len(remaining)))]


def iteration_index(t: int, position: int, n_robots: int) -> int:
    """Map (step, position within the step) to the flat iteration index."""
    return t * n_robots + position


def step_position(k: int, n_robots: int) -> tuple[int, int]:
    """Inverse of iteration_index: k -> (step, position)."""
    return divmod(k, n_robots)


@dataclass(frozen=True)
class Context:
    """Structured prompt state for one scenario at one point in the sequence."""

    scenario: "Scenario"
    history: tuple[tuple[int, int, Decision], ...] = ()  # (t, robot, decision)
    cursor: tuple[int, int] | None = None  # (t, robot) of the next decision

    @property
    def k(self) -> int:
        """Flat iteration index of the cursor (== number of decisions made)."""
        return len(self.history)


def initial_context(scenario: "Scenario", schedule: OrderSchedule) -> Context:
    """Context with empty history, cursor on the first robot of step 0."""
    if scenario.horizon < 1:
        return Context(scenario=scenario, cursor=None)
    first = schedule.order_at(0)[0]
    return Context(scenario=scenario, cursor=(0, first))


def advance(
    ctx: Context,
    chosen: Decision,
    schedule: OrderSchedule,
    order: tuple[int, ...] | None = None,
) -> Context:
    """Append the chosen decision and move the cursor along the step's order.

    `order` overrides the schedule's draw for the current step (used while a
    step is being redone under a redrawn order); the next step always starts
    from the schedule's own draw.
    """
    if ctx.cursor is None:
        raise ValueError("context is exhausted")
    t, robot = ctx.cursor
    position = sum(1 for (ht, _, _) in ctx.history if ht == t)
    history = ctx.history + ((t, robot, chosen),)
    n = ctx.scenario.n_robots
    if position + 1 < n:
        step_order = order if order is not None else schedule.order_at(t)
        cursor = (t, step_order[position + 1])
    elif t + 1 < ctx.scenario.horizon:
        cursor = (t + 1, schedule.order_at(t + 1)[0])
    else:
        cursor = None
    return Context(scenario=ctx.scenario, history=history, cursor=cursor)


def reset_step(ctx: Context, t: int, new_order: tuple[int, ...]) -> Context:
    """Drop every history entry of step t and restart it under `new_order`."""
    if ctx.cursor is not None and ctx.cursor[0] != t:
        raise ValueError(f"cursor is at step {ctx.cursor[0]}, not {t}")
    history = tuple(entry for entry in ctx.history if entry[0] != t)
    return Context(scenario=ctx.scenario, history=history, cursor=(t, new_order[0]))


@lru_cache(maxsize=8)
def _default_template() -> str:
    return (
        resources.files("confplan.templates").joinpath("context.txt").read_text("utf-8")
    )


def _render_environment(scenario: "Scenario") -> str:
    env = scenario.env
    lines = []
    for loc in env.locations:
        lines.append(f"- location {loc.id} ({loc.label}, {loc.kind})")
    for c in env.containers:
        lines.append(f"- container {c.id} ({c.label}) at {c.at}, door {c.door}")
    for o in env.objects:
        where = f"inside {o.inside}" if o.inside else f"at {o.at}"
        lines.append(f"- object {o.id} ({o.label}) {where}")
    starts = ", ".join(
        f"robot {j + 1} at {at}" for j, at in enumerate(env.robot_start[: scenario.n_robots])
    )
    lines.append(f"- robots: {starts}")
    return "\n".join(lines)


def _render_task(scenario: "Scenario") -> str:
    mission = scenario.mission
    if not mission.subtasks:
        lines = ["No sub-tasks; the robots may remain idle."]
    else:
        lines = [
            f"- move one {st.object_label} to {' or '.join(st.destinations)}"
            for st in mission.subtasks
        ]
    if mission.safety is not None:
        lines.append(
            f"- safety: robot {mission.safety.robot + 1} must never approach or grab "
            f"{mission.safety.forbidden_object}"
        )
    return "\n".join(lines)


RESPONSE_EXEMPLAR = (
    "Answer with exactly one option from the decision list, e.g. "
    '"grab object obj-1".'
)


def render_text(ctx: Context, template: str | None = None) -> str:
    """Render the context as canonical text; deterministic per structure.

    The template is overridable (same placeholder names); the packaged default
    lives in confplan/templates/context.txt.
    """
    scenario = ctx.scenario
    if ctx.history:
        history = "\n".join(
            f"robot {robot + 1} at step {t + 1}: {d.phrase()}"
            for (t, robot, d) in ctx.history
        )
    else:
        history = "(no actions yet)"
    if ctx.cursor is None:
        cursor = "(sequence complete)"
    else:
        t, robot = ctx.cursor
        cursor = f"current step {t + 1}; choose the next decision for robot {robot + 1}"
    text = (template or _default_template()).format(
        scenario_id=scenario.id,
        n_robots=scenario.n_robots,
        horizon=scenario.horizon,
        skills=", ".join(SKILL_PHRASES[kind] for kind in scenario.skills),
        environment=_render_environment(scenario),
        task=_render_task(scenario),
        response=RESPONSE_EXEMPLAR,
        history=history,
        cursor=cursor,
    )
    return text
