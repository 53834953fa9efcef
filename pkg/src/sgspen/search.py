"""Truncated randomized search for a reward improvement over a start point.

Starting from y_s, repeatedly pick a variable uniformly at random and
resample its state uniformly over the other states. A proposal beating the
start reward by more than the margin delta is returned immediately; a
proposal at least as good as the retained candidate is kept (sideways moves
escape reward plateaus); a worse one is undone. Every reward evaluation,
including the one for the start point, costs one unit of the query budget,
and exhaustion ends the call empty-handed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .outputs import DiscreteOutput


class SearchContractError(ValueError):
    pass


@dataclass(frozen=True)
class SearchConfig:
    delta: float
    budget: int
    # "undo the change, and begin the sampling again": default keeps the
    # retained candidate; True resets to the start point instead.
    reset_on_decrease: bool = False

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if self.budget < 1:
            raise ValueError("budget must be >= 1")


@dataclass(frozen=True)
class SearchOutcome:
    result: DiscreteOutput | None
    queries_used: int
    start_reward: float
    found_reward: float

    @property
    def success(self) -> bool:
        return self.result is not None

    def csv_row(self, example_id) -> str:
        return (
            f"{example_id},{self.queries_used},{self.start_reward!r},"
            f"{self.found_reward!r},{int(self.success)}"
        )


def _checked(reward, x, y: DiscreteOutput) -> float:
    value = reward(x, y)
    if not 0.0 <= value <= 1.0:
        raise SearchContractError(f"reward {value} outside [0, 1]")
    return value


def truncated_search(
    reward,
    x,
    y_start: DiscreteOutput,
    cfg: SearchConfig,
    rng: np.random.Generator,
) -> SearchOutcome:
    space = y_start.space
    r_start = _checked(reward, x, y_start)
    queries = 1

    states = list(y_start.states)
    r_current = r_start
    while queries < cfg.budget:
        i = int(rng.integers(space.num_vars))
        k = space.sizes[i]
        draw = int(rng.integers(k - 1))
        proposal = draw + 1 if draw >= states[i] else draw  # uniform over others
        previous = states[i]
        states[i] = proposal
        r_new = _checked(reward, x, DiscreteOutput(space, tuple(states)))
        queries += 1
        if r_new > r_start + cfg.delta:
            return SearchOutcome(DiscreteOutput(space, tuple(states)), queries, r_start, r_new)
        if r_new >= r_current:
            r_current = r_new
        elif cfg.reset_on_decrease:
            states = list(y_start.states)
            r_current = r_start
        else:
            states[i] = previous
    return SearchOutcome(None, queries, r_start, r_current)
