"""Iterative beam search over the reward function (inference-only baseline).

Each restart begins from one random output. Every round, the beam members
together with all of their single-variable substitutions are scored and the
top K kept (ties broken lexicographically); the search stops once the top-K
set has been unchanged for `stall_rounds` consecutive rounds or the hard
round cap is hit. Reward values are cached per call, so the reported query
count is the number of distinct outputs actually evaluated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .outputs import DiscreteOutput, OutputSpace


@dataclass(frozen=True)
class BeamConfig:
    width: int
    restarts: int = 10
    stall_rounds: int = 10
    max_rounds: int = 200

    def __post_init__(self):
        if self.width < 1 or self.restarts < 1:
            raise ValueError("beam width and restarts must be >= 1")


def iterative_beam_search(
    reward,
    x,
    space: OutputSpace,
    cfg: BeamConfig,
    rng: np.random.Generator,
) -> tuple[DiscreteOutput, float, int]:
    """Returns (best output over all restarts, its reward, reward queries)."""
    cache: dict[tuple[int, ...], float] = {}

    def score(states: tuple[int, ...]) -> float:
        if states not in cache:
            cache[states] = reward(x, DiscreteOutput(space, states))
        return cache[states]

    best_states: tuple[int, ...] | None = None
    best_reward = -1.0
    for _ in range(cfg.restarts):
        start = tuple(int(rng.integers(k)) for k in space.sizes)
        beam = [start]
        stall = 0
        for _ in range(cfg.max_rounds):
            candidates = set(beam)
            for member in beam:
                for i, k in enumerate(space.sizes):
                    for state in range(k):
                        if state != member[i]:
                            candidates.add(member[:i] + (state,) + member[i + 1 :])
            ranked = sorted(candidates, key=lambda s: (-score(s), s))
            new_beam = ranked[: cfg.width]
            if set(new_beam) == set(beam):
                stall += 1
                if stall >= cfg.stall_rounds:
                    break
            else:
                stall = 0
            beam = new_beam
        top = beam[0]
        if score(top) > best_reward:
            best_reward = score(top)
            best_states = top
    return DiscreteOutput(space, best_states), best_reward, len(cache)
