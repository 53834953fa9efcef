"""Relaxed and discrete structured outputs and the conversions between them.

Each of the L output variables ranges over K_i states. A relaxed output
assigns every variable a probability distribution over its states; a
discrete output picks one state per variable. Inference runs on relaxed
outputs, rewards consume discrete ones.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import softmax


@dataclass(frozen=True)
class OutputSpace:
    """L variables with per-variable state counts (each at least 2)."""

    sizes: tuple[int, ...]

    def __post_init__(self):
        if len(self.sizes) < 1:
            raise ValueError("output space needs at least one variable")
        if any(k < 2 for k in self.sizes):
            raise ValueError("every variable needs at least 2 states")
        object.__setattr__(self, "sizes", tuple(int(k) for k in self.sizes))

    @classmethod
    def uniform(cls, num_vars: int, num_states: int) -> "OutputSpace":
        return cls((num_states,) * num_vars)

    @property
    def num_vars(self) -> int:
        return len(self.sizes)


@dataclass(frozen=True)
class DiscreteOutput:
    space: OutputSpace
    states: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(int(s) for s in self.states))
        if len(self.states) != self.space.num_vars:
            raise ValueError("wrong number of states for space")
        for s, k in zip(self.states, self.space.sizes):
            if not 0 <= s < k:
                raise ValueError(f"state {s} out of range [0, {k})")


@dataclass(frozen=True)
class RelaxedOutput:
    """One probability distribution per variable (sums to 1 within 1e-9)."""

    space: OutputSpace
    dists: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.dists) != self.space.num_vars:
            raise ValueError("wrong number of distributions for space")
        dists = []
        for d, k in zip(self.dists, self.space.sizes):
            d = np.asarray(d, dtype=np.float64)
            if d.shape != (k,):
                raise ValueError(f"distribution shape {d.shape} != ({k},)")
            if np.any(d < 0) or abs(d.sum() - 1.0) > 1e-9:
                raise ValueError("not a probability distribution")
            dists.append(d)
        object.__setattr__(self, "dists", tuple(dists))


@dataclass(frozen=True)
class Logits:
    """Unnormalized per-variable scores; softmax gives the relaxed output."""

    space: OutputSpace
    values: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.values) != self.space.num_vars:
            raise ValueError("wrong number of logit vectors for space")
        vals = []
        for v, k in zip(self.values, self.space.sizes):
            v = np.asarray(v, dtype=np.float64)
            if v.shape != (k,):
                raise ValueError(f"logit shape {v.shape} != ({k},)")
            if not np.all(np.isfinite(v)):
                raise ValueError("logits must be finite")
            vals.append(v)
        object.__setattr__(self, "values", tuple(vals))

    def relax(self) -> RelaxedOutput:
        return _unchecked_relaxed(self.space, tuple(softmax(v) for v in self.values))


def _unchecked_relaxed(space: OutputSpace, dists) -> RelaxedOutput:
    """Skip-validation constructor for distributions that are simplex-valid
    by construction (softmax outputs, one-hot vertices)."""
    obj = object.__new__(RelaxedOutput)
    object.__setattr__(obj, "space", space)
    object.__setattr__(obj, "dists", tuple(dists))
    return obj


def round_output(y: RelaxedOutput) -> DiscreteOutput:
    """Per-variable argmax; ties break toward the lowest state index."""
    return DiscreteOutput(y.space, tuple(int(np.argmax(d)) for d in y.dists))


def one_hot(d: DiscreteOutput) -> RelaxedOutput:
    dists = []
    for s, k in zip(d.states, d.space.sizes):
        v = np.zeros(k)
        v[s] = 1.0
        dists.append(v)
    return _unchecked_relaxed(d.space, tuple(dists))


def uniform_logits(space: OutputSpace) -> Logits:
    """All-zero logits, i.e. the uniform (maximum-entropy) starting point."""
    return Logits(space, tuple(np.zeros(k) for k in space.sizes))


def write_discrete(path, outputs) -> None:
    """One example per line, space-separated state indices."""
    with open(path, "w", encoding="utf-8") as fh:
        for d in outputs:
            fh.write(" ".join(str(s) for s in d.states) + "\n")


def read_discrete(path, space: OutputSpace) -> list[DiscreteOutput]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(DiscreteOutput(space, tuple(int(t) for t in line.split())))
    return out
