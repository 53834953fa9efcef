"""Gradient-based inference on the relaxed output simplex.

Updates run in logit space, I <- I - eta * dE/dy (+ Gaussian noise when
sigma > 0), which is exactly the exponentiated multiplicative simplex update
y <- y * exp(-eta * dE/dy) / Z. Every iterate is therefore a valid
distribution by construction. Inference starts from the uniform point
(all-zero logits) and runs a fixed number of steps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .outputs import DiscreteOutput, RelaxedOutput, _unchecked_relaxed, round_output
from .tensor import softmax


class InferenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class InferenceConfig:
    steps: int
    eta: float
    sigma: float = 0.0
    record_trajectory: bool = False

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")


@dataclass(frozen=True)
class Trajectory:
    """Relaxed output after each update step and its energy."""

    points: tuple[RelaxedOutput, ...]
    energies: tuple[float, ...]


def infer(model, x, cfg: InferenceConfig, rng: np.random.Generator | None = None):
    """Run cfg.steps logit-space updates; returns (final relaxed output,
    trajectory or None). A generator is required iff sigma > 0."""
    if cfg.sigma > 0 and rng is None:
        raise ValueError("sigma > 0 requires a random generator")
    space = model.space
    sizes = space.sizes
    uniform = len(set(sizes)) == 1
    if uniform:
        logits = np.zeros((space.num_vars, sizes[0]))
    else:
        logits = [np.zeros(k) for k in sizes]
    current = _relax(space, logits, uniform)
    points: list[RelaxedOutput] = []
    energies: list[float] = []
    for step in range(cfg.steps):
        _, grads = model.energy_and_grad_y(x, current)
        if uniform:
            g = np.asarray(grads)
            if not np.all(np.isfinite(g)):
                raise InferenceError(f"non-finite energy gradient at step {step}")
            logits -= cfg.eta * g
            if cfg.sigma > 0:
                logits += rng.normal(0.0, cfg.sigma, size=logits.shape)
        else:
            for i, gi in enumerate(grads):
                if not np.all(np.isfinite(gi)):
                    raise InferenceError(
                        f"non-finite energy gradient at step {step}, variable {i}"
                    )
                logits[i] = logits[i] - cfg.eta * gi
                if cfg.sigma > 0:
                    logits[i] = logits[i] + rng.normal(0.0, cfg.sigma, size=sizes[i])
        current = _relax(space, logits, uniform)
        if cfg.record_trajectory:
            points.append(current)
            energies.append(model.energy(x, current))
    trajectory = Trajectory(tuple(points), tuple(energies)) if cfg.record_trajectory else None
    return current, trajectory


def _relax(space, logits, uniform: bool) -> RelaxedOutput:
    if uniform:
        z = np.exp(logits - logits.max(axis=1, keepdims=True))
        z /= z.sum(axis=1, keepdims=True)
        return _unchecked_relaxed(space, tuple(z))
    return _unchecked_relaxed(space, tuple(softmax(v) for v in logits))


def predict(model, x, cfg: InferenceConfig) -> DiscreteOutput:
    """Deterministic prediction: rounded noise-free inference."""
    if cfg.sigma != 0:
        raise ValueError("predict requires sigma = 0")
    final, _ = infer(model, x, cfg)
    return round_output(final)


def sample(model, x, cfg: InferenceConfig, rng: np.random.Generator) -> DiscreteOutput:
    """Rounded noisy inference; reproducible given the generator's seed."""
    if cfg.sigma <= 0:
        raise ValueError("sample requires sigma > 0")
    final, _ = infer(model, x, cfg, rng)
    return round_output(final)


def write_trajectory_csv(path, trajectory: Trajectory) -> None:
    """Columns: step, energy, then one argmax column per variable."""
    with open(path, "w", encoding="utf-8") as fh:
        if trajectory.points:
            n = trajectory.points[0].space.num_vars
            fh.write("step,energy," + ",".join(f"argmax_{i}" for i in range(n)) + "\n")
        for t, (point, energy) in enumerate(zip(trajectory.points, trajectory.energies)):
            states = round_output(point).states
            fh.write(f"{t},{energy!r}," + ",".join(str(s) for s in states) + "\n")
