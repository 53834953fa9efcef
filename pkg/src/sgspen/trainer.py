"""Training loops driven by a black-box reward function.

Three algorithms share the same plumbing:

* ``sg_spen``: sample y-hat from the energy function (noisy gradient
  inference), run truncated randomized search from it, and hinge the energy
  gap of the resulting pair against the reward-scaled margin
  alpha * (R(y_n) - R(y_hat)). At most one constraint per example per step;
  examples where the search comes back empty are skipped.
* ``r_spen``: rank consecutive rounded points of the noisy inference
  trajectory; only pairs with differing rewards produce constraints.
* ``dvn``: regress the energy at rounded trajectory points onto the scaled
  reward (sign-flipped by default so lower energy means higher reward).

The optimizer is plain gradient descent, w <- w - lam * grad, on the sum of
hinge (or squared) terms plus c * ||w||^2. Training is a deterministic
function of (seed, dataset order): every per-example random draw comes from
a named stream keyed by (seed, purpose, epoch, example index).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .inference import InferenceConfig, infer, predict, sample
from .outputs import DiscreteOutput, one_hot, round_output
from .search import SearchConfig, truncated_search
from .seeding import stream
from .tensor import ParamSet


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    algorithm: str = "sg_spen"
    epochs: int = 10
    batch_size: int = 16
    seed: int = 0
    eta: float = 1.0
    sigma: float | None = None  # None -> 2 * eta
    inference_steps: int = 20
    delta: float = 0.01
    budget: int = 100
    reset_on_decrease: bool = False
    alpha: float = 100.0
    c: float = 1e-4
    lam: float = 0.05
    semi_supervised: bool = False
    dvn_literal_sign: bool = False
    checkpoint_every: int = 0  # 0 -> final checkpoint only

    def __post_init__(self):
        if self.algorithm not in ("sg_spen", "r_spen", "dvn"):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.alpha <= 1:
            raise ValueError("alpha must be > 1")
        if self.c < 0 or self.lam <= 0:
            raise ValueError("c must be >= 0 and lam > 0")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("bad epochs/batch_size")

    @property
    def noise(self) -> float:
        return 2.0 * self.eta if self.sigma is None else self.sigma

    def sample_cfg(self, record_trajectory: bool = False) -> InferenceConfig:
        return InferenceConfig(self.inference_steps, self.eta, self.noise, record_trajectory)

    def predict_cfg(self) -> InferenceConfig:
        return InferenceConfig(self.inference_steps, self.eta, 0.0)

    def search_cfg(self) -> SearchConfig:
        return SearchConfig(self.delta, self.budget, self.reset_on_decrease)


@dataclass(frozen=True)
class ConstraintRecord:
    step: int
    example: int
    source: str  # search | label | trajectory | value
    success: bool
    violated: bool
    xi: float
    reward_start: float
    reward_found: float
    queries: int

    @property
    def informative(self) -> bool:
        """A usable pair whose two rewards actually differ."""
        return (
            self.source in ("search", "label", "trajectory")
            and self.success
            and self.reward_found != self.reward_start
        )

    CSV_HEADER = "step,example,source,success,violated,xi,reward_start,reward_found,queries"

    def csv_row(self) -> str:
        return (
            f"{self.step},{self.example},{self.source},{int(self.success)},"
            f"{int(self.violated)},{self.xi!r},{self.reward_start!r},"
            f"{self.reward_found!r},{self.queries}"
        )


@dataclass(frozen=True)
class StepResult:
    loss: float
    records: tuple[ConstraintRecord, ...]
    sample_rewards: tuple[float, ...]


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    loss: float
    train_reward: float
    eval_reward: float
    constraints: int
    mean_budget: float


@dataclass
class RunHistory:
    epochs: list[EpochStats] = field(default_factory=list)
    records: list[ConstraintRecord] = field(default_factory=list)
    checkpoints: list[tuple[int, ParamSet]] = field(default_factory=list)

    METRICS_HEADER = "epoch,loss,train_reward,eval_reward,constraints,mean_budget"

    def metrics_rows(self) -> list[str]:
        return [
            f"{s.epoch},{s.loss!r},{s.train_reward!r},{s.eval_reward!r},"
            f"{s.constraints},{s.mean_budget!r}"
            for s in self.epochs
        ]


def _finish_batch(model, cfg: TrainConfig, hinge_total, grads, records, sample_rewards, step):
    loss = hinge_total + cfg.c * model.params.squared_norm()
    if not math.isfinite(loss):
        raise TrainingError(f"non-finite loss at step {step}")
    if cfg.c > 0:
        grads.iadd_scaled(model.params, 2.0 * cfg.c)
    model.params.iadd_scaled(grads, -cfg.lam)
    return StepResult(loss, tuple(records), tuple(sample_rewards))


def sg_spen_step(model, batch, reward, cfg: TrainConfig, step: int, epoch: int) -> StepResult:
    """One mini-batch of search-guided training."""
    grads = model.params.zeros_like()
    hinge_total = 0.0
    records: list[ConstraintRecord] = []
    sample_rewards: list[float] = []
    for idx, ex, gold in batch:
        y_hat = sample(model, ex, cfg.sample_cfg(), stream(cfg.seed, "inference", epoch, idx))
        if cfg.semi_supervised and gold is not None:
            r_hat = reward(ex, y_hat)
            y_n = gold
            r_n = reward(ex, y_n)
            source, queries = "label", 0
        else:
            outcome = truncated_search(
                reward, ex, y_hat, cfg.search_cfg(), stream(cfg.seed, "search", epoch, idx)
            )
            r_hat = outcome.start_reward
            source, queries = "search", outcome.queries_used
            if not outcome.success:
                # no local improvement found within budget: skip this example
                records.append(
                    ConstraintRecord(
                        step, idx, source, False, False, float("nan"),
                        r_hat, outcome.found_reward, queries,
                    )
                )
                sample_rewards.append(r_hat)
                continue
            y_n, r_n = outcome.result, outcome.found_reward
        margin = cfg.alpha * (r_n - r_hat)
        e_hat = model.energy(ex, one_hot(y_hat))
        e_n = model.energy(ex, one_hot(y_n))
        xi = margin - e_hat + e_n
        violated = xi > 0
        if violated:
            hinge_total += xi
            grads.iadd_scaled(
                model.grad_w([(ex, one_hot(y_hat), -1.0), (ex, one_hot(y_n), 1.0)])
            )
        records.append(
            ConstraintRecord(step, idx, source, True, violated, xi, r_hat, r_n, queries)
        )
        sample_rewards.append(r_hat)
    return _finish_batch(model, cfg, hinge_total, grads, records, sample_rewards, step)


def r_spen_step(model, batch, reward, cfg: TrainConfig, step: int, epoch: int) -> StepResult:
    """Rank-based training on consecutive trajectory points."""
    grads = model.params.zeros_like()
    hinge_total = 0.0
    records: list[ConstraintRecord] = []
    sample_rewards: list[float] = []
    for idx, ex, gold in batch:
        rng = stream(cfg.seed, "inference", epoch, idx)
        if cfg.semi_supervised and gold is not None:
            final, _ = infer(model, ex, cfg.sample_cfg(), rng)
            y_pred = round_output(final)
            pairs = [(y_pred, reward(ex, y_pred), gold, reward(ex, gold))]
            sample_rewards.append(pairs[0][1])
            source = "label"
        else:
            final, traj = infer(model, ex, cfg.sample_cfg(record_trajectory=True), rng)
            points = [round_output(p) for p in traj.points]
            point_rewards = [reward(ex, p) for p in points]
            sample_rewards.append(point_rewards[-1])
            pairs = list(
                zip(points[:-1], point_rewards[:-1], points[1:], point_rewards[1:])
            )
            source = "trajectory"
        for y_a, r_a, y_b, r_b in pairs:
            if r_a == r_b:
                continue
            (y_lo, r_lo), (y_hi, r_hi) = sorted(
                [(y_a, r_a), (y_b, r_b)], key=lambda t: t[1]
            )
            xi = cfg.alpha * (r_hi - r_lo) - model.energy(ex, one_hot(y_lo)) + model.energy(
                ex, one_hot(y_hi)
            )
            violated = xi > 0
            if violated:
                hinge_total += xi
                grads.iadd_scaled(
                    model.grad_w([(ex, one_hot(y_lo), -1.0), (ex, one_hot(y_hi), 1.0)])
                )
            records.append(
                ConstraintRecord(step, idx, source, True, violated, xi, r_lo, r_hi, 0)
            )
    return _finish_batch(model, cfg, hinge_total, grads, records, sample_rewards, step)


def dvn_step(model, batch, reward, cfg: TrainConfig, step: int, epoch: int) -> StepResult:
    """Value matching: fit E(x, one_hot(y)) to the scaled reward at rounded
    noisy-inference trajectory points (mean squared error per example)."""
    sign = 1.0 if cfg.dvn_literal_sign else -1.0
    grads = model.params.zeros_like()
    total = 0.0
    records: list[ConstraintRecord] = []
    sample_rewards: list[float] = []
    for idx, ex, gold in batch:
        rng = stream(cfg.seed, "inference", epoch, idx)
        _, traj = infer(model, ex, cfg.sample_cfg(record_trajectory=True), rng)
        points = [round_output(p) for p in traj.points]
        if cfg.semi_supervised and gold is not None:
            points.append(gold)
        point_rewards = [reward(ex, p) for p in points]
        n = len(points)
        example_loss = 0.0
        terms = []
        for y, r in zip(points, point_rewards):
            diff = model.energy(ex, one_hot(y)) - sign * cfg.alpha * r
            example_loss += diff * diff / n
            terms.append((ex, one_hot(y), 2.0 * diff / n))
        grads.iadd_scaled(model.grad_w(terms))
        total += example_loss
        sample_rewards.append(point_rewards[len(traj.points) - 1])
        records.append(
            ConstraintRecord(
                step, idx, "value", False, False, example_loss,
                point_rewards[len(traj.points) - 1], float("nan"), 0,
            )
        )
    return _finish_batch(model, cfg, total, grads, records, sample_rewards, step)


_STEP_FNS = {"sg_spen": sg_spen_step, "r_spen": r_spen_step, "dvn": dvn_step}


def semi_supervised_wrap(step_fn):
    """Make a step use gold outputs in place of search/trajectory pairs for
    the labeled examples in its batch; unlabeled examples are unchanged."""

    def wrapped(model, batch, reward, cfg, step, epoch):
        return step_fn(model, batch, reward, replace(cfg, semi_supervised=True), step, epoch)

    return wrapped


def evaluate_mean_reward(model, examples, reward, cfg: InferenceConfig) -> float:
    """Mean reward of deterministic predictions (the eval code path)."""
    if not examples:
        return float("nan")
    total = 0.0
    for ex in examples:
        total += reward(ex, predict(model, ex, cfg))
    return total / len(examples)


def train(model, train_examples, reward, cfg: TrainConfig, val_examples=(), golds=None):
    """Epoch loop over seeded shuffled mini-batches.

    ``golds`` optionally maps each training example index to a gold
    DiscreteOutput (None entries mean unlabeled); it is only consulted in
    semi-supervised mode. Returns (model, RunHistory).
    """
    if not train_examples:
        raise TrainingError("empty training set")
    step_fn = _STEP_FNS[cfg.algorithm]
    n = len(train_examples)
    if golds is None:
        golds = [None] * n
    history = RunHistory()
    step = 0
    for epoch in range(cfg.epochs):
        order = stream(cfg.seed, "shuffle", epoch).permutation(n)
        epoch_losses = []
        epoch_records: list[ConstraintRecord] = []
        for lo in range(0, n, cfg.batch_size):
            chunk = [int(i) for i in order[lo : lo + cfg.batch_size]]
            batch = [(i, train_examples[i], golds[i]) for i in chunk]
            result = step_fn(model, batch, reward, cfg, step, epoch)
            epoch_losses.append(result.loss)
            epoch_records.extend(result.records)
            step += 1
        history.records.extend(epoch_records)
        searches = [r for r in epoch_records if r.source == "search"]
        stats = EpochStats(
            epoch=epoch,
            loss=float(np.mean(epoch_losses)),
            train_reward=evaluate_mean_reward(model, train_examples, reward, cfg.predict_cfg()),
            eval_reward=evaluate_mean_reward(model, val_examples, reward, cfg.predict_cfg()),
            constraints=sum(1 for r in epoch_records if r.informative),
            mean_budget=float(np.mean([r.queries for r in searches])) if searches else 0.0,
        )
        history.epochs.append(stats)
        if cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
            history.checkpoints.append((epoch, model.params.copy()))
    if cfg.epochs > 0:
        last = cfg.epochs - 1
        if not history.checkpoints or history.checkpoints[-1][0] != last:
            history.checkpoints.append((last, model.params.copy()))
    return model, history
