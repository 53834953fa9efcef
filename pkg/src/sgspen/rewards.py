"""Black-box reward functions R(x, y) -> [0, 1] over discrete outputs.

Rewards are pure (same inputs, same value), never look at model parameters,
and count every evaluation; the counter is what search-budget accounting is
charged against.

Rule files (one rule per line, `#` comments):
    token_pattern WEIGHT LO HI TAG   tokens with id in [LO, HI] should carry TAG
                                     (scored fractionally over matching positions)
    span_contiguity WEIGHT TAG       positions tagged TAG form at most one run
    order WEIGHT TAG_A TAG_B         every TAG_A position precedes every TAG_B
Pad positions (token == pad id) are excluded from scoring.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .outputs import DiscreteOutput
from .shapes import Vocabulary, execute, iou, validate_program


class RewardError(ValueError):
    pass


def f1_score(true_set, pred_set) -> float:
    """2|T∩P| / (|T|+|P|); 1.0 when both sets are empty."""
    true_set, pred_set = set(true_set), set(pred_set)
    if not true_set and not pred_set:
        return 1.0
    return 2.0 * len(true_set & pred_set) / (len(true_set) + len(pred_set))


def f1_reward(true_set, pred: DiscreteOutput) -> float:
    """F1 between a label set and a binary-variable prediction (state 1 = present)."""
    if any(k != 2 for k in pred.space.sizes):
        raise RewardError("f1_reward expects a binary label space")
    return f1_score(true_set, {i for i, s in enumerate(pred.states) if s == 1})


@dataclass(frozen=True)
class Rule:
    kind: str
    weight: float
    args: tuple[int, ...]


class RuleSet:
    """Weighted rules over (token sequence, tag sequence) pairs.

    Weights are normalized to sum to 1 at construction; an empty rule list
    cannot be normalized and is rejected.
    """

    KINDS = {"token_pattern": 3, "span_contiguity": 1, "order": 2}

    def __init__(self, rules, num_tags: int):
        rules = list(rules)
        if not rules:
            raise RewardError("empty rule set (weights cannot normalize)")
        total = sum(r.weight for r in rules)
        if total <= 0 or any(r.weight <= 0 for r in rules):
            raise RewardError("rule weights must be positive")
        normed = []
        for r in rules:
            if r.kind not in self.KINDS:
                raise RewardError(f"unknown rule kind {r.kind!r}")
            if len(r.args) != self.KINDS[r.kind]:
                raise RewardError(f"rule {r.kind} takes {self.KINDS[r.kind]} args")
            for tag in r.args[-1:] if r.kind == "token_pattern" else r.args:
                if not 0 <= tag < num_tags:
                    raise RewardError(f"rule references unknown tag id {tag}")
            normed.append(Rule(r.kind, r.weight / total, r.args))
        self.rules = tuple(normed)
        self.num_tags = int(num_tags)

    @classmethod
    def parse(cls, text: str, num_tags: int) -> "RuleSet":
        rules = []
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            try:
                rules.append(Rule(parts[0], float(parts[1]), tuple(int(p) for p in parts[2:])))
            except (IndexError, ValueError) as exc:
                raise RewardError(f"bad rule at line {lineno}: {line!r}") from exc
        return cls(rules, num_tags)

    @classmethod
    def load(cls, path, num_tags: int) -> "RuleSet":
        return cls.parse(Path(path).read_text(encoding="utf-8"), num_tags)

    def format(self) -> str:
        lines = [f"{r.kind} {r.weight!r} {' '.join(str(a) for a in r.args)}" for r in self.rules]
        return "\n".join(lines) + "\n"


def _rule_score(rule: Rule, tokens: np.ndarray, tags: np.ndarray) -> float:
    if rule.kind == "token_pattern":
        lo, hi, tag = rule.args
        match = (tokens >= lo) & (tokens <= hi)
        if not match.any():
            return 1.0
        return float(np.count_nonzero(tags[match] == tag)) / int(np.count_nonzero(match))
    if rule.kind == "span_contiguity":
        (tag,) = rule.args
        hit = tags == tag
        runs = int(np.count_nonzero(hit[1:] & ~hit[:-1])) + int(hit[0] if hit.size else 0)
        return 1.0 if runs <= 1 else 0.0
    lo_tag, hi_tag = rule.args
    pos_a = np.flatnonzero(tags == lo_tag)
    pos_b = np.flatnonzero(tags == hi_tag)
    if pos_a.size == 0 or pos_b.size == 0:
        return 1.0
    return 1.0 if pos_a.max() < pos_b.min() else 0.0


def rule_reward(rules: RuleSet, tokens, tags, pad_token: int = 0) -> float:
    """Weighted fraction of satisfied rules; pad positions are excluded."""
    tokens = np.asarray(tokens)
    tags = np.asarray(tags)
    if tokens.shape != tags.shape:
        raise RewardError("token and tag sequences differ in length")
    if tags.size and (tags.min() < 0 or tags.max() >= rules.num_tags):
        raise RewardError(f"unknown tag id {int(tags.max())} (num_tags={rules.num_tags})")
    keep = tokens != pad_token
    tokens, tags = tokens[keep], tags[keep]
    return float(sum(r.weight * _rule_score(r, tokens, tags) for r in rules.rules))


def iou_reward(target: np.ndarray, y: DiscreteOutput, vocab: Vocabulary) -> float:
    """IOU between the target image and the executed program; invalid
    programs score 0 (not an error)."""
    if not validate_program(y.states, vocab):
        return 0.0
    return iou(target, execute(y.states, vocab))


class RewardFunction:
    """Base evaluator with an atomically incremented query counter."""

    def __init__(self) -> None:
        self._queries = 0
        self._lock = threading.Lock()

    def __call__(self, x, y: DiscreteOutput) -> float:
        value = float(self._evaluate(x, y))
        with self._lock:
            self._queries += 1
        return value

    def _evaluate(self, x, y: DiscreteOutput) -> float:
        raise NotImplementedError

    @property
    def queries(self) -> int:
        return self._queries

    def reset_queries(self) -> None:
        with self._lock:
            self._queries = 0


class OracleF1Reward(RewardFunction):
    """F1 between the example's true label set and the predicted set."""

    def _evaluate(self, x, y: DiscreteOutput) -> float:
        return f1_reward(x.labels, y)


class RuleBasedReward(RewardFunction):
    def __init__(self, rules: RuleSet, pad_token: int = 0):
        super().__init__()
        self.rules = rules
        self.pad_token = pad_token

    def _evaluate(self, x, y: DiscreteOutput) -> float:
        return rule_reward(self.rules, x.tokens, np.asarray(y.states), self.pad_token)


class IouReward(RewardFunction):
    def __init__(self, vocab: Vocabulary):
        super().__init__()
        self.vocab = vocab

    def _evaluate(self, x, y: DiscreteOutput) -> float:
        return iou_reward(x.image, y, self.vocab)
