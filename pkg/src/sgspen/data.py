"""Dataset generation and ingestion for the three task families.

Sparse multi-label text format, one example per line:
    idx:val idx:val ... | label label ...
with optional `# features=F labels=L` header comments. Tagging data is a
pair of aligned text files (token ids, tag ids), padded to a fixed length
with token id 0 / tag id 0.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .outputs import DiscreteOutput, OutputSpace
from .rewards import Rule, RuleSet
from .shapes import Vocabulary, generate_dataset

PAD_TOKEN = 0
PAD_TAG = 0


class DataError(ValueError):
    pass


@dataclass
class MultiLabelExample:
    features: np.ndarray
    labels: frozenset[int]


@dataclass
class TaggingExample:
    tokens: np.ndarray
    gold: np.ndarray | None = None


@dataclass
class ShapeExample:
    image: np.ndarray
    program: tuple[int, ...] | None = None


@dataclass
class MultiLabelDataset:
    examples: list[MultiLabelExample]
    num_features: int
    num_labels: int


@dataclass
class TaggingDataset:
    examples: list[TaggingExample]
    vocab_size: int
    num_tags: int
    max_len: int
    rules: RuleSet


@dataclass
class ShapeDataset:
    examples: list[ShapeExample]
    vocabulary: Vocabulary


def split(items, fractions, rng: np.random.Generator):
    """Seeded disjoint partition; split sizes are within rounding of the
    requested fractions (e.g. 2000 at [0.7, 0.15, 0.15] -> 1400/300/300)."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise DataError("fractions must sum to 1")
    items = list(items)
    n = len(items)
    order = rng.permutation(n)
    bounds = [int(round(n * c)) for c in np.cumsum(fractions)]
    out, start = [], 0
    for b in bounds:
        part = [items[i] for i in order[start:b]]
        if not part:
            warnings.warn("empty split produced (n * fraction < 1)")
        out.append(part)
        start = b
    return tuple(out)


# -- multi-label ------------------------------------------------------------


def gen_multilabel(
    n: int,
    num_features: int,
    num_labels: int,
    num_clusters: int,
    rng: np.random.Generator,
    feature_noise: float = 0.3,
    label_noise: float = 0.0,
) -> MultiLabelDataset:
    """Latent-cluster generator: each cluster owns a feature prototype and a
    disjoint label subset (labels dealt round-robin); examples are noisy
    prototypes carrying the cluster's labels with optional Bernoulli flips."""
    if n < 1 or num_features < 1 or num_labels < 1 or num_clusters < 1:
        raise DataError("n and dimensions must be positive")
    prototypes = rng.normal(0.0, 1.0, size=(num_clusters, num_features))
    dealt = rng.permutation(num_labels)
    cluster_labels = [frozenset(int(l) for l in dealt[c::num_clusters]) for c in range(num_clusters)]
    examples = []
    for _ in range(n):
        c = int(rng.integers(num_clusters))
        x = prototypes[c] + feature_noise * rng.normal(size=num_features)
        labels = set(cluster_labels[c])
        if label_noise > 0:
            flips = rng.random(num_labels) < label_noise
            for l in np.flatnonzero(flips):
                labels.symmetric_difference_update({int(l)})
        examples.append(MultiLabelExample(x, frozenset(labels)))
    return MultiLabelDataset(examples, num_features, num_labels)


def save_sparse_multilabel(path, dataset: MultiLabelDataset) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# features={dataset.num_features} labels={dataset.num_labels}\n")
        for ex in dataset.examples:
            feats = " ".join(
                f"{i}:{float(ex.features[i])!r}" for i in np.flatnonzero(ex.features != 0.0)
            )
            labels = " ".join(str(l) for l in sorted(ex.labels))
            fh.write((feats + " | " + labels).strip() + "\n")


def load_sparse_multilabel(path) -> MultiLabelDataset:
    num_features = num_labels = None
    examples = []
    max_feat = -1
    max_label = -1
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if line.startswith("#"):
                for part in line[1:].split():
                    if part.startswith("features="):
                        num_features = int(part.split("=", 1)[1])
                    elif part.startswith("labels="):
                        num_labels = int(part.split("=", 1)[1])
                continue
            if not line:
                continue
            if "|" not in line:
                raise DataError(f"line {lineno}: missing '|' separator")
            feat_part, label_part = line.split("|", 1)
            feats = {}
            for tok in feat_part.split():
                if ":" not in tok:
                    raise DataError(f"line {lineno}: malformed feature {tok!r}")
                idx_s, val_s = tok.split(":", 1)
                try:
                    idx, val = int(idx_s), float(val_s)
                except ValueError as exc:
                    raise DataError(f"line {lineno}: malformed feature {tok!r}") from exc
                if idx in feats:
                    raise DataError(f"line {lineno}: duplicate feature index {idx}")
                feats[idx] = val
                max_feat = max(max_feat, idx)
            try:
                labels = frozenset(int(t) for t in label_part.split())
            except ValueError as exc:
                raise DataError(f"line {lineno}: malformed label section") from exc
            if labels:
                max_label = max(max_label, max(labels))
            examples.append((feats, labels))
    if num_features is None:
        num_features = max_feat + 1
    if num_labels is None:
        num_labels = max_label + 1
    out = []
    for feats, labels in examples:
        x = np.zeros(num_features)
        for idx, val in feats.items():
            if idx >= num_features:
                raise DataError(f"feature index {idx} exceeds declared features={num_features}")
            x[idx] = val
        out.append(MultiLabelExample(x, labels))
    return MultiLabelDataset(out, num_features, num_labels)


def multilabel_gold(ex: MultiLabelExample, space: OutputSpace) -> DiscreteOutput:
    return DiscreteOutput(space, tuple(1 if i in ex.labels else 0 for i in range(space.num_vars)))


# -- tagging ----------------------------------------------------------------


def make_tagging_rules(num_fields: int, tokens_per_field: int) -> RuleSet:
    """Canonical synthetic rule set: field f (tag f) owns the token id range
    [1 + (f-1)*tokens_per_field, f*tokens_per_field], must be contiguous,
    and fields appear in increasing order. Tag 0 is the pad tag."""
    rules = []
    for f in range(1, num_fields + 1):
        lo = 1 + (f - 1) * tokens_per_field
        hi = f * tokens_per_field
        rules.append(Rule("token_pattern", 2.0, (lo, hi, f)))
        rules.append(Rule("span_contiguity", 1.0, (f,)))
    for f in range(1, num_fields):
        rules.append(Rule("order", 1.0, (f, f + 1)))
    return RuleSet(rules, num_tags=num_fields + 1)


def gen_tagging(
    n: int,
    num_fields: int,
    tokens_per_field: int,
    max_len: int,
    rng: np.random.Generator,
    max_run: int = 4,
) -> TaggingDataset:
    """Sequences of per-field token runs in field order, padded to max_len;
    gold tags are stored for evaluation only and score rule reward 1."""
    if max_len < num_fields:
        raise DataError("max_len must allow at least one token per field")
    rules = make_tagging_rules(num_fields, tokens_per_field)
    vocab_size = 1 + num_fields * tokens_per_field
    examples = []
    for _ in range(n):
        tokens = np.full(max_len, PAD_TOKEN, dtype=np.int64)
        tags = np.full(max_len, PAD_TAG, dtype=np.int64)
        pos = 0
        for f in range(1, num_fields + 1):
            remaining_fields = num_fields - f
            room = max_len - pos - remaining_fields  # leave 1 slot per later field
            run = int(rng.integers(1, min(max_run, max(1, room)) + 1))
            lo = 1 + (f - 1) * tokens_per_field
            for _ in range(run):
                tokens[pos] = lo + int(rng.integers(tokens_per_field))
                tags[pos] = f
                pos += 1
        examples.append(TaggingExample(tokens, tags))
    return TaggingDataset(examples, vocab_size, num_fields + 1, max_len, rules)


def tagging_gold(ex: TaggingExample, space: OutputSpace) -> DiscreteOutput | None:
    if ex.gold is None:
        return None
    return DiscreteOutput(space, tuple(int(t) for t in ex.gold))


def token_accuracy(gold: np.ndarray, pred_states, tokens: np.ndarray, pad_token: int = PAD_TOKEN) -> float:
    """Fraction of non-pad positions tagged correctly."""
    keep = tokens != pad_token
    if not keep.any():
        return 1.0
    pred = np.asarray(pred_states)
    return float(np.count_nonzero(pred[keep] == gold[keep])) / int(np.count_nonzero(keep))


def save_tagging(tokens_path, tags_path, dataset: TaggingDataset) -> None:
    with open(tokens_path, "w", encoding="utf-8") as fh:
        for ex in dataset.examples:
            fh.write(" ".join(str(int(t)) for t in ex.tokens) + "\n")
    with open(tags_path, "w", encoding="utf-8") as fh:
        for ex in dataset.examples:
            tags = ex.gold if ex.gold is not None else []
            fh.write(" ".join(str(int(t)) for t in tags) + "\n")


def load_tagging(tokens_path, tags_path, vocab_size, num_tags, max_len, rules) -> TaggingDataset:
    with open(tokens_path, encoding="utf-8") as fh:
        token_rows = [np.array([int(t) for t in line.split()]) for line in fh if line.strip()]
    with open(tags_path, encoding="utf-8") as fh:
        tag_rows = [
            np.array([int(t) for t in line.split()]) if line.strip() else None
            for line in fh.read().splitlines()
        ]
    examples = [TaggingExample(tok, tag) for tok, tag in zip(token_rows, tag_rows)]
    return TaggingDataset(examples, vocab_size, num_tags, max_len, rules)


# -- shapes -----------------------------------------------------------------


def gen_shapes(n: int, rng: np.random.Generator, vocab: Vocabulary, length: int = 5) -> ShapeDataset:
    pairs = generate_dataset(n, rng, vocab, length)
    return ShapeDataset([ShapeExample(img, prog) for img, prog in pairs], vocab)


def shapes_gold(ex: ShapeExample, space: OutputSpace) -> DiscreteOutput | None:
    if ex.program is None:
        return None
    return DiscreteOutput(space, ex.program)
