"""Late fusion: concatenated component scores into boosted trees.

Component classifiers each emit a per-class probability vector; those are
concatenated in a declared component order and fed to a multiclass
gradient-boosted tree ensemble (one depth-capped regression tree per class
per round, fit on softmax gradients and hessians, no leaf regularization).
Overfitting is controlled purely by the depth cap.

Meta-training data comes from one of two sources: out-of-fold component
predictions on the train split (components retrained per fold so no record
is scored by a model that saw it), or plain component predictions on the
validation split.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .core import (
    ClassScores,
    DatasetManifest,
    PageRecord,
    Split,
    argmax_class,
    filter_split,
)
from .nn import ModelArtifact

__all__ = [
    "FusionConfig",
    "TreeNode",
    "BoostedForest",
    "FusionComponent",
    "concat_scores",
    "fit_tree",
    "train_boosted",
    "train_meta",
    "predict_fused",
    "evaluate",
    "EvalReport",
    "tree_depth",
    "save_forest",
    "load_forest",
    "ForestFormatError",
]

# guards 0/0 in gain and leaf computations when a hessian sum vanishes
_HESSIAN_FLOOR = 1e-12
# strictly-positive gain requirement with room for float noise on
# constant-gradient nodes
_MIN_GAIN = 1e-12


@dataclass(frozen=True)
class FusionConfig:
    max_depth: int = 3
    rounds: int = 100
    shrinkage: float = 0.1
    min_samples_leaf: int = 1
    component_order: tuple[str, ...] = ("image", "text")
    oof_folds: int = 5
    meta_source: str = "oof-train"  # or "validation"

    def __post_init__(self) -> None:
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if not 0.0 < self.shrinkage <= 1.0:
            raise ValueError("shrinkage must lie in (0, 1]")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if self.oof_folds < 2:
            raise ValueError("oof_folds must be >= 2")
        if self.meta_source not in ("oof-train", "validation"):
            raise ValueError("meta_source must be 'oof-train' or 'validation'")


def concat_scores(component_scores: Sequence[ClassScores]) -> np.ndarray:
    """Concatenate per-component class scores in the declared order."""
    if not component_scores:
        raise ValueError("need at least one component score vector")
    c = component_scores[0].num_classes
    for s in component_scores[1:]:
        if s.num_classes != c:
            raise ValueError(
                f"component score lengths disagree: {s.num_classes} vs {c}"
            )
    return np.concatenate([s.values for s in component_scores])


# -- regression trees --------------------------------------------------------


@dataclass
class TreeNode:
    """Leaf when feature < 0, otherwise a binary split on feature/threshold."""

    feature: int = -1
    threshold: float = 0.0
    value: float = 0.0
    gain: float = 0.0
    left: Optional["TreeNode"] = None
    right: Optional["TreeNode"] = None

    @property
    def is_leaf(self) -> bool:
        return self.feature < 0


def tree_depth(node: TreeNode) -> int:
    """Number of internal nodes on the longest root-to-leaf path."""
    if node.is_leaf:
        return 0
    return 1 + max(tree_depth(node.left), tree_depth(node.right))


def _leaf_value(grad_sum: float, hess_sum: float) -> float:
    if hess_sum <= _HESSIAN_FLOOR:
        return 0.0
    return -grad_sum / hess_sum


def _score_term(grad_sum: float, hess_sum: float) -> float:
    if hess_sum <= _HESSIAN_FLOOR:
        return 0.0
    return grad_sum * grad_sum / hess_sum


def _score_terms(grad_sums: np.ndarray, hess_sums: np.ndarray) -> np.ndarray:
    out = np.zeros_like(grad_sums)
    ok = hess_sums > _HESSIAN_FLOOR
    out[ok] = grad_sums[ok] ** 2 / hess_sums[ok]
    return out


def _best_split(
    features: np.ndarray,
    rows: np.ndarray,
    gradients: np.ndarray,
    hessians: np.ndarray,
    min_samples_leaf: int,
) -> Optional[tuple[float, int, float]]:
    """Best (gain, feature, threshold) over features[rows]; ties resolve to
    the lowest feature index, then the lowest threshold.  Thresholds sit at
    midpoints between adjacent distinct values."""
    n, d = rows.size, features.shape[1]
    total_g = float(gradients.sum())
    total_h = float(hessians.sum())
    parent = _score_term(total_g, total_h)
    best: Optional[tuple[float, int, float]] = None
    for j in range(d):
        column = features[rows, j]
        order = np.argsort(column, kind="stable")
        values = column[order]
        boundaries = np.nonzero(values[:-1] < values[1:])[0]
        if boundaries.size == 0:
            continue
        left_n = boundaries + 1
        valid = (left_n >= min_samples_leaf) & (n - left_n >= min_samples_leaf)
        boundaries = boundaries[valid]
        if boundaries.size == 0:
            continue
        g_prefix = np.cumsum(gradients[order])
        h_prefix = np.cumsum(hessians[order])
        gl, hl = g_prefix[boundaries], h_prefix[boundaries]
        gains = 0.5 * (
            _score_terms(gl, hl) + _score_terms(total_g - gl, total_h - hl) - parent
        )
        pick = int(np.argmax(gains))  # first occurrence keeps the lowest threshold
        gain = float(gains[pick])
        if gain > _MIN_GAIN and (best is None or gain > best[0]):
            i = int(boundaries[pick])
            best = (gain, j, float((values[i] + values[i + 1]) / 2.0))
    return best


def fit_tree(
    features: np.ndarray,
    gradients: np.ndarray,
    hessians: np.ndarray,
    config: FusionConfig,
) -> TreeNode:
    """Greedy depth-capped regression tree on gradient/hessian statistics.

    Split gain is 0.5 * (GL^2/HL + GR^2/HR - G^2/H) with no regularization;
    leaves carry -G/H.
    """
    features = np.asarray(features, dtype=np.float64)
    gradients = np.asarray(gradients, dtype=np.float64)
    hessians = np.asarray(hessians, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] == 0:
        raise ValueError("features must be a non-empty [rows, dims] matrix")
    if not (features.shape[0] == gradients.shape[0] == hessians.shape[0]):
        raise ValueError("features, gradients, hessians must align row-wise")
    if np.any(hessians < 0):
        raise ValueError("hessians must be non-negative")

    def grow(rows: np.ndarray, depth: int) -> TreeNode:
        g = gradients[rows]
        h = hessians[rows]
        leaf = TreeNode(value=_leaf_value(float(g.sum()), float(h.sum())))
        if depth >= config.max_depth or rows.size < 2 * config.min_samples_leaf:
            return leaf
        found = _best_split(features, rows, g, h, config.min_samples_leaf)
        if found is None:
            return leaf
        gain, feature, threshold = found
        goes_left = features[rows, feature] <= threshold
        return TreeNode(
            feature=feature,
            threshold=threshold,
            gain=gain,
            left=grow(rows[goes_left], depth + 1),
            right=grow(rows[~goes_left], depth + 1),
        )

    return grow(np.arange(features.shape[0]), 0)


def eval_tree(node: TreeNode, rows: np.ndarray) -> np.ndarray:
    """Tree output for each row of a [rows, dims] matrix."""
    if rows.shape[0] == 1:  # scalar fast path, avoids per-node array temporaries
        row = rows[0]
        while not node.is_leaf:
            node = node.left if row[node.feature] <= node.threshold else node.right
        return np.array([node.value])
    out = np.empty(rows.shape[0])

    def walk(node: TreeNode, idx: np.ndarray) -> None:
        if node.is_leaf:
            out[idx] = node.value
            return
        left = rows[idx, node.feature] <= node.threshold
        walk(node.left, idx[left])
        walk(node.right, idx[~left])

    walk(node, np.arange(rows.shape[0]))
    return out


# -- multiclass boosting -----------------------------------------------------


@dataclass(frozen=True)
class BoostedForest:
    num_classes: int
    feature_dim: int
    shrinkage: float
    base_score: float
    component_order: tuple[str, ...]
    trees: tuple[tuple[TreeNode, ...], ...]  # [round][class]

    @property
    def rounds(self) -> int:
        return len(self.trees)

    def margins(self, features: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(features, dtype=np.float64))
        if x.shape[1] != self.feature_dim:
            raise ValueError(
                f"feature dimension {x.shape[1]} does not match forest ({self.feature_dim})"
            )
        scores = np.full((x.shape[0], self.num_classes), self.base_score)
        for round_trees in self.trees:
            for klass, tree in enumerate(round_trees):
                scores[:, klass] += self.shrinkage * eval_tree(tree, x)
        return scores


def _softmax_rows(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def train_boosted(
    features: np.ndarray,
    labels: np.ndarray,
    num_classes: int,
    config: FusionConfig,
) -> BoostedForest:
    """Multiclass second-order boosting: per round and class, fit one tree on
    gradient p - y and hessian p(1 - p), then step by the shrinkage."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    n = features.shape[0]
    if n == 0:
        raise ValueError("empty meta-training set")
    one_hot = np.zeros((n, num_classes))
    one_hot[np.arange(n), labels] = 1.0
    scores = np.zeros((n, num_classes))  # base_score 0
    all_trees: list[tuple[TreeNode, ...]] = []
    for _ in range(config.rounds):
        probs = _softmax_rows(scores)
        round_trees: list[TreeNode] = []
        for klass in range(num_classes):
            grad = probs[:, klass] - one_hot[:, klass]
            hess = probs[:, klass] * (1.0 - probs[:, klass])
            tree = fit_tree(features, grad, hess, config)
            round_trees.append(tree)
            scores[:, klass] += config.shrinkage * eval_tree(tree, features)
        all_trees.append(tuple(round_trees))
    return BoostedForest(
        num_classes=num_classes,
        feature_dim=features.shape[1],
        shrinkage=config.shrinkage,
        base_score=0.0,
        component_order=config.component_order,
        trees=tuple(all_trees),
    )


def predict_fused(forest: BoostedForest, component_scores: Sequence[ClassScores]) -> ClassScores:
    """Softmax over accumulated tree outputs for concatenated scores."""
    expected = len(forest.component_order)
    if expected and len(component_scores) != expected:
        raise ValueError(
            f"forest was trained on {expected} components, got {len(component_scores)}"
        )
    margins = forest.margins(concat_scores(component_scores)[None, :])
    return ClassScores(_softmax_rows(margins)[0])


# -- meta-training over component models --------------------------------------


@dataclass(frozen=True)
class FusionComponent:
    """One component model: how to score a record and how to retrain itself.

    ``retrain`` receives a manifest whose train split excludes the held-out
    fold plus a seed, and returns a fold artifact; it is only needed for the
    out-of-fold meta source.
    """

    name: str
    artifact: ModelArtifact
    score: Callable[[ModelArtifact, PageRecord], ClassScores]
    retrain: Optional[Callable[[DatasetManifest, int], ModelArtifact]] = None

    def score_record(self, record: PageRecord) -> ClassScores:
        return self.score(self.artifact, record)


def _stratified_folds(records: Sequence[PageRecord], folds: int) -> list[int]:
    """Deterministic per-class round-robin fold assignment (manifest order)."""
    per_class_counter: dict[int, int] = {}
    assignment = []
    for record in records:
        seen = per_class_counter.get(record.label, 0)
        assignment.append(seen % folds)
        per_class_counter[record.label] = seen + 1
    for label, count in per_class_counter.items():
        if count < folds:
            raise ValueError(
                f"class {label} has {count} train records, fewer than {folds} folds"
            )
    return assignment


def _oof_features(
    components: Sequence[FusionComponent],
    manifest: DatasetManifest,
    config: FusionConfig,
) -> tuple[np.ndarray, np.ndarray]:
    train = filter_split(manifest, Split.TRAIN)
    records = train.records
    assignment = _stratified_folds(records, config.oof_folds)
    n = len(records)
    c = manifest.label_set.num_classes
    features = np.zeros((n, len(components) * c))
    for fold in range(config.oof_folds):
        held_out = [i for i in range(n) if assignment[i] == fold]
        kept = tuple(
            r for r, a in zip(records, assignment) if a != fold
        ) + tuple(r for r in manifest.records if r.split is not Split.TRAIN)
        fold_manifest = DatasetManifest(manifest.label_set, kept)
        for k, component in enumerate(components):
            if component.retrain is None:
                raise ValueError(
                    f"component {component.name!r} cannot retrain; "
                    "use meta_source='validation' instead"
                )
            fold_artifact = component.retrain(fold_manifest, fold)
            for i in held_out:
                scores = component.score(fold_artifact, records[i])
                features[i, k * c : (k + 1) * c] = scores.values
    labels = np.array([r.label for r in records])
    return features, labels


def _validation_features(
    components: Sequence[FusionComponent],
    manifest: DatasetManifest,
) -> tuple[np.ndarray, np.ndarray]:
    val = filter_split(manifest, Split.VALIDATION)
    if not val.records:
        raise ValueError("validation split is empty")
    c = manifest.label_set.num_classes
    features = np.zeros((len(val.records), len(components) * c))
    for i, record in enumerate(val.records):
        for k, component in enumerate(components):
            features[i, k * c : (k + 1) * c] = component.score_record(record).values
    labels = np.array([r.label for r in val.records])
    return features, labels


def train_meta(
    components: Sequence[FusionComponent],
    manifest: DatasetManifest,
    config: FusionConfig,
) -> BoostedForest:
    """Fit the fusion forest on component predictions.

    The component order in ``config.component_order`` must match the given
    sequence; it is recorded in the forest for arity checks at prediction.
    """
    if not components:
        raise ValueError("need at least one component")
    names = tuple(component.name for component in components)
    if config.component_order and names != tuple(config.component_order):
        raise ValueError(
            f"component order {names} does not match config {config.component_order}"
        )
    config = replace(config, component_order=names)
    if config.meta_source == "oof-train":
        features, labels = _oof_features(components, manifest, config)
    else:
        features, labels = _validation_features(components, manifest)
    return train_boosted(features, labels, manifest.label_set.num_classes, config)


def fused_scorer(
    forest: BoostedForest, components: Sequence[FusionComponent]
) -> Callable[[PageRecord], ClassScores]:
    def score(record: PageRecord) -> ClassScores:
        return predict_fused(forest, [c.score_record(record) for c in components])

    return score


# -- evaluation ----------------------------------------------------------------


@dataclass(frozen=True)
class EvalReport:
    split: Split
    count: int
    accuracy: float
    per_class_accuracy: tuple[float, ...]
    confusion: np.ndarray = field(repr=False)  # [true, predicted]
    label_names: tuple[str, ...]

    def to_text(self) -> str:
        lines = [
            f"split: {self.split.value}",
            f"records: {self.count}",
            f"accuracy: {self.accuracy:.4f}",
            "per-class accuracy:",
        ]
        for name, acc in zip(self.label_names, self.per_class_accuracy):
            lines.append(f"  {name}: {acc:.4f}" if not np.isnan(acc) else f"  {name}: n/a")
        lines.append("confusion matrix (rows true, columns predicted):")
        for row in self.confusion:
            lines.append("  " + " ".join(f"{int(v):>4}" for v in row))
        return "\n".join(lines) + "\n"

    def to_tsv(self) -> str:
        lines = ["metric\tclass\tvalue"]
        lines.append(f"accuracy\t-\t{self.accuracy!r}")
        for i, acc in enumerate(self.per_class_accuracy):
            value = "n/a" if np.isnan(acc) else repr(acc)
            lines.append(f"class_accuracy\t{self.label_names[i]}\t{value}")
        for i, row in enumerate(self.confusion):
            for j, v in enumerate(row):
                lines.append(f"confusion\t{self.label_names[i]}->{self.label_names[j]}\t{int(v)}")
        return "\n".join(lines) + "\n"


def evaluate(
    scorer: Callable[[PageRecord], ClassScores],
    manifest: DatasetManifest,
    split: Split,
) -> EvalReport:
    """Accuracy, per-class accuracy, and confusion matrix over one split."""
    subset = filter_split(manifest, split)
    if not subset.records:
        raise ValueError(f"split {split.value} is empty")
    c = manifest.label_set.num_classes
    confusion = np.zeros((c, c), dtype=np.int64)
    hits = 0
    for record in subset.records:
        predicted = argmax_class(scorer(record))
        confusion[record.label, predicted] += 1
        hits += int(predicted == record.label)
    per_class = []
    for label in range(c):
        total = confusion[label].sum()
        per_class.append(float(confusion[label, label] / total) if total else float("nan"))
    return EvalReport(
        split=split,
        count=len(subset.records),
        accuracy=hits / len(subset.records),
        per_class_accuracy=tuple(per_class),
        confusion=confusion,
        label_names=manifest.label_set.names,
    )


# -- forest serialization -------------------------------------------------------


class ForestFormatError(ValueError):
    """File is not a valid forest of a supported version."""


FOREST_HEADER = "pagefuse-forest v1"


def _write_node(node: TreeNode, lines: list[str]) -> None:
    if node.is_leaf:
        lines.append(f"leaf {node.value!r}")
    else:
        lines.append(f"split {node.feature} {node.threshold!r}")
        _write_node(node.left, lines)
        _write_node(node.right, lines)


def save_forest(forest: BoostedForest, path: Path | str) -> None:
    """Versioned text format: header fields, then per-tree preorder blocks."""
    lines = [
        FOREST_HEADER,
        f"classes {forest.num_classes}",
        f"feature_dim {forest.feature_dim}",
        f"shrinkage {forest.shrinkage!r}",
        f"base_score {forest.base_score!r}",
        "components " + ",".join(forest.component_order),
        f"rounds {forest.rounds}",
    ]
    for round_index, round_trees in enumerate(forest.trees):
        for klass, tree in enumerate(round_trees):
            lines.append(f"tree {round_index} {klass}")
            _write_node(tree, lines)
            lines.append("end")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_forest(path: Path | str) -> BoostedForest:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines or lines[0] != FOREST_HEADER:
        raise ForestFormatError(f"{path}: missing or unsupported forest header")

    fields: dict[str, str] = {}
    cursor = 1
    while cursor < len(lines) and not lines[cursor].startswith("tree "):
        key, _, value = lines[cursor].partition(" ")
        fields[key] = value
        cursor += 1
    try:
        num_classes = int(fields["classes"])
        feature_dim = int(fields["feature_dim"])
        shrinkage = float(fields["shrinkage"])
        base_score = float(fields["base_score"])
        component_order = tuple(n for n in fields["components"].split(",") if n)
        rounds = int(fields["rounds"])
    except (KeyError, ValueError) as exc:
        raise ForestFormatError(f"{path}: malformed header fields: {exc}") from exc

    def parse_node() -> TreeNode:
        nonlocal cursor
        if cursor >= len(lines):
            raise ForestFormatError(f"{path}: truncated tree block")
        token = lines[cursor].split()
        cursor += 1
        if token[0] == "leaf" and len(token) == 2:
            return TreeNode(value=float(token[1]))
        if token[0] == "split" and len(token) == 3:
            node = TreeNode(feature=int(token[1]), threshold=float(token[2]))
            node.left = parse_node()
            node.right = parse_node()
            return node
        raise ForestFormatError(f"{path}: bad node line {lines[cursor - 1]!r}")

    trees: list[list[TreeNode]] = [[None] * num_classes for _ in range(rounds)]  # type: ignore[list-item]
    while cursor < len(lines):
        header = lines[cursor].split()
        if header[0] != "tree" or len(header) != 3:
            raise ForestFormatError(f"{path}: expected tree header, got {lines[cursor]!r}")
        round_index, klass = int(header[1]), int(header[2])
        cursor += 1
        trees[round_index][klass] = parse_node()
        if cursor >= len(lines) or lines[cursor] != "end":
            raise ForestFormatError(f"{path}: unterminated tree block")
        cursor += 1
    for round_trees in trees:
        if any(t is None for t in round_trees):
            raise ForestFormatError(f"{path}: missing trees for some class/round")
    return BoostedForest(
        num_classes=num_classes,
        feature_dim=feature_dim,
        shrinkage=shrinkage,
        base_score=base_score,
        component_order=component_order,
        trees=tuple(tuple(rt) for rt in trees),
    )
