"""Second-order gradient-boosted regression trees with logistic loss.

Exact greedy split search: every feature, every midpoint between consecutive
distinct sorted values, gain

    0.5 * [G_L^2/(H_L+lambda) + G_R^2/(H_R+lambda) - (G_L+G_R)^2/(H_L+H_R+lambda)] - gamma

with Newton leaf weights -G/(H+lambda). Leaf weights are stored pre-scaled by
the learning rate, so prediction is a plain sum over routed leaves. Training
rows are canonicalized (lexicographic sort) before any arithmetic, which makes
models bit-identical under permutation of the training-sample order.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .dataset import FeatureVector

MODEL_FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    """Model file is corrupted, mis-versioned, or structurally invalid."""


@dataclass(frozen=True)
class BoostParams:
    """Paper configuration: 100 rounds, learning rate 0.1, max depth 3.

    reg_lambda/gamma/min_child_weight keep the cited method's published
    defaults (1.0 / 0.0 / 1.0). seed is carried for provenance; exact greedy
    training itself is deterministic.
    """

    rounds: int = 100
    learning_rate: float = 0.1
    max_depth: int = 3
    reg_lambda: float = 1.0
    gamma: float = 0.0
    min_child_weight: float = 1.0
    seed: int = 42

    def __post_init__(self) -> None:
        if self.rounds < 0:
            raise ValueError("rounds must be non-negative")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError("learning_rate must be in (0, 1]")
        if self.max_depth < 0:
            raise ValueError("max_depth must be non-negative")
        if self.reg_lambda < 0 or self.gamma < 0:
            raise ValueError("reg_lambda and gamma must be non-negative")


@dataclass(frozen=True)
class Leaf:
    weight: float


@dataclass(frozen=True)
class Split:
    feature_index: int
    threshold: float
    left: "TreeNode"
    right: "TreeNode"


TreeNode = Union[Leaf, Split]


@dataclass(frozen=True)
class SplitDecision:
    feature_index: int
    threshold: float
    gain: float
    g_left: float
    h_left: float
    g_right: float
    h_right: float


@dataclass(frozen=True)
class Model:
    trees: tuple[TreeNode, ...]
    params: BoostParams
    feature_dim: int
    base_raw_score: float = 0.0
    metadata: dict = field(default_factory=dict)


def sigmoid(raw):
    return 1.0 / (1.0 + np.exp(-np.asarray(raw, dtype=np.float64)))


def leaf_weight(g_sum: float, h_sum: float, reg_lambda: float) -> float:
    """Newton step for a leaf: -G / (H + lambda)."""
    denom = h_sum + reg_lambda
    if denom <= 0.0:
        raise ValueError(f"H + lambda must be positive, got {denom}")
    return -g_sum / denom


def best_split(
    rows: np.ndarray,
    grads: np.ndarray,
    hessians: np.ndarray,
    params: BoostParams,
) -> SplitDecision | None:
    """Exact greedy search over all features and all distinct-value midpoints.

    Accepts the maximum-gain split with gain > 0 whose children both satisfy
    the min_child_weight hessian mass; ties break to the lower feature index,
    then the lower threshold. Returns None on degenerate nodes.
    """
    rows = np.asarray(rows, dtype=np.float64)
    n = rows.shape[0]
    if n < 2:
        return None
    grads = np.asarray(grads, dtype=np.float64)
    hessians = np.asarray(hessians, dtype=np.float64)
    g_total = float(np.sum(grads))
    h_total = float(np.sum(hessians))
    parent_term = g_total * g_total / (h_total + params.reg_lambda)

    best: SplitDecision | None = None
    for f in range(rows.shape[1]):
        col = rows[:, f]
        order = np.argsort(col, kind="mergesort")
        xs = col[order]
        gl = np.cumsum(grads[order])[:-1]
        hl = np.cumsum(hessians[order])[:-1]
        boundary = xs[1:] != xs[:-1]
        if not boundary.any():
            continue
        gr = g_total - gl
        hr = h_total - hl
        gain = 0.5 * (gl * gl / (hl + params.reg_lambda) + gr * gr / (hr + params.reg_lambda) - parent_term) - params.gamma
        valid = boundary & (hl >= params.min_child_weight) & (hr >= params.min_child_weight) & (gain > 0.0)
        if not valid.any():
            continue
        candidates = np.flatnonzero(valid)
        pick = candidates[int(np.argmax(gain[candidates]))]  # first max: lowest threshold wins ties
        cand_gain = float(gain[pick])
        if best is None or cand_gain > best.gain:  # strict: lower feature index wins ties
            best = SplitDecision(
                feature_index=f,
                threshold=float((xs[pick] + xs[pick + 1]) / 2.0),
                gain=cand_gain,
                g_left=float(gl[pick]),
                h_left=float(hl[pick]),
                g_right=float(gr[pick]),
                h_right=float(hr[pick]),
            )
    return best


def grow_tree(rows: np.ndarray, grads: np.ndarray, hessians: np.ndarray, params: BoostParams) -> TreeNode:
    """Grow one regression tree depth-first to max_depth.

    Leaf weights are Newton steps already scaled by the learning rate.
    """
    rows = np.asarray(rows, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    hessians = np.asarray(hessians, dtype=np.float64)

    def build(idx: np.ndarray, depth: int) -> TreeNode:
        g = grads[idx]
        h = hessians[idx]
        if depth < params.max_depth and idx.shape[0] >= 2:
            decision = best_split(rows[idx], g, h, params)
            if decision is not None:
                go_left = rows[idx, decision.feature_index] < decision.threshold
                return Split(
                    feature_index=decision.feature_index,
                    threshold=decision.threshold,
                    left=build(idx[go_left], depth + 1),
                    right=build(idx[~go_left], depth + 1),
                )
        return Leaf(params.learning_rate * leaf_weight(float(np.sum(g)), float(np.sum(h)), params.reg_lambda))

    return build(np.arange(rows.shape[0]), 0)


def predict_tree(node: TreeNode, x: np.ndarray) -> float:
    """Stored weight of the leaf this vector routes to (value < threshold goes left)."""
    while isinstance(node, Split):
        node = node.left if x[node.feature_index] < node.threshold else node.right
    return node.weight


def _features_matrix(features: Sequence[FeatureVector] | np.ndarray) -> np.ndarray:
    if isinstance(features, np.ndarray):
        mat = np.asarray(features, dtype=np.float64)
        if mat.ndim != 2:
            raise ValueError("feature matrix must be 2-d")
        return mat
    return np.stack([np.asarray(fv.values, dtype=np.float64) for fv in features])


def _canonical_order(rows: np.ndarray, y: np.ndarray) -> np.ndarray:
    # Sort keys: label last so it is the primary key after the reversed lexsort
    # of feature columns; this fixed ordering makes training (and the dataset
    # fingerprint) invariant to the caller's row order.
    keys = tuple(rows[:, f] for f in range(rows.shape[1] - 1, -1, -1)) + (y,)
    return np.lexsort(keys)


def _dataset_fingerprint(rows: np.ndarray, y: np.ndarray) -> str:
    digest = hashlib.sha256()
    digest.update(f"{rows.shape[0]}x{rows.shape[1]};".encode())
    digest.update(np.ascontiguousarray(rows).tobytes())
    digest.update(np.ascontiguousarray(y.astype(np.int64)).tobytes())
    return digest.hexdigest()


def train(
    features: Sequence[FeatureVector] | np.ndarray,
    labels: Sequence[int] | np.ndarray,
    params: BoostParams,
    *,
    timestamp: str | None = None,
) -> Model:
    """Train with logistic loss from an initial raw score of 0 (probability 0.5).

    Per round: g_i = p_i - y_i, h_i = p_i (1 - p_i); one tree grown by exact
    greedy search; raw scores advance by the stored (pre-scaled) leaf weights.
    No subsampling, so training is deterministic for fixed inputs and params.
    """
    rows = _features_matrix(features)
    y = np.asarray(labels, dtype=np.float64)
    if rows.shape[0] == 0:
        raise ValueError("training set is empty")
    if y.shape[0] != rows.shape[0]:
        raise ValueError("feature and label counts differ")
    if not np.all(np.isin(y, (0.0, 1.0))):
        raise ValueError("labels must be 0 or 1")
    if np.all(y == y[0]):
        raise ValueError("training set contains a single class")

    order = _canonical_order(rows, y)
    rows = np.ascontiguousarray(rows[order])
    y = y[order]

    metadata = {"dataset_fingerprint": _dataset_fingerprint(rows, y)}
    if timestamp is not None:
        metadata["trained_at"] = timestamp

    raw = np.zeros(rows.shape[0], dtype=np.float64)
    trees: list[TreeNode] = []
    for _ in range(params.rounds):
        p = sigmoid(raw)
        grads = p - y
        hessians = p * (1.0 - p)
        root = grow_tree(rows, grads, hessians, params)
        trees.append(root)
        raw += np.array([predict_tree(root, rows[i]) for i in range(rows.shape[0])])
    return Model(trees=tuple(trees), params=params, feature_dim=rows.shape[1], metadata=metadata)


def _as_row(model: Model, x: FeatureVector | np.ndarray) -> np.ndarray:
    vec = x.values if isinstance(x, FeatureVector) else np.asarray(x, dtype=np.float64)
    if vec.shape != (model.feature_dim,):
        raise ValueError(f"input has {vec.shape} values, model expects {model.feature_dim}")
    return vec

def predict_raw(model: Model, x: FeatureVector | np.ndarray) -> float:
    """base_raw_score plus the sum of stored leaf weights along routed paths."""
    vec = _as_row(model, x)
    return model.base_raw_score + sum(predict_tree(t, vec) for t in model.trees)


def predict_proba(model: Model, x: FeatureVector | np.ndarray) -> float:
    """Sigmoid of the raw score; always strictly inside (0, 1)."""
    return float(sigmoid(predict_raw(model, x)))


def predict_proba_many(model: Model, features: Sequence[FeatureVector] | np.ndarray) -> np.ndarray:
    mat = _features_matrix(features)
    raws = np.array([predict_raw(model, mat[i]) for i in range(mat.shape[0])])
    return sigmoid(raws)


def _node_to_obj(node: TreeNode) -> dict:
    if isinstance(node, Leaf):
        return {"w": node.weight}
    return {
        "f": node.feature_index,
        "t": node.threshold,
        "l": _node_to_obj(node.left),
        "r": _node_to_obj(node.right),
    }


def _node_from_obj(obj: dict, feature_dim: int) -> TreeNode:
    if not isinstance(obj, dict):
        raise ModelFormatError("tree node must be an object")
    if "w" in obj:
        return Leaf(float(obj["w"]))
    try:
        feature_index = int(obj["f"])
        threshold = float(obj["t"])
        left = _node_from_obj(obj["l"], feature_dim)
        right = _node_from_obj(obj["r"], feature_dim)
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"malformed tree node: {exc}") from exc
    if not 0 <= feature_index < feature_dim:
        raise ModelFormatError(f"tree references feature {feature_index} outside dim {feature_dim}")
    return Split(feature_index, threshold, left, right)


def save_model(model: Model, path: str | Path) -> None:
    """Serialize to canonical JSON: same model, same bytes."""
    doc = {
        "format_version": MODEL_FORMAT_VERSION,
        "feature_dim": model.feature_dim,
        "base_raw_score": model.base_raw_score,
        "params": {
            "rounds": model.params.rounds,
            "learning_rate": model.params.learning_rate,
            "max_depth": model.params.max_depth,
            "reg_lambda": model.params.reg_lambda,
            "gamma": model.params.gamma,
            "min_child_weight": model.params.min_child_weight,
            "seed": model.params.seed,
        },
        "trees": [_node_to_obj(t) for t in model.trees],
        "metadata": model.metadata,
    }
    Path(path).write_text(json.dumps(doc, separators=(",", ":")) + "\n", encoding="utf-8")


def load_model(path: str | Path) -> Model:
    """Inverse of save_model; rejects unknown format versions and bad structure."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"corrupted model file: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ModelFormatError("model file must hold a JSON object")
    version = doc.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model format version {version!r}")
    try:
        feature_dim = int(doc["feature_dim"])
        base = float(doc["base_raw_score"])
        params = BoostParams(**doc["params"])
        trees = tuple(_node_from_obj(t, feature_dim) for t in doc["trees"])
    except ModelFormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"malformed model file: {exc}") from exc
    metadata = doc.get("metadata", {})
    if not isinstance(metadata, dict):
        raise ModelFormatError("metadata must be an object")
    return Model(trees=trees, params=params, feature_dim=feature_dim, base_raw_score=base, metadata=metadata)
