"""Tree ensembles over dummy-coded designs: random forest and gradient boosting.

Both learners split on the binary design columns (the constant column is
never a candidate).  Forest trees are grown on weighted bootstrap
resamples and split by weighted-entropy decrease; boosted regression trees
fit the weighted negative gradient of the softmax cross-entropy, one tree
per class per round, with Newton leaf values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "ForestConfig",
    "BoostConfig",
    "TreeNode",
    "ForestModel",
    "BoostModel",
    "fit_forest",
    "fit_boosted",
]

PROB_CLIP = 1e-12


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 500
    max_depth: int = 5
    min_leaf: int = 10
    max_features: int | None = 5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_trees < 1 or self.max_depth < 1 or self.min_leaf < 1:
            raise ValueError("forest config values must be positive")


@dataclass(frozen=True)
class BoostConfig:
    n_rounds: int = 500
    max_depth: int = 4
    min_leaf: int = 20
    learning_rate: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_rounds < 1 or self.max_depth < 1 or self.min_leaf < 1:
            raise ValueError("boost config values must be positive")
        if self.learning_rate < 0.0:
            raise ValueError("learning rate must be >= 0")


@dataclass
class TreeNode:
    """Internal node (column + children) or leaf (value vector)."""

    column: int = -1
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    value: np.ndarray | None = None

    def is_leaf(self) -> bool:
        return self.value is not None

    def to_dict(self) -> dict:
        if self.is_leaf():
            return {"value": [float(v) for v in self.value]}
        return {
            "column": self.column,
            "left": self.left.to_dict(),
            "right": self.right.to_dict(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TreeNode":
        if "value" in doc:
            return cls(value=np.asarray(doc["value"], dtype=np.float64))
        return cls(
            column=int(doc["column"]),
            left=cls.from_dict(doc["left"]),
            right=cls.from_dict(doc["right"]),
        )


def _predict_tree(node: TreeNode, X: np.ndarray) -> np.ndarray:
    """Vectorized traversal; returns (n, value_dim)."""
    out = np.empty((X.shape[0], len(_first_leaf(node).value)))
    stack = [(node, np.arange(X.shape[0]))]
    while stack:
        nd, idx = stack.pop()
        if len(idx) == 0:
            continue
        if nd.is_leaf():
            out[idx] = nd.value
            continue
        go_right = X[idx, nd.column] > 0.5
        stack.append((nd.left, idx[~go_right]))
        stack.append((nd.right, idx[go_right]))
    return out


def _first_leaf(node: TreeNode) -> TreeNode:
    while not node.is_leaf():
        node = node.left
    return node


def _weighted_entropy(class_w: np.ndarray) -> float:
    total = class_w.sum()
    if total <= 0.0:
        return 0.0
    p = class_w / total
    p = p[p > 0.0]
    return float(-(p * np.log(p)).sum())


def _entropy_by_column(class_w_cols: np.ndarray) -> np.ndarray:
    """Weighted entropy per column from (n_classes, n_cols) class masses."""
    totals = class_w_cols.sum(axis=0)
    safe = np.clip(totals, PROB_CLIP, None)
    p = class_w_cols / safe
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0.0, p * np.log(p), 0.0)
    return np.where(totals > 0.0, -terms.sum(axis=0), 0.0)


def _grow_classification_tree(
    X: np.ndarray,
    labels: np.ndarray,
    w: np.ndarray,
    n_classes: int,
    max_depth: int,
    min_leaf: int,
    max_features: int | None,
    rng: np.random.Generator,
    importance: np.ndarray,
) -> TreeNode:
    candidates = np.arange(1, X.shape[1])  # skip the constant column
    onehot_w = np.zeros((X.shape[0], n_classes))
    onehot_w[np.arange(X.shape[0]), labels] = w

    def leaf(idx: np.ndarray) -> TreeNode:
        class_w = onehot_w[idx].sum(axis=0)
        return TreeNode(value=class_w / class_w.sum())

    def grow(idx: np.ndarray, depth: int) -> TreeNode:
        class_w = onehot_w[idx].sum(axis=0)
        if depth >= max_depth or len(idx) < 2 * min_leaf or (class_w > 0).sum() <= 1:
            return leaf(idx)
        if max_features is not None and max_features < len(candidates):
            cols = np.sort(rng.choice(candidates, size=max_features, replace=False))
        else:
            cols = candidates
        Xc = X[np.ix_(idx, cols)]
        n_right = Xc.sum(axis=0)
        valid = (n_right >= min_leaf) & (len(idx) - n_right >= min_leaf)
        if not valid.any():
            return leaf(idx)
        cw_right = onehot_w[idx].T @ Xc  # (n_classes, n_cols)
        cw_left = class_w[:, None] - cw_right
        parent = class_w.sum() * _weighted_entropy(class_w)
        gains = parent - (
            cw_left.sum(axis=0) * _entropy_by_column(cw_left)
            + cw_right.sum(axis=0) * _entropy_by_column(cw_right)
        )
        gains = np.where(valid, gains, -np.inf)
        best = int(np.argmax(gains))
        if gains[best] <= 1e-15:
            return leaf(idx)
        best_col = int(cols[best])
        importance[best_col] += gains[best]
        right = X[idx, best_col] > 0.5
        return TreeNode(
            column=best_col,
            left=grow(idx[~right], depth + 1),
            right=grow(idx[right], depth + 1),
        )

    return grow(np.arange(X.shape[0]), 0)


@dataclass
class ForestModel:
    trees: list[TreeNode]
    n_classes: int
    importance: np.ndarray  # raw weighted-entropy decrease per design column

    def predict_probs(self, X: np.ndarray) -> np.ndarray:
        acc = np.zeros((X.shape[0], self.n_classes))
        for tree in self.trees:
            acc += _predict_tree(tree, X)
        return acc / len(self.trees)


def fit_forest(
    X: np.ndarray, labels: np.ndarray, w: np.ndarray, cfg: ForestConfig, n_classes: int = 4
) -> ForestModel:
    """Bootstrap draws record i with probability proportional to w_i; the
    resample multiplicities act as the training weights of each tree."""
    n = X.shape[0]
    p = w / w.sum()
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.n_trees)
    importance = np.zeros(X.shape[1])
    trees = []
    for seq in seeds:
        rng = np.random.default_rng(seq)
        counts = np.bincount(rng.choice(n, size=n, p=p), minlength=n).astype(np.float64)
        in_bag = counts > 0
        trees.append(
            _grow_classification_tree(
                X[in_bag],
                labels[in_bag],
                counts[in_bag],
                n_classes,
                cfg.max_depth,
                cfg.min_leaf,
                cfg.max_features,
                rng,
                importance,
            )
        )
    return ForestModel(trees, n_classes, importance)


# ---------------------------------------------------------------------------
# Gradient boosting


def _grow_regression_tree(
    X: np.ndarray,
    grad: np.ndarray,  # weighted negative gradient w * (y - p)
    hess: np.ndarray,  # w * p * (1 - p)
    w: np.ndarray,
    max_depth: int,
    min_leaf: int,
    importance: np.ndarray,
) -> TreeNode:
    """Fits grad/w by weighted least-squares splits; leaves take the Newton
    step sum(grad) / sum(hess).

    Weighted SSE reduction reduces to S_R^2/W_R + S_L^2/W_L - S^2/W with
    S = sum(w * target) and W = sum(w), which vectorizes across columns.
    """
    candidates = np.arange(1, X.shape[1])
    wt = grad  # w * target, since target = grad / w

    def leaf(idx: np.ndarray) -> TreeNode:
        value = grad[idx].sum() / max(hess[idx].sum(), PROB_CLIP)
        return TreeNode(value=np.array([value]))

    def grow(idx: np.ndarray, depth: int) -> TreeNode:
        if depth >= max_depth or len(idx) < 2 * min_leaf:
            return leaf(idx)
        Xc = X[np.ix_(idx, candidates)]
        n_right = Xc.sum(axis=0)
        valid = (n_right >= min_leaf) & (len(idx) - n_right >= min_leaf)
        if not valid.any():
            return leaf(idx)
        W = w[idx].sum()
        S = wt[idx].sum()
        W_r = w[idx] @ Xc
        S_r = wt[idx] @ Xc
        W_l = W - W_r
        S_l = S - S_r
        gains = (
            S_r**2 / np.clip(W_r, PROB_CLIP, None)
            + S_l**2 / np.clip(W_l, PROB_CLIP, None)
            - S**2 / W
        )
        gains = np.where(valid, gains, -np.inf)
        best = int(np.argmax(gains))
        if gains[best] <= 1e-12:
            return leaf(idx)
        best_col = int(candidates[best])
        importance[best_col] += gains[best]
        right = X[idx, best_col] > 0.5
        return TreeNode(
            column=best_col,
            left=grow(idx[~right], depth + 1),
            right=grow(idx[right], depth + 1),
        )

    return grow(np.arange(X.shape[0]), 0)


@dataclass
class BoostModel:
    init_scores: np.ndarray  # (n_classes,)
    rounds: list[list[TreeNode]]  # per round, one tree per class
    learning_rate: float
    n_classes: int
    importance: np.ndarray

    def raw_scores(self, X: np.ndarray) -> np.ndarray:
        scores = np.tile(self.init_scores, (X.shape[0], 1))
        if self.learning_rate == 0.0:
            return scores
        for round_trees in self.rounds:
            for k, tree in enumerate(round_trees):
                scores[:, k] += self.learning_rate * _predict_tree(tree, X)[:, 0]
        return scores

    def predict_probs(self, X: np.ndarray) -> np.ndarray:
        scores = self.raw_scores(X)
        z = scores - scores.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)


def fit_boosted(
    X: np.ndarray, labels: np.ndarray, w: np.ndarray, cfg: BoostConfig, n_classes: int = 4
) -> BoostModel:
    n = X.shape[0]
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), labels] = 1.0
    class_w = np.bincount(labels, weights=w, minlength=n_classes)
    init = np.log(np.clip(class_w / class_w.sum(), PROB_CLIP, None))
    importance = np.zeros(X.shape[1])
    model = BoostModel(init, [], cfg.learning_rate, n_classes, importance)
    if cfg.learning_rate == 0.0:
        return model

    scores = np.tile(init, (n, 1))
    for _ in range(cfg.n_rounds):
        z = scores - scores.max(axis=1, keepdims=True)
        e = np.exp(z)
        probs = e / e.sum(axis=1, keepdims=True)
        round_trees = []
        for k in range(n_classes):
            grad = w * (onehot[:, k] - probs[:, k])
            hess = w * probs[:, k] * (1.0 - probs[:, k])
            tree = _grow_regression_tree(
                X, grad, hess, w, cfg.max_depth, cfg.min_leaf, importance
            )
            scores[:, k] += cfg.learning_rate * _predict_tree(tree, X)[:, 0]
            round_trees.append(tree)
        model.rounds.append(round_trees)
    return model
