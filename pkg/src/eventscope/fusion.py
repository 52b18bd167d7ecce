"""Supervised fusion of feature scores into ranking models.

Training instances pair each user's attended events (+1) with a seeded
sample of events they skipped (-1).  Two learners are supported: closed
form ridge regression and an M5-style model tree (standard-deviation
reduction splits, a small ridge model in every node, bottom-up error
pruning; no smoothing pass).  Features are z-standardized with training
statistics so the tiny ridge penalty is meaningful across feature scales.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._util import substream
from .scorers import (CATEGORY_SCORE, HOME_DISTANCE, POPULARITY, RANDOM_WALK,
                      SOCIAL_INFLUENCE, TEMPORAL_DISTANCE, PredictionList)

SOCIAL_TIEBREAK = "social_influence_tiebreak"

BASE_FUSION_FEATURES = (HOME_DISTANCE, CATEGORY_SCORE, TEMPORAL_DISTANCE,
                        POPULARITY, SOCIAL_INFLUENCE, SOCIAL_TIEBREAK)
RWR_FUSION_FEATURES = BASE_FUSION_FEATURES + (RANDOM_WALK,)


@dataclass(frozen=True)
class TrainingInstance:
    user_id: str
    event_id: str
    features: tuple
    label: float               # +1 attended, -1 sampled non-attendance


def feature_column(score_matrices: dict, name: str) -> np.ndarray:
    """Oriented users x 1 column for a fusion feature name.

    The social tie-break enters fusion as its own column, pulled from the
    social influence matrix.
    """
    if name == SOCIAL_TIEBREAK:
        return score_matrices[SOCIAL_INFLUENCE].tie_break
    return score_matrices[name].oriented


def stack_features(score_matrices: dict, feature_order) -> np.ndarray:
    """(n_users, n_events, n_features) array in the given feature order."""
    missing = [f for f in feature_order
               if (SOCIAL_INFLUENCE if f == SOCIAL_TIEBREAK else f) not in score_matrices]
    if missing:
        raise ValueError(f"score matrices missing features: {missing}")
    return np.stack([feature_column(score_matrices, f) for f in feature_order], axis=-1)


def build_training_set(fold, score_matrices: dict, events,
                       n_negatives: int = 15, seed: int = 0,
                       feature_order=BASE_FUSION_FEATURES) -> list:
    """Positives plus seeded negative samples for every training user.

    Training users are attendees of at least one event who are not held
    out anywhere in this fold.  Negatives are drawn uniformly without
    replacement from the user's non-attended events (all of them if fewer
    than `n_negatives` exist).
    """
    events = list(events)
    event_ids = [e.event_id for e in events]
    attended_by = {}
    for e in events:
        for u in e.attendees:
            attended_by.setdefault(u, set()).add(e.event_id)
    training_users = sorted(u for u in attended_by if u not in fold.test_users)

    cube = stack_features(score_matrices, feature_order)
    any_matrix = next(iter(score_matrices.values()))

    instances = []
    for u in training_users:
        row = any_matrix.row_of(u)
        attended = sorted(attended_by[u])
        skipped = sorted(set(event_ids) - attended_by[u])
        rng = substream(seed, "negatives", fold.fold_index, u)
        take = min(n_negatives, len(skipped))
        chosen = sorted(rng.choice(len(skipped), size=take, replace=False).tolist()) if take else []
        for eid in attended:
            instances.append(TrainingInstance(u, eid, tuple(cube[row, any_matrix.col_of(eid)]), 1.0))
        for si in chosen:
            eid = skipped[si]
            instances.append(TrainingInstance(u, eid, tuple(cube[row, any_matrix.col_of(eid)]), -1.0))
    return instances


@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, X):
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        std = np.where(std > 0, std, 1.0)
        return cls(mean, std)

    def apply(self, X):
        return (X - self.mean) / self.std

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}


def _ridge_solve(X, y, lam):
    """Closed-form ridge with an unpenalized intercept (centered fit)."""
    x_mean = X.mean(axis=0)
    y_mean = y.mean()
    Xc = X - x_mean
    yc = y - y_mean
    d = X.shape[1]
    w = np.linalg.solve(Xc.T @ Xc + lam * np.eye(d), Xc.T @ yc)
    return w, float(y_mean - x_mean @ w)


@dataclass
class RidgeModel:
    kind = "ridge"
    feature_order: tuple
    weights: np.ndarray
    intercept: float
    standardizer: Standardizer | None

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if self.standardizer is not None:
            X = self.standardizer.apply(X)
        return X @ self.weights + self.intercept

    def to_dict(self):
        return {"kind": "ridge", "feature_order": list(self.feature_order),
                "weights": self.weights.tolist(), "intercept": self.intercept,
                "standardization": self.standardizer.to_dict() if self.standardizer else None}


def fit_ridge(instances, lam: float = 1e-8, feature_order=BASE_FUSION_FEATURES,
              standardize: bool = True) -> RidgeModel:
    """argmin ||Xw - y||^2 + lam ||w||^2 via the normal equations."""
    if not instances:
        raise ValueError("need at least one training instance")
    X = np.array([i.features for i in instances], dtype=float)
    y = np.array([i.label for i in instances], dtype=float)
    std = Standardizer.fit(X) if standardize else None
    if std is not None:
        X = std.apply(X)
    w, b = _ridge_solve(X, y, lam)
    return RidgeModel(tuple(feature_order), w, b, std)


@dataclass
class TreeNode:
    feature: int = -1                 # -1 marks a leaf
    threshold: float = 0.0
    left: "TreeNode" = None
    right: "TreeNode" = None
    weights: np.ndarray = None        # linear model fitted at this node
    intercept: float = 0.0
    n_samples: int = 0

    def to_dict(self):
        if self.feature < 0:
            return {"leaf": True, "weights": self.weights.tolist(),
                    "intercept": self.intercept, "n_samples": self.n_samples}
        return {"leaf": False, "feature": self.feature, "threshold": self.threshold,
                "n_samples": self.n_samples,
                "left": self.left.to_dict(), "right": self.right.to_dict()}


def _sd(y):
    return float(np.std(y))


def _best_split(X, y, min_leaf):
    """(sdr, feature, threshold) maximizing standard-deviation reduction.

    Candidates are midpoints between consecutive distinct values with at
    least `min_leaf` samples on each side; ties resolve to the lowest
    feature index, then the lowest threshold.
    """
    n, d = X.shape
    sd_all = _sd(y)
    best = (0.0, -1, 0.0)
    for f in range(d):
        order = np.argsort(X[:, f], kind="stable")
        xs, ys = X[order, f], y[order]
        csum = np.cumsum(ys)
        csq = np.cumsum(ys ** 2)
        total, total_sq = csum[-1], csq[-1]
        sizes = np.arange(1, n)
        valid = (sizes >= min_leaf) & (n - sizes >= min_leaf) & (xs[1:] != xs[:-1])
        if not valid.any():
            continue
        nl = sizes[valid].astype(float)
        nr = n - nl
        sl = csum[:-1][valid]
        sql = csq[:-1][valid]
        var_l = np.maximum(sql / nl - (sl / nl) ** 2, 0.0)
        var_r = np.maximum((total_sq - sql) / nr - ((total - sl) / nr) ** 2, 0.0)
        sdr = sd_all - (nl / n) * np.sqrt(var_l) - (nr / n) * np.sqrt(var_r)
        k = int(np.argmax(sdr))
        if sdr[k] > best[0]:
            pos = int(sizes[valid][k])
            thr = (xs[pos - 1] + xs[pos]) / 2.0
            if thr >= xs[pos]:
                thr = xs[pos - 1]
            best = (float(sdr[k]), f, float(thr))
    return best


@dataclass
class ModelTree:
    kind = "model_tree"
    feature_order: tuple
    root: TreeNode
    standardizer: Standardizer | None

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if self.standardizer is not None:
            X = self.standardizer.apply(X)
        out = np.empty(X.shape[0])
        idx = np.arange(X.shape[0])
        self._route(self.root, X, idx, out)
        return out

    def _route(self, node, X, idx, out):
        if node.feature < 0:
            out[idx] = X[idx] @ node.weights + node.intercept
            return
        go_left = X[idx, node.feature] <= node.threshold
        self._route(node.left, X, idx[go_left], out)
        self._route(node.right, X, idx[~go_left], out)

    def n_leaves(self) -> int:
        def count(node):
            return 1 if node.feature < 0 else count(node.left) + count(node.right)
        return count(self.root)

    def to_dict(self):
        return {"kind": "model_tree", "feature_order": list(self.feature_order),
                "root": self.root.to_dict(),
                "standardization": self.standardizer.to_dict() if self.standardizer else None}


def fit_model_tree(instances, min_leaf: int = 8, sd_threshold: float = 0.05,
                   lam: float = 1e-8, feature_order=BASE_FUSION_FEATURES,
                   standardize: bool = True, max_depth: int | None = None,
                   prune: bool = True) -> ModelTree:
    """Grow an M5-style tree: SDR splits, ridge linear model per leaf.

    A node becomes a leaf when it has fewer than 2 * min_leaf samples,
    when its label deviation falls under sd_threshold times the root
    deviation, or when no split improves the deviation.  A bottom-up
    pruning pass then collapses any subtree whose complexity-adjusted
    training error (mean absolute error times (n + v)/(n - v), v = model
    parameters) is no better than a single linear model at that node.
    """
    if not instances:
        raise ValueError("need at least one training instance")
    X = np.array([i.features for i in instances], dtype=float)
    y = np.array([i.label for i in instances], dtype=float)
    std = Standardizer.fit(X) if standardize else None
    if std is not None:
        X = std.apply(X)

    sd_root = _sd(y)
    n_params = X.shape[1] + 1

    def grow(idx, depth):
        ys = y[idx]
        if (idx.size < 2 * min_leaf or _sd(ys) < sd_threshold * sd_root
                or (max_depth is not None and depth >= max_depth)):
            return TreeNode(feature=-1, n_samples=idx.size)
        sdr, f, thr = _best_split(X[idx], ys, min_leaf)
        if f < 0 or sdr <= 0:
            return TreeNode(feature=-1, n_samples=idx.size)
        go_left = X[idx, f] <= thr
        node = TreeNode(feature=f, threshold=thr, n_samples=idx.size)
        node.left = grow(idx[go_left], depth + 1)
        node.right = grow(idx[~go_left], depth + 1)
        return node

    def adjusted(mae, n):
        if mae == 0.0:
            return 0.0
        if n <= n_params:
            return math.inf
        return mae * (n + n_params) / (n - n_params)

    def fit_models(node, idx):
        """Fit every node's model; return the subtree's error estimate and
        collapse nodes whose own model does at least as well."""
        w, b = _ridge_solve(X[idx], y[idx], lam)
        node.weights, node.intercept = w, b
        model_err = adjusted(float(np.mean(np.abs(X[idx] @ w + b - y[idx]))), idx.size)
        if node.feature < 0:
            return model_err
        go_left = X[idx, node.feature] <= node.threshold
        left_err = fit_models(node.left, idx[go_left])
        right_err = fit_models(node.right, idx[~go_left])
        subtree_err = (node.left.n_samples * left_err
                       + node.right.n_samples * right_err) / idx.size
        if prune and model_err <= subtree_err:
            node.feature, node.left, node.right = -1, None, None
            return model_err
        return subtree_err

    root = grow(np.arange(len(instances)), 0)
    fit_models(root, np.arange(len(instances)))
    return ModelTree(tuple(feature_order), root, std)


def training_mse(model, instances) -> float:
    X = np.array([i.features for i in instances], dtype=float)
    y = np.array([i.label for i in instances], dtype=float)
    return float(np.mean((model.predict(X) - y) ** 2))


def predict_and_rank(model, test_user, events, score_matrices: dict,
                     relevance=None) -> PredictionList:
    """Rank all events for one user by model prediction.

    Ties break toward the ascending event id; the score matrices must
    cover the model's feature order.
    """
    events = list(events)
    cube = stack_features(score_matrices, model.feature_order)
    any_matrix = next(iter(score_matrices.values()))
    row = any_matrix.row_of(test_user)
    X = np.array([cube[row, any_matrix.col_of(e.event_id)] for e in events], dtype=float)
    preds = model.predict(X)
    order = sorted(range(len(events)), key=lambda i: (-preds[i], events[i].event_id))
    relevance = relevance or {}
    rel = {e.event_id: int(relevance.get(e.event_id, 0)) for e in events}
    return PredictionList(test_user, tuple(events[i].event_id for i in order), rel)


def model_from_dict(d):
    std = None
    if d.get("standardization"):
        std = Standardizer(np.array(d["standardization"]["mean"]),
                           np.array(d["standardization"]["std"]))
    if d["kind"] == "ridge":
        return RidgeModel(tuple(d["feature_order"]), np.array(d["weights"]),
                          float(d["intercept"]), std)
    if d["kind"] == "model_tree":
        def node_from(nd):
            if nd["leaf"]:
                return TreeNode(feature=-1, weights=np.array(nd["weights"]),
                                intercept=float(nd["intercept"]), n_samples=nd["n_samples"])
            return TreeNode(feature=nd["feature"], threshold=nd["threshold"],
                            n_samples=nd["n_samples"],
                            left=node_from(nd["left"]), right=node_from(nd["right"]))
        return ModelTree(tuple(d["feature_order"]), node_from(d["root"]), std)
    raise ValueError(f"unknown model kind {d.get('kind')!r}")
