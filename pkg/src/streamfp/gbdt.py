"""Histogram gradient-boosted decision trees for binary classification.

Implements second-order (Newton) boosting with logistic loss. Trees are
grown leaf-wise by greedy histogram split search; candidate thresholds come
from per-feature quantile bins fitted once on the training matrix. Training
is fully deterministic: equal-gain ties break to the lowest feature index,
then the lowest threshold rank, so the same inputs always produce the same
serialized model.
"""
from __future__ import annotations

import heapq
import itertools
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .features import FeatureMatrix

# L2 regularization on leaf values (Newton denominator). Standard practice;
# kept constant so reported models are comparable.
L2_LAMBDA = 1.0

MODEL_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class TrainParams:
    """Training protocol knobs.

    The boosting schedule (5000 trees max, 0.02 learning rate, patience 40
    on validation log-loss) is the reference protocol; leaf/bin limits are
    framework-default stand-ins and are echoed into every saved model and
    report so results stay auditable. ``seed`` is reserved for stochastic
    extensions; the base trainer is deterministic and does not consume it.
    """

    learning_rate: float = 0.02
    max_trees: int = 5000
    early_stop_patience: int = 40
    max_leaves: int = 31
    min_samples_per_leaf: int = 20
    n_histogram_bins: int = 255
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.max_trees < 1:
            raise ValueError("max_trees must be >= 1")
        if self.early_stop_patience < 1:
            raise ValueError("early_stop_patience must be >= 1")
        if self.max_leaves < 2:
            raise ValueError("max_leaves must be >= 2")
        if self.min_samples_per_leaf < 1:
            raise ValueError("min_samples_per_leaf must be >= 1")
        if self.n_histogram_bins < 2:
            raise ValueError("n_histogram_bins must be >= 2")


class Tree:
    """Flat-array binary tree. ``feature[i] < 0`` marks node ``i`` as a leaf."""

    __slots__ = ("feature", "threshold", "left", "right", "value")

    def __init__(self, feature, threshold, left, right, value):
        self.feature = np.asarray(feature, dtype=np.int32)
        self.threshold = np.asarray(threshold, dtype=np.float64)
        self.left = np.asarray(left, dtype=np.int32)
        self.right = np.asarray(right, dtype=np.int32)
        self.value = np.asarray(value, dtype=np.float64)

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf value for every row of X (x <= threshold goes left)."""
        node = np.zeros(len(X), dtype=np.int32)
        while True:
            feat = self.feature[node]
            internal = feat >= 0
            if not internal.any():
                break
            rows = np.nonzero(internal)[0]
            cur = node[rows]
            go_left = X[rows, feat[rows]] <= self.threshold[cur]
            node[rows] = np.where(go_left, self.left[cur], self.right[cur])
        return self.value[node]

    def to_nodes(self) -> list[dict]:
        nodes = []
        for i in range(self.n_nodes):
            if self.feature[i] < 0:
                nodes.append({"value": float(self.value[i])})
            else:
                nodes.append({
                    "feature": int(self.feature[i]),
                    "threshold": float(self.threshold[i]),
                    "left": int(self.left[i]),
                    "right": int(self.right[i]),
                })
        return nodes

    @classmethod
    def from_nodes(cls, nodes: list[dict]) -> "Tree":
        n = len(nodes)
        feature = np.full(n, -1, dtype=np.int32)
        threshold = np.zeros(n)
        left = np.full(n, -1, dtype=np.int32)
        right = np.full(n, -1, dtype=np.int32)
        value = np.zeros(n)
        for i, node in enumerate(nodes):
            if "value" in node:
                value[i] = node["value"]
            else:
                feature[i] = node["feature"]
                threshold[i] = node["threshold"]
                left[i] = node["left"]
                right[i] = node["right"]
        return cls(feature, threshold, left, right, value)


@dataclass(frozen=True)
class GbdtModel:
    """Fitted ensemble. Evaluation is a pure function of (model, features)."""

    base_score: float
    n_features: int
    params: TrainParams
    trees: tuple[Tree, ...]

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        X = _as_matrix(X)
        if X.shape[1] != self.n_features:
            raise ValueError(
                f"feature width mismatch: model expects {self.n_features}, got {X.shape[1]}"
            )
        score = np.full(len(X), self.base_score, dtype=np.float64)
        for tree in self.trees:
            score += tree.apply(X)
        return score


def _as_matrix(features) -> np.ndarray:
    if isinstance(features, FeatureMatrix):
        return features.features
    return np.asarray(features, dtype=np.float64)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-z))


def _log_loss(y: np.ndarray, p: np.ndarray) -> float:
    p = np.clip(p, 1e-15, 1 - 1e-15)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))


def _fit_bins(X: np.ndarray, n_bins: int) -> list[np.ndarray]:
    """Per-feature candidate thresholds (bin upper boundaries).

    Features with few distinct values get exact midpoints between
    consecutive values, so on small data histogram search degenerates to
    exhaustive search. Dense features fall back to quantile boundaries.
    """
    bounds = []
    for j in range(X.shape[1]):
        u = np.unique(X[:, j])
        if len(u) <= 1:
            bounds.append(np.empty(0))
        elif len(u) <= n_bins:
            bounds.append((u[:-1] + u[1:]) / 2.0)
        else:
            qs = np.quantile(X[:, j], np.arange(1, n_bins) / n_bins)
            bounds.append(np.unique(qs))
    return bounds


def _bin_matrix(X: np.ndarray, bounds: list[np.ndarray]) -> np.ndarray:
    binned = np.empty(X.shape, dtype=np.uint16)
    for j, b in enumerate(bounds):
        binned[:, j] = np.searchsorted(b, X[:, j], side="left")
    return binned


class _NodeState:
    __slots__ = ("slot", "idx", "hg", "hh", "hc", "g_sum", "h_sum", "split")

    def __init__(self, slot, idx, hg, hh, hc, g_sum, h_sum):
        self.slot = slot
        self.idx = idx
        self.hg = hg
        self.hh = hh
        self.hc = hc
        self.g_sum = g_sum
        self.h_sum = h_sum
        self.split = None  # (gain, feature, bin, threshold)


class _TreeGrower:
    """Leaf-wise grower shared state for one boosting run.

    Histograms live in a ragged flat layout: feature j occupies
    ``seg_start[j]:seg_start[j+1]`` with one slot per bin. Split search runs
    vectorized over that flat array; per-segment cumulative sums come from a
    single cumsum with segment-base subtraction.
    """

    def __init__(self, binned, bounds, params: TrainParams):
        self.params = params
        self.n, self.f = binned.shape
        nb = np.array([len(b) + 1 for b in bounds], dtype=np.int64)
        self.seg_start = np.concatenate([[0], np.cumsum(nb)])
        self.total_bins = int(self.seg_start[-1])
        self.bounds = bounds
        # flat bin index per (sample, feature); column-major copy for the
        # per-feature root pass
        self.flat = binned.astype(np.int64) + self.seg_start[:-1]
        self.binned_T = np.ascontiguousarray(binned.T)
        self.binned = binned

        self.seg_id = np.repeat(np.arange(self.f), nb)
        local_bin = np.arange(self.total_bins) - self.seg_start[self.seg_id]
        # a bin is a candidate threshold only when a boundary exists at its
        # rank (the last bin of each feature has none)
        self.cand = local_bin < (nb[self.seg_id] - 1)
        self.root_counts = None
        # scratch buffers for the split search
        self._cg = np.empty(self.total_bins)
        self._ch = np.empty(self.total_bins)
        self._cc = np.empty(self.total_bins)
        self._gain = np.empty(self.total_bins)
        self._tmp = np.empty(self.total_bins)

    def _root_histograms(self, g, h):
        hg = np.empty(self.total_bins)
        hh = np.empty(self.total_bins)
        for j in range(self.f):
            s, e = self.seg_start[j], self.seg_start[j + 1]
            col = self.binned_T[j]
            hg[s:e] = np.bincount(col, weights=g, minlength=e - s)
            hh[s:e] = np.bincount(col, weights=h, minlength=e - s)
        if self.root_counts is None:
            hc = np.empty(self.total_bins)
            for j in range(self.f):
                s, e = self.seg_start[j], self.seg_start[j + 1]
                hc[s:e] = np.bincount(self.binned_T[j], minlength=e - s)
            self.root_counts = hc
        return hg, hh, self.root_counts

    def _histograms(self, idx, g, h):
        flat = self.flat[idx].ravel()
        gw = np.repeat(g[idx], self.f)
        hw = np.repeat(h[idx], self.f)
        hg = np.bincount(flat, weights=gw, minlength=self.total_bins)
        hh = np.bincount(flat, weights=hw, minlength=self.total_bins)
        hc = np.bincount(flat, minlength=self.total_bins).astype(np.float64)
        return hg, hh, hc

    def _segment_cumsum(self, values, out):
        np.cumsum(values, out=out)
        bases = out[self.seg_start[1:-1] - 1]
        out -= np.concatenate([[0.0], bases])[self.seg_id]
        return out

    def _best_split(self, node: _NodeState):
        p = self.params
        count = len(node.idx)
        if count < 2 * p.min_samples_per_leaf:
            return None
        GL = self._segment_cumsum(node.hg, self._cg)
        HL = self._segment_cumsum(node.hh, self._ch)
        CL = self._segment_cumsum(node.hc, self._cc)

        gain = self._gain
        tmp = self._tmp
        # left term: GL^2 / (HL + lambda)
        np.multiply(GL, GL, out=gain)
        np.add(HL, L2_LAMBDA, out=tmp)
        np.divide(gain, tmp, out=gain)
        # right term: (G-GL)^2 / (H-HL+lambda)
        GR = np.subtract(node.g_sum, GL, out=self._cg)  # GL buffer reused
        np.subtract(node.h_sum + L2_LAMBDA, HL, out=tmp)
        np.multiply(GR, GR, out=GR)
        np.divide(GR, tmp, out=GR)
        np.add(gain, GR, out=gain)

        parent = node.g_sum * node.g_sum / (node.h_sum + L2_LAMBDA)
        ok = self.cand & (CL >= p.min_samples_per_leaf) & \
            ((count - CL) >= p.min_samples_per_leaf)
        gain[~ok] = -np.inf
        flat_best = int(np.argmax(gain))
        best_gain = 0.5 * (float(gain[flat_best]) - parent)
        if not math.isfinite(best_gain) or best_gain <= 0.0:
            return None
        feat = int(self.seg_id[flat_best])
        b = int(flat_best - self.seg_start[feat])
        return (best_gain, feat, b, float(self.bounds[feat][b]))

    def grow(self, g, h):
        """Build one tree; returns (Tree, per-sample leaf values)."""
        p = self.params
        all_idx = np.arange(self.n)
        root = _NodeState(0, all_idx, *self._root_histograms(g, h),
                          float(g.sum()), float(h.sum()))
        root.split = self._best_split(root)

        nodes: list[_NodeState | None] = [root]
        leaves: list[_NodeState] = [root]
        heap = []
        order = itertools.count()
        if root.split is not None:
            heapq.heappush(heap, (-root.split[0], next(order), root))

        n_leaves = 1
        feature = [-1]
        threshold = [0.0]
        left = [-1]
        right = [-1]

        while heap and n_leaves < p.max_leaves:
            _, _, node = heapq.heappop(heap)
            gain, feat, b, thr = node.split
            mask = self.binned[node.idx, feat] <= b
            left_idx = node.idx[mask]
            right_idx = node.idx[~mask]

            # subtraction trick: rebuild the smaller child, derive the other
            if len(left_idx) <= len(right_idx):
                lh = self._histograms(left_idx, g, h)
                rh = (node.hg - lh[0], node.hh - lh[1], node.hc - lh[2])
            else:
                rh = self._histograms(right_idx, g, h)
                lh = (node.hg - rh[0], node.hh - rh[1], node.hc - rh[2])
            gl = float(g[left_idx].sum())
            hl = float(h[left_idx].sum())
            lnode = _NodeState(len(feature), left_idx, *lh, gl, hl)
            rnode = _NodeState(len(feature) + 1, right_idx, *rh,
                               node.g_sum - gl, node.h_sum - hl)

            feature[node.slot] = feat
            threshold[node.slot] = thr
            left[node.slot] = lnode.slot
            right[node.slot] = rnode.slot
            for child in (lnode, rnode):
                feature.append(-1)
                threshold.append(0.0)
                left.append(-1)
                right.append(-1)
                child.split = self._best_split(child)
                if child.split is not None:
                    heapq.heappush(heap, (-child.split[0], next(order), child))
            node.hg = node.hh = node.hc = None  # release parent histograms
            leaves.remove(node)
            leaves.extend((lnode, rnode))
            n_leaves += 1

        lr = p.learning_rate
        value = np.zeros(len(feature))
        sample_values = np.zeros(self.n)
        for leaf in leaves:
            v = -leaf.g_sum / (leaf.h_sum + L2_LAMBDA) * lr
            value[leaf.slot] = v
            sample_values[leaf.idx] = v
        tree = Tree(np.array(feature), np.array(threshold), np.array(left),
                    np.array(right), value)
        return tree, sample_values


def fit(train: FeatureMatrix, val: FeatureMatrix, params: TrainParams = TrainParams()) -> GbdtModel:
    """Boost with logistic loss, early-stopping on validation log-loss.

    Stops when the validation loss has not improved for
    ``early_stop_patience`` consecutive rounds (or at ``max_trees``) and
    returns the model truncated to the best-validation iteration.
    """
    X, y = train.features, train.labels.astype(np.float64)
    Xv, yv = val.features, val.labels.astype(np.float64)
    if len(Xv) == 0:
        raise ValueError("validation set must be non-empty")
    if X.shape[1] != Xv.shape[1]:
        raise ValueError("train/val feature width mismatch")
    pos = float(y.sum())
    if pos == 0 or pos == len(y):
        raise ValueError("training labels contain a single class")
    if not np.all(np.isfinite(X)) or not np.all(np.isfinite(Xv)):
        raise ValueError("features contain non-finite values")

    prevalence = pos / len(y)
    base = math.log(prevalence / (1.0 - prevalence))

    bounds = _fit_bins(X, params.n_histogram_bins)
    grower = _TreeGrower(_bin_matrix(X, bounds), bounds, params)

    F = np.full(len(y), base)
    Fv = np.full(len(yv), base)
    trees: list[Tree] = []
    best_loss = _log_loss(yv, _sigmoid(Fv))
    best_iter = 0
    stall = 0

    for _ in range(params.max_trees):
        prob = _sigmoid(F)
        g = prob - y
        h = prob * (1.0 - prob)
        tree, contrib = grower.grow(g, h)
        trees.append(tree)
        F += contrib
        Fv += tree.apply(Xv)
        loss = _log_loss(yv, _sigmoid(Fv))
        if loss < best_loss:
            best_loss = loss
            best_iter = len(trees)
            stall = 0
        else:
            stall += 1
            if stall >= params.early_stop_patience:
                break

    return GbdtModel(base_score=base, n_features=X.shape[1], params=params,
                     trees=tuple(trees[:best_iter]))


def predict_proba(model: GbdtModel, features) -> np.ndarray:
    """Probability of the target class for every row."""
    return _sigmoid(model.decision_function(_as_matrix(features)))


def save_model(model: GbdtModel, path) -> None:
    doc = {
        "version": MODEL_SCHEMA_VERSION,
        "base_score": model.base_score,
        "n_features": model.n_features,
        "params": asdict(model.params),
        "trees": [{"nodes": t.to_nodes()} for t in model.trees],
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n",
                          encoding="utf-8")


def load_model(path) -> GbdtModel:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValueError(f"corrupted model file {path}: {exc.msg}") from exc
    if doc.get("version") != MODEL_SCHEMA_VERSION:
        raise ValueError(f"unsupported model schema version: {doc.get('version')!r}")
    return GbdtModel(
        base_score=float(doc["base_score"]),
        n_features=int(doc["n_features"]),
        params=TrainParams(**doc["params"]),
        trees=tuple(Tree.from_nodes(t["nodes"]) for t in doc["trees"]),
    )
