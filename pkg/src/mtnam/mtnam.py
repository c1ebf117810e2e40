"""Micro-tree distillation of NAM feature functions.

Each trained feature network is replaced by a depth-bounded regression tree
fitted to ``(z, f_j(z))`` pairs taken from the training inputs. Inference
is then a handful of comparisons per feature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from mtnam import _kernels
from mtnam.errors import FormatError
from mtnam.features import FeatureMatrix, Scaler
from mtnam.modelio import ModelReader, ModelWriter, put_meta, put_scaler, read_meta, read_scaler
from mtnam.nam import NamModel, sigmoid


@dataclass
class Node:
    """Tree node; a leaf when ``threshold`` is None.

    ``value`` is the mean target of the ``n`` training samples routed here,
    kept on internal nodes too.
    """

    value: float
    n: int
    threshold: float | None = None
    left: "Node | None" = None
    right: "Node | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.threshold is None


@dataclass
class RegressionTree:
    root: Node
    max_depth: int

    def depth(self) -> int:
        def walk(node):
            return 0 if node.is_leaf else 1 + max(walk(node.left), walk(node.right))
        return walk(self.root)

    def leaves(self) -> list[Node]:
        out, stack = [], [self.root]
        while stack:
            node = stack.pop()
            if node.is_leaf:
                out.append(node)
            else:
                stack.extend((node.right, node.left))
        return out

    def preorder(self) -> list[Node]:
        out, stack = [], [self.root]
        while stack:
            node = stack.pop()
            out.append(node)
            if not node.is_leaf:
                stack.extend((node.right, node.left))
        return out


def best_split(z: np.ndarray, t: np.ndarray) -> tuple[float, float] | None:
    """Threshold minimizing the summed squared error of the two children.

    ``z`` must be sorted ascending. Candidates are midpoints between
    consecutive distinct values; on (numerically) equal error the smallest
    threshold wins. Returns ``(threshold, child_sse)`` or None when ``z``
    has a single distinct value.
    """
    n = z.size
    cut = np.flatnonzero(z[1:] != z[:-1])  # split after index i
    if cut.size == 0:
        return None
    r = t - t.mean()
    cs = np.cumsum(r)
    cs2 = np.cumsum(r * r)
    k = cut + 1
    total_s, total_ss = cs[-1], cs2[-1]
    left_s = cs[cut]
    sse = total_ss - left_s ** 2 / k - (total_s - left_s) ** 2 / (n - k)
    tol = 1e-12 * max(total_ss, 1e-300)
    i = int(np.flatnonzero(sse <= sse.min() + tol)[0])
    lo, hi = z[cut[i]], z[cut[i] + 1]
    thr = lo + (hi - lo) / 2
    if not lo <= thr < hi:
        # Adjacent floats: the midpoint rounded up onto the right value.
        thr = lo
    return float(thr), float(max(sse[i], 0.0))


def fit_regression_tree(z, t, max_depth: int) -> RegressionTree:
    """Greedy CART on one input dimension.

    Splits route ``z <= threshold`` left. A node becomes a leaf at
    ``max_depth``, when its targets are all equal, or when its inputs share
    one value.
    """
    z = np.asarray(z, dtype=np.float64).ravel()
    t = np.asarray(t, dtype=np.float64).ravel()
    if z.size == 0:
        raise ValueError("cannot fit a tree to an empty sample")
    if z.shape != t.shape:
        raise ValueError("inputs and targets differ in length")
    if not (np.all(np.isfinite(z)) and np.all(np.isfinite(t))):
        raise ValueError("tree inputs and targets must be finite")
    if max_depth < 0:
        raise ValueError("max_depth must be >= 0")
    order = np.argsort(z, kind="stable")
    z, t = z[order], t[order]

    def grow(lo, hi, depth):
        zs, ts = z[lo:hi], t[lo:hi]
        node = Node(float(ts.mean()), hi - lo)
        if depth >= max_depth or ts.max() == ts.min():
            return node
        split = best_split(zs, ts)
        if split is None:
            return node
        node.threshold = split[0]
        mid = lo + int(np.searchsorted(zs, split[0], side="right"))
        node.left = grow(lo, mid, depth + 1)
        node.right = grow(mid, hi, depth + 1)
        return node

    return RegressionTree(grow(0, z.size, 0), max_depth)


def tree_predict(tree: RegressionTree, z: float) -> float:
    node = tree.root
    while not node.is_leaf:
        node = node.left if z <= node.threshold else node.right
    return node.value


def compile_tree(tree: RegressionTree, depth: int) -> tuple[np.ndarray, np.ndarray]:
    """Flatten into breadth-first ``(thresholds, leaves)`` of a complete tree.

    Early leaves become ``+inf`` thresholds so lookups fall through to the
    leftmost descendant leaf, which carries the value.
    """
    n_int = 2 ** depth - 1
    thresholds = np.full(n_int, np.inf)
    leaves = np.zeros(2 ** depth)

    def place(node, i, level):
        if level == depth:
            leaves[i - n_int] = node.value
            return
        if node.is_leaf:
            # Fill the whole subtree so every descendant leaf holds the value.
            place(node, 2 * i + 1, level + 1)
            place(node, 2 * i + 2, level + 1)
            return
        thresholds[i] = node.threshold
        place(node.left, 2 * i + 1, level + 1)
        place(node.right, 2 * i + 2, level + 1)

    if tree.depth() > depth:
        raise ValueError(f"tree of depth {tree.depth()} does not fit in {depth} levels")
    place(tree.root, 0, 0)
    return thresholds, leaves


class MtNamModel:
    """NAM whose feature functions are micro regression trees."""

    kind = "mtnam"

    def __init__(self, trees: list[RegressionTree], depth: int, scaler: Scaler | None = None,
                 teacher_digest: str = "", meta=None):
        if depth < 1:
            raise ValueError("tree depth must be >= 1")
        if not trees:
            raise ValueError("an MT-NAM needs at least one tree")
        self.trees = list(trees)
        self.depth = int(depth)
        self.scaler = scaler
        self.teacher_digest = teacher_digest
        self.meta = dict(meta or {})
        compiled = [compile_tree(tr, self.depth) for tr in self.trees]
        self.thresholds = np.ascontiguousarray(np.stack([c[0] for c in compiled]))
        self.leaf_values = np.ascontiguousarray(np.stack([c[1] for c in compiled]))

    @property
    def M(self) -> int:
        return len(self.trees)

    def contributions(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.M:
            raise ValueError(f"expected inputs of shape (n, {self.M})")
        n_int = self.thresholds.shape[1]
        idx = np.zeros(X.shape, dtype=np.int64)
        rows = np.arange(self.M)
        for _ in range(self.depth):
            go_right = X > self.thresholds[rows, idx]
            idx = 2 * idx + 1 + go_right
        return self.leaf_values[rows, idx - n_int]

    def logits(self, X) -> np.ndarray:
        return self.contributions(X).sum(axis=1)

    def predict_proba(self, X) -> np.ndarray:
        return sigmoid(self.logits(X))

    def save(self, path, comment=None) -> None:
        w = ModelWriter(self.kind, comment)
        w.put("M", self.M)
        w.put("depth", self.depth)
        w.put("teacher", self.teacher_digest or "-")
        put_scaler(w, self.scaler or Scaler(np.zeros(self.M), np.ones(self.M)))
        put_meta(w, self.meta)
        for j, tree in enumerate(self.trees):
            w.put("tree", j)
            for node in tree.preorder():
                if node.is_leaf:
                    w.put("L", node.value, node.n)
                else:
                    w.put("I", node.threshold, node.n)
        w.save(path)

    @classmethod
    def load(cls, path) -> "MtNamModel":
        r = ModelReader.open(path)
        if r.kind != cls.kind:
            raise FormatError(f"{path}: expected a {cls.kind} model, found {r.kind}")
        M, depth = r.int("M"), r.int("depth")
        teacher = r.str("teacher")
        scaler = read_scaler(r, M)
        meta = read_meta(r)

        def read_node():
            key = r.peek()
            if key not in ("I", "L"):
                raise FormatError(f"{path}: expected a tree node, found {key!r}")
            value, n = r.expect(key)
            if key == "L":
                return Node(float(value), int(n))
            node = Node(math.nan, int(n), float(value))
            node.left, node.right = read_node(), read_node()
            node.value = (node.left.value * node.left.n + node.right.value * node.right.n) / max(node.n, 1)
            return node

        trees = []
        for j in range(M):
            if r.int("tree") != j:
                raise FormatError(f"{path}: trees out of order at {j}")
            trees.append(RegressionTree(read_node(), depth))
        return cls(trees, depth, scaler, "" if teacher == "-" else teacher, meta)


def mtnam_forward(model: MtNamModel, x) -> tuple[np.ndarray, float]:
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.shape != (model.M,):
        raise ValueError(f"expected an input of length {model.M}, got shape {x.shape}")
    return _kernels.tree_contrib(x, model.thresholds, model.leaf_values)


def distillation_pairs(teacher: NamModel, X: np.ndarray) -> np.ndarray:
    """Teacher feature outputs ``f_j(x_j)`` for every row, shape ``(n, M)``."""
    return teacher.contributions(X)


def distill(teacher: NamModel, train_inputs: FeatureMatrix | np.ndarray, depth: int) -> MtNamModel:
    """Fit one depth-``depth`` tree per feature to the teacher's feature function.

    ``train_inputs`` must already be standardized with the teacher's scaler.
    """
    X = train_inputs.rows if isinstance(train_inputs, FeatureMatrix) else np.asarray(train_inputs, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("distillation needs a non-empty (n, M) input matrix")
    if X.shape[1] != teacher.M:
        raise ValueError(f"inputs have {X.shape[1]} features, teacher has {teacher.M}")
    targets = distillation_pairs(teacher, X)
    trees = [fit_regression_tree(X[:, j], targets[:, j], depth) for j in range(teacher.M)]
    meta = {"n_distill": X.shape[0], "teacher_hidden": teacher.hidden, "teacher_activation": teacher.activation}
    return MtNamModel(trees, depth, teacher.scaler, teacher.digest(), meta)


def distillation_mse(teacher: NamModel, student: MtNamModel, X) -> np.ndarray:
    """Per-feature mean squared gap between teacher and tree outputs on ``X``."""
    return np.mean((teacher.contributions(X) - student.contributions(X)) ** 2, axis=0)
