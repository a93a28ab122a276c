"""Random-forest regression baseline with out-of-bag benchmarking.

Trees split greedily on variance reduction over a per-node random feature
subset.  The fitted forest keeps every bootstrap index set, so the
out-of-bag predictions can be audited after the fact: ``oob_predictions[i]``
averages only trees whose bootstrap draw never touched example ``i`` and is
NaN when no such tree exists.

One integer seed fans out into independent per-tree streams
(``numpy.random.SeedSequence``), which means a parallel fit would produce
bit-identical trees to the sequential one.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .container import read_container, write_container
from .errors import DataError, DomainError, FormatError, ShapeError

__all__ = [
    "ForestParams",
    "TreeNode",
    "ForestModel",
    "GridRow",
    "GridSearchResult",
    "fit_tree",
    "fit_forest",
    "tree_predict",
    "mae",
    "adjusted_r2",
    "kfold_cv",
    "grid_search",
    "save_forest",
    "load_forest",
]

# Minimum relative improvement of the split objective over the parent
# before a split is accepted; guards against splits that exist only in
# floating-point rounding noise.
_GAIN_EPS = 1e-12


@dataclass
class ForestParams:
    """Knobs shared by single trees and whole forests.

    ``mtry=None`` resolves to round(sqrt(#features)) at fit time;
    ``max_depth=None`` means unlimited.
    """

    n_trees: int = 100
    max_depth: Optional[int] = None
    min_leaf: int = 2
    mtry: Optional[int] = None
    bootstrap: bool = True

    def resolve_mtry(self, n_features: int) -> int:
        if self.mtry is None:
            return max(1, int(round(math.sqrt(n_features))))
        return max(1, min(self.mtry, n_features))


@dataclass
class TreeNode:
    """One node of a regression tree.

    Internal nodes carry ``feature >= 0`` and a threshold (rows with
    ``x[feature] <= threshold`` go left); leaves carry ``feature == -1``.
    Every node stores the mean target and sample count of the rows that
    reached it.
    """

    feature: int = -1
    threshold: float = 0.0
    left: Optional["TreeNode"] = None
    right: Optional["TreeNode"] = None
    value: float = 0.0
    count: int = 0

    @property
    def is_leaf(self) -> bool:
        return self.feature < 0


@dataclass
class _FlatTree:
    """Pre-order array form of a tree, used for batched prediction."""

    feature: np.ndarray  # int64, -1 at leaves
    threshold: np.ndarray  # float64
    left: np.ndarray  # int64 child indices, -1 at leaves
    right: np.ndarray
    value: np.ndarray  # float64
    count: np.ndarray  # int64


def _flatten(root: TreeNode) -> _FlatTree:
    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    value: list[float] = []
    count: list[int] = []
    stack: list[tuple[TreeNode, int, bool]] = [(root, -1, False)]
    while stack:
        node, parent, is_right = stack.pop()
        i = len(feature)
        if parent >= 0:
            (right if is_right else left)[parent] = i
        feature.append(node.feature)
        threshold.append(node.threshold)
        left.append(-1)
        right.append(-1)
        value.append(node.value)
        count.append(node.count)
        if node.feature >= 0:
            # Right pushed first so the left subtree pops next: pre-order.
            stack.append((node.right, i, True))
            stack.append((node.left, i, False))
    return _FlatTree(
        np.asarray(feature, dtype=np.int64),
        np.asarray(threshold, dtype=np.float64),
        np.asarray(left, dtype=np.int64),
        np.asarray(right, dtype=np.int64),
        np.asarray(value, dtype=np.float64),
        np.asarray(count, dtype=np.int64),
    )


def _unflatten(flat: _FlatTree) -> TreeNode:
    nodes = [
        TreeNode(feature=int(f), threshold=float(t), value=float(v), count=int(c))
        for f, t, v, c in zip(flat.feature, flat.threshold, flat.value, flat.count)
    ]
    for i, node in enumerate(nodes):
        if node.feature >= 0:
            node.left = nodes[int(flat.left[i])]
            node.right = nodes[int(flat.right[i])]
    return nodes[0]


def _predict_flat(flat: _FlatTree, X: np.ndarray) -> np.ndarray:
    idx = np.zeros(len(X), dtype=np.int64)
    while True:
        feats = flat.feature[idx]
        active = np.nonzero(feats >= 0)[0]
        if active.size == 0:
            break
        at = idx[active]
        go_left = X[active, flat.feature[at]] <= flat.threshold[at]
        idx[active] = np.where(go_left, flat.left[at], flat.right[at])
    return flat.value[idx]


def _best_split(
    X: np.ndarray,
    y: np.ndarray,
    idx: np.ndarray,
    feats: np.ndarray,
    min_leaf: int,
) -> Optional[tuple[int, float]]:
    """Exhaustive variance-reduction search over the given feature subset.

    Returns (original feature index, threshold) or None when no split
    improves on the parent.  All candidate cut points of all candidate
    features are scored in one vectorized pass; ties on the objective are
    broken by lowest feature index, then lowest threshold.
    """
    n = idx.size
    if n < 2 * min_leaf:
        return None
    Xn = X[np.ix_(idx, feats)]
    yn = y[idx]
    order = np.argsort(Xn, axis=0, kind="stable")
    Xs = np.take_along_axis(Xn, order, axis=0)
    Ys = yn[order]
    csum = np.cumsum(Ys, axis=0)
    # Maximizing sum(child_count * child_mean^2) is the same as maximizing
    # variance reduction; the parent contributes tot^2/n.
    k = np.arange(1, n, dtype=np.float64)[:, None]
    L = csum[:-1]
    R = csum[-1] - L
    score = L * L / k + R * R / (n - k)
    valid = Xs[1:] > Xs[:-1]
    if min_leaf > 1:
        valid[: min_leaf - 1] = False
        valid[n - min_leaf :] = False
    score = np.where(valid, score, -np.inf)
    best = score.max()
    tot = float(yn.sum())
    parent = tot * tot / n
    if not np.isfinite(best) or best <= parent + _GAIN_EPS * (1.0 + abs(parent)):
        return None
    rows, cols = np.nonzero(score == best)
    cand_feats = feats[cols]
    lo = Xs[rows, cols]
    hi = Xs[rows + 1, cols]
    thrs = lo + (hi - lo) / 2.0
    pick = np.lexsort((thrs, cand_feats))[0]
    a, b, thr = lo[pick], hi[pick], thrs[pick]
    if not (a <= thr < b):
        # Adjacent floats can round the midpoint onto an endpoint; fall
        # back to the left value, which the `<=` routing handles exactly.
        thr = a
    return int(cand_feats[pick]), float(thr)


def fit_tree(
    X: np.ndarray,
    y: np.ndarray,
    params: Optional[ForestParams] = None,
    rng: Optional[np.random.Generator] = None,
) -> TreeNode:
    """Grow one regression tree by greedy variance reduction.

    Growth stops at ``max_depth``, when a node cannot yield two children of
    ``min_leaf`` rows, or when the node target is constant.  ``rng`` drives
    the per-node feature subsample; it defaults to a fixed stream, so pass
    your own for anything beyond toy use.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError(f"expected 2-D design matrix, got ndim={X.ndim}")
    if len(X) != len(y):
        raise ShapeError(f"X has {len(X)} rows but y has {len(y)}")
    if len(y) == 0:
        raise DataError("cannot fit a tree on zero examples")
    params = params if params is not None else ForestParams()
    rng = rng if rng is not None else np.random.default_rng(0)
    n_features = X.shape[1]
    m = params.resolve_mtry(n_features)

    root = TreeNode()
    stack: list[tuple[TreeNode, np.ndarray, int]] = [(root, np.arange(len(y)), 0)]
    while stack:
        node, idx, depth = stack.pop()
        sub = y[idx]
        node.count = int(idx.size)
        node.value = float(sub.mean())
        if params.max_depth is not None and depth >= params.max_depth:
            continue
        if idx.size < 2 * params.min_leaf:
            continue
        if np.ptp(sub) == 0.0:
            continue
        if m >= n_features:
            feats = np.arange(n_features)
        else:
            feats = np.sort(rng.choice(n_features, size=m, replace=False))
        found = _best_split(X, y, idx, feats, params.min_leaf)
        if found is None:
            continue
        node.feature, node.threshold = found
        go_left = X[idx, node.feature] <= node.threshold
        node.left = TreeNode()
        node.right = TreeNode()
        stack.append((node.right, idx[~go_left], depth + 1))
        stack.append((node.left, idx[go_left], depth + 1))
    return root


def tree_predict(root: TreeNode, X: np.ndarray) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError(f"expected 2-D design matrix, got ndim={X.ndim}")
    return _predict_flat(_flatten(root), X)


@dataclass
class ForestModel:
    params: ForestParams
    seed: int
    n_features: int
    n_examples: int
    trees: list[TreeNode]
    bootstrap_indices: list[np.ndarray]
    oob_predictions: np.ndarray  # NaN where no tree excluded the example
    _flats: list[_FlatTree] = field(default_factory=list, repr=False)

    def __post_init__(self) -> None:
        if not self._flats:
            self._flats = [_flatten(t) for t in self.trees]

    @property
    def oob_mask(self) -> np.ndarray:
        """True where an out-of-bag prediction exists."""
        return ~np.isnan(self.oob_predictions)

    @property
    def feature_fraction(self) -> float:
        return self.params.resolve_mtry(self.n_features) / self.n_features

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.ndim != 2:
            raise ShapeError(f"expected 2-D design matrix, got ndim={X.ndim}")
        if X.shape[1] != self.n_features:
            raise ShapeError(
                f"model was fit on {self.n_features} features, got {X.shape[1]}"
            )
        acc = np.zeros(len(X))
        for flat in self._flats:
            acc += _predict_flat(flat, X)
        return acc / len(self._flats)


def fit_forest(
    X: np.ndarray, y: np.ndarray, params: Optional[ForestParams] = None, seed: int = 0
) -> ForestModel:
    """Fit a bagged ensemble of variance-reduction trees.

    Each tree gets its own bootstrap draw (n rows with replacement) and its
    own RNG stream spawned from ``seed``.  Out-of-bag predictions are
    accumulated during the fit; rows that every bootstrap happened to
    include end up NaN.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError(f"expected 2-D design matrix, got ndim={X.ndim}")
    if len(X) != len(y):
        raise ShapeError(f"X has {len(X)} rows but y has {len(y)}")
    if len(y) == 0:
        raise DataError("cannot fit a forest on zero examples")
    params = params if params is not None else ForestParams()
    if params.n_trees < 1:
        raise DataError(f"n_trees must be >= 1, got {params.n_trees}")
    n = len(y)
    streams = np.random.SeedSequence(seed).spawn(params.n_trees)

    trees: list[TreeNode] = []
    flats: list[_FlatTree] = []
    samples: list[np.ndarray] = []
    oob_sum = np.zeros(n)
    oob_cnt = np.zeros(n, dtype=np.int64)
    for stream in streams:
        rng = np.random.default_rng(stream)
        if params.bootstrap:
            sample = rng.integers(0, n, size=n)
        else:
            sample = np.arange(n)
        root = fit_tree(X[sample], y[sample], params, rng)
        flat = _flatten(root)
        trees.append(root)
        flats.append(flat)
        samples.append(sample)
        if params.bootstrap:
            inbag = np.zeros(n, dtype=bool)
            inbag[sample] = True
            out = np.nonzero(~inbag)[0]
            if out.size:
                oob_sum[out] += _predict_flat(flat, X[out])
                oob_cnt[out] += 1

    oob = np.full(n, np.nan)
    covered = oob_cnt > 0
    oob[covered] = oob_sum[covered] / oob_cnt[covered]
    return ForestModel(
        params=params,
        seed=int(seed),
        n_features=X.shape[1],
        n_examples=n,
        trees=trees,
        bootstrap_indices=samples,
        oob_predictions=oob,
        _flats=flats,
    )


def mae(preds: np.ndarray, targets: np.ndarray) -> float:
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if preds.shape != targets.shape:
        raise ShapeError(f"shape mismatch: {preds.shape} vs {targets.shape}")
    if preds.size == 0:
        raise DataError("mae of zero predictions")
    return float(np.mean(np.abs(preds - targets)))


def adjusted_r2(preds: np.ndarray, targets: np.ndarray, p: int) -> float:
    """R-squared penalized for model size: 1 - (1-R2)(n-1)/(n-p-1)."""
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if preds.shape != targets.shape:
        raise ShapeError(f"shape mismatch: {preds.shape} vs {targets.shape}")
    n = preds.size
    if n - p - 1 <= 0:
        raise DomainError(f"adjusted R2 undefined for n={n}, p={p}")
    ss_res = float(np.sum((targets - preds) ** 2))
    ss_tot = float(np.sum((targets - targets.mean()) ** 2))
    if ss_tot == 0.0:
        raise DomainError("adjusted R2 undefined for constant targets")
    r2 = 1.0 - ss_res / ss_tot
    return 1.0 - (1.0 - r2) * (n - 1) / (n - p - 1)


def kfold_cv(
    X: np.ndarray,
    y: np.ndarray,
    k: int,
    params: Optional[ForestParams] = None,
    seed: int = 0,
) -> list[float]:
    """Per-fold validation MAE for a forest refit on each training split.

    Examples are shuffled once by ``seed`` and cut into k folds whose sizes
    differ by at most one; every example is validated exactly once.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    if k < 2:
        raise DataError(f"k must be >= 2, got {k}")
    if k > n:
        raise DataError(f"k={k} exceeds dataset size {n}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    fold_seeds = rng.integers(0, 2**31 - 1, size=k)
    folds = np.array_split(perm, k)
    out = []
    for i, fold in enumerate(folds):
        train = np.setdiff1d(perm, fold, assume_unique=True)
        model = fit_forest(X[train], y[train], params, seed=int(fold_seeds[i]))
        out.append(mae(model.predict(X[fold]), y[fold]))
    return out


@dataclass
class GridRow:
    params: ForestParams
    fold_maes: list[float]
    mean_mae: float


@dataclass
class GridSearchResult:
    best: ForestParams
    rows: list[GridRow]


def grid_search(
    X: np.ndarray,
    y: np.ndarray,
    param_grid: dict[str, Sequence],
    k: int = 5,
    seed: int = 0,
) -> GridSearchResult:
    """Exhaustive CV sweep over the cartesian product of ``param_grid``.

    Every grid point sees the same folds (same seed).  The winner has the
    lowest mean CV MAE; exact ties go to fewer trees, then shallower trees.
    """
    if not param_grid:
        raise DataError("empty parameter grid")
    keys = list(param_grid)
    rows: list[GridRow] = []
    for combo in itertools.product(*(param_grid[key] for key in keys)):
        params = replace(ForestParams(), **dict(zip(keys, combo)))
        maes = kfold_cv(X, y, k, params, seed)
        rows.append(GridRow(params, maes, float(np.mean(maes))))

    def _key(row: GridRow):
        depth = row.params.max_depth
        return (
            row.mean_mae,
            row.params.n_trees,
            math.inf if depth is None else depth,
        )

    return GridSearchResult(best=min(rows, key=_key).params, rows=rows)


def save_forest(model: ForestModel, path) -> None:
    """Write the forest to the shared container format.

    Each tree is one (n_nodes, 6) array in pre-order with columns
    [feature, threshold, left, right, value, count]; bootstrap index sets
    and the OOB vector ride along so the exclusion property stays checkable
    on a loaded model.
    """
    arrays: dict[str, np.ndarray] = {}
    for i, flat in enumerate(model._flats):
        nodes = np.column_stack(
            [
                flat.feature.astype(np.float64),
                flat.threshold,
                flat.left.astype(np.float64),
                flat.right.astype(np.float64),
                flat.value,
                flat.count.astype(np.float64),
            ]
        )
        arrays[f"tree_{i:05d}.nodes"] = nodes
        arrays[f"tree_{i:05d}.inbag"] = model.bootstrap_indices[i].astype(np.float64)
    arrays["oob.predictions"] = model.oob_predictions
    header = {
        "params": {
            "n_trees": model.params.n_trees,
            "max_depth": model.params.max_depth,
            "min_leaf": model.params.min_leaf,
            "mtry": model.params.mtry,
            "bootstrap": model.params.bootstrap,
        },
        "seed": model.seed,
        "n_features": model.n_features,
        "n_examples": model.n_examples,
    }
    write_container(path, "forest", header, arrays)


def load_forest(path) -> ForestModel:
    kind, header, arrays = read_container(path)
    if kind != "forest":
        raise FormatError(f"expected a forest container, got kind={kind!r}")
    params = ForestParams(**header["params"])
    trees: list[TreeNode] = []
    flats: list[_FlatTree] = []
    samples: list[np.ndarray] = []
    for i in range(params.n_trees):
        nodes = arrays[f"tree_{i:05d}.nodes"]
        flat = _FlatTree(
            feature=nodes[:, 0].astype(np.int64),
            threshold=nodes[:, 1].copy(),
            left=nodes[:, 2].astype(np.int64),
            right=nodes[:, 3].astype(np.int64),
            value=nodes[:, 4].copy(),
            count=nodes[:, 5].astype(np.int64),
        )
        flats.append(flat)
        trees.append(_unflatten(flat))
        samples.append(arrays[f"tree_{i:05d}.inbag"].astype(np.int64))
    return ForestModel(
        params=params,
        seed=int(header["seed"]),
        n_features=int(header["n_features"]),
        n_examples=int(header["n_examples"]),
        trees=trees,
        bootstrap_indices=samples,
        oob_predictions=arrays["oob.predictions"],
        _flats=flats,
    )
