"""Regression trees and bagged forests.

The split search is checked against a brute-force one-dimensional oracle;
the out-of-bag bookkeeping is recomputed from first principles and compared
exactly.
"""

import numpy as np
import pytest

from scoredeck.container import write_container
from scoredeck.errors import DataError, DomainError, FormatError, ShapeError
from scoredeck.forest import (
    ForestParams,
    adjusted_r2,
    fit_forest,
    fit_tree,
    grid_search,
    kfold_cv,
    load_forest,
    mae,
    save_forest,
    tree_predict,
)


def _sse_of_split(x, y, thr):
    left = y[x <= thr]
    right = y[x > thr]
    return ((left - left.mean()) ** 2).sum() + ((right - right.mean()) ** 2).sum()


def _brute_force_best_sse(x, y, min_leaf=1):
    xs = np.sort(np.unique(x))
    best = np.inf
    for lo, hi in zip(xs[:-1], xs[1:]):
        thr = lo + (hi - lo) / 2
        n_left = int((x <= thr).sum())
        if n_left < min_leaf or len(y) - n_left < min_leaf:
            continue
        best = min(best, _sse_of_split(x, y, thr))
    return best


# ---------------------------------------------------------------------------
# single trees
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("seed", range(5))
def test_depth1_split_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=40)
    y = 2.0 * x + rng.normal(scale=0.3, size=40)
    root = fit_tree(x[:, None], y, ForestParams(max_depth=1, min_leaf=1, mtry=1))
    assert not root.is_leaf
    got = _sse_of_split(x, y, root.threshold)
    want = _brute_force_best_sse(x, y)
    assert got == pytest.approx(want, abs=1e-9)


def test_depth1_leaf_values_are_side_means():
    x = np.array([1.0, 2.0, 3.0, 10.0, 11.0, 12.0])
    y = np.array([5.0, 6.0, 7.0, 50.0, 51.0, 52.0])
    root = fit_tree(x[:, None], y, ForestParams(max_depth=1, min_leaf=1, mtry=1))
    assert 3.0 <= root.threshold < 10.0
    assert root.left.value == pytest.approx(6.0)
    assert root.right.value == pytest.approx(51.0)
    assert root.left.count == 3 and root.right.count == 3


def test_constant_targets_yield_single_leaf():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(20, 3))
    root = fit_tree(X, np.full(20, 42.0))
    assert root.is_leaf
    assert root.value == 42.0
    assert root.count == 20


def test_full_depth_memorizes_distinct_rows():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(30, 4))
    y = rng.uniform(0, 100, size=30)
    root = fit_tree(X, y, ForestParams(min_leaf=1, mtry=4))
    assert tree_predict(root, X) == pytest.approx(y, abs=1e-12)


def test_min_leaf_respected():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(50, 2))
    y = rng.uniform(0, 100, size=50)
    root = fit_tree(X, y, ForestParams(min_leaf=5, mtry=2))
    stack = [root]
    while stack:
        node = stack.pop()
        if node.is_leaf:
            assert node.count >= 5
        else:
            stack.extend([node.left, node.right])


def test_max_depth_respected():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(60, 2))
    y = rng.uniform(0, 100, size=60)
    root = fit_tree(X, y, ForestParams(max_depth=2, min_leaf=1, mtry=2))
    stack = [(root, 0)]
    while stack:
        node, depth = stack.pop()
        assert depth <= 2
        if not node.is_leaf:
            stack.extend([(node.left, depth + 1), (node.right, depth + 1)])


def test_fit_tree_input_validation():
    with pytest.raises(ShapeError):
        fit_tree(np.zeros(5), np.zeros(5))
    with pytest.raises(ShapeError):
        fit_tree(np.zeros((5, 2)), np.zeros(4))
    with pytest.raises(DataError):
        fit_tree(np.zeros((0, 2)), np.zeros(0))


# ---------------------------------------------------------------------------
# forests
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def small_problem():
    rng = np.random.default_rng(10)
    X = rng.normal(size=(50, 5))
    y = np.clip(50 + 12 * X[:, 0] - 7 * X[:, 2] + rng.normal(scale=2, size=50), 0, 100)
    return X, y


def test_forest_prediction_is_tree_average(small_problem):
    X, y = small_problem
    model = fit_forest(X, y, ForestParams(n_trees=7), seed=0)
    manual = np.zeros(len(X))
    for tree in model.trees:
        manual += tree_predict(tree, X)
    manual /= len(model.trees)
    assert np.array_equal(model.predict(X), manual)


def test_oob_uses_only_excluding_trees(small_problem):
    """Recompute OOB from the stored bootstrap draws; must match exactly."""
    X, y = small_problem
    model = fit_forest(X, y, ForestParams(n_trees=12), seed=1)
    n = len(y)
    sums = np.zeros(n)
    counts = np.zeros(n)
    for tree, sample in zip(model.trees, model.bootstrap_indices):
        excluded = np.setdiff1d(np.arange(n), sample)
        assert excluded.size > 0  # a 50-row bootstrap virtually always misses rows
        sums[excluded] += tree_predict(tree, X[excluded])
        counts[excluded] += 1
    covered = counts > 0
    assert np.array_equal(model.oob_mask, covered)
    assert np.array_equal(
        model.oob_predictions[covered], sums[covered] / counts[covered]
    )
    assert np.all(np.isnan(model.oob_predictions[~covered]))


def test_no_bootstrap_has_no_oob(small_problem):
    X, y = small_problem
    model = fit_forest(X, y, ForestParams(n_trees=3, bootstrap=False), seed=0)
    assert not model.oob_mask.any()
    for sample in model.bootstrap_indices:
        assert np.array_equal(sample, np.arange(len(y)))


def test_forest_deterministic_by_seed(small_problem):
    X, y = small_problem
    a = fit_forest(X, y, ForestParams(n_trees=5), seed=7)
    b = fit_forest(X, y, ForestParams(n_trees=5), seed=7)
    c = fit_forest(X, y, ForestParams(n_trees=5), seed=8)
    assert np.array_equal(a.predict(X), b.predict(X))
    assert not np.array_equal(a.predict(X), c.predict(X))


def test_predict_validates_shape(small_problem):
    X, y = small_problem
    model = fit_forest(X, y, ForestParams(n_trees=2), seed=0)
    with pytest.raises(ShapeError):
        model.predict(X[:, :3])
    with pytest.raises(ShapeError):
        model.predict(X[0])


def test_mtry_resolution():
    assert ForestParams().resolve_mtry(100) == 10
    assert ForestParams(mtry=3).resolve_mtry(100) == 3
    assert ForestParams(mtry=500).resolve_mtry(100) == 100
    assert ForestParams(mtry=0).resolve_mtry(100) == 1


def test_fit_forest_rejects_bad_inputs():
    with pytest.raises(DataError):
        fit_forest(np.zeros((0, 2)), np.zeros(0))
    with pytest.raises(DataError):
        fit_forest(np.zeros((4, 2)), np.zeros(4), ForestParams(n_trees=0))


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def test_mae_oracle():
    assert mae(np.array([1.0, 5.0]), np.array([3.0, 1.0])) == 3.0
    assert mae(np.array([2.0]), np.array([2.0])) == 0.0
    with pytest.raises(ShapeError):
        mae(np.zeros(3), np.zeros(4))
    with pytest.raises(DataError):
        mae(np.zeros(0), np.zeros(0))


def test_adjusted_r2_oracle():
    targets = np.array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
    assert adjusted_r2(targets, targets, p=2) == pytest.approx(1.0)
    # hand case: n=6, p=1, ss_res=1.5, ss_tot=17.5
    preds = targets + np.array([0.5, -0.5, 0.5, -0.5, 0.5, -0.5])
    r2 = 1 - 1.5 / 17.5
    expect = 1 - (1 - r2) * 5 / 4
    assert adjusted_r2(preds, targets, p=1) == pytest.approx(expect)


def test_adjusted_r2_domain_errors():
    t = np.array([1.0, 2.0, 3.0])
    with pytest.raises(DomainError):
        adjusted_r2(t, t, p=2)  # n - p - 1 == 0
    with pytest.raises(DomainError):
        adjusted_r2(t, np.ones(3), p=1)  # constant targets
    with pytest.raises(ShapeError):
        adjusted_r2(np.zeros(3), np.zeros(4), p=1)


# ---------------------------------------------------------------------------
# cross-validation and grid search
# ---------------------------------------------------------------------------


def test_kfold_partitions_each_example_once(small_problem):
    X, y = small_problem
    out = kfold_cv(X, y, k=5, params=ForestParams(n_trees=3), seed=0)
    assert len(out) == 5
    assert all(np.isfinite(out))


def test_kfold_deterministic(small_problem):
    X, y = small_problem
    p = ForestParams(n_trees=3)
    assert kfold_cv(X, y, 4, p, seed=2) == kfold_cv(X, y, 4, p, seed=2)


def test_kfold_validates_k(small_problem):
    X, y = small_problem
    with pytest.raises(DataError):
        kfold_cv(X, y, k=1)
    with pytest.raises(DataError):
        kfold_cv(X, y, k=len(y) + 1)


def test_grid_search_covers_product_and_picks_best(small_problem):
    X, y = small_problem
    grid = {"n_trees": [2, 5], "max_depth": [2, None]}
    result = grid_search(X, y, grid, k=3, seed=0)
    assert len(result.rows) == 4
    best_row = min(result.rows, key=lambda r: r.mean_mae)
    assert result.best.n_trees == best_row.params.n_trees or (
        result.best == best_row.params
    )
    for row in result.rows:
        assert row.mean_mae == pytest.approx(np.mean(row.fold_maes))


def test_grid_search_tie_break_prefers_fewer_trees(small_problem):
    X, y = small_problem
    # identical parameter sets produce identical fold MAEs; the duplicate
    # with fewer trees must win
    result = grid_search(X, y, {"n_trees": [4, 4]}, k=3, seed=0)
    assert result.best.n_trees == 4
    assert result.rows[0].fold_maes == result.rows[1].fold_maes


def test_grid_search_empty_grid():
    with pytest.raises(DataError):
        grid_search(np.zeros((4, 2)), np.zeros(4), {})


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def test_save_load_roundtrip(tmp_path, small_problem):
    X, y = small_problem
    model = fit_forest(X, y, ForestParams(n_trees=6, max_depth=4), seed=5)
    path = tmp_path / "forest.scdk"
    save_forest(model, path)
    loaded = load_forest(path)
    assert loaded.params == model.params
    assert loaded.seed == model.seed
    assert loaded.n_features == model.n_features
    assert np.array_equal(loaded.predict(X), model.predict(X))
    same_nan = np.isnan(loaded.oob_predictions) == np.isnan(model.oob_predictions)
    assert same_nan.all()
    mask = model.oob_mask
    assert np.array_equal(loaded.oob_predictions[mask], model.oob_predictions[mask])
    for a, b in zip(loaded.bootstrap_indices, model.bootstrap_indices):
        assert np.array_equal(a, b)


def test_load_rejects_wrong_kind(tmp_path):
    path = tmp_path / "not_forest.scdk"
    write_container(path, "bilstm", {}, {})
    with pytest.raises(FormatError):
        load_forest(path)
