import numpy as np
import pytest

from conftest import synthetic_table
from tabshot.errors import (
    DegenerateLabels,
    PTooLarge,
    ScoreOutOfRange,
    UnknownFeature,
)
from tabshot.selection import (
    import_external_ranking,
    lambda_max,
    lasso_path,
    lasso_path_rank,
    select_top_p,
    soft_threshold,
    standardize,
)
from tabshot.table import TableSchema, load_table, select_columns


def features_only_schema(names):
    return TableSchema.from_json(
        {
            "subject_id_column": "sid",
            "label_column": "dx",
            "columns": (
                [{"name": "sid", "kind": "categorical"}]
                + [{"name": n, "kind": "numeric"} for n in names]
                + [{"name": "dx", "kind": "binary", "is_label": True}]
            ),
        }
    )


def matrix_table(X, y, names=None):
    names = names or [f"roi_{j}" for j in range(X.shape[1])]
    lines = ["sid," + ",".join(names) + ",dx"]
    for i in range(X.shape[0]):
        values = ",".join(repr(float(v)) for v in X[i])
        lines.append(f"s{i:03d},{values},{int(y[i])}")
    return load_table("\n".join(lines) + "\n", features_only_schema(names))


def planted_table(seed, n=200, d=50, n_planted=5, coef=2.0, sigma=0.1):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    planted = rng.choice(d, size=n_planted, replace=False)
    beta = np.zeros(d)
    beta[planted] = coef
    y = (X @ beta + rng.normal(scale=sigma, size=n) > 0).astype(int)
    return matrix_table(X, y), {f"roi_{j}" for j in planted}


def kkt_worst_residual(Z, y, lambdas, coefs):
    """Stationarity violation of the path solutions, straight from the
    optimality conditions (independent of the solver)."""
    yc = y - y.mean()
    n = Z.shape[0]
    worst = 0.0
    for lam, w in zip(lambdas, coefs):
        gradient = Z.T @ (yc - Z @ w) / n
        active = w != 0
        if active.any():
            worst = max(worst, float(np.max(np.abs(np.abs(gradient[active]) - lam))))
        if (~active).any():
            worst = max(worst, max(0.0, float(np.max(np.abs(gradient[~active])) - lam)))
    return worst


def test_soft_threshold_examples():
    assert soft_threshold(0.5, 1.0) == 0.0
    assert soft_threshold(3.0, 1.0) == 2.0
    assert soft_threshold(-3.0, 1.0) == -2.0


def test_soft_threshold_rejects_negative_lambda():
    with pytest.raises(ValueError):
        soft_threshold(1.0, -0.1)


def test_orthonormal_design_matches_closed_form():
    # with Z'Z/n = I the path solution is exactly the soft-thresholded
    # correlation, so the relevant feature enters first.
    rng = np.random.default_rng(0)
    n, d = 64, 8
    Q, _ = np.linalg.qr(rng.normal(size=(n, d)))
    Z = Q * np.sqrt(n)
    y = rng.normal(size=n)
    lambdas, coefs = lasso_path(Z, y)
    corr = Z.T @ (y - y.mean()) / n
    for i, lam in enumerate(lambdas):
        closed = np.array([soft_threshold(c, lam) for c in corr])
        assert np.max(np.abs(coefs[i] - closed)) < 1e-10


def test_path_start_is_exactly_zero():
    for trial in range(5):
        rng = np.random.default_rng(5 + trial)
        X = rng.normal(size=(50, 10))
        y = (rng.random(50) < 0.5).astype(float)
        Z, _, _ = standardize(X)
        lam_max = lambda_max(Z, y)
        _, coefs = lasso_path(Z, y, lambdas=np.array([2 * lam_max, lam_max]))
        assert np.all(coefs == 0.0)


def test_kkt_residuals_small_on_random_instances():
    worst = 0.0
    for trial in range(5):
        rng = np.random.default_rng(100 + trial)
        X = rng.normal(size=(80, 40))
        y = (rng.random(80) < 0.4).astype(float)
        Z, _, _ = standardize(X)
        lambdas, coefs = lasso_path(Z, y)
        worst = max(worst, kkt_worst_residual(Z, y, lambdas, coefs))
    assert worst <= 1e-5


def test_planted_support_recovery():
    hits = 0
    for seed in range(10):
        table, planted = planted_table(seed)
        ranked = lasso_path_rank(table)
        if planted <= set(ranked.names[:8]):
            hits += 1
    assert hits >= 9


def test_rank_entries_sorted_descending_with_index_ties():
    table, _ = planted_table(3)
    ranked = lasso_path_rank(table)
    scores = [s for _, s in ranked.entries]
    assert scores == sorted(scores, reverse=True)
    index = {n: table.column_index(n) for n in table.selectable_feature_names}
    for (n1, s1), (n2, s2) in zip(ranked.entries, ranked.entries[1:]):
        if s1 == s2:
            assert index[n1] < index[n2]


def test_rank_invariant_under_column_permutation():
    table, _ = planted_table(4, n=120, d=12)
    names = list(table.selectable_feature_names)
    permuted_names = names[::-1]
    permuted = select_columns(table, permuted_names)
    a = lasso_path_rank(table)
    b = lasso_path_rank(permuted)
    # same score per feature; order may differ only at exact score ties
    assert dict(a.entries) == dict(b.entries)


def test_rank_uses_train_only_with_fingerprint_guard():
    table, _ = planted_table(6, n=80, d=10)
    train_rows = table.rows[:60]
    from tabshot.table import FeatureTable

    train = FeatureTable(
        columns=table.columns,
        rows=train_rows,
        label_column=table.label_column,
        subject_id_column=table.subject_id_column,
    )
    first = lasso_path_rank(train)
    second = lasso_path_rank(train)
    assert first == second
    assert first.train_fingerprint == second.train_fingerprint
    other = FeatureTable(
        columns=table.columns,
        rows=table.rows[:61],
        label_column=table.label_column,
        subject_id_column=table.subject_id_column,
    )
    assert lasso_path_rank(other).train_fingerprint != first.train_fingerprint


def test_zero_variance_feature_ranks_last():
    rng = np.random.default_rng(9)
    X = rng.normal(size=(60, 5))
    X[:, 2] = 7.0  # constant column
    y = (X[:, 0] > 0).astype(int)
    table = matrix_table(X, y)
    ranked = lasso_path_rank(table)
    assert ranked.names[-1] == "roi_2"
    assert ranked.entries[-1][1] == float("-inf")


def test_degenerate_labels_rejected():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(20, 4))
    y = np.ones(20, dtype=int)
    with pytest.raises(DegenerateLabels):
        lasso_path_rank(matrix_table(X, y))


def test_select_top_p_whole_ranking():
    table, _ = planted_table(1, n=60, d=6)
    ranked = lasso_path_rank(table)
    fs = select_top_p(ranked, 6, table.covariate_names)
    assert fs.selected == ranked.names
    assert fs.p == 6


def test_select_top_p_zero_and_too_large():
    table, _ = planted_table(1, n=60, d=6)
    ranked = lasso_path_rank(table)
    empty = select_top_p(ranked, 0, ("age",))
    assert empty.selected == ()
    assert empty.always_included == ("age",)
    with pytest.raises(PTooLarge):
        select_top_p(ranked, 7, ())


def test_select_top_p_nested():
    table, _ = planted_table(2)
    ranked = lasso_path_rank(table)
    for p1, p2 in [(4, 8), (8, 16), (16, 32)]:
        small = set(select_top_p(ranked, p1, ()).selected)
        large = set(select_top_p(ranked, p2, ()).selected)
        assert small <= large


def test_external_ranking_sorted_and_validated():
    table = synthetic_table(10, 4, n_features=4, seed=0)
    doc = "feature,score\nfeat_2,0.9\nfeat_0,0.5\nfeat_1,0.5\nfeat_3,0.1\n"
    ranked = import_external_ranking(doc, table)
    assert ranked.method == "external"
    # ties (feat_0, feat_1 at 0.5) resolve by canonical column index
    assert ranked.names == ("feat_2", "feat_0", "feat_1", "feat_3")


def test_external_ranking_score_out_of_range():
    table = synthetic_table(10, 4, n_features=2, seed=0)
    with pytest.raises(ScoreOutOfRange):
        import_external_ranking("feature,score\nfeat_0,1.3\n", table)


def test_external_ranking_unknown_feature():
    table = synthetic_table(10, 4, n_features=2, seed=0)
    with pytest.raises(UnknownFeature):
        import_external_ranking("feature,score\nnot_a_feature,0.5\n", table)
    with pytest.raises(UnknownFeature):
        # covariates may not appear in a ranking
        import_external_ranking("feature,score\nage,0.5\n", table)


def test_external_ranking_requires_header():
    table = synthetic_table(10, 4, n_features=2, seed=0)
    with pytest.raises(UnknownFeature):
        import_external_ranking("feat_0,0.5\n", table)
