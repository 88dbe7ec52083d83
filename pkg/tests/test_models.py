import numpy as np
import pytest

from cfrepair.data import AuditDataset, Schema, SchemaError
from cfrepair.models import (
    ColumnScorer,
    LinearScorer,
    TableScorer,
    TrainConfig,
    bayes_group_posterior,
    design_matrix,
    fit_auxiliaries,
    logistic,
    train_logistic,
)

SCHEMA = Schema(("a", "b"), (("0", "1", "2"), ("0", "1")))


def test_logistic_is_stable_at_extremes():
    out = logistic(np.array([-1000.0, 0.0, 1000.0]))
    np.testing.assert_allclose(out, [0.0, 0.5, 1.0])


def test_design_matrix_reference_coding():
    Z = design_matrix(np.array([[0, 0], [2, 1], [1, 0]]), SCHEMA)
    np.testing.assert_array_equal(Z, [[0, 0, 0], [0, 1, 1], [1, 0, 0]])


def nll_oracle(X, y, w, lam, intercept):
    minimize = pytest.importorskip("scipy.optimize").minimize
    Z = design_matrix(X, SCHEMA)
    if intercept:
        Z = np.column_stack([np.ones(len(Z)), Z])

    def f(beta):
        z = Z @ beta
        pen = beta[1:] if intercept else beta
        return (w @ (np.logaddexp(0, z) - y * z) + 0.5 * lam * pen @ pen) / w.sum()

    return minimize(f, np.zeros(Z.shape[1]), method="BFGS", options={"gtol": 1e-10}).x


@pytest.mark.parametrize("intercept", [True, False])
def test_fit_matches_direct_minimisation(intercept):
    rng = np.random.default_rng(0)
    X = np.column_stack([rng.integers(0, 3, 400), rng.integers(0, 2, 400)])
    y = (rng.random(400) < logistic(0.5 * X[:, 0] - X[:, 1])).astype(int)
    w = rng.uniform(0.5, 2.0, 400)
    m = train_logistic(X, y, w, TrainConfig(l2_grid=(0.1,), fit_intercept=intercept), SCHEMA)
    ref = nll_oracle(X, y, w, 0.1, intercept)
    got = np.concatenate([[m.intercept], m.coef]) if intercept else m.coef
    np.testing.assert_allclose(got, ref, atol=1e-5)
    assert m.fit_info.converged


def test_cv_is_seeded_and_picks_from_grid():
    rng = np.random.default_rng(1)
    X = np.column_stack([rng.integers(0, 3, 300), rng.integers(0, 2, 300)])
    y = (rng.random(300) < 0.4).astype(int)
    cfg = TrainConfig(l2_grid=(0.01, 1.0, 100.0), folds=5, seed=3)
    a, b = train_logistic(X, y, cfg=cfg, schema=SCHEMA), train_logistic(X, y, cfg=cfg, schema=SCHEMA)
    assert a.fit_info.lam in (0.01, 1.0, 100.0)
    assert a.fit_info.cv_loss == b.fit_info.cv_loss
    np.testing.assert_array_equal(a.coef, b.coef)


def test_single_class_labels_rejected():
    with pytest.raises(ValueError, match="single-class"):
        train_logistic(np.zeros((5, 2), dtype=int), np.ones(5), schema=SCHEMA)


def test_coefficients_roundtrip(tmp_path):
    m = LinearScorer(SCHEMA, np.array([0.5, -1.0, 2.0]), -0.25)
    m.save(tmp_path / "m.csv")
    back = LinearScorer.load(tmp_path / "m.csv", SCHEMA)
    X = np.array([[0, 0], [1, 1], [2, 0]])
    np.testing.assert_array_equal(back.score_many(X), m.score_many(X))
    (tmp_path / "bad.csv").write_text("term,coefficient\nzzz=1,1\n")
    with pytest.raises(SchemaError):
        LinearScorer.load(tmp_path / "bad.csv", SCHEMA)


def test_threshold_is_strict_and_raw_recovers_base():
    h = TableScorer({(0, 0): 0.5, (1, 0): 0.7, (2, 0): 0.2})
    t = h.thresholded(0.5)
    np.testing.assert_array_equal(t.score_many(np.array([[0, 0], [1, 0], [2, 0]])), [0, 1, 0])
    assert t.raw is h and t.threshold == 0.5
    assert t.thresholded(0.1).score_many(np.array([[2, 0]]))[0] == 1.0


def test_column_scorer_uses_rows_then_lookup():
    X = np.array([[0, 0], [0, 0], [1, 1]])
    data = AuditDataset(SCHEMA, X, np.array([0, 1, 1]), np.array([0, 1, 0]), scores=np.array([0.2, 0.4, 0.9]), score_name="h")
    h = ColumnScorer("h", data)
    np.testing.assert_array_equal(h.score_rows(data), [0.2, 0.4, 0.9])
    np.testing.assert_allclose(h.score_many(np.array([[0, 0], [1, 1]])), [0.3, 0.9])
    with pytest.raises(KeyError):
        h.score_many(np.array([[2, 0]]))


def test_bayes_posterior():
    post = bayes_group_posterior({(0,): 0.8, (1,): 0.2}, {(0,): 0.4, (1,): 0.6}, 0.25)
    expected = 0.25 * 0.6 / (0.25 * 0.6 + 0.75 * 0.2)
    assert post((1,)) == pytest.approx(expected)
    assert post((5,)) == 0.25


def test_auxiliaries_train_on_expected_rows():
    rng = np.random.default_rng(2)
    n = 2000
    s = rng.integers(0, 2, n)
    X = np.column_stack([(rng.random(n) < np.where(s == 1, 0.8, 0.2)).astype(int), rng.integers(0, 2, n)])
    y = (rng.random(n) < np.where(X[:, 1] == 1, 0.9, 0.1)).astype(int)
    data = AuditDataset(Schema.binary(("g", "o")), X, y, s)
    s_hat, y0_hat = fit_auxiliaries(data, TrainConfig(l2_grid=(0.01,)))
    assert s_hat((1, 0)) > 0.7 and s_hat((0, 0)) < 0.3
    assert y0_hat((0, 1)) > 0.8 and y0_hat((0, 0)) < 0.2
