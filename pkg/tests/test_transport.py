import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cfrepair.data import EmpiricalDistribution, Schema
from cfrepair.transport import (
    CostSpec,
    InfeasibleTransportError,
    Preprocessor,
    all_pairs,
    build_cost_matrix,
    dual_certificate_gap,
    linprog_dense,
    make_preprocessor,
    pair_tv,
    plan_between,
    read_plan,
    solve_transport,
    solve_transport_constrained,
    write_plan,
)

linprog = pytest.importorskip("scipy.optimize").linprog


def highs_transport(p, q, C):
    m, n = C.shape
    A = np.zeros((m + n, m * n))
    for i in range(m):
        A[i, i * n : (i + 1) * n] = 1
    for j in range(n):
        A[m + j, j::n] = 1
    allowed = np.isfinite(C).ravel()
    res = linprog(np.where(allowed, C.ravel(), 0), A_eq=A, b_eq=np.concatenate([p, q]),
                  bounds=[(0, None) if a else (0, 0) for a in allowed], method="highs")
    return res


def simplex(rng, k):
    v = rng.random(k) + 0.01
    return v / v.sum()


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 9), st.integers(1, 9), st.integers(0, 2**31 - 1), st.booleans())
def test_matches_highs_on_random_instances(m, n, seed, integer_costs):
    rng = np.random.default_rng(seed)
    p, q = simplex(rng, m), simplex(rng, n)
    # integer costs create many ties and degenerate pivots
    C = rng.integers(0, 3, (m, n)).astype(float) if integer_costs else rng.random((m, n))
    plan = solve_transport(p, q, C)
    ref = highs_transport(p, q, C)
    assert plan.objective == pytest.approx(ref.fun, abs=1e-9)
    assert plan.marginal_error() < 1e-12
    assert plan.nnz() <= m + n - 1
    assert max(dual_certificate_gap(plan, C)) < 1e-9


def test_degenerate_identity_and_bland_fallback():
    n = 6
    p = np.full(n, 1 / n)
    C = 1.0 - np.eye(n)
    for limit in (0, 50):
        plan = solve_transport(p, p, C, degenerate_limit=limit)
        assert plan.objective == pytest.approx(0.0, abs=1e-15)
        np.testing.assert_allclose(plan.gamma, np.eye(n) / n, atol=1e-15)


def test_forbidden_cells_avoided_or_reported():
    p = np.array([0.5, 0.5])
    q = np.array([0.5, 0.5])
    C = np.array([[np.inf, 1.0], [2.0, 0.0]])
    plan = solve_transport(p, q, C)
    assert plan.gamma[0, 0] == 0.0
    assert plan.objective == pytest.approx(highs_transport(p, q, C).fun)
    with pytest.raises(InfeasibleTransportError) as err:
        solve_transport(np.array([0.7, 0.3]), q, C)
    assert err.value.rows == [0]


def test_marginals_must_sum_to_one():
    with pytest.raises(ValueError, match="sums to"):
        solve_transport([0.5, 0.4], [1.0], np.zeros((2, 1)))


def test_cost_matrix_variants():
    schema = Schema.binary(("a", "b"))
    A = np.array([[0, 0], [1, 1]])
    B = np.array([[0, 1], [1, 1]])
    np.testing.assert_array_equal(build_cost_matrix(A, B, CostSpec(), schema), [[1, 2], [1, 0]])
    np.testing.assert_array_equal(build_cost_matrix(A, B, CostSpec("hamming"), schema), [[1, 2], [1, 0]])
    forb = build_cost_matrix(A, B, CostSpec(immutable_features=("a",)), schema)
    assert np.isinf(forb[0, 1]) and forb[0, 0] == 1
    pen = build_cost_matrix(A, B, CostSpec(immutable_features=("a",), immutable_penalty=10.0), schema)
    assert pen[0, 1] == 10.0
    with pytest.raises(ValueError, match="dominate"):
        build_cost_matrix(A, B, CostSpec(immutable_features=("a",), immutable_penalty=1.5), schema)
    table = {((0, 0), (0, 1)): 3.0, ((0, 0), (1, 1)): 1.0, ((1, 1), (0, 1)): 2.0, ((1, 1), (1, 1)): 0.0}
    np.testing.assert_array_equal(build_cost_matrix(A, B, CostSpec("custom-table", table=table), schema), [[3, 1], [2, 0]])
    with pytest.raises(InfeasibleTransportError):
        build_cost_matrix(A, np.array([[1, 1]]), CostSpec(immutable_features=("a",)), schema)


def test_dense_simplex_matches_highs():
    rng = np.random.default_rng(4)
    for _ in range(20):
        A = rng.integers(0, 3, (3, 6)).astype(float)
        x0 = rng.random(6)
        b = A @ x0
        c = rng.random(6)
        x, obj = linprog_dense(A, b, c)
        ref = linprog(c, A_eq=A, b_eq=b, method="highs")
        assert obj == pytest.approx(ref.fun, abs=1e-9)
        np.testing.assert_allclose(A @ x, b, atol=1e-9)


def test_constrained_tv_limit_binds():
    p = np.array([0.5, 0.5])
    q = np.array([0.5, 0.5])
    C = np.array([[0.0, 1.0], [1.0, 0.0]])
    free = solve_transport(p, q, C)
    assert pair_tv(free, 0, 1) == pytest.approx(1.0)
    tied = solve_transport_constrained(p, q, C, lambda i, l: 0.2, [(0, 1)])
    assert pair_tv(tied, 0, 1) <= 0.2 + 1e-9
    assert tied.objective > free.objective


def test_constrained_infeasible_names_pair():
    p = np.array([0.5, 0.5])
    q = np.array([0.5, 0.5])
    C = np.array([[0.0, np.inf], [np.inf, 0.0]])
    with pytest.raises(InfeasibleTransportError) as err:
        solve_transport_constrained(p, q, C, lambda i, l: 0.1, [(0, 1)])
    assert err.value.pairs == [(0, 1)]


def test_all_pairs_cap():
    assert all_pairs(3) == [(0, 1), (0, 2), (1, 2)]
    with pytest.raises(ValueError):
        all_pairs(100, cap=10)


def two_point_plan():
    schema = Schema.binary(("a", "b"))
    p = EmpiricalDistribution.from_dict({(0, 0): 0.6, (1, 1): 0.4})
    q = EmpiricalDistribution.from_dict({(0, 0): 0.3, (0, 1): 0.3, (1, 1): 0.4})
    return schema, p, q, plan_between(p, q, CostSpec(), schema)


def test_preprocessor_pushes_p_onto_q():
    schema, p, q, plan = two_point_plan()
    pre = make_preprocessor(plan)
    assert pre.pushforward(p).tv_distance(q) < 1e-12
    assert not pre.is_identity()
    ys, cs = pre.conditional((0, 0))
    assert {tuple(y): c for y, c in zip(ys.tolist(), cs)} == pytest.approx({(0, 0): 0.5, (0, 1): 0.5})
    # points outside the source support pass through
    assert pre.sample((1, 0), np.random.default_rng(0)) == (1, 0)


def test_preprocessor_sampling_frequencies():
    _, _, _, plan = two_point_plan()
    pre = make_preprocessor(plan)
    out = pre.apply_rows(np.zeros((20000, 2), dtype=np.int64), np.random.default_rng(0))
    assert abs(out[:, 1].mean() - 0.5) < 0.02


def test_preprocessor_and_plan_files_roundtrip(tmp_path):
    schema, p, q, plan = two_point_plan()
    pre = make_preprocessor(plan)
    pre.write(tmp_path / "pre.csv", schema)
    back = Preprocessor.read(tmp_path / "pre.csv", schema)
    np.testing.assert_allclose(back.cond, pre.cond)
    np.testing.assert_array_equal(back.sources, pre.sources)
    write_plan(plan, schema, tmp_path)
    got = read_plan(schema, tmp_path)
    np.testing.assert_allclose(got.gamma, plan.gamma)
    np.testing.assert_array_equal(got.rows, plan.rows)
