import math

import numpy as np
import pytest

from cfrepair.data import EmpiricalDistribution, ExactPopulation, Schema
from cfrepair.descent import (
    DescentConfig,
    TraceRecord,
    distributional_descent,
    exact_descent,
    irreconcilability_check,
    shrink_step,
    write_trace,
    write_weights,
)
from cfrepair.disparity import MetricSpec, metric_exact, metric_from_samples
from cfrepair.influence import exact_scorers
from cfrepair.models import TableScorer
from cfrepair.synth import two_feature_population, joint_proxy_population

H = TableScorer({(a, b): float(b) for a in (0, 1) for b in (0, 1)})
SOFT = TableScorer({(0, 0): 0.2, (0, 1): 0.7, (1, 0): 0.4, (1, 1): 0.9})


def test_shrink_step_respects_floor():
    w = np.array([1.0, 0.5, 1e-9])
    d = np.array([4.0, -1.0, 100.0])
    eps = shrink_step(w, d, 0.5, 1e-8)
    assert eps == pytest.approx((1 - 1e-8) / 4.0)
    assert np.all(w[:2] * (1 - eps * d[:2]) >= 1e-8 - 1e-18)
    assert shrink_step(w, -np.abs(d), 0.5, 1e-8) == 0.5


@pytest.mark.parametrize("kind", ["SP", "FDR", "FNR", "FPR", "DA", "DA:1", "EO"])
def test_exact_descent_never_worse_than_start(kind):
    pop = two_feature_population()
    spec = MetricSpec.parse(kind)
    q, trace, status = exact_descent(pop, SOFT, spec, DescentConfig(step_eps=0.2, max_iters=200))
    start = abs(metric_exact(spec, pop, SOFT).gap)
    end = abs(metric_exact(spec, pop, SOFT, override_p0=q).gap)
    assert end <= start
    assert trace[0].iteration == 0 and trace[0].metric_working == pytest.approx(metric_exact(spec, pop, SOFT).gap)
    assert status in ("converged", "max_iters", "stationary")


def test_exact_descent_reaches_zero_for_da():
    pop = joint_proxy_population()
    h = TableScorer({x: 0.1 + 0.8 * (x[0] == x[1]) for x in pop.union_support()})
    q, _, _ = exact_descent(pop, h, MetricSpec("DA"), DescentConfig(step_eps=0.5, max_iters=500))
    assert metric_exact(MetricSpec("DA"), pop, h, override_p0=q).gap < 1e-3


def test_patience_counts_consecutive_non_improvements():
    pop = two_feature_population()
    _, trace, status = exact_descent(pop, H, MetricSpec("FPR"), DescentConfig(step_eps=0.05, max_iters=500, patience=3))
    assert status == "converged"
    assert [r.accepted for r in trace[-4:]] == [False] * 4


def irreconcilable_population() -> ExactPopulation:
    # target outcomes at x=1 are always positive, so the target FPR is pinned at 0
    # while the baseline FPR is 0.5
    schema = Schema.binary(("x",))
    half = EmpiricalDistribution.from_dict({(0,): 0.5, (1,): 0.5})
    return ExactPopulation(schema, half, half, {(0,): 0.5, (1,): 1.0}, {(0,): 0.5, (1,): 0.5}, 0.5)


def test_irreconcilable_gap_persists_and_is_flagged():
    pop = irreconcilable_population()
    h = TableScorer({(0,): 0.0, (1,): 1.0})
    q, _, _ = exact_descent(pop, h, MetricSpec("FPR"), DescentConfig(step_eps=0.2, max_iters=200))
    gap = metric_exact(MetricSpec("FPR"), pop, h, override_p0=q).gap
    assert gap == pytest.approx(-0.5)
    diag = irreconcilability_check(gap, 0.01, MetricSpec("FPR"))
    assert diag.flagged and diag.status == "irreconcilable"


def test_check_statuses():
    assert irreconcilability_check(0.5, 0.01, MetricSpec("SP")).status == "inapplicable"
    assert irreconcilability_check(0.5, 0.01, MetricSpec.parse("0.5*SP+0.5*FPR")).status == "inapplicable"
    assert irreconcilability_check(0.005, 0.01, MetricSpec("FNR")).status == "reconcilable"


@pytest.fixture(scope="module")
def audit():
    pop = two_feature_population()
    return pop, pop.sample(4000, np.random.default_rng(0)), pop.sample(4000, np.random.default_rng(1))


def run(audit, **kw):
    pop, data, hold = audit
    y0, s_hat = exact_scorers(pop)
    return distributional_descent(data, H, MetricSpec("FPR"), (y0, s_hat), DescentConfig(step_eps=0.1, max_iters=40, **kw))


def test_sampled_descent_reduces_gap(audit):
    res = run(audit, holdout=audit[2])
    assert abs(res.best.gap) < 0.25 * abs(res.trace[0].metric_working)
    assert not math.isnan(res.trace[1].metric_holdout)
    assert len(res.final_weights) == len(res.target_rows) == len(audit[1].group(0))
    # baseline rows are carried through unchanged
    base = res.counterfactual_samples.group(1)
    np.testing.assert_array_equal(res.counterfactual_samples.X[base], audit[1].X[audit[1].group(1)])


def test_sampled_descent_is_seeded(audit):
    a, b, c = run(audit, seed=5), run(audit, seed=5), run(audit, seed=6)
    assert [r.metric_working for r in a.trace] == [r.metric_working for r in b.trace]
    np.testing.assert_array_equal(a.final_weights, b.final_weights)
    assert [r.metric_working for r in a.trace] != [r.metric_working for r in c.trace]


def test_sampled_descent_reports_best_not_last(audit):
    res = run(audit, patience=4)
    assert abs(res.best.gap) == pytest.approx(min(abs(r.metric_working) for r in res.trace))
    pick_gap = metric_from_samples(MetricSpec("FPR"), res.counterfactual_samples, H).gap
    assert pick_gap == pytest.approx(res.best.gap)


def test_failed_status_on_undefined_constants():
    pop = two_feature_population()
    data = pop.sample(2000, np.random.default_rng(0))
    zero = TableScorer({x: 0.0 for x in pop.union_support()})
    y0, s_hat = exact_scorers(pop)
    res = distributional_descent(data, zero, MetricSpec("DA"), (y0, s_hat), DescentConfig())
    assert res.status in ("failed", "stationary")


def test_trace_and_weight_writers(tmp_path, audit):
    res = run(audit)
    write_trace(res.trace, tmp_path / "t.csv")
    rows = (tmp_path / "t.csv").read_text().splitlines()
    assert rows[0] == "iteration,metric_working,metric_holdout,eps_used,accepted,wall_ms"
    assert rows[1].endswith(",1,")
    write_trace([TraceRecord(0, 0.1, wall_ms=3.14159)], tmp_path / "t2.csv", timing=True)
    assert (tmp_path / "t2.csv").read_text().splitlines()[1].endswith("3.142")
    write_weights(res, tmp_path / "w.csv")
    assert len((tmp_path / "w.csv").read_text().splitlines()) == 1 + len(res.target_rows)


def test_config_validation():
    with pytest.raises(ValueError):
        DescentConfig(step_eps=0)
    with pytest.raises(ValueError):
        DescentConfig(patience=-1)
