import numpy as np
import pytest

from cfrepair.disparity import MetricSpec, metric_exact
from cfrepair.models import TableScorer
from cfrepair.synth import ADULT_BLOCKS, ADULT_NAMES, GENERATORS, generate, toy_population


@pytest.mark.parametrize("name", sorted(GENERATORS))
def test_generators_are_seeded(name):
    a, b = generate(name, 500, 3), generate(name, 500, 3)
    assert len(a.data) == 500
    np.testing.assert_array_equal(a.data.X, b.data.X)
    np.testing.assert_array_equal(a.data.y, b.data.y)
    assert not np.array_equal(a.data.X, generate(name, 500, 4).data.X)


def test_bad_arguments():
    with pytest.raises(ValueError, match="unknown generator"):
        generate("nope", 10, 0)
    with pytest.raises(ValueError):
        generate("two-feature", 0, 0)


def test_example_scores_and_frequencies():
    res = generate("two-feature", 40000, 0)
    d = res.data
    np.testing.assert_array_equal(d.scores, d.X[:, 1])
    t = d.group(0)
    # P0 has Pr(x1 = 1) = 0.9
    assert abs(d.X[t, 0].mean() - 0.9) < 0.01
    assert abs(d.s.mean() - 0.5) < 0.01


def test_toy_population_gap():
    pop = toy_population()
    # the population classifier 1[5x1 - 2x2 - 2x3 > 0]
    h = TableScorer({x: float(5 * x[0] - 2 * x[1] - 2 * x[2] > 0) for x in pop.union_support()})
    assert metric_exact(MetricSpec("FPR"), pop, h).gap == pytest.approx(0.285, abs=5e-3)


def test_adult_like_structure():
    d = generate("adult-like", 60000, 0).data
    assert d.schema.names == ADULT_NAMES
    assert abs(d.s.mean() - 0.67) < 0.01
    col = 0
    for names, pf, pm in ADULT_BLOCKS:
        block = d.X[:, col : col + len(names)]
        assert block.sum(axis=1).max() <= 1
        for g, probs in ((0, pf), (1, pm)):
            np.testing.assert_allclose(block[d.s == g].mean(axis=0), probs, atol=0.015)
        col += len(names)
    assert abs(d.y.mean() - 0.24) < 0.01
    assert d.y[d.s == 0].mean() < d.y[d.s == 1].mean()
