"""Synthetic populations for the worked examples and an adult-like stand-in dataset."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .data import AuditDataset, EmpiricalDistribution, ExactPopulation, Schema
from .models import logistic


@dataclass
class SynthResult:
    data: AuditDataset
    population: ExactPopulation | None = None


def _product(p: tuple[float, ...]) -> dict[tuple[int, ...], float]:
    out = {}
    for x in itertools.product((0, 1), repeat=len(p)):
        pr = float(np.prod([pi if xi else 1 - pi for pi, xi in zip(p, x)]))
        if pr > 0:
            out[x] = pr
    return out


def _conditional(points, fn) -> dict[tuple[int, ...], float]:
    return {x: float(logistic(fn(np.asarray(x, dtype=float)))) for x in points}


def _dist(mass: dict) -> EmpiricalDistribution:
    return EmpiricalDistribution.from_dict({k: v for k, v in mass.items() if v > 0})


def two_feature_population() -> ExactPopulation:
    schema = Schema.binary(("x1", "x2"))
    pts = list(itertools.product((0, 1), repeat=2))
    return ExactPopulation(
        schema,
        _dist(_product((0.9, 0.2))),
        _dist(_product((0.1, 0.5))),
        _conditional(pts, lambda x: 2 * x[0] - 2 * x[1]),
        _conditional(pts, lambda x: 2 * x[0] + 4 * x[1] - 3),
        0.5,
    )


def toy_population() -> ExactPopulation:
    schema = Schema.binary(("x1", "x2", "x3"))
    pts = list(itertools.product((0, 1), repeat=3))
    cond = _conditional(pts, lambda x: 5 * x[0] - 2 * x[1] - 2 * x[2])
    return ExactPopulation(schema, _dist(_product((0.9, 0.2, 0.2))), _dist(_product((0.1, 0.5, 0.5))), cond, cond, 0.5)


PROXY_P0 = ((0.60, 0.00), (0.25, 0.15))
PROXY_P1 = ((0.05, 0.00), (0.20, 0.75))


def joint_proxy_population() -> ExactPopulation:
    """Features take values -1/1 (code 0 is -1); rows of the matrices index x1, columns x2."""
    levels = ("-1", "1")
    schema = Schema(("x1", "x2", "x3"), (levels, levels, levels))

    def mass(mat):
        out = {}
        for a, b, c in itertools.product((0, 1), repeat=3):
            out[(a, b, c)] = mat[a][b] * (0.3 if c else 0.7)
        return out

    pts = list(itertools.product((0, 1), repeat=3))
    cond = _conditional(pts, lambda x: 6 * (2 * x[0] - 1) * (2 * x[1] - 1) + (2 * x[2] - 1))
    return ExactPopulation(schema, _dist(mass(PROXY_P0)), _dist(mass(PROXY_P1)), cond, cond, 0.5)


def bernoulli_sp_population() -> ExactPopulation:
    schema = Schema.binary(("x",))
    half = {(0,): 0.5, (1,): 0.5}
    return ExactPopulation(schema, _dist({(0,): 0.9, (1,): 0.1}), _dist({(0,): 0.8, (1,): 0.2}), half, half, 0.5)


def _with_scores(data: AuditDataset, scores: np.ndarray, name: str = "h") -> AuditDataset:
    return AuditDataset(data.schema, data.X, data.y, data.s, data.weights, scores, name)


def two_feature(n: int, rng: np.random.Generator) -> SynthResult:
    """Sampled rows carry the score column ``h`` = 1[x2 = 1]."""
    pop = two_feature_population()
    data = pop.sample(n, rng)
    return SynthResult(_with_scores(data, data.X[:, 1].astype(float)), pop)


def toy_descent(n: int, rng: np.random.Generator) -> SynthResult:
    pop = toy_population()
    return SynthResult(pop.sample(n, rng), pop)


def joint_proxy(n: int, rng: np.random.Generator) -> SynthResult:
    pop = joint_proxy_population()
    return SynthResult(pop.sample(n, rng), pop)


def bernoulli_sp(n: int, rng: np.random.Generator) -> SynthResult:
    """Rows carry the constant score column ``h`` = 0.2."""
    pop = bernoulli_sp_population()
    data = pop.sample(n, rng)
    return SynthResult(_with_scores(data, np.full(len(data), 0.2)), pop)


# Female / male marginals of the binarized adult features; mutually exclusive
# indicator blocks are drawn as one categorical with an implicit "other".
ADULT_BLOCKS: tuple[tuple[tuple[str, ...], tuple[float, ...], tuple[float, ...]], ...] = (
    (("Married",), (0.18,), (0.63,)),
    (("Immigrant",), (0.10,), (0.11,)),
    (
        ("HighestDegree_is_HS", "HighestDegree_is_AS", "HighestDegree_is_BS", "HighestDegree_is_MSorPhD"),
        (0.32, 0.07, 0.15, 0.06),
        (0.32, 0.08, 0.18, 0.07),
    ),
    (("AnyCapitalLoss",), (0.03,), (0.05,)),
    (("Age_leq_30",), (0.39,), (0.29,)),
    (("WorkHrsPerWeek_lt_40",), (0.38,), (0.17,)),
    (
        ("JobType_is_WhiteCollar", "JobType_is_BlueCollar", "JobType_is_Specialized", "JobType_is_ArmedOrProtective"),
        (0.34, 0.05, 0.23, 0.01),
        (0.19, 0.34, 0.21, 0.02),
    ),
    (
        ("Industry_is_Private", "Industry_is_Government", "Industry_is_SelfEmployed"),
        (0.73, 0.15, 0.05),
        (0.69, 0.12, 0.15),
    ),
)

ADULT_NAMES: tuple[str, ...] = tuple(n for block, _, _ in ADULT_BLOCKS for n in block)

# log-odds of income > 50k, shared by both groups; the intercept puts the
# overall positive rate near 24%
ADULT_LOGIT: dict[str, float] = {
    "Married": 2.2,
    "Immigrant": -0.2,
    "HighestDegree_is_HS": -0.4,
    "HighestDegree_is_AS": 0.3,
    "HighestDegree_is_BS": 1.1,
    "HighestDegree_is_MSorPhD": 1.6,
    "AnyCapitalLoss": 0.7,
    "Age_leq_30": -1.3,
    "WorkHrsPerWeek_lt_40": -1.0,
    "JobType_is_WhiteCollar": 0.6,
    "JobType_is_BlueCollar": -0.3,
    "JobType_is_Specialized": 0.8,
    "JobType_is_ArmedOrProtective": 0.4,
    "Industry_is_Private": 0.0,
    "Industry_is_Government": 0.2,
    "Industry_is_SelfEmployed": 0.3,
}
ADULT_INTERCEPT = -2.6
ADULT_PR_MALE = 0.67


def adult_like(n: int, rng: np.random.Generator) -> SynthResult:
    """Sixteen binary columns; s = 0 marks the female group."""
    schema = Schema.binary(ADULT_NAMES)
    s = (rng.random(n) < ADULT_PR_MALE).astype(np.int64)
    X = np.zeros((n, len(ADULT_NAMES)), dtype=np.int64)
    col = 0
    for names, pf, pm in ADULT_BLOCKS:
        for g, probs in ((0, pf), (1, pm)):
            idx = np.flatnonzero(s == g)
            if len(names) == 1:
                X[idx, col] = rng.random(len(idx)) < probs[0]
            else:
                full = np.array(probs + (1.0 - sum(probs),))
                pick = rng.choice(len(full), size=len(idx), p=full)
                for k in range(len(names)):
                    X[idx, col + k] = pick == k
        col += len(names)
    z = ADULT_INTERCEPT + X @ np.array([ADULT_LOGIT[nm] for nm in ADULT_NAMES])
    y = (rng.random(n) < logistic(z)).astype(np.int64)
    return SynthResult(AuditDataset(schema, X, y, s))


GENERATORS: dict[str, Callable[[int, np.random.Generator], SynthResult]] = {
    "two-feature": two_feature,
    "toy-descent": toy_descent,
    "joint-proxy": joint_proxy,
    "bernoulli-sp": bernoulli_sp,
    "adult-like": adult_like,
}


def generate(name: str, n: int, seed: int) -> SynthResult:
    if name not in GENERATORS:
        raise ValueError(f"unknown generator {name!r}; choose from {', '.join(GENERATORS)}")
    if n < 1:
        raise ValueError("n must be >= 1")
    return GENERATORS[name](n, np.random.default_rng(seed))
