"""Black-box scorers and the L2-logistic auxiliary models."""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .data import AuditDataset, FeatureVector, Schema, SchemaError

log = logging.getLogger(__name__)


def logistic(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class Scorer:
    """A probability-valued function of a feature vector."""

    kind: str = ""
    threshold: float | None = None

    def score_many(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def score_rows(self, data: AuditDataset) -> np.ndarray:
        return self.score_many(data.X)

    def __call__(self, x: Sequence[int]) -> float:
        return float(self.score_many(np.asarray([x], dtype=np.int64))[0])

    @property
    def raw(self) -> "Scorer":
        """The unthresholded scorer."""
        return self

    def thresholded(self, t: float) -> "Scorer":
        return ThresholdScorer(self.raw, t)


class LinearScorer(Scorer):
    """logistic(intercept + coef . onehot(x)), reference-coded in schema order.

    A feature with k levels contributes k-1 indicator columns for codes
    1..k-1; code 0 is the reference level.
    """

    kind = "linear-logistic"

    def __init__(self, schema: Schema, coef, intercept: float = 0.0, fit_info: "FitInfo | None" = None):
        self.schema = schema
        self.coef = np.asarray(coef, dtype=float).reshape(-1)
        if len(self.coef) != design_width(schema):
            raise ValueError(f"expected {design_width(schema)} coefficients, got {len(self.coef)}")
        self.intercept = float(intercept)
        self.fit_info = fit_info

    def score_many(self, X):
        return logistic(self.intercept + design_matrix(np.asarray(X), self.schema) @ self.coef)

    def terms(self) -> list[str]:
        return term_names(self.schema)

    def save(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["term", "coefficient"])
            wr.writerow(["(intercept)", repr(float(self.intercept))])
            for name, c in zip(self.terms(), self.coef):
                wr.writerow([name, repr(float(c))])

    @classmethod
    def load(cls, path: str | Path, schema: Schema) -> "LinearScorer":
        """Read a ``term,coefficient`` file; absent terms default to 0."""
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or [h.strip() for h in rows[0][:2]] != ["term", "coefficient"]:
            raise SchemaError("coefficient file needs a 'term,coefficient' header")
        names = term_names(schema)
        coef = np.zeros(len(names))
        intercept = 0.0
        for r in rows[1:]:
            if not r:
                continue
            term, val = r[0].strip(), float(r[1])
            if term == "(intercept)":
                intercept = val
            elif term in names:
                coef[names.index(term)] = val
            else:
                raise SchemaError(f"unknown term {term!r} in coefficient file")
        return cls(schema, coef, intercept)


class TableScorer(Scorer):
    """Explicit map from feature vector to score; missing keys are errors."""

    kind = "score-table"

    def __init__(self, table: Mapping[Sequence[int], float]):
        self.table = {tuple(int(v) for v in k): float(v) for k, v in table.items()}
        bad = [k for k, v in self.table.items() if not 0.0 <= v <= 1.0]
        if bad:
            raise ValueError(f"score outside [0, 1] at {bad[0]}")

    def score_many(self, X):
        X = np.asarray(X)
        out = np.empty(len(X))
        for i, x in enumerate(X):
            key = tuple(int(v) for v in x)
            try:
                out[i] = self.table[key]
            except KeyError:
                raise KeyError(f"score table has no entry for {key}") from None
        return out


class ColumnScorer(Scorer):
    """Per-row scores delivered as a dataset column.

    Rows carrying the column are scored from it directly. Other points
    (e.g. preprocessed inputs) are looked up in the mean score per distinct x
    of the rows the scorer was bound to.
    """

    kind = "score-column"

    def __init__(self, column: str, data: AuditDataset):
        if data.scores is None:
            raise SchemaError(f"dataset has no score column {column!r}")
        self.column = column
        uniq, inv = np.unique(data.X, axis=0, return_inverse=True)
        inv = inv.reshape(-1)
        sums = np.bincount(inv, weights=data.scores, minlength=len(uniq))
        counts = np.bincount(inv, minlength=len(uniq))
        self.lookup = TableScorer({tuple(u): s / c for u, s, c in zip(uniq, sums, counts)})

    def score_rows(self, data):
        if data.scores is None:
            return self.lookup.score_many(data.X)
        return np.asarray(data.scores, dtype=float)

    def score_many(self, X):
        return self.lookup.score_many(X)


class ThresholdScorer(Scorer):
    """Hard decisions 1[base(x) > t] from a probabilistic scorer."""

    def __init__(self, base: Scorer, t: float):
        self.base = base
        self.threshold = float(t)
        self.kind = base.kind

    @property
    def raw(self):
        return self.base

    def score_many(self, X):
        return (self.base.score_many(X) > self.threshold).astype(float)

    def score_rows(self, data):
        return (self.base.score_rows(data) > self.threshold).astype(float)


class FunctionScorer(Scorer):
    """Wraps a vectorised callable; used for derived scorers (e.g. Bayes posteriors)."""

    kind = "score-table"

    def __init__(self, fn):
        self.fn = fn

    def score_many(self, X):
        return np.asarray(self.fn(np.asarray(X)), dtype=float)


def score(m: Scorer, x: Sequence[int]) -> float:
    return m(x)


# -- design matrix ----------------------------------------------------------


def design_width(schema: Schema) -> int:
    return sum(k - 1 for k in schema.cardinalities)


def term_names(schema: Schema) -> list[str]:
    return [f"{n}={lv}" for n, levels in zip(schema.names, schema.levels) for lv in levels[1:]]


def design_matrix(X: np.ndarray, schema: Schema) -> np.ndarray:
    X = np.asarray(X, dtype=np.int64).reshape(-1, schema.d)
    cols = []
    for j, k in enumerate(schema.cardinalities):
        for c in range(1, k):
            cols.append(X[:, j] == c)
    if not cols:
        return np.zeros((len(X), 0))
    return np.column_stack(cols).astype(float)


# -- training ---------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    l2_grid: tuple[float, ...] = (0.01, 0.1, 1.0, 10.0)
    folds: int = 10
    max_iters: int = 5000
    tolerance: float = 1e-8
    seed: int = 0
    fit_intercept: bool = True

    def __post_init__(self):
        if self.folds < 2:
            raise ValueError("folds must be >= 2")
        if not self.l2_grid or any(l <= 0 for l in self.l2_grid):
            raise ValueError("l2_grid must be a nonempty list of positive values")


@dataclass
class FitInfo:
    lam: float
    iterations: int
    grad_norm: float
    converged: bool
    cv_loss: dict[float, float] = field(default_factory=dict)


def _aggregate(Z: np.ndarray, y: np.ndarray, w: np.ndarray):
    """Collapse identical design rows into (row, positive mass, negative mass)."""
    uniq, inv = np.unique(Z, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    w1 = np.bincount(inv, weights=w * (y == 1), minlength=len(uniq))
    w0 = np.bincount(inv, weights=w * (y == 0), minlength=len(uniq))
    return uniq, w1, w0


def _objective(beta, Za, w1, w0, lam, penal, total):
    z = Za @ beta
    f = (w1 @ np.logaddexp(0.0, -z) + w0 @ np.logaddexp(0.0, z) + 0.5 * lam * beta[penal] @ beta[penal]) / total
    p = logistic(z)
    g = Za.T @ (p * (w1 + w0) - w1)
    g[penal] += lam * beta[penal]
    return f, g / total


def _fit(Za, w1, w0, lam, fit_intercept, max_iters, tol):
    """Gradient descent with Barzilai-Borwein trial steps and Armijo backtracking.

    Objective is the weighted NLL plus (lam/2)|beta|^2 (intercept unpenalised),
    scaled by total weight so ``tol`` is independent of sample size.
    """
    p = Za.shape[1]
    penal = np.ones(p, dtype=bool)
    if fit_intercept:
        penal[0] = False
    total = max(float(w1.sum() + w0.sum()), 1e-300)
    beta = np.zeros(p)
    f, g = _objective(beta, Za, w1, w0, lam, penal, total)
    step = 1.0
    prev = None
    it = 0
    for it in range(1, max_iters + 1):
        gn = np.linalg.norm(g)
        if gn <= tol:
            return beta, it - 1, gn, True
        if prev is not None:
            sdiff, ydiff = beta - prev[0], g - prev[1]
            sy = sdiff @ ydiff
            if sy > 0:
                step = (sdiff @ sdiff) / sy
        t = step
        while True:
            cand = beta - t * g
            fc, gc = _objective(cand, Za, w1, w0, lam, penal, total)
            if fc <= f - 1e-4 * t * gn * gn or t < 1e-20:
                break
            t *= 0.5
        prev = (beta, g)
        beta, f, g = cand, fc, gc
    gn = np.linalg.norm(g)
    return beta, it, gn, gn <= tol


def _logloss(beta, Za, w1, w0):
    z = Za @ beta
    tot = w1.sum() + w0.sum()
    return float((w1 @ np.logaddexp(0.0, -z) + w0 @ np.logaddexp(0.0, z)) / tot) if tot > 0 else 0.0


def train_logistic(
    X: np.ndarray,
    labels,
    sample_weights=None,
    cfg: TrainConfig = TrainConfig(),
    schema: Schema | None = None,
) -> LinearScorer:
    """Fit an L2-regularised logistic scorer, choosing lambda by seeded k-fold CV.

    Folds are a seeded shuffle assigned round-robin; ties in mean held-out
    log-loss go to the larger lambda.
    """
    X = np.asarray(X, dtype=np.int64)
    if schema is None:
        schema = Schema(
            tuple(f"x{j + 1}" for j in range(X.shape[1])),
            tuple(tuple(str(v) for v in range(int(X[:, j].max()) + 1)) for j in range(X.shape[1])),
        )
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    w = np.ones(len(y)) if sample_weights is None else np.asarray(sample_weights, dtype=float)
    if np.any(w < 0) or not w.sum() > 0:
        raise ValueError("sample weights must be nonnegative and not all zero")
    if len(np.unique(y[w > 0])) < 2:
        raise ValueError("training labels are single-class")

    Z = design_matrix(X, schema)
    Za = np.column_stack([np.ones(len(Z)), Z]) if cfg.fit_intercept else Z

    grid = sorted(set(float(l) for l in cfg.l2_grid))
    cv_loss: dict[float, float] = {}
    if len(grid) > 1:
        rng = np.random.default_rng(cfg.seed)
        fold = np.empty(len(y), dtype=np.int64)
        fold[rng.permutation(len(y))] = np.arange(len(y)) % cfg.folds
        parts = []
        for k in range(cfg.folds):
            tr, te = fold != k, fold == k
            parts.append((_aggregate(Za[tr], y[tr], w[tr]), _aggregate(Za[te], y[te], w[te])))
        for lam in grid:
            losses = []
            for (Ztr, a1, a0), (Zte, b1, b0) in parts:
                beta, *_ = _fit(Ztr, a1, a0, lam, cfg.fit_intercept, cfg.max_iters, cfg.tolerance)
                losses.append(_logloss(beta, Zte, b1, b0))
            cv_loss[lam] = float(np.mean(losses))
        best = min(cv_loss.values())
        lam = max(l for l, v in cv_loss.items() if v <= best + 1e-12 * max(1.0, abs(best)))
    else:
        lam = grid[0]

    Zu, w1, w0 = _aggregate(Za, y, w)
    beta, iters, gn, ok = _fit(Zu, w1, w0, lam, cfg.fit_intercept, cfg.max_iters, cfg.tolerance)
    if not ok:
        warnings.warn(f"logistic fit did not converge in {iters} iterations (|grad|={gn:.3g})", RuntimeWarning)
    info = FitInfo(lam, iters, float(gn), ok, cv_loss)
    log.debug("logistic fit: lam=%g iters=%d |grad|=%.3g", lam, iters, gn)
    if cfg.fit_intercept:
        return LinearScorer(schema, beta[1:], beta[0], info)
    return LinearScorer(schema, beta, 0.0, info)


def fit_auxiliaries(data: AuditDataset, cfg: TrainConfig = TrainConfig()) -> tuple[LinearScorer, LinearScorer]:
    """Train s_hat (group membership on all rows) and y0_hat (outcome on target rows)."""
    data.require_groups()
    s_hat = train_logistic(data.X, data.s, data.weights, cfg, data.schema)
    t = data.group(0)
    yt, wt = data.y[t], data.weights[t]
    if len(np.unique(yt[wt > 0])) < 2:
        raise ValueError("y0_hat is untrainable: target group has a single outcome class")
    y0_hat = train_logistic(data.X[t], yt, wt, cfg, data.schema)
    return s_hat, y0_hat


def bayes_group_posterior(p0: Mapping[FeatureVector, float], p1: Mapping[FeatureVector, float], ps1: float) -> FunctionScorer:
    """Pr(S=1 | x) from group input distributions and Pr(S=1)."""

    def fn(X):
        out = np.empty(len(X))
        for i, x in enumerate(X):
            k = tuple(int(v) for v in x)
            a, b = ps1 * p1.get(k, 0.0), (1 - ps1) * p0.get(k, 0.0)
            out[i] = a / (a + b) if a + b > 0 else ps1
        return out

    return FunctionScorer(fn)
