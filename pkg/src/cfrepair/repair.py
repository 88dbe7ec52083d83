"""The repaired classifier and before/after evaluation reports."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import AuditDataset, EmpiricalDistribution, Schema, SchemaError
from .descent import irreconcilability_check
from .data import ExactPopulation
from .disparity import EmptyConditioningError, MetricReport, MetricSpec, _evaluate, _exact_side, _Side, auc_from_arrays, metric_exact, metric_from_arrays
from .models import Scorer
from .transport import Preprocessor


@dataclass
class RepairedScorer:
    """h(T(x)) on the target group (s = 0), h(x) on the baseline group."""

    base: Scorer
    pre: Preprocessor
    mode: str = "randomized"  # randomized | expectation

    def __post_init__(self):
        if self.mode not in ("randomized", "expectation"):
            raise ValueError(f"unknown mode {self.mode!r}")

    def scores(self, data: AuditDataset, rng: np.random.Generator | None = None) -> np.ndarray:
        out = np.array(self.base.score_rows(data), dtype=float)
        t = data.group(0)
        if len(t) == 0:
            return out
        Xt = data.X[t]
        if self.mode == "expectation":
            out[t] = self.pre.expected_scores(self.base, Xt)
        else:
            if rng is None:
                raise ValueError("randomized mode needs an rng")
            out[t] = self.base.score_many(self.pre.apply_rows(Xt, rng))
        return out


def repaired_score(r: RepairedScorer, x: Sequence[int], s: int, rng: np.random.Generator | None = None) -> float:
    if s == 1:
        return r.base(x)
    if r.mode == "expectation":
        return float(r.pre.expected_scores(r.base, np.asarray([x]))[0])
    return r.base(r.pre.sample(x, rng))


def repaired_metric_exact(
    spec: MetricSpec,
    pop: ExactPopulation,
    r: RepairedScorer,
    labels: str = "source",
) -> MetricReport:
    """Exact metric of the repaired classifier (expectation over T).

    ``labels="source"`` keeps each individual's outcome tied to the original
    x; ``labels="pushforward"`` evaluates the metric at T#P0, i.e. as if
    outcomes followed the transported inputs. The two agree for SP and DA.
    """
    if labels == "pushforward":
        return metric_exact(spec, pop, r.base, override_p0=r.pre.pushforward(pop.p0))
    if labels != "source":
        raise ValueError(f"unknown label mode {labels!r}")
    p0 = pop.p0
    target = _exact_side(p0, pop.cond0, r.base)
    target = _Side(r.pre.expected_scores(r.base, p0.support), target.ypos, target.mass, r.pre.pushforward(p0))
    return _evaluate(spec, target, _exact_side(pop.p1, pop.cond1, r.base))


@dataclass
class EvalConfig:
    draws: int = 25
    seed: int = 0
    decision_threshold: float | None = None
    gap_threshold: float = 0.01

    def __post_init__(self):
        if self.draws < 1:
            raise ValueError("draws must be positive")


@dataclass
class MetricRow:
    metric: str
    baseline_value: float
    target_before: float
    target_after: float
    gap_before: float
    gap_after: float
    diagnostic: str = ""
    status: str = "ok"


@dataclass
class EvalReport:
    rows: list[MetricRow]
    auc_target_before: float
    auc_target_after: float
    mean_score_change: float
    seed: int
    draws: int
    decision_threshold: float | None = None
    messages: list[str] = field(default_factory=list)

    @property
    def harm_flag(self) -> bool:
        """True when repair lowers the target group's mean score."""
        return self.mean_score_change < 0

    def row(self, name: str) -> MetricRow:
        for r in self.rows:
            if r.metric == name:
                return r
        raise KeyError(name)

    def write(self, path: str | Path) -> None:
        fields = ["metric", "baseline_value", "target_before", "target_after", "gap_before", "gap_after", "diagnostic", "status"]
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(fields)
            for r in self.rows:
                wr.writerow([_fmt(getattr(r, f)) for f in fields])
            wr.writerow([])
            threshold = "soft scores" if self.decision_threshold is None else repr(float(self.decision_threshold))
            for k, v in (
                ("auc_target_before", self.auc_target_before),
                ("auc_target_after", self.auc_target_after),
                ("mean_score_change_target", self.mean_score_change),
                ("harm_flag", int(self.harm_flag)),
                ("seed", self.seed),
                ("draws", self.draws),
                ("decision_threshold", threshold),
            ):
                wr.writerow([f"# {k}", _fmt(v)])


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


def _auc(scores, data: AuditDataset) -> float:
    m = data.s == 0
    try:
        return auc_from_arrays(scores[m], data.y[m], data.weights[m])
    except ValueError:
        return math.nan


def evaluate_repair(
    holdout: AuditDataset,
    h: Scorer,
    r: RepairedScorer,
    metrics: Sequence[MetricSpec],
    cfg: EvalConfig = EvalConfig(),
) -> EvalReport:
    """Compare h and the repaired classifier on held-out data.

    Randomized repair is averaged over ``cfg.draws`` preprocessor draws with
    seeds spawned from ``cfg.seed``. With ``decision_threshold`` set, metrics
    use hard decisions 1[score > t]; AUC always uses the soft scores.
    """
    holdout.require_groups()
    soft = h.raw
    base = soft if cfg.decision_threshold is None else soft.thresholded(cfg.decision_threshold)
    reps = [RepairedScorer(sc, r.pre, r.mode) for sc in (base, soft)]
    before, soft_before = base.score_rows(holdout), soft.score_rows(holdout)
    if r.mode == "expectation":
        draws, soft_draws = ([rp.scores(holdout)] for rp in reps)
    else:
        # identical seeds give identical T draws for the hard and soft scores
        seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.draws)
        draws, soft_draws = ([rp.scores(holdout, np.random.default_rng(ss)) for ss in seeds] for rp in reps)

    args = (holdout.y, holdout.s, holdout.weights, holdout.X)
    rows, messages = [], []
    for spec in metrics:
        try:
            b = metric_from_arrays(spec, before, *args)
            after = [metric_from_arrays(spec, sc, *args) for sc in draws]
        except EmptyConditioningError as exc:
            rows.append(MetricRow(spec.name, math.nan, math.nan, math.nan, math.nan, math.nan, "", f"error: {exc}"))
            continue
        gap_after = float(np.mean([a.gap for a in after]))
        diag = irreconcilability_check(gap_after, cfg.gap_threshold, spec)
        if diag.flagged:
            messages.append(diag.message)
        rows.append(
            MetricRow(
                spec.name,
                b.value_baseline,
                b.value_target,
                float(np.mean([a.value_target for a in after])),
                b.gap,
                gap_after,
                diag.status,
            )
        )
    t = holdout.group(0)
    wt = holdout.weights[t]
    change = float(np.mean([(sc[t] - soft_before[t]) @ wt for sc in soft_draws]) / wt.sum())
    return EvalReport(
        rows,
        _auc(soft_before, holdout),
        float(np.mean([_auc(sc, holdout) for sc in soft_draws])),
        change,
        cfg.seed,
        len(draws),
        cfg.decision_threshold,
        messages,
    )


@dataclass(frozen=True)
class ContrastRow:
    feature: str
    level: str
    before: float
    after: float

    @property
    def change(self) -> float:
        return self.after - self.before


def contrast_distributions(p_before: EmpiricalDistribution, q_after: EmpiricalDistribution, schema: Schema) -> list[ContrastRow]:
    """Per-feature marginals before and after; binary features report level 1 only."""
    for dist in (p_before, q_after):
        if dist.support.shape[1] != schema.d:
            raise SchemaError("distribution does not match the schema dimension")
    out = []
    for j, name in enumerate(schema.names):
        k = schema.cardinalities[j]
        levels = [1] if k == 2 else range(k)
        for c in levels:
            pb = float(p_before.probs @ (p_before.support[:, j] == c))
            qa = float(q_after.probs @ (q_after.support[:, j] == c))
            out.append(ContrastRow(name, schema.levels[j][c], pb, qa))
    return out


def write_contrast(rows: Sequence[ContrastRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["feature", "level", "target", "counterfactual", "change"])
        for r in rows:
            wr.writerow([r.feature, r.level, repr(float(r.before)), repr(float(r.after)), repr(float(r.change))])
