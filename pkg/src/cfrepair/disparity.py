"""Group disparity metrics (SP, FDR, FNR, FPR, DA) from samples or exact populations."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import AuditDataset, EmpiricalDistribution, ExactPopulation
from .models import Scorer

KINDS = ("SP", "FDR", "FNR", "FPR", "DA")
KL_FLOOR = 1e-12


class EmptyConditioningError(ValueError):
    """A conditioning event of a rate metric has zero mass in some group."""


@dataclass(frozen=True)
class MetricSpec:
    """A Table-style disparity metric, or a convex combination of them."""

    kind: str
    lam: float = 0.0
    components: tuple[tuple[float, "MetricSpec"], ...] = ()

    def __post_init__(self):
        if self.kind == "compound":
            if not self.components:
                raise ValueError("compound metric needs components")
            ws = [w for w, _ in self.components]
            if any(w < 0 for w in ws) or abs(sum(ws) - 1.0) > 1e-9:
                raise ValueError("compound weights must be nonnegative and sum to 1")
        elif self.kind not in KINDS:
            raise ValueError(f"unknown metric kind {self.kind!r}")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.lam and self.kind != "DA":
            raise ValueError("lambda applies to DA only")

    @property
    def name(self) -> str:
        if self.kind == "DA":
            return f"DA{self.lam:g}"
        if self.kind == "compound":
            return "+".join(f"{w:g}*{c.name}" for w, c in self.components)
        return self.kind

    @property
    def signed(self) -> bool:
        """True when the metric is a difference of group rates (can be negative)."""
        if self.kind == "compound":
            return any(c.signed for _, c in self.components)
        return self.kind != "DA"

    def leaves(self) -> list[tuple[float, "MetricSpec"]]:
        if self.kind != "compound":
            return [(1.0, self)]
        out = []
        for w, c in self.components:
            out += [(w * w2, c2) for w2, c2 in c.leaves()]
        return out

    @classmethod
    def parse(cls, text: str) -> "MetricSpec":
        """Parse ``FPR``, ``DA``, ``DA:1``, ``EO`` or ``0.5*FNR+0.5*FPR``."""
        t = text.strip()
        if t.upper() == "EO":
            return equalized_odds()
        if "+" in t or "*" in t:
            comps = []
            for part in t.split("+"):
                w, _, k = part.partition("*")
                comps.append((float(w), cls.parse(k)))
            return cls("compound", components=tuple(comps))
        kind, _, lam = t.partition(":")
        return cls(kind.strip().upper(), float(lam) if lam else 0.0)


def equalized_odds(w_fnr: float = 0.5) -> MetricSpec:
    return MetricSpec("compound", components=((w_fnr, MetricSpec("FNR")), (1.0 - w_fnr, MetricSpec("FPR"))))


@dataclass
class MetricReport:
    metric: str
    lam: float
    value_target: float
    value_baseline: float
    gap: float
    n_target: int = 0
    n_baseline: int = 0
    seed: int | None = None
    status: str = "ok"  # ok | infinite

    @property
    def finite(self) -> bool:
        return self.status == "ok"

    def record(self) -> dict:
        return {
            "metric": self.metric,
            "lambda": self.lam,
            "value_target": self.value_target,
            "value_baseline": self.value_baseline,
            "gap": self.gap,
            "n_target": self.n_target,
            "n_baseline": self.n_baseline,
            "seed": "" if self.seed is None else self.seed,
            "status": self.status,
        }


def write_reports(reports: Sequence[MetricReport], path: str | Path, extra: dict | None = None) -> None:
    rows = [dict(r.record(), **(extra or {})) for r in reports]
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        wr.writeheader()
        for r in rows:
            wr.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in r.items()})


# -- kernels ----------------------------------------------------------------


def _ratio(num: float, den: float, what: str) -> float:
    if not den > 0:
        raise EmptyConditioningError(f"empty conditioning event for {what}")
    return num / den


def group_rate(kind: str, h: np.ndarray, ypos: np.ndarray, mass: np.ndarray, group: int = 0) -> float:
    """Per-group performance value; ``ypos`` is Pr(Y=1) per point (labels or conditionals)."""
    if kind == "SP":
        return _ratio(mass @ (1 - h), mass.sum(), f"SP (group {group})")
    if kind == "FDR":
        return _ratio(mass @ (h * (1 - ypos)), mass @ h, f"FDR (no predicted positives in group {group})")
    if kind == "FNR":
        return _ratio(mass @ ((1 - h) * ypos), mass @ ypos, f"FNR (no positives in group {group})")
    if kind == "FPR":
        return _ratio(mass @ (h * (1 - ypos)), mass @ (1 - ypos), f"FPR (no negatives in group {group})")
    raise ValueError(kind)


def kl_bernoulli(a: float, b: float) -> float:
    """KL(Bern(a) || Bern(b)); math.inf when a puts mass where b has none."""
    if (b <= 0 and a > 0) or (b >= 1 and a < 1):
        return math.inf
    out = 0.0
    if a > 0:
        out += a * (math.log(max(a, KL_FLOOR)) - math.log(max(b, KL_FLOOR)))
    if a < 1:
        out += (1 - a) * (math.log(max(1 - a, KL_FLOOR)) - math.log(max(1 - b, KL_FLOOR)))
    return max(out, 0.0)


def kl_discrete(p: EmpiricalDistribution, q: EmpiricalDistribution) -> float:
    total = 0.0
    for x, px in p.as_dict().items():
        if px <= 0:
            continue
        qx = q.prob(x)
        if qx <= 0:
            return math.inf
        total += px * (math.log(max(px, KL_FLOOR)) - math.log(max(qx, KL_FLOOR)))
    return max(total, 0.0)


@dataclass
class _Side:
    h: np.ndarray
    ypos: np.ndarray
    mass: np.ndarray
    dist: EmpiricalDistribution | None = field(default=None)


def _evaluate(spec: MetricSpec, t: _Side, b: _Side) -> MetricReport:
    if spec.kind == "compound":
        parts = [(w, _evaluate(c, t, b)) for w, c in spec.components]
        status = "ok" if all(r.finite for _, r in parts) else "infinite"
        vt = sum(w * r.value_target for w, r in parts)
        vb = sum(w * r.value_baseline for w, r in parts)
        gap = sum(w * r.gap for w, r in parts) if status == "ok" else math.inf
        return MetricReport(spec.name, 0.0, vt, vb, gap, status=status)
    if spec.kind == "DA":
        a = _ratio(t.mass @ t.h, t.mass.sum(), "DA (target)")
        c = _ratio(b.mass @ b.h, b.mass.sum(), "DA (baseline)")
        val = kl_bernoulli(a, c)
        if spec.lam > 0 and math.isfinite(val):
            val += spec.lam * kl_discrete(t.dist, b.dist)
        status = "ok" if math.isfinite(val) else "infinite"
        return MetricReport(spec.name, spec.lam, math.nan, math.nan, val, status=status)
    vt = group_rate(spec.kind, t.h, t.ypos, t.mass, 0)
    vb = group_rate(spec.kind, b.h, b.ypos, b.mass, 1)
    return MetricReport(spec.name, 0.0, vt, vb, vt - vb)


def _needs_dist(spec: MetricSpec) -> bool:
    return any(c.kind == "DA" and c.lam > 0 for _, c in spec.leaves())


def metric_from_arrays(
    spec: MetricSpec,
    scores: np.ndarray,
    y: np.ndarray,
    s: np.ndarray,
    weights: np.ndarray,
    X: np.ndarray | None = None,
) -> MetricReport:
    """Weighted-sample metric; scores enter as expectations of the prediction."""
    scores = np.asarray(scores, dtype=float)
    sides = []
    for g in (0, 1):
        m = s == g
        if not np.any(m) or not weights[m].sum() > 0:
            raise EmptyConditioningError(f"group {g} is empty")
        dist = EmpiricalDistribution.from_points(X[m], weights[m]) if (X is not None and _needs_dist(spec)) else None
        sides.append(_Side(scores[m], y[m].astype(float), weights[m].astype(float), dist))
    rep = _evaluate(spec, *sides)
    rep.n_target, rep.n_baseline = int(np.sum(s == 0)), int(np.sum(s == 1))
    return rep


def metric_from_samples(spec: MetricSpec, data: AuditDataset, h: Scorer, seed: int | None = None) -> MetricReport:
    rep = metric_from_arrays(spec, h.score_rows(data), data.y, data.s, data.weights, data.X)
    rep.seed = seed
    return rep


def _exact_side(dist: EmpiricalDistribution, cond, h: Scorer) -> _Side:
    ypos = np.array([cond[x] for x in dist.index])
    return _Side(h.score_many(dist.support), ypos, np.asarray(dist.probs, dtype=float), dist)


def metric_exact(
    spec: MetricSpec,
    pop: ExactPopulation,
    h: Scorer,
    override_p0: EmpiricalDistribution | None = None,
) -> MetricReport:
    """Evaluate the metric in closed form as a function of the target input distribution.

    ``override_p0`` replaces the target distribution; the target outcome
    conditional Pr(Y=1|x, S=0) is kept.
    """
    p0 = pop.p0 if override_p0 is None else override_p0
    missing = [x for x in p0.index if x not in pop.cond0]
    if missing:
        raise ValueError(f"target conditional undefined at {missing[0]}")
    rep = _evaluate(spec, _exact_side(p0, pop.cond0, h), _exact_side(pop.p1, pop.cond1, h))
    return rep


def objective(rep: MetricReport) -> float:
    """Quantity minimised by counterfactual search: |gap| (DA is already >= 0)."""
    return abs(rep.gap)


def auc(data: AuditDataset, group: int, h: Scorer) -> float:
    """Weighted rank-sum AUC of scores against y within a group; ties count one half."""
    m = data.s == group
    sc = h.score_rows(data)[m]
    return auc_from_arrays(sc, data.y[m], data.weights[m])


def auc_from_arrays(scores: np.ndarray, y: np.ndarray, w: np.ndarray) -> float:
    pos, neg = (y == 1) & (w > 0), (y == 0) & (w > 0)
    wp, wn = w[pos].sum(), w[neg].sum()
    if not (wp > 0 and wn > 0):
        raise ValueError("AUC needs both outcome classes in the group")
    uniq, inv = np.unique(scores, return_inverse=True)
    inv = inv.reshape(-1)
    pw = np.bincount(inv, weights=w * pos, minlength=len(uniq))
    nw = np.bincount(inv, weights=w * neg, minlength=len(uniq))
    below = np.concatenate([[0.0], np.cumsum(nw)[:-1]])
    return float((pw @ (below + 0.5 * nw)) / (wp * wn))
