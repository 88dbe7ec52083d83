"""Distributional descent toward a counterfactual target-group distribution."""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import AuditDataset, EmpiricalDistribution, ExactPopulation, draw_indices
from .disparity import EmptyConditioningError, MetricReport, MetricSpec, metric_exact, metric_from_arrays, objective
from .influence import (
    DEFAULT_CLAMP,
    InfluenceEstimationError,
    constants_exact,
    constants_from_arrays,
    exact_scorers,
    influence_values,
    steepest_direction,
)
from .models import Scorer

IMPROVE_TOL = 1e-12


@dataclass
class DescentConfig:
    step_eps: float = 0.05
    max_iters: int = 100
    patience: int = 2
    resample_count: int | None = None  # None: same as the target group
    holdout: AuditDataset | None = None
    seed: int = 0
    weight_floor: float = 1e-8
    clamp: float = DEFAULT_CLAMP

    def __post_init__(self):
        if not self.step_eps > 0:
            raise ValueError("step_eps must be positive")
        if self.max_iters < 1 or self.patience < 0:
            raise ValueError("max_iters must be >= 1 and patience >= 0")
        if self.resample_count is not None and self.resample_count < 1:
            raise ValueError("resample_count must be positive")
        if self.weight_floor < 0:
            raise ValueError("weight_floor must be >= 0")


@dataclass
class TraceRecord:
    iteration: int
    metric_working: float
    metric_holdout: float = math.nan
    eps_used: float = 0.0
    accepted: bool = True
    wall_ms: float = 0.0


@dataclass
class DescentResult:
    final_weights: np.ndarray
    counterfactual_samples: AuditDataset
    trace: list[TraceRecord]
    status: str  # converged | max_iters | stationary | failed
    best: MetricReport
    target_rows: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    message: str = ""

    @property
    def best_iteration(self) -> int:
        vals = [abs(r.metric_working) for r in self.trace]
        return self.trace[int(np.argmin(vals))].iteration


def shrink_step(w: np.ndarray, d: np.ndarray, eps: float, floor: float) -> float:
    """Largest step <= eps keeping (1 - step*d) * w >= floor on rows above 2*floor."""
    live = (w >= 2 * floor) & (d > 0)
    if not np.any(live):
        return eps
    cap = float(np.min((1.0 - floor / w[live]) / d[live]))
    return min(eps, cap)


def _sign(rep: MetricReport, spec: MetricSpec) -> float:
    if not spec.signed:
        return 1.0
    return -1.0 if rep.gap < 0 else 1.0


class _Scores:
    """h, y0_hat and s_hat cached per row of a dataset's target group."""

    def __init__(self, data: AuditDataset, h: Scorer, y0_hat: Scorer, s_hat: Scorer):
        self.data = data
        self.t = data.group(0)
        self.b = data.group(1)
        hs = h.score_rows(data)
        Xt = data.X[self.t]
        self.h0, self.h1 = hs[self.t], hs[self.b]
        self.y0 = y0_hat.score_many(Xt)
        self.s0 = s_hat.score_many(Xt)
        self.yt, self.yb = data.y[self.t], data.y[self.b]
        self.wb = data.weights[self.b]

    def constants(self, pick: np.ndarray, clamp: float):
        ones = np.ones(len(pick))
        return constants_from_arrays(self.h0[pick], self.y0[pick], self.s0[pick], ones, self.h1, self.wb, clamp)

    def metric(self, spec: MetricSpec, pick: np.ndarray) -> MetricReport:
        n = len(pick)
        Xall = self.data.X
        X = np.concatenate([Xall[self.t][pick], Xall[self.b]])
        scores = np.concatenate([self.h0[pick], self.h1])
        y = np.concatenate([self.yt[pick], self.yb])
        s = np.concatenate([np.zeros(n, dtype=np.int64), np.ones(len(self.b), dtype=np.int64)])
        w = np.concatenate([np.ones(n), self.wb])
        return metric_from_arrays(spec, scores, y, s, w, X)

    def psi(self, spec: MetricSpec, k) -> np.ndarray:
        return influence_values(spec, self.h0, self.y0, self.s0, k)


def distributional_descent(
    data: AuditDataset,
    h: Scorer,
    spec: MetricSpec,
    aux: tuple[Scorer, Scorer],
    cfg: DescentConfig = DescentConfig(),
) -> DescentResult:
    """Reweight and resample the target group along the negative influence direction.

    ``aux`` is ``(y0_hat, s_hat)``. Weights live on the original target rows;
    constants are re-estimated on each resampled target set. With a holdout,
    a parallel set of holdout weights is driven by the same constants and
    step sizes and only its metric is recorded.
    """
    data.require_groups()
    y0_hat, s_hat = aux
    work = _Scores(data, h, y0_hat, s_hat)
    nt = len(work.t)
    count = cfg.resample_count or nt
    work_ss, hold_ss = np.random.SeedSequence(cfg.seed).spawn(2)
    rng = np.random.default_rng(work_ss)

    hold = None
    if cfg.holdout is not None:
        cfg.holdout.require_groups()
        hold = _Scores(cfg.holdout, h, y0_hat, s_hat)
        hold_rng = np.random.default_rng(hold_ss)
        hold_w = np.ones(len(hold.t))
        hold_pick = np.arange(len(hold.t))

    clock = time.perf_counter()

    def elapsed() -> float:
        return (time.perf_counter() - clock) * 1000.0

    w = np.ones(nt)
    pick = np.arange(nt)
    cur = work.metric(spec, pick)
    if not cur.finite:
        raise ValueError("metric is infinite on the audit data")
    hold_rep = hold.metric(spec, hold_pick) if hold else None
    trace = [TraceRecord(0, cur.gap, hold_rep.gap if hold else math.nan, 0.0, True, elapsed())]
    best, best_w, best_pick = cur, w.copy(), pick
    status, message, bad = "max_iters", "", 0

    for it in range(1, cfg.max_iters + 1):
        try:
            k = work.constants(pick, cfg.clamp)
            psi = work.psi(spec, k)
        except (InfluenceEstimationError, EmptyConditioningError) as exc:
            status, message = "failed", str(exc)
            break
        direction = steepest_direction(psi, w)
        if direction.stationary:
            status = "stationary"
            break
        d = _sign(cur, spec) * psi
        eps = shrink_step(w, d, cfg.step_eps, cfg.weight_floor)
        w = np.maximum(w * (1.0 - eps * d), cfg.weight_floor)
        pick = draw_indices(w, count, rng)
        try:
            cur = work.metric(spec, pick)
        except EmptyConditioningError as exc:
            status, message = "failed", str(exc)
            break
        hold_gap = math.nan
        if hold:
            hd = _sign(cur, spec) * influence_values(spec, hold.h0, hold.y0, hold.s0, k)
            hold_w = np.maximum(hold_w * (1.0 - eps * hd), cfg.weight_floor)
            hold_pick = draw_indices(hold_w, len(hold.t), hold_rng)
            try:
                hold_gap = hold.metric(spec, hold_pick).gap
            except EmptyConditioningError:
                pass
        improved = cur.finite and objective(cur) < objective(best) - IMPROVE_TOL
        trace.append(TraceRecord(it, cur.gap, hold_gap, eps, improved, elapsed()))
        if improved:
            best, best_w, best_pick, bad = cur, w.copy(), pick, 0
        else:
            bad += 1
            if bad > cfg.patience:
                status = "converged"
                break

    samples = AuditDataset.concat([data.subset(work.t[best_pick]).with_weights(np.ones(len(best_pick))), data.subset(work.b)])
    return DescentResult(best_w, samples, trace, status, best, work.t, message)


def exact_descent(
    pop: ExactPopulation,
    h: Scorer,
    spec: MetricSpec,
    cfg: DescentConfig = DescentConfig(),
) -> tuple[EmpiricalDistribution, list[TraceRecord], str]:
    """Deterministic descent on the target input distribution of a finite population.

    Update: q <- max(q * (1 - eps * sign(M) * psi), floor), renormalised. A
    step that makes the metric infinite is retried with eps halved (up to 20
    times). Returns the best distribution, the trace and a status.
    """
    q = pop.p0
    cur = metric_exact(spec, pop, h, override_p0=q)
    if not cur.finite:
        raise ValueError("metric is infinite at P0")
    clock = time.perf_counter()
    trace = [TraceRecord(0, cur.gap, wall_ms=0.0)]
    best, best_q = cur, q
    status, bad = "max_iters", 0
    for it in range(1, cfg.max_iters + 1):
        y0, s_hat = exact_scorers(pop, q)
        k = constants_exact(pop, h, q, cfg.clamp)
        X = q.support
        psi = influence_values(spec, h.score_many(X), y0.score_many(X), s_hat.score_many(X), k)
        if steepest_direction(psi, q.probs).stationary:
            status = "stationary"
            break
        d = _sign(cur, spec) * psi
        eps = cfg.step_eps
        for _ in range(21):
            nq = np.maximum(q.probs * (1.0 - eps * d), cfg.weight_floor)
            cand = EmpiricalDistribution(X, nq / nq.sum())
            rep = metric_exact(spec, pop, h, override_p0=cand)
            if rep.finite:
                break
            eps /= 2
        else:
            status = "failed"
            break
        q, cur = cand, rep
        improved = objective(cur) < objective(best) - IMPROVE_TOL
        trace.append(TraceRecord(it, cur.gap, math.nan, eps, improved, (time.perf_counter() - clock) * 1000.0))
        if improved:
            best, best_q, bad = cur, q, 0
        else:
            bad += 1
            if bad > cfg.patience:
                status = "converged"
                break
    return best_q, trace, status


@dataclass(frozen=True)
class Diagnostic:
    status: str  # reconcilable | irreconcilable | inapplicable
    message: str

    @property
    def flagged(self) -> bool:
        return self.status == "irreconcilable"


def irreconcilability_check(gap: float, threshold: float, spec: MetricSpec) -> Diagnostic:
    """Flag a residual gap that no target-group input distribution can remove."""
    kinds = {c.kind for _, c in spec.leaves()}
    if kinds & {"SP", "DA"}:
        return Diagnostic(
            "inapplicable",
            f"{spec.name}: check does not apply; counterfactual distributions always attain zero for this metric",
        )
    if abs(gap) > threshold:
        return Diagnostic(
            "irreconcilable",
            f"{spec.name}: residual gap {gap:.4f} exceeds {threshold:g}; the outcome conditionals "
            "Pr(Y|X, S) differ between groups, so no change of target-group inputs removes this disparity",
        )
    return Diagnostic("reconcilable", f"{spec.name}: reconcilable at threshold {threshold:g} (gap {gap:.4f})")


def write_trace(trace: list[TraceRecord], path: str | Path, timing: bool = False) -> None:
    """Write the per-iteration trace; ``wall_ms`` is blank unless ``timing``."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["iteration", "metric_working", "metric_holdout", "eps_used", "accepted", "wall_ms"])
        for r in trace:
            wr.writerow([
                r.iteration,
                repr(float(r.metric_working)),
                "" if math.isnan(r.metric_holdout) else repr(float(r.metric_holdout)),
                repr(float(r.eps_used)),
                int(r.accepted),
                f"{r.wall_ms:.3f}" if timing else "",
            ])


def write_weights(result: DescentResult, path: str | Path) -> None:
    """(row_index, weight) pairs indexed by rows of the input dataset."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["row_index", "weight"])
        for i, w in zip(result.target_rows, result.final_weights):
            wr.writerow([int(i), repr(float(w))])
