"""Closed-form influence functions of the disparity metrics and their numeric oracle."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import AuditDataset, EmpiricalDistribution, ExactPopulation, Schema
from .disparity import MetricSpec, metric_exact
from .models import Scorer, bayes_group_posterior

DEFAULT_CLAMP = 1e-6

# constant -> metrics that divide by it
_BLOCKS = {"mu0": ("FNR", "FPR"), "mu_hat0": ("FDR",), "mu_hat1": ("DA",)}


class InfluenceEstimationError(ValueError):
    pass


@dataclass(frozen=True)
class InfluenceConstants:
    mu0: float
    mu_hat0: float
    mu_hat1: float
    gamma_01: float
    gamma_10: float
    nu_01: float
    da_mean: float
    clamp: float = DEFAULT_CLAMP
    failed: dict = field(default_factory=dict)

    def check(self, spec: MetricSpec) -> None:
        for _, leaf in spec.leaves():
            for const, why in self.failed.items():
                if leaf.kind in _BLOCKS.get(const, ()):
                    raise InfluenceEstimationError(f"{leaf.name} influence undefined: {why}")


def _clip(a, clamp):
    return np.clip(np.asarray(a, dtype=float), clamp, 1.0 - clamp)


def constants_from_arrays(
    h0: np.ndarray,
    y0: np.ndarray,
    s0: np.ndarray,
    w0: np.ndarray,
    h1: np.ndarray,
    w1: np.ndarray,
    clamp: float = DEFAULT_CLAMP,
) -> InfluenceConstants:
    """Constants as weighted means of (clamped) scores over the target group.

    ``h0, y0, s0`` are h, y0_hat and s_hat at the target points with masses
    ``w0``; ``h1, w1`` give h over the baseline group.
    """
    w0 = np.asarray(w0, dtype=float)
    w1 = np.asarray(w1, dtype=float)
    W0, W1 = w0.sum(), w1.sum()
    if not W0 > 0:
        raise InfluenceEstimationError("target group has zero total weight")
    failed = {}
    raw_h0 = np.asarray(h0, dtype=float)
    hc, yc, sc = _clip(h0, clamp), _clip(y0, clamp), _clip(s0, clamp)
    mu0 = float(w0 @ yc / W0)
    mu_hat0 = float(w0 @ hc / W0)
    if not (w0 @ raw_h0) / W0 >= clamp:
        failed["mu_hat0"] = "target group has no predicted positives (empty conditioning event)"
    if W1 > 0:
        mu_hat1 = float(w1 @ _clip(h1, clamp) / W1)
    else:
        mu_hat1 = math.nan
        failed["mu_hat1"] = "baseline group has zero total weight"
    gamma_01 = float(w0 @ ((1 - hc) * yc) / W0 / mu0)
    gamma_10 = float(w0 @ (hc * (1 - yc)) / W0 / (1 - mu0))
    nu_01 = float(w0 @ (hc * (1 - yc)) / W0 / mu_hat0)
    da_mean = float(w0 @ np.log((1 - sc) / sc) / W0)
    return InfluenceConstants(mu0, mu_hat0, mu_hat1, gamma_01, gamma_10, nu_01, da_mean, clamp, failed)


def estimate_constants(
    data: AuditDataset,
    h: Scorer,
    y0_hat: Scorer,
    s_hat: Scorer,
    clamp: float = DEFAULT_CLAMP,
    spec: MetricSpec | None = None,
) -> InfluenceConstants:
    """Estimate the constants from weighted samples using soft scores."""
    t, b = data.group(0), data.group(1)
    if len(t) == 0:
        raise InfluenceEstimationError("target group is empty")
    hs = h.score_rows(data)
    Xt = data.X[t]
    k = constants_from_arrays(
        hs[t], y0_hat.score_many(Xt), s_hat.score_many(Xt), data.weights[t], hs[b], data.weights[b], clamp
    )
    if spec is not None:
        k.check(spec)
    return k


def exact_scorers(pop: ExactPopulation, p0: EmpiricalDistribution | None = None):
    """(y0_hat, s_hat) implied exactly by a population (s_hat by Bayes' rule)."""
    from .models import TableScorer

    p0 = pop.p0 if p0 is None else p0
    y0 = TableScorer(pop.cond0)
    s_hat = bayes_group_posterior(p0.as_dict(), pop.p1.as_dict(), pop.ps1)
    return y0, s_hat


def constants_exact(
    pop: ExactPopulation,
    h: Scorer,
    p0: EmpiricalDistribution | None = None,
    clamp: float = DEFAULT_CLAMP,
) -> InfluenceConstants:
    p0 = pop.p0 if p0 is None else p0
    y0, s_hat = exact_scorers(pop, p0)
    return constants_from_arrays(
        h.score_many(p0.support),
        y0.score_many(p0.support),
        s_hat.score_many(p0.support),
        p0.probs,
        h.score_many(pop.p1.support),
        pop.p1.probs,
        clamp,
    )


def influence_values(
    spec: MetricSpec,
    hx: np.ndarray,
    y0x: np.ndarray,
    sx: np.ndarray,
    k: InfluenceConstants,
) -> np.ndarray:
    """Vectorised influence function at points with scores ``hx, y0x, sx``."""
    k.check(spec)
    if spec.kind == "compound":
        out = np.zeros(len(np.atleast_1d(hx)))
        for w, c in spec.components:
            out = out + w * influence_values(c, hx, y0x, sx, k)
        return out
    h = _clip(hx, k.clamp)
    y0 = _clip(y0x, k.clamp)
    if spec.kind == "SP":
        return -h + k.mu_hat0
    if spec.kind == "FDR":
        return (h * (1 - y0) - k.nu_01 * h) / k.mu_hat0
    if spec.kind == "FNR":
        return ((1 - h) * y0 - k.gamma_01 * y0) / k.mu0
    if spec.kind == "FPR":
        return (h * (1 - y0) - k.gamma_10 * (1 - y0)) / (1 - k.mu0)
    if spec.kind == "DA":
        m0, m1 = k.mu_hat0, k.mu_hat1
        lor = math.log(m0 * (1 - m1) / ((1 - m0) * m1))
        out = lor * (h - m0)
        if spec.lam:
            s = _clip(sx, k.clamp)
            out = out + spec.lam * (np.log((1 - s) / s) - k.da_mean)
        return out
    raise ValueError(spec.kind)


def influence_at(
    spec: MetricSpec,
    x: Sequence[int],
    h: Scorer,
    y0_hat: Scorer,
    s_hat: Scorer,
    k: InfluenceConstants,
) -> float:
    X = np.asarray([x], dtype=np.int64)
    return float(influence_values(spec, h.score_many(X), y0_hat.score_many(X), s_hat.score_many(X), k)[0])


@dataclass
class Direction:
    values: np.ndarray | None
    norm: float
    stationary: bool

    @property
    def status(self) -> str:
        return "stationary" if self.stationary else "ok"


STATIONARY_TOL = 1e-12


def steepest_direction(psi: np.ndarray, probs: np.ndarray) -> Direction:
    """Unit-second-moment steepest-descent direction -psi / sqrt(E[psi^2])."""
    psi = np.asarray(psi, dtype=float)
    p = np.asarray(probs, dtype=float)
    p = p / p.sum()
    norm = math.sqrt(float(p @ (psi * psi)))
    if norm <= STATIONARY_TOL:
        return Direction(None, norm, True)
    return Direction(-psi / norm, norm, False)


@dataclass
class InfluenceProfile:
    spec: MetricSpec
    constants: InfluenceConstants
    support: EmpiricalDistribution
    psi: np.ndarray
    direction: Direction

    def write(self, path: str | Path, schema: Schema) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(list(schema.names) + ["weight", "psi", "direction"])
            f = self.direction.values
            for i, x in enumerate(self.support.support):
                wr.writerow(
                    list(schema.label(x))
                    + [repr(float(self.support.probs[i])), repr(float(self.psi[i])), "" if f is None else repr(float(f[i]))]
                )


def influence_profile(
    spec: MetricSpec,
    dist: EmpiricalDistribution,
    h: Scorer,
    y0_hat: Scorer,
    s_hat: Scorer,
    k: InfluenceConstants,
) -> InfluenceProfile:
    """psi and the normalised direction over the support of ``dist``."""
    X = dist.support
    psi = influence_values(spec, h.score_many(X), y0_hat.score_many(X), s_hat.score_many(X), k)
    return InfluenceProfile(spec, k, dist, psi, steepest_direction(psi, dist.probs))


def exact_profile(spec: MetricSpec, pop: ExactPopulation, h: Scorer, p0=None, clamp: float = DEFAULT_CLAMP) -> InfluenceProfile:
    p0 = pop.p0 if p0 is None else p0
    y0, s_hat = exact_scorers(pop, p0)
    k = constants_exact(pop, h, p0, clamp)
    return influence_profile(spec, p0, h, y0, s_hat, k)


def perturb_toward(p0: EmpiricalDistribution, x: Sequence[int], eps: float) -> EmpiricalDistribution:
    """(1 - eps) * p0 + eps * delta_x."""
    mass = {k: (1 - eps) * v for k, v in p0.as_dict().items()}
    key = tuple(int(v) for v in x)
    mass[key] = mass.get(key, 0.0) + eps
    return EmpiricalDistribution.from_dict(mass)


def numeric_influence(
    spec: MetricSpec,
    pop: ExactPopulation,
    h: Scorer,
    x: Sequence[int],
    eps: float,
) -> float:
    """Difference quotient [M((1-eps)P0 + eps delta_x) - M(P0)] / eps."""
    if not 0 < eps <= 0.1:
        raise ValueError("eps must lie in (0, 0.1]")
    base = metric_exact(spec, pop, h)
    pert = metric_exact(spec, pop, h, override_p0=perturb_toward(pop.p0, x, eps))
    if not (base.finite and pert.finite):
        raise InfluenceEstimationError("metric is infinite at the perturbed distribution")
    return (pert.gap - base.gap) / eps
