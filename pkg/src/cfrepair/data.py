"""Audit datasets, empirical distributions and weighted resampling."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Sequence, TextIO

import numpy as np

PROB_ATOL = 1e-9

FeatureVector = tuple[int, ...]


class SchemaError(ValueError):
    """Raised when tabular input does not match the declared column roles."""


def _value_key(value: str):
    try:
        return (0, float(value), value)
    except ValueError:
        return (1, 0.0, value)


@dataclass(frozen=True)
class Schema:
    """Feature names, the level labels of each feature and optional bin edges.

    Codes are positions in ``levels[j]``. Levels are kept in sorted order
    (numeric where the raw values parse as numbers) so that code distances
    follow the natural ordering of binned or 0/1 columns.
    """

    names: tuple[str, ...]
    levels: tuple[tuple[str, ...], ...]
    edges: tuple[tuple[float, ...] | None, ...] = ()

    def __post_init__(self):
        if len(self.names) != len(self.levels):
            raise SchemaError("names and levels differ in length")
        if len(set(self.names)) != len(self.names):
            raise SchemaError("duplicate feature names")
        if not self.edges:
            object.__setattr__(self, "edges", (None,) * len(self.names))

    @property
    def d(self) -> int:
        return len(self.names)

    @property
    def cardinalities(self) -> tuple[int, ...]:
        return tuple(len(lv) for lv in self.levels)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise SchemaError(f"unknown feature {name!r}") from None

    def check(self, X: np.ndarray) -> None:
        if X.ndim != 2 or X.shape[1] != self.d:
            raise SchemaError(f"expected {self.d} feature columns, got shape {X.shape}")
        if X.size and (X.min() < 0 or np.any(X.max(axis=0) >= np.array(self.cardinalities))):
            raise SchemaError("feature code outside declared cardinality")

    def label(self, x: Sequence[int]) -> tuple[str, ...]:
        return tuple(self.levels[j][int(c)] for j, c in enumerate(x))

    def encode_value(self, j: int, raw: str) -> int:
        levels = self.levels[j]
        if raw in levels:
            return levels.index(raw)
        edges = self.edges[j]
        if edges is not None:
            try:
                v = float(raw)
            except ValueError:
                pass
            else:
                return int(np.searchsorted(np.asarray(edges[1:-1]), v, side="right"))
        try:  # "1" vs "1.0"
            v = float(raw)
            for k, lv in enumerate(levels):
                if _value_key(lv)[0] == 0 and float(lv) == v:
                    return k
        except ValueError:
            pass
        raise SchemaError(f"value {raw!r} is not a level of feature {self.names[j]!r}")

    def drop(self, names: Iterable[str]) -> tuple["Schema", list[int]]:
        """Sub-schema without ``names``, and the kept column indices."""
        drop = set(names)
        keep = [j for j, n in enumerate(self.names) if n not in drop]
        sub = Schema(
            tuple(self.names[j] for j in keep),
            tuple(self.levels[j] for j in keep),
            tuple(self.edges[j] for j in keep),
        )
        return sub, keep

    def to_dict(self) -> dict:
        return {
            "names": list(self.names),
            "levels": [list(lv) for lv in self.levels],
            "edges": [list(e) if e is not None else None for e in self.edges],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Schema":
        edges = d.get("edges") or [None] * len(d["names"])
        return cls(
            tuple(d["names"]),
            tuple(tuple(str(v) for v in lv) for lv in d["levels"]),
            tuple(tuple(e) if e is not None else None for e in edges),
        )

    @classmethod
    def binary(cls, names: Sequence[str]) -> "Schema":
        return cls(tuple(names), tuple(("0", "1") for _ in names))


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class AuditDataset:
    """Rows of (x, y, s) with per-row sampling weights.

    ``scores`` holds an optional per-row score column (the black-box output
    delivered alongside the data).
    """

    schema: Schema
    X: np.ndarray
    y: np.ndarray
    s: np.ndarray
    weights: np.ndarray | None = None
    scores: np.ndarray | None = None
    score_name: str | None = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.int64).reshape(-1, self.schema.d)
        n = X.shape[0]
        y = np.asarray(self.y, dtype=np.int64).reshape(-1)
        s = np.asarray(self.s, dtype=np.int64).reshape(-1)
        w = np.ones(n) if self.weights is None else np.asarray(self.weights, dtype=float).reshape(-1)
        if not (len(y) == len(s) == len(w) == n):
            raise SchemaError("row arrays differ in length")
        self.schema.check(X)
        if np.any((y != 0) & (y != 1)) or np.any((s != 0) & (s != 1)):
            raise SchemaError("y and s must be binary")
        if np.any(~np.isfinite(w)) or np.any(w < 0):
            raise ValueError("weights must be finite and nonnegative")
        object.__setattr__(self, "X", _frozen(X))
        object.__setattr__(self, "y", _frozen(y))
        object.__setattr__(self, "s", _frozen(s))
        object.__setattr__(self, "weights", _frozen(w))
        if self.scores is not None:
            sc = np.asarray(self.scores, dtype=float).reshape(-1)
            if len(sc) != n:
                raise SchemaError("score column length mismatch")
            object.__setattr__(self, "scores", _frozen(sc))

    def __len__(self) -> int:
        return self.X.shape[0]

    def group(self, g: int) -> np.ndarray:
        """Row indices of group ``g``."""
        return np.flatnonzero(self.s == g)

    def subset(self, idx) -> "AuditDataset":
        idx = np.asarray(idx)
        return AuditDataset(
            self.schema,
            self.X[idx],
            self.y[idx],
            self.s[idx],
            self.weights[idx],
            None if self.scores is None else self.scores[idx],
            self.score_name,
        )

    def with_weights(self, weights) -> "AuditDataset":
        return AuditDataset(self.schema, self.X, self.y, self.s, weights, self.scores, self.score_name)

    def with_groups_swapped(self) -> "AuditDataset":
        return AuditDataset(self.schema, self.X, self.y, 1 - self.s, self.weights, self.scores, self.score_name)

    def require_groups(self) -> None:
        if not np.any(self.s == 0) or self.weights[self.s == 0].sum() <= 0:
            raise SchemaError("empty target group")
        if not np.any(self.s == 1) or self.weights[self.s == 1].sum() <= 0:
            raise SchemaError("empty baseline group")

    @staticmethod
    def concat(parts: Sequence["AuditDataset"]) -> "AuditDataset":
        first = parts[0]
        has_scores = all(p.scores is not None for p in parts)
        return AuditDataset(
            first.schema,
            np.concatenate([p.X for p in parts]),
            np.concatenate([p.y for p in parts]),
            np.concatenate([p.s for p in parts]),
            np.concatenate([p.weights for p in parts]),
            np.concatenate([p.scores for p in parts]) if has_scores else None,
            first.score_name,
        )


@dataclass(frozen=True)
class SchemaSpec:
    """Column roles for delimited input.

    Every column not named here is a feature. ``bins`` maps a continuous
    feature to its equal-frequency bin count.
    """

    label: str = "y"
    group: str = "s"
    weight: str | None = None
    score: str | None = None
    bins: Mapping[str, int] = field(default_factory=dict)
    drop: tuple[str, ...] = ()


def _read_rows(source: TextIO | str | Path) -> tuple[list[str], list[list[str]]]:
    if isinstance(source, (str, Path)):
        with open(source, newline="") as fh:
            text = fh.read()
    else:
        text = source.read()
    lines = text.splitlines()
    if not lines:
        raise SchemaError("empty input")
    delim = "\t" if "\t" in lines[0] and "," not in lines[0] else ","
    reader = csv.reader(io.StringIO(text), delimiter=delim)
    rows = [r for r in reader if r and not (len(r) == 1 and not r[0].strip())]
    header = [h.strip() for h in rows[0]]
    body = rows[1:]
    for k, r in enumerate(body, start=2):
        if len(r) != len(header):
            raise SchemaError(f"line {k}: expected {len(header)} cells, got {len(r)}")
        if any(c.strip() == "" for c in r):
            raise SchemaError(f"line {k}: missing cell")
    return header, [[c.strip() for c in r] for r in body]


def _binary(col: list[str], name: str) -> np.ndarray:
    out = np.empty(len(col), dtype=np.int64)
    for i, v in enumerate(col):
        try:
            f = float(v)
        except ValueError:
            raise SchemaError(f"column {name!r} has non-binary value {v!r}") from None
        if f not in (0.0, 1.0):
            raise SchemaError(f"column {name!r} has non-binary value {v!r}")
        out[i] = int(f)
    return out


def _quantile_edges(values: np.ndarray, bins: int) -> tuple[float, ...]:
    qs = np.quantile(values, np.linspace(0, 1, bins + 1))
    edges = np.unique(qs)
    if len(edges) < 2:
        edges = np.array([edges[0], edges[0]])
    return tuple(float(e) for e in edges)


def load_dataset(
    source: TextIO | str | Path,
    spec: SchemaSpec = SchemaSpec(),
    schema: Schema | None = None,
) -> AuditDataset:
    """Parse a delimited table (comma or tab, with header) into a dataset.

    When ``schema`` is given, features are encoded against it (used for
    holdout files and re-reading emitted samples); otherwise a schema is
    inferred, binning the columns listed in ``spec.bins``.
    """
    header, body = _read_rows(source)
    seen = set()
    for h in header:
        if h in seen:
            raise SchemaError(f"duplicate header name {h!r}")
        seen.add(h)
    roles = {"label": spec.label, "group": spec.group, "weight": spec.weight, "score": spec.score}
    for role, col in roles.items():
        if col is not None and col not in header:
            raise SchemaError(f"missing {role} column {col!r}")
    cols = {h: [r[k] for r in body] for k, h in enumerate(header)}
    reserved = {c for c in roles.values() if c is not None} | set(spec.drop)
    feat_names = [h for h in header if h not in reserved]

    y = _binary(cols[spec.label], spec.label)
    s = _binary(cols[spec.group], spec.group)
    w = None
    if spec.weight is not None:
        try:
            w = np.array([float(v) for v in cols[spec.weight]])
        except ValueError:
            raise SchemaError(f"non-numeric weight in column {spec.weight!r}") from None
    scores = None
    if spec.score is not None:
        try:
            scores = np.array([float(v) for v in cols[spec.score]])
        except ValueError:
            raise SchemaError(f"non-numeric score in column {spec.score!r}") from None
        if np.any((scores < 0) | (scores > 1)):
            raise SchemaError(f"scores in column {spec.score!r} must lie in [0, 1]")

    if schema is None:
        levels, edges = [], []
        for name in feat_names:
            raw = cols[name]
            if name in spec.bins:
                try:
                    vals = np.array([float(v) for v in raw])
                except ValueError:
                    raise SchemaError(f"binned feature {name!r} is not numeric") from None
                e = _quantile_edges(vals, int(spec.bins[name]))
                nb = max(len(e) - 1, 1)
                levels.append(tuple(
                    f"[{e[k]:g},{e[k + 1]:g}{']' if k == nb - 1 else ')'}" for k in range(nb)
                ))
                edges.append(e)
            else:
                levels.append(tuple(sorted(set(raw), key=_value_key)))
                edges.append(None)
        schema = Schema(tuple(feat_names), tuple(levels), tuple(edges))
    else:
        missing = [n for n in schema.names if n not in feat_names]
        if missing:
            raise SchemaError(f"missing feature column {missing[0]!r}")
        feat_names = list(schema.names)

    X = np.empty((len(body), schema.d), dtype=np.int64)
    for j, name in enumerate(feat_names):
        enc = {}
        for i, v in enumerate(cols[name]):
            if v not in enc:
                enc[v] = schema.encode_value(j, v)
            X[i, j] = enc[v]

    data = AuditDataset(schema, X, y, s, w, scores, spec.score)
    data.require_groups()
    return data


def write_dataset(data: AuditDataset, dest: TextIO | str | Path, label: str = "y", group: str = "s") -> None:
    """Write rows with original level labels; weights only when non-uniform."""
    header = list(data.schema.names) + [label, group]
    if data.scores is not None:
        header.append(data.score_name or "score")
    with_w = bool(np.any(data.weights != 1.0))
    if with_w:
        header.append("weight")

    def _write(fh):
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        lv = data.schema.levels
        for i in range(len(data)):
            row = [lv[j][c] for j, c in enumerate(data.X[i])] + [int(data.y[i]), int(data.s[i])]
            if data.scores is not None:
                row.append(repr(float(data.scores[i])))
            if with_w:
                row.append(repr(float(data.weights[i])))
            wr.writerow(row)

    if isinstance(dest, (str, Path)):
        with open(dest, "w", newline="") as fh:
            _write(fh)
    else:
        _write(dest)


def split_dataset(data: AuditDataset, fractions: Sequence[float], rng: np.random.Generator) -> list[AuditDataset]:
    """Random disjoint split by row fractions (e.g. 0.3/0.5/0.2 for train/audit/holdout)."""
    fr = np.asarray(fractions, dtype=float)
    if np.any(fr <= 0) or abs(fr.sum() - 1.0) > 1e-9:
        raise ValueError("split fractions must be positive and sum to 1")
    perm = rng.permutation(len(data))
    cuts = np.round(np.cumsum(fr)[:-1] * len(data)).astype(int)
    return [data.subset(np.sort(part)) for part in np.split(perm, cuts)]


@dataclass(frozen=True, eq=False)
class EmpiricalDistribution:
    """Finite distribution over distinct feature vectors (lexicographic order)."""

    support: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        sup = np.asarray(self.support, dtype=np.int64)
        if sup.ndim == 1:
            sup = sup.reshape(len(sup), -1)
        p = np.asarray(self.probs, dtype=float).reshape(-1)
        if sup.shape[0] != len(p):
            raise ValueError("support and probs differ in length")
        if len(p) == 0:
            raise ValueError("empty support")
        if np.any(p < 0) or abs(p.sum() - 1.0) > PROB_ATOL:
            raise ValueError(f"probabilities must be nonnegative and sum to 1 (sum={p.sum()!r})")
        order = np.lexsort(sup.T[::-1])
        sup, p = sup[order], p[order]
        if len(sup) > 1 and np.any(np.all(sup[1:] == sup[:-1], axis=1)):
            raise ValueError("support points must be distinct")
        object.__setattr__(self, "support", _frozen(sup))
        object.__setattr__(self, "probs", _frozen(p))

    def __len__(self) -> int:
        return len(self.probs)

    @cached_property
    def index(self) -> dict[FeatureVector, int]:
        return {tuple(int(v) for v in row): i for i, row in enumerate(self.support)}

    def points(self) -> list[FeatureVector]:
        return list(self.index)

    def prob(self, x: Sequence[int]) -> float:
        i = self.index.get(tuple(int(v) for v in x))
        return 0.0 if i is None else float(self.probs[i])

    def as_dict(self) -> dict[FeatureVector, float]:
        return {x: float(self.probs[i]) for x, i in self.index.items()}

    def mean(self, f: np.ndarray) -> float:
        return float(self.probs @ f)

    @classmethod
    def from_dict(cls, mapping: Mapping[Sequence[int], float]) -> "EmpiricalDistribution":
        pts = [tuple(k) for k in mapping]
        return cls(np.array(pts, dtype=np.int64), np.array([mapping[k] for k in mapping], dtype=float))

    @classmethod
    def from_points(cls, X: np.ndarray, weights: np.ndarray | None = None, keep_zero: bool = False) -> "EmpiricalDistribution":
        X = np.asarray(X, dtype=np.int64)
        w = np.ones(len(X)) if weights is None else np.asarray(weights, dtype=float)
        total = w.sum()
        if not total > 0:
            raise ValueError("zero total weight")
        uniq, inv = np.unique(X, axis=0, return_inverse=True)
        mass = np.bincount(inv.reshape(-1), weights=w, minlength=len(uniq)) / total
        if not keep_zero:
            uniq, mass = uniq[mass > 0], mass[mass > 0]
        mass = mass / mass.sum()
        return cls(uniq, mass)

    def restricted_to(self, support: np.ndarray) -> np.ndarray:
        """Probabilities of each row of ``support`` (zero where absent)."""
        return np.array([self.prob(x) for x in support])

    def tv_distance(self, other: "EmpiricalDistribution") -> float:
        keys = set(self.index) | set(other.index)
        return 0.5 * sum(abs(self.prob(k) - other.prob(k)) for k in keys)


def empirical_distribution(data: AuditDataset, group: int) -> EmpiricalDistribution:
    """Weighted distribution of x within group ``group``."""
    idx = data.group(group)
    w = data.weights[idx]
    if len(idx) == 0 or not w.sum() > 0:
        raise ValueError(f"group {group} has zero total weight")
    return EmpiricalDistribution.from_points(data.X[idx], w)


def draw_indices(weights, count: int, rng: np.random.Generator) -> np.ndarray:
    """``count`` i.i.d. positions drawn with probability proportional to ``weights``."""
    w = np.asarray(weights, dtype=float).reshape(-1)
    if count < 1:
        raise ValueError("count must be positive")
    if np.any(~np.isfinite(w)) or np.any(w < 0):
        raise ValueError("weights must be finite and nonnegative")
    total = w.sum()
    if not total > 0:
        raise ValueError("all-zero weights")
    cdf = np.cumsum(w / total)
    u = rng.random(count) * cdf[-1]
    pick = np.searchsorted(cdf, u, side="right")
    # floating ties can land on a zero-weight row: snap to the next positive one
    pos = np.flatnonzero(w > 0)
    return pos[np.minimum(np.searchsorted(pos, pick), len(pos) - 1)]


def resample(
    data: AuditDataset,
    group: int,
    weights,
    count: int,
    rng: np.random.Generator,
) -> AuditDataset:
    """Draw ``count`` rows of ``group`` i.i.d. with replacement, proportional to ``weights``.

    ``weights`` may cover every row of ``data`` (other-group entries are
    ignored) or only the group's rows, in row order. Drawn rows keep their
    labels and scores; their weights reset to 1.
    """
    idx = data.group(group)
    w = np.asarray(weights, dtype=float).reshape(-1)
    if len(w) == len(data):
        w = w[idx]
    elif len(w) != len(idx):
        raise ValueError("weights must cover all rows or the group's rows")
    pick = draw_indices(w, count, rng)
    return data.subset(idx[pick]).with_weights(np.ones(count))


@dataclass(frozen=True, eq=False)
class ExactPopulation:
    """Finite population: group input distributions, outcome conditionals, Pr(S=1)."""

    schema: Schema
    p0: EmpiricalDistribution
    p1: EmpiricalDistribution
    cond0: Mapping[FeatureVector, float]
    cond1: Mapping[FeatureVector, float]
    ps1: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.ps1 <= 1.0:
            raise ValueError("ps1 must lie in [0, 1]")
        for x in self.union_support():
            for name, cond in (("cond0", self.cond0), ("cond1", self.cond1)):
                if x not in cond:
                    raise ValueError(f"{name} undefined at {x}")
                if not 0.0 <= cond[x] <= 1.0:
                    raise ValueError(f"{name} outside [0, 1] at {x}")

    def union_support(self) -> list[FeatureVector]:
        return sorted(set(self.p0.index) | set(self.p1.index))

    def with_p0(self, p0: EmpiricalDistribution) -> "ExactPopulation":
        return ExactPopulation(self.schema, p0, self.p1, self.cond0, self.cond1, self.ps1)

    def to_json(self) -> str:
        pts = []
        for x in self.union_support():
            pts.append({
                "x": list(x),
                "p0": self.p0.prob(x),
                "p1": self.p1.prob(x),
                "cond0": self.cond0[x],
                "cond1": self.cond1[x],
            })
        return json.dumps({"schema": self.schema.to_dict(), "ps1": self.ps1, "points": pts}, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "ExactPopulation":
        d = json.loads(text)
        schema = Schema.from_dict(d["schema"])
        p0 = {tuple(r["x"]): r["p0"] for r in d["points"] if r["p0"] > 0}
        p1 = {tuple(r["x"]): r["p1"] for r in d["points"] if r["p1"] > 0}
        c0 = {tuple(r["x"]): r["cond0"] for r in d["points"]}
        c1 = {tuple(r["x"]): r["cond1"] for r in d["points"]}
        return cls(schema, EmpiricalDistribution.from_dict(p0), EmpiricalDistribution.from_dict(p1), c0, c1, d["ps1"])

    def sample(self, n: int, rng: np.random.Generator, name_y: str = "y") -> AuditDataset:
        """Draw n rows: S ~ Bernoulli(ps1), X ~ P_s, Y ~ cond_s(X)."""
        s = (rng.random(n) < self.ps1).astype(np.int64)
        X = np.empty((n, self.schema.d), dtype=np.int64)
        y = np.empty(n, dtype=np.int64)
        for g, dist, cond in ((0, self.p0, self.cond0), (1, self.p1, self.cond1)):
            idx = np.flatnonzero(s == g)
            pick = rng.choice(len(dist), size=len(idx), p=dist.probs)
            X[idx] = dist.support[pick]
            pr = np.array([cond[tuple(int(v) for v in x)] for x in dist.support])
            y[idx] = (rng.random(len(idx)) < pr[pick]).astype(np.int64)
        return AuditDataset(self.schema, X, y, s)


def read_distribution(path: str | Path, schema: Schema) -> EmpiricalDistribution:
    """Read a ``features..., prob`` table written by :func:`write_distribution`."""
    header, body = _read_rows(path)
    if "prob" not in header:
        raise SchemaError("distribution file needs a 'prob' column")
    pos = [header.index(n) for n in schema.names]
    k = header.index("prob")
    mass: dict[FeatureVector, float] = {}
    for r in body:
        x = tuple(schema.encode_value(j, r[c]) for j, c in enumerate(pos))
        mass[x] = mass.get(x, 0.0) + float(r[k])
    total = sum(mass.values())
    return EmpiricalDistribution.from_dict({x: v / total for x, v in mass.items() if v > 0})


def write_distribution(dist: EmpiricalDistribution, schema: Schema, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(list(schema.names) + ["prob"])
        for x, p in zip(dist.support, dist.probs):
            wr.writerow(list(schema.label(x)) + [repr(float(p))])

