"""Discrete optimal transport and the randomized preprocessor built from a plan."""

from __future__ import annotations

import csv
import itertools
import warnings
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .data import EmpiricalDistribution, Schema, SchemaError
from .models import Scorer

MARGINAL_TOL = 1e-7
FORBID = "forbid"


class InfeasibleTransportError(ValueError):
    """No coupling satisfies the marginals and constraints.

    ``rows`` lists offending source indices; ``pairs`` lists constrained
    pairs implicated by the phase-1 certificate.
    """

    def __init__(self, message: str, rows: Sequence[int] = (), pairs: Sequence[tuple[int, int]] = (), certificate=None):
        super().__init__(message)
        self.rows = list(rows)
        self.pairs = list(pairs)
        self.certificate = certificate


# -- costs -------------------------------------------------------------------


@dataclass(frozen=True)
class CostSpec:
    base: str = "squared-euclidean"  # squared-euclidean | hamming | custom-table
    immutable_features: tuple[str, ...] = ()
    immutable_penalty: float | str = FORBID
    table: Mapping[tuple[tuple[int, ...], tuple[int, ...]], float] | None = None

    def __post_init__(self):
        if self.base not in ("squared-euclidean", "hamming", "custom-table"):
            raise ValueError(f"unknown cost base {self.base!r}")
        if self.base == "custom-table" and self.table is None:
            raise ValueError("custom-table cost needs a table")
        pen = self.immutable_penalty
        if pen != FORBID and not (isinstance(pen, (int, float)) and pen > 0):
            raise ValueError("immutable_penalty must be positive or 'forbid'")


def build_cost_matrix(support_p: np.ndarray, support_q: np.ndarray, spec: CostSpec, schema: Schema) -> np.ndarray:
    """Dense cost matrix; forbidden cells hold ``np.inf``."""
    A = np.asarray(support_p, dtype=np.int64).reshape(-1, schema.d)
    B = np.asarray(support_q, dtype=np.int64).reshape(-1, schema.d)
    if len(A) == 0 or len(B) == 0:
        raise ValueError("supports must be nonempty")
    if spec.base == "squared-euclidean":
        diff = (A[:, None, :] - B[None, :, :]).astype(float)
        C = np.sum(diff * diff, axis=2)
    elif spec.base == "hamming":
        C = np.sum(A[:, None, :] != B[None, :, :], axis=2).astype(float)
    else:
        C = np.empty((len(A), len(B)))
        for i, a in enumerate(A):
            for j, b in enumerate(B):
                key = (tuple(int(v) for v in a), tuple(int(v) for v in b))
                if key not in spec.table:
                    raise ValueError(f"custom cost table lacks pair {key}")
                C[i, j] = float(spec.table[key])
        if np.any(C < 0):
            raise ValueError("costs must be nonnegative")
    if spec.immutable_features:
        cols = [schema.index(n) for n in spec.immutable_features]
        differs = np.any(A[:, None, cols] != B[None, :, cols], axis=2)
        if spec.immutable_penalty == FORBID:
            C = np.where(differs, np.inf, C)
        else:
            top = float(C.max())
            if not spec.immutable_penalty > top:
                raise ValueError(f"penalty {spec.immutable_penalty} does not dominate the largest base cost {top}")
            C = np.where(differs, float(spec.immutable_penalty), C)
    dead = np.flatnonzero(np.all(np.isinf(C), axis=1))
    if len(dead):
        raise InfeasibleTransportError(f"source row {int(dead[0])} has no feasible destination", rows=dead.tolist())
    return C


# -- plans -------------------------------------------------------------------


@dataclass
class TransportPlan:
    p: np.ndarray
    q: np.ndarray
    gamma: np.ndarray
    objective: float
    u: np.ndarray | None = None
    v: np.ndarray | None = None
    rows: np.ndarray | None = None
    cols: np.ndarray | None = None
    pivots: int = 0

    @property
    def shape(self) -> tuple[int, int]:
        return self.gamma.shape

    def triplets(self, tol: float = 0.0) -> list[tuple[int, int, float]]:
        i, j = np.nonzero(self.gamma > tol)
        return [(int(a), int(b), float(self.gamma[a, b])) for a, b in zip(i, j)]

    def nnz(self, tol: float = 1e-15) -> int:
        return int(np.sum(self.gamma > tol))

    def marginal_error(self) -> float:
        return float(max(np.abs(self.gamma.sum(1) - self.p).max(), np.abs(self.gamma.sum(0) - self.q).max()))


def balance(p, tol: float = MARGINAL_TOL) -> np.ndarray:
    """Renormalise and push the rounding residual onto the largest entry."""
    p = np.asarray(p, dtype=float).reshape(-1)
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ValueError("marginals must be finite and nonnegative")
    if abs(p.sum() - 1.0) > tol:
        raise ValueError(f"marginal sums to {p.sum()!r}, not 1")
    p = p / p.sum()
    k = int(np.argmax(p))
    p[k] += 1.0 - p.sum()
    return p


def _big_m(C: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    forbidden = ~np.isfinite(C)
    finite = C[~forbidden]
    top = float(finite.max()) if finite.size else 0.0
    m, n = C.shape
    M = 1.0 + (m + n) * max(top, 0.0)
    return np.where(forbidden, M, C), forbidden


def _vogel(C: np.ndarray, p: np.ndarray, q: np.ndarray) -> list[tuple[int, int]]:
    """Vogel's approximation; returns m+n-1 basic cells forming a spanning tree."""
    m, n = C.shape
    s, d = p.copy(), q.copy()
    rows, cols = set(range(m)), set(range(n))
    basis = []

    def penalty(vals: np.ndarray) -> float:
        if len(vals) == 1:
            return float(vals[0])
        two = np.partition(vals, 1)[:2]
        return float(two[1] - two[0])

    while rows and cols:
        rl, cl = sorted(rows), sorted(cols)
        sub = C[np.ix_(rl, cl)]
        best = None  # (penalty, is_col, position)
        for a, i in enumerate(rl):
            pen = penalty(sub[a])
            if best is None or pen > best[0]:
                best = (pen, False, a)
        for b, j in enumerate(cl):
            pen = penalty(sub[:, b])
            if pen > best[0]:
                best = (pen, True, b)
        if best[1]:
            b = best[2]
            a = int(np.argmin(sub[:, b]))
        else:
            a = best[2]
            b = int(np.argmin(sub[a]))
        i, j = rl[a], cl[b]
        x = min(s[i], d[j])
        basis.append((i, j))
        s[i] -= x
        d[j] -= x
        if len(rows) == 1 and len(cols) == 1:
            rows.clear()
            cols.clear()
        elif len(rows) == 1:
            cols.discard(j)
        elif len(cols) == 1:
            rows.discard(i)
        elif s[i] <= d[j]:
            rows.discard(i)
            d[j] = max(d[j], 0.0)
        else:
            cols.discard(j)
    return basis


def _tree_flows(basis: list[tuple[int, int]], p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Solve the basic flows from the marginals by peeling leaves of the tree."""
    m, n = len(p), len(q)
    adj: list[set] = [set() for _ in range(m + n)]
    for i, j in basis:
        adj[i].add(m + j)
        adj[m + j].add(i)
    rem = np.concatenate([p, q]).astype(float)
    flow = {}
    leaves = deque(k for k in range(m + n) if len(adj[k]) == 1)
    while leaves:
        k = leaves.popleft()
        if len(adj[k]) != 1:
            continue
        o = adj[k].pop()
        adj[o].discard(k)
        x = rem[k]
        cell = (k, o - m) if k < m else (o, k - m)
        flow[cell] = x
        rem[o] -= x
        if len(adj[o]) == 1:
            leaves.append(o)
    return flow


def _potentials(basis, C, m, n):
    adj: list[list] = [[] for _ in range(m + n)]
    for i, j in basis:
        adj[i].append(m + j)
        adj[m + j].append(i)
    pot = np.full(m + n, np.nan)
    pot[0] = 0.0
    stack = [0]
    while stack:
        k = stack.pop()
        for o in adj[k]:
            if np.isnan(pot[o]):
                i, j = (k, o - m) if k < m else (o, k - m)
                pot[o] = C[i, j] - pot[k]
                stack.append(o)
    return pot[:m], pot[m:], adj


def _tree_path(adj, start: int, goal: int) -> list[int]:
    prev = {start: None}
    dq = deque([start])
    while dq:
        k = dq.popleft()
        if k == goal:
            break
        for o in adj[k]:
            if o not in prev:
                prev[o] = k
                dq.append(o)
    path = [goal]
    while prev[path[-1]] is not None:
        path.append(prev[path[-1]])
    return path[::-1]


def solve_transport(
    p,
    q,
    C,
    rows: np.ndarray | None = None,
    cols: np.ndarray | None = None,
    degenerate_limit: int = 50,
) -> TransportPlan:
    """Exact balanced transportation problem by the MODI simplex.

    Dantzig pricing with lowest-index ties; after ``degenerate_limit``
    consecutive degenerate pivots the rule switches to Bland's for the rest
    of the run. Forbidden cells (``inf``) get a big-M cost and must carry no
    mass at the optimum.
    """
    p, q = balance(p), balance(q)
    C = np.asarray(C, dtype=float)
    m, n = C.shape
    if (m, n) != (len(p), len(q)):
        raise ValueError("cost matrix shape does not match marginals")
    Cw, forbidden = _big_m(C)
    scale = max(1.0, float(np.abs(Cw).max()))
    tol = 1e-12 * scale

    basis = _vogel(Cw, p, q)
    flow = _tree_flows(basis, p, q)
    bland, streak, pivots = False, 0, 0
    limit = 50 * (m * n + m + n) + 1000
    while True:
        u, v, adj = _potentials(basis, Cw, m, n)
        red = Cw - u[:, None] - v[None, :]
        for i, j in basis:
            red[i, j] = 0.0
        neg = red < -tol
        if not np.any(neg):
            break
        if pivots >= limit:
            raise RuntimeError("transportation simplex exceeded its pivot limit")
        flat = np.flatnonzero(neg.ravel()) if bland else None
        k = int(flat[0]) if bland else int(np.argmin(red.ravel()))
        ei, ej = divmod(k, n)
        path = _tree_path(adj, ei, m + ej)
        cells = []
        for a, b in zip(path[:-1], path[1:]):
            cells.append((a, b - m) if a < m else (b, a - m))
        minus = cells[0::2]
        theta = min(flow[c] for c in minus)
        leave = min((c for c in minus if flow[c] <= theta), key=lambda c: c[0] * n + c[1])
        for c in minus:
            flow[c] -= theta
        for c in cells[1::2]:
            flow[c] += theta
        del flow[leave]
        flow[(ei, ej)] = theta
        basis = [c for c in basis if c != leave] + [(ei, ej)]
        pivots += 1
        streak = streak + 1 if theta <= 0.0 else 0
        if streak >= degenerate_limit:
            bland = True

    flow = _tree_flows(basis, p, q)
    gamma = np.zeros((m, n))
    for (i, j), x in flow.items():
        gamma[i, j] = max(x, 0.0)
    bad = forbidden & (gamma > 1e-9)
    if np.any(bad):
        r = np.flatnonzero(bad.any(axis=1))
        raise InfeasibleTransportError(f"marginals force mass onto forbidden cells from source row {int(r[0])}", rows=r.tolist())
    gamma[forbidden] = 0.0
    obj = float(np.sum(np.where(forbidden, 0.0, C) * gamma))
    u, v, _ = _potentials(basis, Cw, m, n)
    return TransportPlan(p, q, gamma, obj, u, v, rows, cols, pivots)


def dual_certificate_gap(plan: TransportPlan, C) -> tuple[float, float]:
    """(max dual infeasibility, max complementary-slackness violation) over allowed cells."""
    C = np.asarray(C, dtype=float)
    allowed = np.isfinite(C)
    red = np.where(allowed, C, 0.0) - plan.u[:, None] - plan.v[None, :]
    infeas = float(np.max(np.where(allowed, -red, -np.inf)))
    slack = float(np.max(np.where(allowed & (plan.gamma > 1e-12), np.abs(red), 0.0)))
    return max(infeas, 0.0), slack


# -- constrained transport ----------------------------------------------------


class _LPInfeasible(Exception):
    def __init__(self, y: np.ndarray):
        self.y = y


def _pivot(T: np.ndarray, r: int, c: int) -> None:
    T[r] /= T[r, c]
    col = T[:, c].copy()
    col[r] = 0.0
    T -= np.outer(col, T[r])


def _simplex_phase(T: np.ndarray, basis: list[int], ncols: int, tol: float) -> None:
    """Bland's-rule simplex on tableau T (last row = reduced costs, last col = rhs)."""
    rows = T.shape[0] - 1
    for _ in range(100000):
        cost = T[-1, :ncols]
        enter = np.flatnonzero(cost < -tol)
        if len(enter) == 0:
            return
        c = int(enter[0])
        col = T[:rows, c]
        ok = col > tol
        if not np.any(ok):
            raise RuntimeError("LP is unbounded")
        ratios = np.full(rows, np.inf)
        ratios[ok] = T[:rows, -1][ok] / col[ok]
        best = ratios.min()
        ties = np.flatnonzero(ratios <= best + tol * max(1.0, abs(best)))
        r = int(min(ties, key=lambda k: basis[k]))
        _pivot(T, r, c)
        basis[r] = c
    raise RuntimeError("simplex iteration limit reached")


def linprog_dense(A: np.ndarray, b: np.ndarray, c: np.ndarray, tol: float = 1e-10) -> tuple[np.ndarray, float]:
    """min c.x subject to A x = b, x >= 0 by a two-phase tableau simplex (Bland's rule).

    Raises ``_LPInfeasible`` carrying a Farkas vector y (y.A <= 0, y.b > 0).
    """
    A = np.array(A, dtype=float)
    b = np.array(b, dtype=float)
    neg = b < 0
    A[neg] *= -1
    b[neg] *= -1
    mrows, nvars = A.shape
    T = np.zeros((mrows + 1, nvars + mrows + 1))
    T[:mrows, :nvars] = A
    T[:mrows, nvars : nvars + mrows] = np.eye(mrows)
    T[:mrows, -1] = b
    T[-1, :nvars] = -A.sum(axis=0)
    T[-1, -1] = -b.sum()
    basis = list(range(nvars, nvars + mrows))
    _simplex_phase(T, basis, nvars + mrows, tol)
    if -T[-1, -1] > tol * max(1.0, float(b.sum())) * 100:
        # phase-1 duals: y = c1_B B^-1 read off the artificial columns
        y = -T[-1, nvars : nvars + mrows].copy() + 1.0
        y[neg] *= -1
        raise _LPInfeasible(y)
    # drive artificials out of the basis; drop redundant rows
    keep = []
    for r in range(mrows):
        if basis[r] >= nvars:
            cand = np.flatnonzero(np.abs(T[r, :nvars]) > tol)
            if len(cand):
                _pivot(T, r, int(cand[0]))
                basis[r] = int(cand[0])
                keep.append(r)
        else:
            keep.append(r)
    T2 = np.zeros((len(keep) + 1, nvars + 1))
    T2[:-1, :nvars] = T[keep, :nvars]
    T2[:-1, -1] = T[keep, -1]
    basis = [basis[r] for r in keep]
    T2[-1, :nvars] = c
    for r, j in enumerate(basis):
        T2[-1] -= c[j] * T2[r]
    _simplex_phase(T2, basis, nvars, tol)
    x = np.zeros(nvars)
    for r, j in enumerate(basis):
        x[j] = T2[r, -1]
    return np.maximum(x, 0.0), float(c @ x)


def all_pairs(m: int, cap: int | None = None) -> list[tuple[int, int]]:
    pairs = list(itertools.combinations(range(m), 2))
    if cap is not None and len(pairs) > cap:
        raise ValueError(f"{len(pairs)} pairs exceed the cap of {cap}")
    return pairs


def solve_transport_constrained(
    p,
    q,
    C,
    distance: Callable[[int, int], float],
    pairs: Sequence[tuple[int, int]],
    max_vars: int = 10000,
    rows: np.ndarray | None = None,
    cols: np.ndarray | None = None,
) -> TransportPlan:
    """Transport LP plus total-variation limits between the conditionals of listed source pairs.

    For each pair (i, l): 0.5 * sum_j |g_ij/p_i - g_lj/p_l| <= distance(i, l),
    linearised with auxiliaries t_j >= +-(g_ij/p_i - g_lj/p_l).
    """
    p, q = balance(p), balance(q)
    C = np.asarray(C, dtype=float)
    m, n = C.shape
    if not pairs:
        return solve_transport(p, q, C, rows, cols)
    if np.any(p <= 0):
        raise ValueError("constrained transport needs p > 0 on every source row")
    allowed = np.isfinite(C)
    cells = [(i, j) for i in range(m) for j in range(n) if allowed[i, j]]
    cid = {c: k for k, c in enumerate(cells)}
    ng, nt = len(cells), len(pairs) * n
    if ng + nt > max_vars:
        raise ValueError(f"{ng + nt} LP variables exceed the cap of {max_vars}")
    bounds = []
    for i, l in pairs:
        d = float(distance(i, l))
        if d < 0:
            raise ValueError("distances must be >= 0")
        bounds.append(d)
    nineq = 2 * nt + len(pairs)
    nvars = ng + nt + nineq
    neq = m + n - 1
    A = np.zeros((neq + nineq, nvars))
    b = np.zeros(neq + nineq)
    for (i, j), k in cid.items():
        A[i, k] = 1.0
        if j < n - 1:
            A[m + j, k] = 1.0
    b[:m] = p
    b[m:neq] = q[:-1]
    r = neq
    for kp, (i, l) in enumerate(pairs):
        for j in range(n):
            t = ng + kp * n + j
            for sgn in (1.0, -1.0):
                if (i, j) in cid:
                    A[r, cid[(i, j)]] = sgn / p[i]
                if (l, j) in cid:
                    A[r, cid[(l, j)]] = -sgn / p[l]
                A[r, t] = -1.0
                A[r, ng + nt + (r - neq)] = 1.0
                r += 1
        A[r, ng + kp * n : ng + (kp + 1) * n] = 1.0
        A[r, ng + nt + (r - neq)] = 1.0
        b[r] = 2.0 * bounds[kp]
        r += 1
    cost = np.zeros(nvars)
    for (i, j), k in cid.items():
        cost[k] = C[i, j]
    try:
        x, obj = linprog_dense(A, b, cost)
    except _LPInfeasible as exc:
        y = exc.y
        implicated = []
        r = neq
        for kp, pair in enumerate(pairs):
            block = y[r : r + 2 * n + 1]
            if np.any(np.abs(block) > 1e-9):
                implicated.append(tuple(pair))
            r += 2 * n + 1
        src = [i for i in range(m) if abs(y[i]) > 1e-9]
        raise InfeasibleTransportError(
            "transport constraints are infeasible" + (f"; violating pair {implicated[0]}" if implicated else ""),
            rows=src,
            pairs=implicated,
            certificate=y,
        ) from None
    gamma = np.zeros((m, n))
    for (i, j), k in cid.items():
        gamma[i, j] = x[k]
    return TransportPlan(p, q, gamma, float(np.sum(np.where(allowed, C, 0.0) * gamma)), None, None, rows, cols)


def pair_tv(plan: TransportPlan, i: int, l: int) -> float:
    return 0.5 * float(np.abs(plan.gamma[i] / plan.p[i] - plan.gamma[l] / plan.p[l]).sum())


# -- preprocessor -------------------------------------------------------------


@dataclass(eq=False)
class Preprocessor:
    """Randomised map T: source point i goes to destination j with probability cond[i, j].

    Points outside the source support pass through unchanged.
    """

    sources: np.ndarray
    dests: np.ndarray
    cond: np.ndarray
    _index: dict = field(init=False, repr=False)

    def __post_init__(self):
        self.sources = np.asarray(self.sources, dtype=np.int64)
        self.dests = np.asarray(self.dests, dtype=np.int64)
        self.cond = np.asarray(self.cond, dtype=float)
        if self.cond.shape != (len(self.sources), len(self.dests)):
            raise ValueError("conditional table shape mismatch")
        if np.any(self.cond < 0) or np.any(np.abs(self.cond.sum(1) - 1.0) > 1e-9):
            raise ValueError("each conditional must be a probability vector")
        self._index = {tuple(int(v) for v in x): i for i, x in enumerate(self.sources)}
        self._cdf = np.cumsum(self.cond, axis=1)

    def source_index(self, X: np.ndarray) -> np.ndarray:
        """Row of each x in the source table, or -1 for passthrough."""
        return np.array([self._index.get(tuple(int(v) for v in x), -1) for x in np.asarray(X)], dtype=np.int64)

    def conditional(self, x: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
        i = self._index.get(tuple(int(v) for v in x))
        if i is None:
            return np.asarray([x], dtype=np.int64), np.ones(1)
        nz = self.cond[i] > 0
        return self.dests[nz], self.cond[i][nz]

    def apply_rows(self, X: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """One draw of T(x) per row (one uniform consumed per mapped row)."""
        X = np.asarray(X, dtype=np.int64)
        out = X.copy()
        src = self.source_index(X)
        mapped = np.flatnonzero(src >= 0)
        if len(mapped):
            u = rng.random(len(mapped))
            cdf = self._cdf[src[mapped]]
            j = np.minimum((u[:, None] * cdf[:, -1:] >= cdf).sum(axis=1), len(self.dests) - 1)
            out[mapped] = self.dests[j]
        return out

    def sample(self, x: Sequence[int], rng: np.random.Generator) -> tuple[int, ...]:
        return tuple(int(v) for v in self.apply_rows(np.asarray([x]), rng)[0])

    def expected_scores(self, base: Scorer, X: np.ndarray) -> np.ndarray:
        """E[base(T(x))] per row."""
        X = np.asarray(X, dtype=np.int64)
        out = base.score_many(X) if len(X) else np.empty(0)
        src = self.source_index(X)
        mapped = src >= 0
        if np.any(mapped):
            out = out.copy()
            out[mapped] = self.cond[src[mapped]] @ base.score_many(self.dests)
        return out

    def pushforward(self, p: EmpiricalDistribution) -> EmpiricalDistribution:
        mass: dict = {}
        for x, px in p.as_dict().items():
            for y, c in zip(*self.conditional(x)):
                key = tuple(int(v) for v in y)
                mass[key] = mass.get(key, 0.0) + px * float(c)
        return EmpiricalDistribution.from_dict(mass)

    def is_identity(self, tol: float = 1e-12) -> bool:
        for i, x in enumerate(self.sources):
            ys, cs = self.conditional(x)
            if len(ys) != 1 or not np.array_equal(ys[0], x) or abs(cs[0] - 1.0) > tol:
                return False
        return True

    def write(self, path: str | Path, schema: Schema) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow([f"src_{n}" for n in schema.names] + [f"dst_{n}" for n in schema.names] + ["prob"])
            for i, j in zip(*np.nonzero(self.cond > 0)):
                wr.writerow(list(schema.label(self.sources[i])) + list(schema.label(self.dests[j])) + [repr(float(self.cond[i, j]))])

    @classmethod
    def read(cls, path: str | Path, schema: Schema) -> "Preprocessor":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        d = schema.d
        want = [f"src_{n}" for n in schema.names] + [f"dst_{n}" for n in schema.names] + ["prob"]
        if rows[0] != want:
            raise SchemaError("preprocessor header does not match the schema")
        recs = []
        for r in rows[1:]:
            if r:
                src = tuple(schema.encode_value(j, r[j]) for j in range(d))
                dst = tuple(schema.encode_value(j, r[d + j]) for j in range(d))
                recs.append((src, dst, float(r[2 * d])))
        srcs = sorted({a for a, _, _ in recs})
        dsts = sorted({b for _, b, _ in recs})
        si = {x: i for i, x in enumerate(srcs)}
        di = {x: i for i, x in enumerate(dsts)}
        cond = np.zeros((len(srcs), len(dsts)))
        for a, b, c in recs:
            cond[si[a], di[b]] += c
        cond /= cond.sum(axis=1, keepdims=True)
        return cls(np.array(srcs, dtype=np.int64).reshape(-1, d), np.array(dsts, dtype=np.int64).reshape(-1, d), cond)


def make_preprocessor(plan: TransportPlan) -> Preprocessor:
    if plan.rows is None or plan.cols is None:
        raise ValueError("plan needs support points to build a preprocessor")
    keep = plan.gamma.sum(axis=1) > 0
    if not np.all(keep):
        warnings.warn(f"dropping {int((~keep).sum())} zero-mass source rows", RuntimeWarning)
    g = plan.gamma[keep]
    return Preprocessor(plan.rows[keep], plan.cols, g / g.sum(axis=1, keepdims=True))


def plan_between(
    p: EmpiricalDistribution,
    q: EmpiricalDistribution,
    cost: CostSpec,
    schema: Schema,
    distance: Callable[[int, int], float] | None = None,
    pairs: Sequence[tuple[int, int]] = (),
    max_vars: int = 10000,
) -> TransportPlan:
    """Optimal plan from ``p`` to ``q`` with the given cost and optional pair constraints."""
    C = build_cost_matrix(p.support, q.support, cost, schema)
    if pairs:
        return solve_transport_constrained(p.probs, q.probs, C, distance, pairs, max_vars, p.support, q.support)
    return solve_transport(p.probs, q.probs, C, p.support, q.support)


def write_plan(plan: TransportPlan, schema: Schema, directory: str | Path, stem: str = "plan") -> None:
    """Triplets ``stem.csv`` plus support tables ``stem_rows.csv`` and ``stem_cols.csv``."""
    directory = Path(directory)
    with open(directory / f"{stem}.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["i", "j", "mass"])
        for i, j, x in plan.triplets():
            wr.writerow([i, j, repr(float(x))])
    for name, pts, marg in (("rows", plan.rows, plan.p), ("cols", plan.cols, plan.q)):
        with open(directory / f"{stem}_{name}.csv", "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["index"] + list(schema.names) + ["marginal"])
            for k, x in enumerate(pts):
                wr.writerow([k] + list(schema.label(x)) + [repr(float(marg[k]))])


def read_plan(schema: Schema, directory: str | Path, stem: str = "plan") -> TransportPlan:
    directory = Path(directory)
    tables = {}
    for name in ("rows", "cols"):
        with open(directory / f"{stem}_{name}.csv", newline="") as fh:
            body = list(csv.reader(fh))[1:]
        pts = np.array([[schema.encode_value(j, r[1 + j]) for j in range(schema.d)] for r in body], dtype=np.int64)
        tables[name] = (pts.reshape(-1, schema.d), np.array([float(r[-1]) for r in body]))
    (rows, p), (cols, q) = tables["rows"], tables["cols"]
    gamma = np.zeros((len(p), len(q)))
    with open(directory / f"{stem}.csv", newline="") as fh:
        for r in list(csv.reader(fh))[1:]:
            gamma[int(r[0]), int(r[1])] = float(r[2])
    return TransportPlan(p, q, gamma, float("nan"), rows=rows, cols=cols)
