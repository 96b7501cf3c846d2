"""Real second-order cone programs and the solver contract.

A program maximizes ``c @ x + offset`` subject to

* equality rows ``A_eq @ x == b_eq``,
* inequality rows ``A_le @ x <= b_le``,
* variable bounds ``lb <= x <= ub`` (``lb == ub`` pins a variable),
* second-order cones, each an ordered list of affine expressions
  ``(e_0, e_1, ..., e_k)`` meaning ``||(e_1, ..., e_k)||_2 <= e_0``.

Complex quantities never reach this module; formulations realify first.
The single shipped backend is Clarabel, reached through :func:`solve`.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ITERATION_LIMIT = "iteration-limit"
NUMERICAL_FAILURE = "numerical-failure"


class ProgramError(ValueError):
    """Malformed program: bad index, shape mismatch, label collision or non-finite data."""


class Expr:
    """Sparse affine expression ``coef @ x[idx] + const`` (duplicate indices add up)."""

    __slots__ = ("idx", "coef", "const")

    def __init__(self, idx=(), coef=(), const: float = 0.0):
        self.idx = np.asarray(idx, dtype=np.int64).ravel()
        self.coef = np.asarray(coef, dtype=float).ravel()
        if self.idx.shape != self.coef.shape:
            raise ProgramError(f"dimension mismatch: {self.idx.size} indices vs {self.coef.size} coefficients")
        self.const = float(const)

    @classmethod
    def var(cls, i: int, scale: float = 1.0) -> "Expr":
        return cls([i], [scale])

    @classmethod
    def constant(cls, value: float) -> "Expr":
        return cls((), (), value)

    def __add__(self, other):
        if isinstance(other, Expr):
            return Expr(np.concatenate([self.idx, other.idx]), np.concatenate([self.coef, other.coef]),
                        self.const + other.const)
        return Expr(self.idx, self.coef, self.const + float(other))

    __radd__ = __add__

    def __neg__(self):
        return Expr(self.idx, -self.coef, -self.const)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, scalar: float):
        scalar = float(scalar)
        return Expr(self.idx, self.coef * scalar, self.const * scalar)

    __rmul__ = __mul__

    def value(self, x: np.ndarray) -> float:
        return float(self.coef @ x[self.idx]) + self.const if self.idx.size else self.const

    def __repr__(self) -> str:
        return f"Expr(nnz={self.idx.size}, const={self.const:g})"


def _csr(rows: list[Expr], n: int) -> tuple[sp.csr_matrix, np.ndarray]:
    if not rows:
        return sp.csr_matrix((0, n)), np.zeros(0)
    lengths = np.array([r.idx.size for r in rows])
    ri = np.repeat(np.arange(len(rows)), lengths)
    ci = np.concatenate([r.idx for r in rows]) if lengths.sum() else np.zeros(0, dtype=np.int64)
    vals = np.concatenate([r.coef for r in rows]) if lengths.sum() else np.zeros(0)
    mat = sp.coo_matrix((vals, (ri, ci)), shape=(len(rows), n)).tocsr()
    mat.sum_duplicates()
    return mat, np.array([r.const for r in rows])


@dataclass(frozen=True)
class ConicProgram:
    n: int
    c: np.ndarray
    offset: float
    A_eq: sp.csr_matrix
    b_eq: np.ndarray
    A_le: sp.csr_matrix
    b_le: np.ndarray
    cone_F: sp.csr_matrix
    cone_g: np.ndarray
    cone_sizes: tuple[int, ...]
    lb: np.ndarray
    ub: np.ndarray
    labels: tuple[tuple[str, int, int], ...] = ()
    eq_tags: tuple[str, ...] = ()
    le_tags: tuple[str, ...] = ()
    cone_tags: tuple[str, ...] = ()
    name: str = ""
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def n_cones(self) -> int:
        return len(self.cone_sizes)

    @property
    def n_linear(self) -> int:
        return self.A_eq.shape[0] + self.A_le.shape[0]

    def label_slice(self, label: str) -> slice:
        for name, start, count in self.labels:
            if name == label:
                return slice(start, start + count)
        raise KeyError(label)

    def label_of(self, i: int) -> str:
        for name, start, count in self.labels:
            if start <= i < start + count:
                return f"{name}[{i - start}]"
        raise KeyError(i)

    def objective_value(self, x: np.ndarray) -> float:
        return float(self.c @ x) + self.offset

    def with_objective(self, c: np.ndarray, offset: float = 0.0) -> "ConicProgram":
        c = np.asarray(c, dtype=float)
        if c.shape != (self.n,) or not np.all(np.isfinite(c)):
            raise ProgramError("objective must be a finite vector of length n")
        return replace(self, c=c, offset=float(offset), _cache=self._cache)

    def with_bounds(self, lb: np.ndarray, ub: np.ndarray) -> "ConicProgram":
        lb = np.asarray(lb, dtype=float)
        ub = np.asarray(ub, dtype=float)
        if lb.shape != (self.n,) or ub.shape != (self.n,):
            raise ProgramError("bounds must have length n")
        return replace(self, lb=lb, ub=ub, _cache=self._cache)

    def restrict(self, tags: Iterable[str]) -> tuple["ConicProgram", np.ndarray]:
        """Feasibility sub-program made of the rows tagged in ``tags``.

        Only columns touched by the kept rows survive; returns the program and
        the original index of each of its columns."""
        tags = set(tags)
        eq = np.array([t in tags for t in self.eq_tags], dtype=bool).reshape(-1)
        le = np.array([t in tags for t in self.le_tags], dtype=bool).reshape(-1)
        rows, sizes, ctags = [], [], []
        for (a, b), t in zip(self.cone_blocks(), self.cone_tags):
            if t in tags:
                rows.extend(range(a, b))
                sizes.append(b - a)
                ctags.append(t)
        A_eq = self.A_eq.tocsr()[np.flatnonzero(eq)]
        A_le = self.A_le.tocsr()[np.flatnonzero(le)]
        F = self.cone_F.tocsr()[np.asarray(rows, dtype=np.int64)]
        used = np.zeros(self.n, dtype=bool)
        for m in (A_eq, A_le, F):
            used[m.tocoo().col] = True
        cols = np.flatnonzero(used)
        sub = ConicProgram(
            n=cols.size, c=np.zeros(cols.size), offset=0.0,
            A_eq=A_eq[:, cols], b_eq=self.b_eq[eq], A_le=A_le[:, cols], b_le=self.b_le[le],
            cone_F=F[:, cols], cone_g=self.cone_g[np.asarray(rows, dtype=np.int64)], cone_sizes=tuple(sizes),
            lb=self.lb[cols], ub=self.ub[cols],
            eq_tags=tuple(t for t, k in zip(self.eq_tags, eq) if k),
            le_tags=tuple(t for t, k in zip(self.le_tags, le) if k),
            cone_tags=tuple(ctags), name=self.name + "/restricted",
        )
        return sub, cols

    def cone_blocks(self) -> Iterable[tuple[int, int]]:
        start = 0
        for size in self.cone_sizes:
            yield start, start + size
            start += size

    def to_dict(self) -> dict:
        def coo(m):
            m = m.tocoo()
            return {"shape": list(m.shape), "row": m.row.tolist(), "col": m.col.tolist(), "val": m.data.tolist()}

        def finite(a):
            return [None if not np.isfinite(v) else float(v) for v in a]

        return {
            "name": self.name,
            "n": self.n,
            "objective": {"c": self.c.tolist(), "offset": self.offset, "sense": "maximize"},
            "eq": {"A": coo(self.A_eq), "b": self.b_eq.tolist(), "tags": list(self.eq_tags)},
            "le": {"A": coo(self.A_le), "b": self.b_le.tolist(), "tags": list(self.le_tags)},
            "cones": {"F": coo(self.cone_F), "g": self.cone_g.tolist(), "sizes": list(self.cone_sizes),
                      "tags": list(self.cone_tags)},
            "lb": finite(self.lb),
            "ub": finite(self.ub),
            "labels": [list(x) for x in self.labels],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ConicProgram":
        def mat(m):
            return sp.coo_matrix((m["val"], (m["row"], m["col"])), shape=tuple(m["shape"])).tocsr()

        def arr(v, fill):
            return np.array([fill if x is None else x for x in v], dtype=float)

        return cls(
            n=d["n"],
            c=np.asarray(d["objective"]["c"], dtype=float),
            offset=float(d["objective"]["offset"]),
            A_eq=mat(d["eq"]["A"]), b_eq=np.asarray(d["eq"]["b"], dtype=float),
            A_le=mat(d["le"]["A"]), b_le=np.asarray(d["le"]["b"], dtype=float),
            cone_F=mat(d["cones"]["F"]), cone_g=np.asarray(d["cones"]["g"], dtype=float),
            cone_sizes=tuple(d["cones"]["sizes"]),
            lb=arr(d["lb"], -np.inf), ub=arr(d["ub"], np.inf),
            labels=tuple(tuple(x) for x in d["labels"]),
            eq_tags=tuple(d["eq"]["tags"]), le_tags=tuple(d["le"]["tags"]), cone_tags=tuple(d["cones"]["tags"]),
            name=d.get("name", ""),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")


class ProgramBuilder:
    """Incremental construction of a :class:`ConicProgram`.

    >>> b = ProgramBuilder()
    >>> x = b.add_variables("x", 2)
    >>> b.add_cone(Expr.constant(1.0), [Expr.var(x[0]), Expr.var(x[1])])
    >>> b.set_objective(Expr(x, [1.0, 1.0]))
    >>> b.build().n
    2
    """

    def __init__(self, name: str = ""):
        self.name = name
        self.n = 0
        self._labels: list[tuple[str, int, int]] = []
        self._lb: list[np.ndarray] = []
        self._ub: list[np.ndarray] = []
        self._eq: list[Expr] = []
        self._eq_tags: list[str] = []
        self._le: list[Expr] = []
        self._le_tags: list[str] = []
        self._cone_rows: list[Expr] = []
        self._cone_sizes: list[int] = []
        self._cone_tags: list[str] = []
        self._objective = Expr()

    def add_variables(self, label: str, count: int, lb: float = -np.inf, ub: float = np.inf) -> np.ndarray:
        if any(name == label for name, _, _ in self._labels):
            raise ProgramError(f"label collision: {label!r}")
        if count < 0:
            raise ProgramError("variable count must be nonnegative")
        start = self.n
        self.n += count
        self._labels.append((label, start, count))
        self._lb.append(np.full(count, lb, dtype=float))
        self._ub.append(np.full(count, ub, dtype=float))
        return np.arange(start, start + count)

    def _check(self, e: Expr) -> Expr:
        if e.idx.size and (e.idx.min() < 0 or e.idx.max() >= self.n):
            raise ProgramError(f"index out of range: variables 0..{self.n - 1} declared")
        if not (np.all(np.isfinite(e.coef)) and np.isfinite(e.const)):
            raise ProgramError("non-finite coefficient")
        return e

    def add_le(self, lhs: Expr, rhs: Expr | float = 0.0, tag: str = "") -> None:
        """``lhs <= rhs``."""
        e = self._check(lhs - rhs)
        self._le.append(e)
        self._le_tags.append(tag)

    def add_ge(self, lhs: Expr, rhs: Expr | float = 0.0, tag: str = "") -> None:
        self.add_le(-lhs, -rhs if isinstance(rhs, Expr) else -float(rhs), tag)

    def add_eq(self, lhs: Expr, rhs: Expr | float = 0.0, tag: str = "") -> None:
        e = self._check(lhs - rhs)
        self._eq.append(e)
        self._eq_tags.append(tag)

    def add_cone(self, head: Expr, members: Sequence[Expr], tag: str = "") -> None:
        """``||members||_2 <= head``."""
        rows = [self._check(head)] + [self._check(m) for m in members]
        self._cone_rows.extend(rows)
        self._cone_sizes.append(len(rows))
        self._cone_tags.append(tag)

    def set_objective(self, expr: Expr) -> None:
        self._objective = self._check(expr)

    def build(self) -> ConicProgram:
        n = self.n
        c = np.zeros(n)
        np.add.at(c, self._objective.idx, self._objective.coef)
        A_eq, k_eq = _csr(self._eq, n)
        A_le, k_le = _csr(self._le, n)
        F, g = _csr(self._cone_rows, n)
        lb = np.concatenate(self._lb) if self._lb else np.zeros(0)
        ub = np.concatenate(self._ub) if self._ub else np.zeros(0)
        if np.any(lb > ub):
            raise ProgramError("lower bound above upper bound")
        return ConicProgram(
            n=n, c=c, offset=self._objective.const,
            A_eq=A_eq, b_eq=-k_eq, A_le=A_le, b_le=-k_le,
            cone_F=F, cone_g=g, cone_sizes=tuple(self._cone_sizes),
            lb=lb, ub=ub, labels=tuple(self._labels),
            eq_tags=tuple(self._eq_tags), le_tags=tuple(self._le_tags), cone_tags=tuple(self._cone_tags),
            name=self.name,
        )


def build_program(directives: Sequence[tuple]) -> ConicProgram:
    """Build from a list of directives, mostly for tests and JSON round trips.

    Directives: ``("var", label, count[, lb, ub])``, ``("le"|"ge"|"eq", lhs, rhs)``,
    ``("cone", head, [members])``, ``("max", expr)``.  Expressions are
    :class:`Expr` or ``(idx, coef, const)`` triples.
    """
    b = ProgramBuilder()

    def ex(v):
        if isinstance(v, Expr):
            return v
        if isinstance(v, (int, float)):
            return Expr.constant(v)
        return Expr(*v)

    for d in directives:
        kind = d[0]
        if kind == "var":
            b.add_variables(*d[1:])
        elif kind == "le":
            b.add_le(ex(d[1]), ex(d[2]))
        elif kind == "ge":
            b.add_ge(ex(d[1]), ex(d[2]))
        elif kind == "eq":
            b.add_eq(ex(d[1]), ex(d[2]))
        elif kind == "cone":
            b.add_cone(ex(d[1]), [ex(m) for m in d[2]])
        elif kind == "max":
            b.set_objective(ex(d[1]))
        else:
            raise ProgramError(f"unknown directive {kind!r}")
    return b.build()


@dataclass(frozen=True)
class SolverOptions:
    feas_tol: float = 1e-7
    gap_tol: float = 1e-7
    max_iter: int = 200
    verbose: bool = False

    def __post_init__(self):
        if not (self.feas_tol > 0 and self.gap_tol > 0):
            raise ValueError("tolerances must be positive")


@dataclass
class SolveReport:
    status: str
    x: np.ndarray | None
    objective: float
    primal_residual: float
    dual_residual: float
    gap: float
    iterations: int
    wall_time: float
    backend_status: str = ""

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


def constraint_violation(p: ConicProgram, x: np.ndarray) -> float:
    """Largest absolute violation over all rows, bounds and cones."""
    worst = 0.0
    if p.A_eq.shape[0]:
        worst = max(worst, float(np.max(np.abs(p.A_eq @ x - p.b_eq))))
    if p.A_le.shape[0]:
        worst = max(worst, float(np.max(p.A_le @ x - p.b_le)))
    if p.n:
        worst = max(worst, float(np.max(np.where(np.isfinite(p.lb), p.lb - x, -np.inf), initial=0.0)))
        worst = max(worst, float(np.max(np.where(np.isfinite(p.ub), x - p.ub, -np.inf), initial=0.0)))
    if p.cone_sizes:
        vals = p.cone_F @ x + p.cone_g
        for a, b in p.cone_blocks():
            worst = max(worst, float(np.linalg.norm(vals[a + 1:b]) - vals[a]))
    return max(worst, 0.0)


def relative_residual(p: ConicProgram, x: np.ndarray) -> float:
    """Violation scaled by ``1 + max(|x|_inf, |b|_inf)``, the same shape as the backend criterion."""
    scale = 1.0 + max(
        float(np.max(np.abs(x), initial=0.0)),
        float(np.max(np.abs(p.b_eq), initial=0.0)),
        float(np.max(np.abs(p.b_le), initial=0.0)),
        float(np.max(np.abs(p.cone_g), initial=0.0)),
    )
    return constraint_violation(p, x) / scale


def _lift_shared_rows(p: ConicProgram):
    """Replace cone rows that repeat verbatim (two or more nonzeros) by one
    auxiliary variable each.  Rates share their interference rows, so this
    shrinks the factorization considerably; the IR itself is untouched."""
    F = p.cone_F.tocsr(copy=True)
    F.sort_indices()
    groups: dict[tuple[bytes, bytes], list[int]] = {}
    for i in range(F.shape[0]):
        a, b = F.indptr[i], F.indptr[i + 1]
        if b - a >= 2:
            groups.setdefault((F.indices[a:b].tobytes(), F.data[a:b].tobytes()), []).append(i)
    shared = [rows for rows in groups.values() if len(rows) > 1]
    k = len(shared)
    if k == 0:
        return F, sp.csr_matrix((0, p.n)), 0
    target = np.full(F.shape[0], -1)
    for j, rows in enumerate(shared):
        target[rows] = j
    coo = F.tocoo()
    keep = target[coo.row] < 0
    lifted = np.flatnonzero(target >= 0)
    F_new = sp.coo_matrix(
        (np.concatenate([coo.data[keep], np.ones(lifted.size)]),
         (np.concatenate([coo.row[keep], lifted]), np.concatenate([coo.col[keep], p.n + target[lifted]]))),
        shape=(F.shape[0], p.n + k),
    ).tocsr()
    defs = sp.hstack([F[[rows[0] for rows in shared]], -sp.identity(k)], format="csr")
    return F_new, defs, k


def _eliminate_fixed(p: ConicProgram, tol: float = 1e-9):
    """Substitute variables with ``lb == ub`` and drop rows that become constant.

    Returns ``(reduced_program, free_index, fixed_index, fixed_values)`` or
    ``None`` when a constant row is violated (the program is infeasible).
    """
    fixed = np.isfinite(p.lb) & (p.lb == p.ub)
    free_idx, fixed_idx = np.flatnonzero(~fixed), np.flatnonzero(fixed)
    if fixed_idx.size == 0:
        return p, free_idx, fixed_idx, np.zeros(0)
    xf = p.lb[fixed_idx]

    def split(m):
        m = m.tocsc()
        return m[:, free_idx].tocsr(), m[:, fixed_idx] @ xf

    def nonempty(m):
        return np.diff(m.indptr) > 0

    A_eq, k_eq = split(p.A_eq)
    b_eq = p.b_eq - k_eq
    live = nonempty(A_eq)
    if np.any(np.abs(b_eq[~live]) > tol * (1 + np.abs(p.b_eq[~live]))):
        return None
    A_le, k_le = split(p.A_le)
    b_le = p.b_le - k_le
    live_le = nonempty(A_le)
    if np.any(b_le[~live_le] < -tol * (1 + np.abs(p.b_le[~live_le]))):
        return None
    F, k_f = split(p.cone_F)
    g = p.cone_g + k_f
    has = nonempty(F)
    keep_rows, sizes, tags = [], [], []
    for ci, (a, b) in enumerate(p.cone_blocks()):
        members = [r for r in range(a + 1, b) if has[r] or g[r] != 0.0]
        if not has[a] and not any(has[r] for r in members):
            if g[a] + tol * (1 + abs(g[a])) < np.linalg.norm(g[members]):
                return None
            continue
        keep_rows.append(a)
        keep_rows.extend(members)
        sizes.append(1 + len(members))
        tags.append(p.cone_tags[ci] if ci < len(p.cone_tags) else "")
    keep_rows = np.asarray(keep_rows, dtype=np.int64)
    reduced = ConicProgram(
        n=free_idx.size, c=p.c[free_idx], offset=p.offset + float(p.c[fixed_idx] @ xf),
        A_eq=A_eq[live], b_eq=b_eq[live], A_le=A_le[live_le], b_le=b_le[live_le],
        cone_F=F[keep_rows], cone_g=g[keep_rows], cone_sizes=tuple(sizes),
        lb=p.lb[free_idx], ub=p.ub[free_idx], cone_tags=tuple(tags), name=p.name,
    )
    return reduced, free_idx, fixed_idx, xf


def _clarabel_data(p: ConicProgram):
    import clarabel

    static = p._cache.get("lifted")
    if static is None:
        static = _lift_shared_rows(p)
        p._cache["lifted"] = static
    F, defs, k = static
    n = p.n + k

    def pad(m):
        return sp.hstack([m, sp.csr_matrix((m.shape[0], k))], format="csr") if k else m

    lo_idx = np.flatnonzero(np.isfinite(p.lb))
    up_idx = np.flatnonzero(np.isfinite(p.ub))
    eye = sp.identity(n, format="csr")
    n_zero = p.A_eq.shape[0] + defs.shape[0]
    n_pos = p.A_le.shape[0] + lo_idx.size + up_idx.size
    A = sp.vstack([pad(p.A_eq), defs, pad(p.A_le), -eye[lo_idx], eye[up_idx], -F], format="csc")
    b = np.concatenate([p.b_eq, np.zeros(defs.shape[0]), p.b_le, -p.lb[lo_idx], p.ub[up_idx], p.cone_g])
    cones = []
    if n_zero:
        cones.append(clarabel.ZeroConeT(n_zero))
    if n_pos:
        cones.append(clarabel.NonnegativeConeT(n_pos))
    cones.extend(clarabel.SecondOrderConeT(s) for s in p.cone_sizes)
    q = np.concatenate([-p.c, np.zeros(k)])
    return A, b, q, cones, n


_STATUS = {
    "Solved": OPTIMAL,
    "AlmostSolved": OPTIMAL,
    "PrimalInfeasible": INFEASIBLE,
    "AlmostPrimalInfeasible": INFEASIBLE,
    "DualInfeasible": UNBOUNDED,
    "AlmostDualInfeasible": UNBOUNDED,
    "MaxIterations": ITERATION_LIMIT,
    "MaxTime": ITERATION_LIMIT,
}


def solve(p: ConicProgram, opts: SolverOptions | None = None) -> SolveReport:
    """Maximize ``p``; infeasibility and failures come back as a status, never raised."""
    import clarabel

    opts = opts or SolverOptions()
    t0 = time.perf_counter()
    if p.n == 0:
        viol = constraint_violation(p, np.zeros(0))
        status = OPTIMAL if viol <= opts.feas_tol else INFEASIBLE
        return SolveReport(status, np.zeros(0), p.offset, viol, 0.0, 0.0, 0, time.perf_counter() - t0, "trivial")
    reduced = _eliminate_fixed(p)
    if reduced is None:
        return SolveReport(INFEASIBLE, None, np.nan, np.inf, np.inf, np.inf, 0, time.perf_counter() - t0, "presolve")
    rp, free_idx, fixed_idx, xf = reduced
    if rp.n == 0:
        x = np.zeros(p.n)
        x[fixed_idx] = xf
        viol = relative_residual(p, x)
        status = OPTIMAL if viol <= opts.feas_tol else INFEASIBLE
        return SolveReport(status, x if status == OPTIMAL else None, p.objective_value(x), viol, 0.0, 0.0, 0,
                           time.perf_counter() - t0, "presolve")
    A, b, q, cones, n_total = _clarabel_data(rp)
    settings = clarabel.DefaultSettings()
    settings.verbose = opts.verbose
    settings.max_iter = opts.max_iter
    settings.tol_feas = opts.feas_tol
    settings.tol_gap_abs = opts.gap_tol
    settings.tol_gap_rel = opts.gap_tol
    settings.max_threads = 1
    P = sp.csc_matrix((n_total, n_total))
    try:
        solver = clarabel.DefaultSolver(P, q, A, b, cones, settings)
        sol = solver.solve()
    except Exception as exc:  # backend crash is reported, not raised
        return SolveReport(NUMERICAL_FAILURE, None, np.nan, np.inf, np.inf, np.inf, 0,
                           time.perf_counter() - t0, f"exception: {exc}")
    backend = str(sol.status)
    status = _STATUS.get(backend, NUMERICAL_FAILURE)
    x = np.zeros(p.n)
    x[free_idx] = np.asarray(sol.x, dtype=float)[:rp.n]
    x[fixed_idx] = xf
    wall = time.perf_counter() - t0
    if status == OPTIMAL and not np.all(np.isfinite(x)):
        status = NUMERICAL_FAILURE
    if status != OPTIMAL:
        return SolveReport(status, x if status == ITERATION_LIMIT else None, np.nan, np.inf, np.inf, np.inf,
                           int(sol.iterations), wall, backend)
    resid = relative_residual(p, x)
    if backend == "AlmostSolved" and resid > 100 * opts.feas_tol:
        status = NUMERICAL_FAILURE
    return SolveReport(
        status=status,
        x=x,
        objective=p.objective_value(x),
        primal_residual=resid,
        dual_residual=float(sol.r_dual) if hasattr(sol, "r_dual") else float("nan"),
        gap=abs(float(sol.obj_val) - float(sol.obj_val_dual)) / max(1.0, abs(float(sol.obj_val))),
        iterations=int(sol.iterations),
        wall_time=wall,
        backend_status=backend,
    )
