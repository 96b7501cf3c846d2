"""Solution strategies: branch-and-bound, relax-and-penalize (full and gain-only),
the backhaul upper bound, initial-point search and rounding with repair."""

from __future__ import annotations

import csv
import heapq
import itertools
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .channel import ChannelSet
from .conic import OPTIMAL, INFEASIBLE, NUMERICAL_FAILURE, ConicProgram, SolverOptions, solve
from .formulation import (
    FREE,
    BigMConstants,
    BinaryState,
    InfeasibleConfig,
    PredesignedBeams,
    VariableLayout,
    apply_state,
    binary_mse,
    build_p0_relaxation,
    build_pub_relaxation,
    build_rnp2_relaxation,
    compute_bigM,
    counting_conflicts,
    design_multicast_beams,
    design_zf_beams,
    extract,
    layout_for,
    penalized_objective,
    penalty_objective,
    weighted_rate,
)
from .system import SystemConfig

FEASIBLE = "feasible"
NODE_LIMIT = "node-limit"
FAILED = "failed"


@dataclass(frozen=True)
class AlgoParams:
    n_iter: int = 30
    delta: float = 1e-4  # relative objective improvement
    lambda_alpha: float | None = None  # None: lambda_scale * omega_max * R_max * L * U
    lambda_beta: float | None = None
    lambda_kappa: float | None = None
    lambda_scale: float = 10.0
    lambda_growth: float = 5.0
    lambda_cap: float = 1e4  # multiple of the initial value
    mse_tol: float = 1e-4
    node_limit: int = 5000
    gap_tol: float = 1e-4
    branching: str = "backhaul-first"
    heuristic_every: int = 20
    init_attempts: int = 100  # screened candidates, each at most one fixed-binary solve
    init_draws: int = 200  # random draws per candidate before giving up
    repair_rounds: int | None = None  # None: B
    zf_eps: float = 1e-3
    multicast_realizations: int = 50
    integrality_tol: float = 1e-6
    seed: int = 0
    solver: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        for name in ("n_iter", "delta", "lambda_scale", "lambda_cap", "mse_tol", "node_limit", "gap_tol",
                     "init_attempts", "init_draws", "multicast_realizations", "heuristic_every"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.lambda_growth > 1:
            raise ValueError("lambda_growth must exceed 1")
        if self.branching not in BRANCHING_RULES:
            raise ValueError(f"unknown branching rule {self.branching!r}")

    def penalties(self, cfg: SystemConfig) -> tuple[float, float, float]:
        base = (self.lambda_scale * float(np.max(cfg.weight_vector())) * max(cfg.ue_table.rates)
                * cfg.L * cfg.U)
        return tuple(base if v is None else float(v) for v in (self.lambda_alpha, self.lambda_beta, self.lambda_kappa))

    def with_(self, **changes) -> "AlgoParams":
        return replace(self, **changes)


@dataclass
class RrmSolution:
    algorithm: str
    status: str
    objective: float = float("nan")  # weighted sum of selected spectral efficiencies
    throughput: float = float("nan")  # W_access * sum alpha R, bps
    backhaul_throughput: float = float("nan")  # W_backhaul * sum beta R, bps
    M: np.ndarray | None = None
    W: np.ndarray | None = None
    p: np.ndarray | None = None
    alpha: np.ndarray | None = None
    beta: np.ndarray | None = None
    kappa: np.ndarray | None = None
    t: np.ndarray | None = None
    v: np.ndarray | None = None
    bound: float = float("nan")
    trace: list[dict] = field(default_factory=list)
    stats: dict = field(default_factory=dict)
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status in (FEASIBLE, OPTIMAL, NODE_LIMIT) and self.alpha is not None

    def rate_indices(self) -> np.ndarray:
        """Selected UE rate index per global UE, -1 when unserved."""
        if self.alpha is None:
            return np.zeros(0, dtype=int)
        a = self.alpha.reshape(-1, self.alpha.shape[-1])
        return np.where(a.sum(axis=1) > 0.5, np.argmax(a, axis=1), -1)

    def export_trace(self, path: str | Path) -> None:
        write_trace_csv(path, self.trace)


def write_trace_csv(path: str | Path, trace: list[dict]) -> None:
    cols = ["iteration", "objective", "binary_mse", "wall_time", "penalized", "lambda"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, extrasaction="ignore")
        w.writeheader()
        for row in trace:
            w.writerow({k: repr(row[k]) if isinstance(row.get(k), float) else row.get(k) for k in cols})


# ---------------------------------------------------------------- instance cache


class _Instance:
    """Programs built once per (cfg, channels) and re-used with new bounds/objectives."""

    def __init__(self, cfg: SystemConfig, channels: ChannelSet, params: AlgoParams,
                 kind: str = "full", beams: PredesignedBeams | None = None):
        self.cfg, self.channels, self.params, self.kind, self.beams = cfg, channels, params, kind, beams
        self.bigM = compute_bigM(channels, cfg)
        self.layout = layout_for(cfg, kind)
        if kind == "full":
            self.base = build_p0_relaxation(cfg, channels, self.bigM)
        elif kind == "gains":
            self.base = build_rnp2_relaxation(cfg, channels, beams, self.bigM)
        else:
            self.base = build_pub_relaxation(cfg, channels, self.bigM)
        self.bin_idx = self.layout.binary_indices()
        self.n_solves = 0
        self._backhaul = None
        self._backhaul_ok: dict[bytes, bool] = {}
        if kind != "backhaul":
            self.access_gain = self._access_gain()

    def _access_gain(self) -> np.ndarray:
        """Largest normalized amplitude each SBS can deliver to each of its
        cluster's UEs, ``(L, B, U)``; the square of a sum over serving SBSs
        bounds the UE SINR from above."""
        cfg = self.cfg
        L, B, U = cfg.L, cfg.B, cfg.U
        scale = np.sqrt(cfg.P_tx_SBS / cfg.sigma2_UE)
        h = self.channels.h.reshape(L, B, L, U, cfg.n_sbs)
        own = np.stack([h[l, :, l] for l in range(L)])  # (L, B, U, N)
        if self.kind == "gains":
            return scale * np.abs(np.einsum("lbun,lbun->lbu", own.conj(), self.beams.w_hat))
        return scale * np.linalg.norm(own, axis=-1)

    def screen(self, alpha, beta, kappa) -> bool:
        """Cheap necessary conditions for a fixed-binary program to be feasible:
        the backhaul budget, the interference-free SINR bound and the
        backhaul sub-program on its own (cached per rate choice)."""
        cfg = self.cfg
        R_ue, R_sbs = np.asarray(cfg.ue_table.rates), np.asarray(cfg.sbs_table.rates)
        bw = cfg.W_bw_access / cfg.W_bw_backhaul
        if np.any(bw * np.einsum("luj,j->l", alpha, R_ue) > beta @ R_sbs + 1e-12):
            return False
        need = alpha @ np.asarray(cfg.ue_table.sinrs)  # 0 for unserved UEs
        reach = np.einsum("lbu,lbu->lu", kappa, self.access_gain) ** 2
        if np.any(reach < need * (1 - 1e-9)):
            return False
        return self.backhaul_feasible(beta)

    def backhaul_feasible(self, beta) -> bool:
        key = np.asarray(beta, dtype=bool).tobytes()
        if key not in self._backhaul_ok:
            if self._backhaul is None:
                tags = ("C3", "C26", "C27") if self.kind == "full" else ("L1", "L6", "L7")
                self._backhaul = self.base.restrict(tags)
            sub, cols = self._backhaul
            lb, ub = sub.lb.copy(), sub.ub.copy()
            pos = np.searchsorted(cols, self.layout.beta.ravel())
            lb[pos] = ub[pos] = np.asarray(beta, dtype=float).ravel()
            self.n_solves += 1
            self._backhaul_ok[key] = solve(sub.with_bounds(lb, ub), self.params.solver).status == OPTIMAL
        return self._backhaul_ok[key]

    def solve(self, program: ConicProgram):
        self.n_solves += 1
        return solve(program, self.params.solver)

    def with_mask(self, mask: np.ndarray, program: ConicProgram | None = None) -> ConicProgram:
        program = program or self.base
        lb, ub = self.base.lb.copy(), self.base.ub.copy()
        self.layout.pin(lb, ub, mask)
        return program.with_bounds(lb, ub)

    def solve_pinned(self, alpha, beta, kappa):
        """Fixed-binary continuous program."""
        state = BinaryState.pinned(alpha, beta, kappa)
        rep = self.solve(apply_state(self.base, self.layout, state))
        return rep

    def to_solution(self, name: str, status: str, x: np.ndarray, binary: bool = True) -> RrmSolution:
        cfg = self.cfg
        ex = extract(cfg, self.layout, x, self.beams)
        rnd = (lambda a: np.rint(np.clip(a, 0, 1))) if binary else (lambda a: a)
        sol = RrmSolution(algorithm=name, status=status, M=ex.M, W=ex.W, p=ex.p, t=ex.t, v=ex.v,
                          beta=rnd(ex.beta))
        if ex.alpha is not None:
            sol.alpha, sol.kappa = rnd(ex.alpha), rnd(ex.kappa)
            sol.objective = weighted_rate(cfg, sol.alpha)
            sol.throughput = cfg.W_bw_access * float(np.sum(sol.alpha * np.asarray(cfg.ue_table.rates)))
        sol.backhaul_throughput = cfg.W_bw_backhaul * float(np.sum(sol.beta * np.asarray(cfg.sbs_table.rates)))
        return sol


# ---------------------------------------------------------------- branch and bound


@dataclass(order=True)
class BranchNode:
    priority: tuple
    mask: np.ndarray = field(compare=False)
    bound: float = field(compare=False)
    parent_bound: float = field(compare=False)
    depth: int = field(compare=False)
    x: np.ndarray | None = field(compare=False, default=None)


BRANCHING_RULES = ("most-fractional", "backhaul-first")


def _most_fractional(values: np.ndarray, mask: np.ndarray, rank: np.ndarray | None = None,
                     tol: float = 0.0) -> int:
    """Most fractional free binary; with ``rank`` (smaller = earlier) only the
    best-ranked family that still has a fractional entry competes."""
    frac = np.minimum(values, 1.0 - values)
    frac[mask != FREE] = -1.0
    if rank is not None:
        live = frac > tol
        if live.any():
            frac[rank != rank[live].min()] = -1.0
    return int(np.argmax(frac))  # first maximum: alpha before beta before kappa, then lowest index


def _branch_and_bound(inst: _Instance, params: AlgoParams, objective_of, heuristic=None,
                      incumbent: tuple[float, np.ndarray] | None = None) -> dict:
    """Best-first search maximizing the base objective over the binary block.

    ``incumbent`` is an optional certified ``(value, x)`` to start from."""
    t0 = time.perf_counter()
    tol = params.integrality_tol
    nb = inst.bin_idx.size
    rank = None
    if params.branching == "backhaul-first":  # beta, then alpha, then kappa
        order = {"beta": 0, "alpha": 1, "kappa": 2}
        rank = np.concatenate([np.full(blk.size, order[name]) for name, blk in inst.layout.binary_blocks()])
    counter = itertools.count()
    incumbent, inc_x = incumbent if incumbent is not None else (-np.inf, None)
    log: list[tuple[int, float, float]] = []

    def prune_level(inc):
        return inc + params.gap_tol * abs(inc) if np.isfinite(inc) else -np.inf

    def evaluate(mask, parent_bound, depth):
        rep = inst.solve(inst.with_mask(mask))
        if rep.status == INFEASIBLE:
            return None, rep.status
        if rep.status != OPTIMAL:
            return None, rep.status
        log.append((depth, rep.objective, parent_bound))
        bound = min(rep.objective, parent_bound)
        return BranchNode((-bound, -depth, next(counter)), mask, bound, parent_bound, depth, rep.x), OPTIMAL

    root, st = evaluate(np.full(nb, FREE, dtype=np.int8), np.inf, 0)
    if root is None:
        return {"status": INFEASIBLE if st == INFEASIBLE else NUMERICAL_FAILURE, "x": None, "incumbent": -np.inf,
                "bound": np.nan, "nodes": 1, "log": log, "wall": time.perf_counter() - t0}
    heap = [root]
    nodes = 1
    failures = 0
    while heap:
        node = heapq.heappop(heap)
        if node.bound <= prune_level(incumbent):
            continue
        vals = np.clip(node.x[inst.bin_idx], 0.0, 1.0)
        if np.all(np.minimum(vals, 1 - vals) <= tol):
            pinned = np.rint(vals).astype(np.int8)
            if np.all(node.mask == pinned):
                rep_x = node.x
                val = objective_of(rep_x)
            else:
                rep = inst.solve(inst.with_mask(pinned))
                nodes += 1
                if rep.status != OPTIMAL:
                    failures += 1
                    continue
                rep_x, val = rep.x, objective_of(rep.x)
            if val > incumbent:
                incumbent, inc_x = val, rep_x
            continue
        if heuristic is not None and (nodes == 1 or nodes % params.heuristic_every == 0):
            found = heuristic(node.x)
            if found is not None and found[0] > incumbent:
                incumbent, inc_x = found
        if nodes >= params.node_limit:
            heapq.heappush(heap, node)
            break
        i = _most_fractional(vals, node.mask, rank, tol)
        for value in (1, 0):
            mask = node.mask.copy()
            mask[i] = value
            child, st = evaluate(mask, node.bound, node.depth + 1)
            nodes += 1
            if child is None:
                if st != INFEASIBLE:
                    failures += 1
                continue
            if child.bound > prune_level(incumbent):
                heapq.heappush(heap, child)
    open_bound = max((n.bound for n in heap), default=-np.inf)
    best_bound = max(open_bound, incumbent)
    if inc_x is None:
        status = NODE_LIMIT if heap else INFEASIBLE
    else:
        status = NODE_LIMIT if (heap and open_bound > prune_level(incumbent)) else OPTIMAL
    return {"status": status, "x": inc_x, "incumbent": incumbent, "bound": best_bound, "nodes": nodes,
            "failures": failures, "log": log, "wall": time.perf_counter() - t0}


def solve_bnc_misocp(cfg: SystemConfig, channels: ChannelSet, params: AlgoParams | None = None,
                     incumbent: RrmSolution | None = None) -> RrmSolution:
    """Exact branch-and-bound over alpha, beta, kappa with rounding heuristics.

    ``incumbent`` (e.g. a relax-and-penalize result on the same channels)
    only seeds the search; the certificate still comes from the tree.
    """
    params = params or AlgoParams()
    t0 = time.perf_counter()
    conflicts = counting_conflicts(cfg)
    if conflicts:
        return RrmSolution("BnC", INFEASIBLE, message="; ".join(conflicts))
    inst = _Instance(cfg, channels, params, "full")
    lay = inst.layout
    coef = inst.base.c

    def objective_of(x):
        return float(coef @ x)

    def heuristic(x):
        ex = extract(cfg, lay, x)
        res = _round_repair(inst, ex.alpha, ex.beta, ex.kappa, params)
        if res is None:
            return None
        return objective_of(res[1]), res[1]

    seeded = None
    try:  # root heuristic: the same screened random search the penalty methods start from
        init = find_initial_point(cfg, channels, params, "full", _inst=inst)
        seeded = (objective_of(init.x), init.x)
    except NoInitialPoint:
        pass
    if incumbent is not None and incumbent.ok:
        rep = inst.solve_pinned(incumbent.alpha, incumbent.beta, incumbent.kappa)
        if rep.status == OPTIMAL and (seeded is None or objective_of(rep.x) > seeded[0]):
            seeded = (objective_of(rep.x), rep.x)

    res = _branch_and_bound(inst, params, objective_of, heuristic, seeded)
    wall = time.perf_counter() - t0
    stats = {"nodes": res["nodes"], "solves": inst.n_solves, "wall_time": wall, "node_log": res["log"]}
    if res["x"] is None:
        return RrmSolution("BnC", res["status"], stats=stats, bound=res["bound"],
                           message="no feasible binary assignment" if res["status"] == INFEASIBLE else "no incumbent")
    sol = inst.to_solution("BnC", res["status"], res["x"])
    sol.bound = res["bound"]
    sol.stats = stats
    return sol


def solve_upper_bound(cfg: SystemConfig, channels: ChannelSet, params: AlgoParams | None = None) -> RrmSolution:
    """Backhaul-only MISOCP; ``throughput`` holds W_backhaul * sum beta R."""
    params = params or AlgoParams()
    t0 = time.perf_counter()
    inst = _Instance(cfg, channels, params, "backhaul")
    coef = inst.base.c
    res = _branch_and_bound(inst, params, lambda x: float(coef @ x))
    stats = {"nodes": res["nodes"], "solves": inst.n_solves, "wall_time": time.perf_counter() - t0}
    if res["x"] is None:
        return RrmSolution("UB", res["status"], stats=stats, message="no supportable backhaul rate")
    sol = inst.to_solution("UB", res["status"], res["x"])
    sol.throughput = sol.backhaul_throughput
    sol.objective = float(coef @ res["x"])
    sol.bound = cfg.W_bw_backhaul * res["bound"]
    sol.stats = stats
    return sol


# ---------------------------------------------------------------- rounding and repair


def _argmax_rows(a: np.ndarray) -> np.ndarray:
    out = np.zeros_like(a)
    idx = np.argmax(a, axis=-1)  # lowest index on ties
    np.put_along_axis(out, idx[..., None], 1.0, axis=-1)
    return out


def round_binaries(cfg: SystemConfig, alpha, beta, kappa):
    """Nearest counting-feasible binaries (per-row argmax for rate rows).

    Returns ``(alpha, beta, kappa)`` or ``None`` when the rounded backhaul
    rate cannot carry the admitted UEs or association cannot meet the
    stream limits.
    """
    alpha, beta, kappa = (np.clip(np.asarray(x, dtype=float), 0, 1) for x in (alpha, beta, kappa))
    R_ue, R_sbs = np.asarray(cfg.ue_table.rates), np.asarray(cfg.sbs_table.rates)
    bw = cfg.W_bw_access / cfg.W_bw_backhaul
    a_out = np.zeros_like(alpha)
    b_out = _argmax_rows(beta)
    k_out = np.zeros_like(kappa)
    for l in range(cfg.L):
        mass = alpha[l].sum(axis=1)
        served = np.argsort(-mass, kind="stable")[:cfg.U_served]
        for u in served:
            a_out[l, u, int(np.argmax(alpha[l, u]))] = 1.0
        cap = float(b_out[l] @ R_sbs)
        while bw * float(np.sum(a_out[l] * R_ue)) > cap + 1e-12:  # C13: demote the highest rate
            rates = np.where(a_out[l].sum(axis=1) > 0, np.argmax(a_out[l], axis=1), -1)
            u = int(np.argmax(rates))
            if rates[u] <= 0:
                return None
            a_out[l, u, rates[u]] = 0.0
            a_out[l, u, rates[u] - 1] = 1.0
        kl = _associate(cfg, kappa[l], sorted(int(u) for u in served))
        if kl is None:
            return None
        k_out[l] = kl
    return a_out, b_out, k_out


def _associate(cfg: SystemConfig, kappa_l: np.ndarray, served: list[int]) -> np.ndarray | None:
    """Binary association for one cluster honouring B_min..B_max, N_streams and
    at least one UE per SBS; driven by the relaxed values."""
    B = cfg.B
    out = np.zeros_like(kappa_l)
    for u in served:
        order = np.argsort(-kappa_l[:, u], kind="stable")
        count = int(np.clip(np.sum(kappa_l[:, u] >= 0.5), cfg.B_min, cfg.B_max))
        out[order[:count], u] = 1.0
    for b in range(B):  # stream limit: drop weakest links that keep B_min
        while out[b].sum() > cfg.N_streams_SBS:
            cands = [u for u in served if out[b, u] and out[:, u].sum() > cfg.B_min]
            if not cands:
                return None
            u = min(cands, key=lambda v: (kappa_l[b, v], v))
            out[b, u] = 0.0
    for b in range(B):  # every SBS serves someone
        if out[b].sum() == 0:
            cands = [u for u in served if out[:, u].sum() < cfg.B_max]
            if not cands:
                cands = [u for u in served if out[:, u].sum() > cfg.B_min]
                if not cands:
                    return None
                u = max(cands, key=lambda v: (kappa_l[b, v], -v))
                donor = [c for c in range(B) if out[c, u] and out[c].sum() > 1]
                if not donor:
                    return None
                out[donor[0], u] = 0.0
            else:
                u = max(cands, key=lambda v: (kappa_l[b, v], -v))
            out[b, u] = 1.0
    if np.any(out.sum(axis=1) > cfg.N_streams_SBS):
        return None
    return out


def _cap_rates(inst: _Instance, alpha: np.ndarray, kappa: np.ndarray) -> np.ndarray:
    """Lower each admitted UE to the highest rate its interference-free SINR bound allows."""
    gam = np.asarray(inst.cfg.ue_table.sinrs)
    reach = np.einsum("lbu,lbu->lu", kappa, inst.access_gain) ** 2
    out = alpha.copy()
    for l, u in zip(*np.nonzero(alpha.sum(axis=2) > 0.5)):
        j = int(np.argmax(alpha[l, u]))
        top = int(np.sum(gam <= reach[l, u] * (1 + 1e-9))) - 1
        if 0 <= top < j:
            out[l, u] = 0.0
            out[l, u, top] = 1.0
    return out


def _tidy(inst: _Instance, alpha, beta, kappa):
    """Round, then make the backhaul choice and the rates pass :meth:`_Instance.screen`
    where a monotone demotion can do it."""
    rounded = round_binaries(inst.cfg, alpha, beta, kappa)
    if rounded is None:
        return None
    a, b, k = rounded
    while not inst.backhaul_feasible(b):  # demote the fastest cluster
        idx = np.argmax(b, axis=1)
        l = int(np.argmax(idx))
        if idx[l] == 0:
            return None
        b = b.copy()
        b[l] = 0.0
        b[l, idx[l] - 1] = 1.0
        rounded = round_binaries(inst.cfg, alpha, b, kappa)
        if rounded is None:
            return None
        a, b, k = rounded
    return _cap_rates(inst, a, k), b, k


def _try(inst: _Instance, a, b, k):
    if not inst.screen(a, b, k):
        return None
    rep = inst.solve_pinned(a, b, k)
    return rep.x if rep.status == OPTIMAL else None


def _round_repair(inst: _Instance, alpha, beta, kappa, params: AlgoParams):
    """Round, then re-solve; repair by swapping the weakest admitted UE."""
    cfg = inst.cfg
    tidy = _tidy(inst, alpha, beta, kappa)
    if tidy is None:
        return None
    a, b, k = tidy
    x = _try(inst, a, b, k)
    if x is not None:
        return (a, b, k), x, 0
    w = cfg.weight_vector().reshape(cfg.L, cfg.U)
    R = np.asarray(cfg.ue_table.rates)
    alpha = np.array(alpha, dtype=float)
    kappa = np.array(kappa, dtype=float)
    rounds = params.repair_rounds if params.repair_rounds is not None else cfg.B
    for r in range(1, rounds + 1):
        # demote the admitted UE with the smallest weighted rate, promote the next-best candidate
        wr = np.where(a.sum(axis=2) > 0, w * (a @ R), np.inf)
        l, u = np.unravel_index(int(np.argmin(wr)), wr.shape)
        alpha[l, u] = 0.0
        mass = alpha[l].sum(axis=1)
        mass[a[l].sum(axis=1) > 0] = -1.0
        mass[u] = -1.0
        promote = int(np.argmax(mass))
        alpha[l, promote] = 0.0
        alpha[l, promote, 0] = 1.0  # enters at the most robust rate
        kappa[l, :, promote] = np.maximum(kappa[l, :, u], 0.5)
        tidy = _tidy(inst, alpha, b, kappa)
        if tidy is None:
            continue
        a, b, k = tidy
        x = _try(inst, a, b, k)
        if x is not None:
            return (a, b, k), x, r
    # last resort (not part of the swap rule): every admitted UE at the lowest rate
    low = np.zeros_like(a)
    low[..., 0] = a.sum(axis=2)
    x = _try(inst, low, b, k)
    if x is not None:
        return (low, b, k), x, rounds + 1
    return None


def round_and_repair(cfg: SystemConfig, channels: ChannelSet, relaxed: RrmSolution,
                     params: AlgoParams | None = None, beams: PredesignedBeams | None = None) -> RrmSolution:
    """Round a relaxed solution and certify it with a fixed-binary solve."""
    params = params or AlgoParams()
    kind = "gains" if beams is not None else "full"
    inst = _Instance(cfg, channels, params, kind, beams)
    return _finish(inst, relaxed.algorithm or "rounded", relaxed.alpha, relaxed.beta, relaxed.kappa, params)


def _finish(inst: _Instance, name: str, alpha, beta, kappa, params: AlgoParams) -> RrmSolution:
    res = _round_repair(inst, alpha, beta, kappa, params)
    if res is None:
        return RrmSolution(name, FAILED, message="unrepairable")
    _, x, repairs = res
    sol = inst.to_solution(name, FEASIBLE, x)
    sol.stats["repairs"] = repairs
    if repairs:
        sol.message = f"repaired in {repairs} round(s)"
    return sol


# ---------------------------------------------------------------- initial point


def _cluster_batch(cfg: SystemConfig, rng: np.random.Generator, m: int):
    """``m`` independent per-cluster draws and the mask of those meeting C7, C8 and C13."""
    R_ue, R_sbs = np.asarray(cfg.ue_table.rates), np.asarray(cfg.sbs_table.rates)
    bw = cfg.W_bw_access / cfg.W_bw_backhaul
    B, U, Us = cfg.B, cfg.U, cfg.U_served
    j_b = rng.integers(len(R_sbs), size=m)
    served = np.argsort(rng.random((m, U)), axis=1)[:, :Us]
    rates = rng.integers(len(R_ue), size=(m, Us))
    count = rng.integers(cfg.B_min, cfg.B_max + 1, size=(m, Us))
    links = np.argsort(np.argsort(rng.random((m, Us, B)), axis=2), axis=2) < count[..., None]  # (m, Us, B)
    loads = links.sum(axis=1)
    ok = (bw * R_ue[rates].sum(axis=1) <= R_sbs[j_b] + 1e-12) & np.all(loads >= 1, axis=1) \
        & np.all(loads <= cfg.N_streams_SBS, axis=1)
    return j_b, served, rates, links, ok


def random_counting_points(cfg: SystemConfig, rng: np.random.Generator, n: int, max_rounds: int = 50):
    """``n`` uniform draws over assignments meeting C2, C7-C10 and C12-C14.

    Clusters are independent, so each is sampled by rejection on its own.
    Returns arrays ``alpha (n, L, U, J_UE)``, ``beta (n, L, J_SBS)``,
    ``kappa (n, L, B, U)`` or ``None`` when rejection keeps failing.
    """
    L, B, U, Us = cfg.L, cfg.B, cfg.U, cfg.U_served
    alpha = np.zeros((n, L, U, len(cfg.ue_table)))
    beta = np.zeros((n, L, len(cfg.sbs_table)))
    kappa = np.zeros((n, L, B, U))
    rows = np.arange(n)[:, None]
    for l in range(L):
        got = []
        have = 0
        for _ in range(max_rounds):
            j_b, served, rates, links, ok = _cluster_batch(cfg, rng, max(64, 2 * n))
            got.append(tuple(x[ok] for x in (j_b, served, rates, links)))
            have += int(ok.sum())
            if have >= n:
                break
        else:
            return None
        j_b, served, rates, links = (np.concatenate(parts)[:n] for parts in zip(*got))
        beta[np.arange(n), l, j_b] = 1.0
        alpha[rows, l, served, rates] = 1.0
        kappa[rows, l, :, served] = links.astype(float)  # (n, Us, B) lands on kappa[n, l, :, served]
    return alpha, beta, kappa


@dataclass
class InitialPoint:
    state: BinaryState
    x: np.ndarray
    objective: float
    attempts: int
    solves: int


class NoInitialPoint(RuntimeError):
    pass


def find_initial_point(cfg: SystemConfig, channels: ChannelSet, params: AlgoParams | None = None,
                       mode: str = "full", beams: PredesignedBeams | None = None,
                       _inst: _Instance | None = None) -> InitialPoint:
    """Random counting-feasible binaries tested with fixed-binary solves.

    Up to ``init_attempts`` distinct draws that pass :meth:`_Instance.screen`
    are pooled; they are then solved in descending objective order and the
    first feasible one (the best of the pool) is returned.
    """
    params = params or AlgoParams()
    conflicts = counting_conflicts(cfg)
    if conflicts:
        raise NoInitialPoint("no feasible initial point: " + "; ".join(conflicts))
    inst = _inst or _Instance(cfg, channels, params, mode, beams)
    rng = np.random.default_rng([params.seed, 7])
    solves0 = inst.n_solves
    pool: dict[bytes, tuple] = {}
    draws = 0
    batch = max(64, params.init_attempts)
    while len(pool) < params.init_attempts and draws < params.init_attempts * params.init_draws:
        got = random_counting_points(cfg, rng, batch)
        if got is None:
            raise NoInitialPoint("no feasible initial point: counting constraints could not be sampled")
        draws += batch
        for draw in zip(*got):
            key = b"".join(np.asarray(d, dtype=bool).tobytes() for d in draw)
            if key not in pool and inst.screen(*draw):
                pool[key] = draw
                if len(pool) >= params.init_attempts:
                    break
    order = sorted(pool.values(), key=lambda d: -weighted_rate(cfg, d[0]))  # stable on ties
    for attempt, draw in enumerate(order, start=1):
        rep = inst.solve_pinned(*draw)
        if rep.status == OPTIMAL:
            return InitialPoint(BinaryState(*draw), rep.x, weighted_rate(cfg, draw[0]), attempt,
                                inst.n_solves - solves0)
    raise NoInitialPoint(f"no feasible initial point after {len(order)} attempts ({draws} draws)")


# ---------------------------------------------------------------- relax and penalize


def _mm_loop(inst: _Instance, name: str, params: AlgoParams) -> RrmSolution:
    cfg = inst.cfg
    t0 = time.perf_counter()
    try:
        init = find_initial_point(cfg, inst.channels, params, inst.kind, inst.beams, _inst=inst)
    except (NoInitialPoint, InfeasibleConfig) as exc:
        return RrmSolution(name, FAILED, message=str(exc), stats={"wall_time": time.perf_counter() - t0,
                                                                  "solves": inst.n_solves})
    lam0 = np.array(params.penalties(cfg))
    lam = lam0.copy()
    ref = init.state
    lay = inst.layout
    trace = [{"iteration": 0, "objective": init.objective, "binary_mse": 0.0,
              "wall_time": time.perf_counter() - t0, "penalized": init.objective, "lambda": float(lam[0]),
              "surrogate": init.objective}]
    x_last = init.x
    prev = None
    status = FEASIBLE
    for it in range(1, params.n_iter + 1):
        prog = penalty_objective(inst.base, cfg, lay, ref, tuple(lam))
        rep = inst.solve(prog)
        if rep.status != OPTIMAL:
            status = NUMERICAL_FAILURE if rep.status != INFEASIBLE else INFEASIBLE
            break
        x_last = rep.x
        a, b, k = (np.clip(rep.x[blk], 0, 1) for blk in (lay.alpha, lay.beta, lay.kappa))
        mse = binary_mse(np.concatenate([a.ravel(), b.ravel(), k.ravel()]))
        trace.append({
            "iteration": it, "objective": weighted_rate(cfg, a), "binary_mse": mse,
            "wall_time": time.perf_counter() - t0, "surrogate": rep.objective,
            "penalized": penalized_objective(cfg, a, b, k, tuple(lam)), "lambda": float(lam[0]),
        })
        ref = BinaryState(a, b, k)
        stalled = prev is not None and abs(rep.objective - prev) <= params.delta * max(abs(rep.objective), 1e-12)
        prev = rep.objective
        if mse <= params.mse_tol:
            break
        if stalled:
            if np.all(lam < lam0 * params.lambda_cap):
                lam = np.minimum(lam * params.lambda_growth, lam0 * params.lambda_cap)
                prev = None
            else:
                break
    if status != FEASIBLE:
        return RrmSolution(name, status, trace=trace, message="subproblem failed",
                           stats={"wall_time": time.perf_counter() - t0, "solves": inst.n_solves})
    ex = extract(cfg, lay, x_last, inst.beams)
    sol = _finish(inst, name, ex.alpha, ex.beta, ex.kappa, params)
    if not sol.ok or sol.objective < init.objective:  # never return less than the certified start
        why = "rounding failed" if not sol.ok else "rounded point below the initial point"
        sol = inst.to_solution(name, FEASIBLE, init.x)
        sol.message = f"{why}; initial point returned"
    sol.trace = trace
    sol.stats.update({"wall_time": time.perf_counter() - t0, "solves": inst.n_solves,
                      "iterations": len(trace) - 1, "final_mse": trace[-1]["binary_mse"],
                      "init_attempts": init.attempts})
    return sol


def solve_rnp1(cfg: SystemConfig, channels: ChannelSet, params: AlgoParams | None = None) -> RrmSolution:
    params = params or AlgoParams()
    try:
        inst = _Instance(cfg, channels, params, "full")
    except InfeasibleConfig as exc:
        return RrmSolution("RnP1", FAILED, message=str(exc))
    return _mm_loop(inst, "RnP1", params)


def solve_rnp2(cfg: SystemConfig, channels: ChannelSet, params: AlgoParams | None = None,
               beams: PredesignedBeams | None = None) -> RrmSolution:
    """Gain-only variant; ``beams`` defaults to ZF access directions and the
    upper-bound multicast directions of this realization."""
    params = params or AlgoParams()
    t0 = time.perf_counter()
    if beams is None:
        beams = predesign_beams(cfg, channels, params)
        if beams is None:
            return RrmSolution("RnP2", FAILED, message="multicast predesign failed")
    try:
        inst = _Instance(cfg, channels, params, "gains", beams)
    except InfeasibleConfig as exc:
        return RrmSolution("RnP2", FAILED, message=str(exc))
    sol = _mm_loop(inst, "RnP2", params)
    sol.stats["wall_time"] = time.perf_counter() - t0
    return sol


def predesign_beams(cfg: SystemConfig, channels: ChannelSet, params: AlgoParams | None = None,
                    realizations: list[ChannelSet] | None = None) -> PredesignedBeams | None:
    """ZF access directions plus averaged upper-bound multicast directions.

    ``realizations`` are extra backhaul realizations (same geometry); the
    current channels always contribute.
    """
    params = params or AlgoParams()
    sets = [channels] + list(realizations or [])
    Ms = []
    for ch in sets[:params.multicast_realizations]:
        ub = solve_upper_bound(cfg, ch, params)
        if ub.M is not None:
            Ms.append(ub.M)
    if not Ms:
        return None
    try:
        m_hat = design_multicast_beams(Ms)
    except ValueError:
        return None
    return PredesignedBeams(w_hat=design_zf_beams(channels, cfg, params.zf_eps), m_hat=m_hat)


__all__ = [
    "AlgoParams", "BRANCHING_RULES", "BranchNode", "InitialPoint", "NoInitialPoint", "RrmSolution", "find_initial_point",
    "predesign_beams", "random_counting_points", "round_and_repair", "round_binaries", "solve_bnc_misocp", "solve_rnp1", "solve_rnp2",
    "solve_upper_bound", "write_trace_csv",
]
