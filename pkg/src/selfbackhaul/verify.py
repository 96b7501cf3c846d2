"""Independent oracle: direct SINR evaluation, the original constraint list
checked on a candidate solution, and exhaustive search on tiny instances.

Nothing here touches the big-M programs except :func:`brute_force_optimum`,
which needs a continuous solve per binary tuple.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .channel import ChannelSet
from .conic import OPTIMAL, SolverOptions, solve
from .system import SystemConfig

INFEASIBLE = "infeasible"


def sinr_sbs(channels: ChannelSet, M: np.ndarray, sigma2: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-SBS multicast SINR and the per-cluster minimum.

    ``M`` has one row per cluster; SBS ``s`` belongs to cluster ``s // B``.
    """
    M = np.atleast_2d(np.asarray(M, dtype=complex))
    L = M.shape[0]
    g = np.asarray(channels.g)
    if g.shape[0] % L or g.shape[1] != M.shape[1]:
        raise ValueError(f"dimension mismatch: g {g.shape} vs M {M.shape}")
    B = g.shape[0] // L
    power = np.abs(g.conj() @ M.T) ** 2  # (L*B, L)
    own = np.repeat(np.arange(L), B)
    sig = power[np.arange(L * B), own]
    sinr = sig / (power.sum(axis=1) - sig + sigma2)
    return sinr, sinr.reshape(L, B).min(axis=1)


def sinr_ue(channels: ChannelSet, W: np.ndarray, kappa: np.ndarray, sigma2: float) -> np.ndarray:
    """Per-UE SINR with coherent combining over the serving SBSs.

    ``W`` is (L, B, U, N_SBS) and ``kappa`` (L, B, U); the effective beamformer
    of a link is ``kappa * w`` so unassociated links never radiate.
    """
    W = np.asarray(W, dtype=complex)
    L, B, U, N = W.shape
    kappa = np.asarray(kappa, dtype=float).reshape(L, B, U)
    h = np.asarray(channels.h)
    if h.shape != (L * B, L * U, N):
        raise ValueError(f"dimension mismatch: h {h.shape} vs W {W.shape}")
    eff = W * kappa[..., None]
    amp = np.einsum("lbkn,lbun->klu", h.reshape(L, B, L * U, N).conj(), eff).reshape(L * U, L * U)
    power = np.abs(amp) ** 2  # power[k, stream]
    sig = np.diag(power)
    return sig / (power.sum(axis=1) - sig + sigma2)


# ---------------------------------------------------------------- P' check


@dataclass
class FamilyCheck:
    passed: bool
    worst_slack: float  # negative means violated; scaled as documented per family
    count: int


@dataclass
class FeasibilityReport:
    families: dict[str, FamilyCheck]
    ue_sinr: np.ndarray
    sbs_sinr_min: np.ndarray
    objective: float
    tol: float
    messages: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(f.passed for f in self.families.values())

    def failed(self) -> list[str]:
        return [k for k, f in self.families.items() if not f.passed]

    def to_dict(self) -> dict:
        def num(v):
            return None if not np.isfinite(v) else float(v)

        return {
            "ok": self.ok,
            "tol": self.tol,
            "objective": num(self.objective),
            "families": {k: {"passed": f.passed, "worst_slack": num(f.worst_slack), "count": f.count}
                         for k, f in self.families.items()},
            "ue_sinr": [num(v) for v in self.ue_sinr],
            "sbs_sinr_min": [num(v) for v in self.sbs_sinr_min],
            "messages": list(self.messages),
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def _family(slack, tol: float) -> FamilyCheck:
    slack = np.atleast_1d(np.asarray(slack, dtype=float))
    if slack.size == 0:
        return FamilyCheck(True, math.inf, 0)
    worst = float(np.min(slack))
    return FamilyCheck(bool(worst >= -tol), worst, int(slack.size))


def check_feasibility_Pprime(cfg: SystemConfig, channels: ChannelSet, solution, tol: float = 1e-6,
                             int_tol: float = 1e-9) -> FeasibilityReport:
    """Evaluate every constraint of the original problem on ``solution``.

    ``solution`` needs ``alpha``, ``beta``, ``kappa``, ``M`` and ``W`` in SI
    units (any object with those attributes).  Slacks are relative: powers
    against their budget, SINRs as (SINR - target) / (1 + target), rate
    budgets against the largest backhaul rate; counting rows are absolute.
    """
    L, B, U = cfg.L, cfg.B, cfg.U
    R_ue, R_sbs = np.asarray(cfg.ue_table.rates), np.asarray(cfg.sbs_table.rates)
    G_ue, G_sbs = np.asarray(cfg.ue_table.sinrs), np.asarray(cfg.sbs_table.sinrs)
    msgs: list[str] = []
    alpha = np.asarray(solution.alpha, dtype=float).reshape(L, U, len(R_ue))
    beta = np.asarray(solution.beta, dtype=float).reshape(L, len(R_sbs))
    kappa = np.asarray(solution.kappa, dtype=float).reshape(L, B, U)
    M = np.asarray(solution.M, dtype=complex).reshape(L, cfg.n_mbs)
    W = np.asarray(solution.W, dtype=complex).reshape(L, B, U, cfg.n_sbs)
    fam: dict[str, FamilyCheck] = {}

    def integral(x):
        return -np.abs(x - np.rint(x)).ravel()

    fam["C1"] = _family(integral(alpha), int_tol)
    fam["C6"] = _family(integral(kappa), int_tol)
    fam["C11"] = _family(integral(beta), int_tol)
    served = alpha.sum(axis=2)
    fam["C2"] = _family(1.0 - served, tol)
    pm = max(cfg.P_tx_MBS, np.finfo(float).tiny)
    fam["C3"] = _family((cfg.P_tx_MBS - np.sum(np.abs(M) ** 2)) / pm, tol)
    eff = W * kappa[..., None]
    ps = max(cfg.P_tx_SBS, np.finfo(float).tiny)
    fam["C4"] = _family(((cfg.P_tx_SBS - np.sum(np.abs(eff) ** 2, axis=(2, 3))) / ps).ravel(), tol)
    ue_sinr = sinr_ue(channels, W, kappa, cfg.sigma2_UE)
    target = (alpha @ G_ue).ravel()
    fam["C5"] = _family((ue_sinr - target) / (1.0 + target), tol)
    per_sbs = kappa.sum(axis=2)
    fam["C7"] = _family((cfg.N_streams_SBS - per_sbs).ravel(), tol)
    fam["C8"] = _family((per_sbs - 1.0).ravel(), tol)
    per_ue = kappa.sum(axis=1)
    fam["C9"] = _family((cfg.B_max * served - per_ue).ravel(), tol)
    fam["C10"] = _family((per_ue - cfg.B_min * served).ravel(), tol)
    fam["C12"] = _family(-np.abs(beta.sum(axis=1) - 1.0), tol)
    access = cfg.W_bw_access * (alpha @ R_ue).sum(axis=1)
    backhaul = cfg.W_bw_backhaul * (beta @ R_sbs)
    fam["C13"] = _family((backhaul - access) / (cfg.W_bw_backhaul * R_sbs.max()), tol)
    fam["C14"] = _family(-np.abs(served.sum(axis=1) - cfg.U_served), tol)
    if cfg.P_tx_MBS > 0 or np.any(M):
        _, cluster_min = sinr_sbs(channels, M, cfg.sigma2_SBS)
    else:
        cluster_min = np.zeros(L)
    tb = beta @ G_sbs
    fam["C15"] = _family((cluster_min - tb) / (1.0 + tb), tol)
    objective = float(np.sum(cfg.weight_vector().reshape(L, U) * (alpha @ R_ue)))
    rep_obj = getattr(solution, "objective", None)
    if rep_obj is not None and np.isfinite(rep_obj) and abs(rep_obj - objective) > 1e-9 * max(1.0, abs(objective)):
        msgs.append(f"reported objective {rep_obj!r} differs from recomputed {objective!r}")
    for k, f in fam.items():
        if not f.passed:
            msgs.append(f"{k} violated (worst slack {f.worst_slack:.3e})")
    return FeasibilityReport(fam, ue_sinr, cluster_min, objective, tol, msgs)


def check_cuts(cfg: SystemConfig, channels: ChannelSet, solution, tol: float = 1e-6) -> dict[str, FamilyCheck]:
    """The valid inequalities C16 (multicast numerator) and C22 (unicast numerator),
    evaluated on the original channels.  Slack is (num / sigma^2 - x * Gamma) / (1 + Gamma)."""
    L, B, U = cfg.L, cfg.B, cfg.U
    G_ue, G_sbs = np.asarray(cfg.ue_table.sinrs), np.asarray(cfg.sbs_table.sinrs)
    alpha = np.asarray(solution.alpha, dtype=float).reshape(L, U, -1)
    beta = np.asarray(solution.beta, dtype=float).reshape(L, -1)
    kappa = np.asarray(solution.kappa, dtype=float).reshape(L, B, U)
    M = np.asarray(solution.M, dtype=complex).reshape(L, cfg.n_mbs)
    W = np.asarray(solution.W, dtype=complex).reshape(L, B, U, cfg.n_sbs)
    g = np.asarray(channels.g).reshape(L, B, -1)
    num_b = np.abs(np.einsum("lbn,ln->lb", g.conj(), M)) ** 2 / cfg.sigma2_SBS  # (L, B)
    c16 = (num_b[:, :, None] - beta[:, None, :] * G_sbs) / (1.0 + G_sbs)
    h = np.asarray(channels.h).reshape(L, B, L, U, cfg.n_sbs)
    own = np.einsum("lbun,lbun->lu", _own_channels(h).conj(), W * kappa[..., None])
    num_u = np.abs(own) ** 2 / cfg.sigma2_UE  # (L, U)
    c22 = (num_u[:, :, None] - alpha * G_ue) / (1.0 + G_ue)
    return {"C16": _family(c16.ravel(), tol), "C22": _family(c22.ravel(), tol)}


def _own_channels(h: np.ndarray) -> np.ndarray:
    """(L, B, L, U, N) -> (L, B, U, N): each SBS's channel to the UEs of its own cluster."""
    L = h.shape[0]
    return np.stack([h[l, :, l] for l in range(L)])


def effective_throughput(cfg: SystemConfig, channels: ChannelSet, solution, rel_tol: float = 1e-6) -> float:
    """Access throughput (bps) actually delivered on ``channels``.

    A UE whose SINR falls below its selected target decodes nothing, and a
    cluster whose worst SBS misses the backhaul target delivers nothing to
    any of its UEs.  Used when the design saw estimated channels.
    """
    L, U = cfg.L, cfg.U
    alpha = np.asarray(solution.alpha, dtype=float).reshape(L, U, -1)
    beta = np.asarray(solution.beta, dtype=float).reshape(L, -1)
    ue = sinr_ue(channels, solution.W, solution.kappa, cfg.sigma2_UE).reshape(L, U)
    _, bh = sinr_sbs(channels, solution.M, cfg.sigma2_SBS)
    ok_ue = ue >= (alpha @ np.asarray(cfg.ue_table.sinrs)) * (1 - rel_tol)
    ok_bh = bh >= (beta @ np.asarray(cfg.sbs_table.sinrs)) * (1 - rel_tol)
    rates = (alpha @ np.asarray(cfg.ue_table.rates)) * ok_ue * ok_bh[:, None]
    return cfg.W_bw_access * float(rates.sum())


# ---------------------------------------------------------------- brute force


@dataclass
class BruteForceResult:
    status: str
    objective: float
    alpha: np.ndarray | None
    beta: np.ndarray | None
    kappa: np.ndarray | None
    n_admissible: int
    n_solved: int
    x: np.ndarray | None = None


def _cluster_options(cfg: SystemConfig):
    """Every per-cluster (rate row of beta, alpha, kappa) meeting the counting rows."""
    B, U = cfg.B, cfg.U
    Ju, Js = len(cfg.ue_table), len(cfg.sbs_table)
    link_sets = [s for k in range(cfg.B_min, cfg.B_max + 1) for s in itertools.combinations(range(B), k)]
    opts = []
    for served in itertools.combinations(range(U), cfg.U_served):
        for links in itertools.product(link_sets, repeat=len(served)):
            kap = np.zeros((B, U))
            for u, s in zip(served, links):
                kap[list(s), u] = 1.0
            loads = kap.sum(axis=1)
            if np.any(loads < 1) or np.any(loads > cfg.N_streams_SBS):
                continue
            for rates in itertools.product(range(Ju), repeat=len(served)):
                a = np.zeros((U, Ju))
                a[list(served), list(rates)] = 1.0
                for jb in range(Js):
                    b = np.zeros(Js)
                    b[jb] = 1.0
                    opts.append((a, b, kap))
    return opts


def admissible_count(cfg: SystemConfig) -> int:
    """Closed-form number of binary tuples meeting the counting structure
    (C1, C2, C6-C12, C14), by inclusion-exclusion over SBSs left idle."""
    B, Us = cfg.B, cfg.U_served
    Ju, Js = len(cfg.ue_table), len(cfg.sbs_table)
    if cfg.N_streams_SBS < Us:
        # the stream cap can bind; count it directly
        return len(_cluster_options(cfg)) ** cfg.L
    total = 0
    for idle in range(B + 1):
        avail = B - idle
        per_ue = sum(math.comb(avail, k) for k in range(cfg.B_min, min(cfg.B_max, avail) + 1))
        total += (-1) ** idle * math.comb(B, idle) * per_ue ** Us
    per_cluster = math.comb(cfg.U, Us) * total * Ju ** Us * Js
    return per_cluster ** cfg.L


def brute_force_optimum(cfg: SystemConfig, channels: ChannelSet, params=None, cap: int = 2 ** 20,
                        exhaustive: bool = False) -> BruteForceResult:
    """Best objective over all admissible binary tuples.

    Tuples are visited in descending objective order, each tested with the
    fixed-binary continuous program; the first feasible one is optimal.
    ``exhaustive`` solves every tuple that passes the rate budget instead.
    """
    from .formulation import BinaryState, apply_state, build_p0_relaxation, compute_bigM, layout_for

    n_adm = admissible_count(cfg)
    if n_adm > cap:
        raise ValueError(f"instance too large: {n_adm} admissible tuples exceed the cap {cap}")
    solver = getattr(params, "solver", None) or SolverOptions()
    per = _cluster_options(cfg)
    R_ue, R_sbs = np.asarray(cfg.ue_table.rates), np.asarray(cfg.sbs_table.rates)
    bw = cfg.W_bw_access / cfg.W_bw_backhaul
    w = cfg.weight_vector().reshape(cfg.L, cfg.U)
    scored = []
    for combo in itertools.product(range(len(per)), repeat=cfg.L):
        obj = 0.0
        budget_ok = True
        for l, k in enumerate(combo):
            a, b, _ = per[k]
            obj += float(np.sum(w[l] * (a @ R_ue)))
            budget_ok &= bool(bw * float(np.sum(a @ R_ue)) <= float(b @ R_sbs) + 1e-12)
        if budget_ok:
            scored.append((-obj, combo))
    scored.sort(key=lambda t: t[0])  # stable: ties keep enumeration order
    base = build_p0_relaxation(cfg, channels, compute_bigM(channels, cfg))
    layout = layout_for(cfg, "full")
    best = BruteForceResult(INFEASIBLE, -math.inf, None, None, None, n_adm, 0)
    n_solved = 0
    for neg, combo in scored:
        if not exhaustive and best.alpha is not None and -neg <= best.objective:
            break
        alpha = np.stack([per[k][0] for k in combo])
        beta = np.stack([per[k][1] for k in combo])
        kappa = np.stack([per[k][2] for k in combo])
        rep = solve(apply_state(base, layout, BinaryState.pinned(alpha, beta, kappa)), solver)
        n_solved += 1
        if rep.status == OPTIMAL and -neg > best.objective:
            best = BruteForceResult(OPTIMAL, -neg, alpha, beta, kappa, n_adm, n_solved, rep.x)
    return replace(best, n_solved=n_solved)


__all__ = [
    "BruteForceResult", "FamilyCheck", "FeasibilityReport", "admissible_count", "brute_force_optimum",
    "check_cuts", "check_feasibility_Pprime", "effective_throughput", "sinr_sbs", "sinr_ue",
]
