"""Monte-Carlo sweeps and slotted runs over scenario specs.

A spec fixes a base configuration plus sweep axes; every (sweep point, seed)
pair draws one topology and one channel realization that all requested
algorithms share.  Records are plain rows with a fixed column order.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

import numpy as np

from .algorithms import (
    AlgoParams,
    RrmSolution,
    predesign_beams,
    solve_bnc_misocp,
    solve_rnp1,
    solve_rnp2,
    solve_upper_bound,
)
from .channel import ChannelSet, PerturbationSpec, generate_channels, perturb_channels
from .conic import SolverOptions
from .formulation import PredesignedBeams, design_multicast_beams, design_zf_beams
from .system import SystemConfig, dbm_to_watt, generate_topology, lower_bound_rate, validate_config
from .verify import check_feasibility_Pprime, effective_throughput

ALGORITHMS = ("UB", "LB", "BnC", "RnP1", "RnP2")
RUN_ORDER = ("UB", "LB", "RnP1", "RnP2", "BnC")  # BnC last so it can start from the penalty results

COLUMNS = (
    "scenario", "point", "P_tx_MBS_dBm", "P_tx_SBS_dBm", "L", "B", "N_tx_MBS", "chi_backhaul", "chi_access",
    "seed", "algorithm", "status", "verified", "objective", "throughput_bps", "effective_throughput_bps",
    "backhaul_throughput_bps", "bound", "rate_indices", "iterations", "wall_time_s", "channel_fingerprint",
    "message",
)

OK_STATUSES = ("feasible", "optimal", "node-limit", "closed-form")


class SpecError(ValueError):
    pass


@dataclass
class ScenarioSpec:
    scenario: str = "custom"
    base: dict = field(default_factory=dict)  # SystemConfig fields (dBm keys accepted)
    P_tx_MBS_dBm: list = field(default_factory=lambda: [27.0])
    P_tx_SBS_dBm: list = field(default_factory=lambda: [14.0])
    L: list = field(default_factory=list)  # empty: take the base value
    B: list = field(default_factory=list)
    N_tx_MBS: list = field(default_factory=list)  # [[rows, cols], ...]
    chi_backhaul: list = field(default_factory=lambda: [0.0])
    chi_access: list = field(default_factory=lambda: [0.0])
    realizations: int = 1
    seed_base: int = 0
    algorithms: list = field(default_factory=lambda: ["UB", "LB", "RnP1"])
    params: dict = field(default_factory=dict)  # AlgoParams overrides
    slots: int = 0  # slotted runs: number of rounds
    slot_duration: float = 1e-3  # seconds
    out_dir: str = "results"

    def validate(self) -> list[str]:
        errs = []
        for name in ("P_tx_MBS_dBm", "P_tx_SBS_dBm", "chi_backhaul", "chi_access"):
            if not getattr(self, name):
                errs.append(f"sweep list {name} is empty")
        if self.realizations < 1:
            errs.append("realizations must be >= 1")
        bad = [a for a in self.algorithms if a not in ALGORITHMS]
        if bad:
            errs.append(f"unknown algorithms {bad}")
        if not self.algorithms:
            errs.append("no algorithm selected")
        for chi in list(self.chi_backhaul) + list(self.chi_access):
            if not 0.0 <= float(chi) <= 1.0:
                errs.append(f"chi {chi} outside [0, 1]")
        try:
            self.algo_params()
        except (TypeError, ValueError) as exc:
            errs.append(f"params: {exc}")
        try:
            for pt in self.points():
                errs.extend(f"point {pt['point']}: {m}" for m in validate_config(self.config_for(pt)))
        except (TypeError, ValueError) as exc:
            errs.append(f"base: {exc}")
        return errs

    def algo_params(self) -> AlgoParams:
        kw = dict(self.params)
        if "solver" in kw and isinstance(kw["solver"], dict):
            kw["solver"] = SolverOptions(**kw["solver"])
        return AlgoParams(**kw)

    def base_config(self) -> SystemConfig:
        return SystemConfig.from_dict(self.base)

    def points(self) -> list[dict]:
        base = self.base_config()
        axes = [
            self.P_tx_MBS_dBm, self.P_tx_SBS_dBm, self.L or [base.L], self.B or [base.B],
            [tuple(n) for n in self.N_tx_MBS] or [tuple(base.N_tx_MBS)], self.chi_backhaul, self.chi_access,
        ]
        out = []
        for i, (pm, ps, L, B, nm, cb, ca) in enumerate(itertools.product(*axes)):
            out.append({"point": i, "P_tx_MBS_dBm": float(pm), "P_tx_SBS_dBm": float(ps), "L": int(L),
                        "B": int(B), "N_tx_MBS": tuple(int(v) for v in nm), "chi_backhaul": float(cb),
                        "chi_access": float(ca)})
        return out

    def config_for(self, point: dict) -> SystemConfig:
        base = self.base_config()
        changes = dict(P_tx_MBS=dbm_to_watt(point["P_tx_MBS_dBm"]), P_tx_SBS=dbm_to_watt(point["P_tx_SBS_dBm"]),
                       L=point["L"], B=point["B"], N_tx_MBS=tuple(point["N_tx_MBS"]))
        if base.B_max is not None and base.B_max > point["B"]:
            changes["B_max"] = point["B"]
        if base.weights is not None and point["L"] != base.L:
            changes["weights"] = None
        return base.with_(**changes)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise SpecError(f"unknown spec fields {sorted(extra)}")
        return cls(**d)


def load_spec(path: str | Path) -> ScenarioSpec:
    return ScenarioSpec.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def preset(name: str) -> ScenarioSpec:
    """Shipped scenario presets (S1 ... S6)."""
    text = resources.files("selfbackhaul").joinpath("presets", f"{name}.json").read_text(encoding="utf-8")
    return ScenarioSpec.from_dict(json.loads(text))


def preset_names() -> list[str]:
    folder = resources.files("selfbackhaul").joinpath("presets")
    return sorted(p.name[:-5] for p in folder.iterdir() if p.name.endswith(".json"))


# ---------------------------------------------------------------- one realization


def realization(cfg: SystemConfig, seed: int) -> ChannelSet:
    top = generate_topology(cfg, np.random.default_rng(seed))
    return generate_channels(top, cfg, seed)


def design_channels(true: ChannelSet, chi_backhaul: float, chi_access: float, seed: int) -> ChannelSet:
    """The estimate the optimizer sees; identical to ``true`` when both chis are 0."""
    ch = true
    if chi_backhaul > 0:
        ch = perturb_channels(ch, PerturbationSpec(chi_backhaul, "backhaul", seed))
    if chi_access > 0:
        ch = perturb_channels(ch, PerturbationSpec(chi_access, "access", seed))
    return ch


def _record(spec: ScenarioSpec, point: dict, seed: int, algorithm: str, fingerprint: str) -> dict:
    row = {c: "" for c in COLUMNS}
    row.update({
        "scenario": spec.scenario, "point": point["point"], "P_tx_MBS_dBm": point["P_tx_MBS_dBm"],
        "P_tx_SBS_dBm": point["P_tx_SBS_dBm"], "L": point["L"], "B": point["B"],
        "N_tx_MBS": "x".join(str(v) for v in point["N_tx_MBS"]), "chi_backhaul": point["chi_backhaul"],
        "chi_access": point["chi_access"], "seed": seed, "algorithm": algorithm,
        "channel_fingerprint": fingerprint,
    })
    return row


def _fill(row: dict, sol: RrmSolution, cfg: SystemConfig, design: ChannelSet, true: ChannelSet, wall: float):
    row["status"] = sol.status
    row["objective"] = sol.objective
    row["throughput_bps"] = sol.throughput
    row["backhaul_throughput_bps"] = sol.backhaul_throughput
    row["bound"] = sol.bound
    row["iterations"] = sol.stats.get("iterations", sol.stats.get("nodes", ""))
    row["wall_time_s"] = wall
    row["message"] = sol.message
    if sol.alpha is not None:
        row["rate_indices"] = " ".join(str(int(i)) for i in sol.rate_indices())
        report = check_feasibility_Pprime(cfg, design, sol)
        row["verified"] = report.ok
        if not report.ok:
            row["message"] = (row["message"] + "; " if row["message"] else "") + "; ".join(report.messages)
        row["effective_throughput_bps"] = effective_throughput(cfg, true, sol) if design is not true \
            else sol.throughput


def beams_from_upper_bound(cfg: SystemConfig, channels: ChannelSet, params: AlgoParams,
                           ub: RrmSolution | None) -> PredesignedBeams | None:
    if ub is None or ub.M is None:
        return predesign_beams(cfg, channels, params)
    try:
        m_hat = design_multicast_beams([ub.M])
    except ValueError:
        return None
    return PredesignedBeams(w_hat=design_zf_beams(channels, cfg, params.zf_eps), m_hat=m_hat)


def run_point(spec: ScenarioSpec, point: dict, seed: int, solutions: dict | None = None) -> list[dict]:
    """All requested algorithms on one realization; rows in ALGORITHMS order.

    ``solutions``, when given, receives the RrmSolution of every solver run
    keyed by algorithm name (traces and bounds are not part of the records).
    """
    cfg = spec.config_for(point)
    params = spec.algo_params()
    true = realization(cfg, seed)
    design = design_channels(true, point["chi_backhaul"], point["chi_access"], seed)
    fp = design.fingerprint()
    wanted = set(spec.algorithms)
    rows: dict[str, dict] = {}
    sols: dict[str, RrmSolution] = {}
    for name in RUN_ORDER:
        if name not in wanted:
            continue
        row = _record(spec, point, seed, name, fp)
        t0 = time.perf_counter()
        if name == "LB":
            lb = lower_bound_rate(cfg)
            row.update(status="closed-form", throughput_bps=lb, effective_throughput_bps=lb,
                       objective=lb / cfg.W_bw_access * float(np.max(cfg.weight_vector())),
                       wall_time_s=time.perf_counter() - t0)
            rows[name] = row
            continue
        try:
            if name == "UB":
                sol = solve_upper_bound(cfg, design, params)
            elif name == "RnP1":
                sol = solve_rnp1(cfg, design, params)
            elif name == "RnP2":
                beams = beams_from_upper_bound(cfg, design, params, sols.get("UB"))
                sol = solve_rnp2(cfg, design, params, beams) if beams is not None else \
                    RrmSolution("RnP2", "failed", message="multicast predesign failed")
            else:
                seeds = [s for k, s in sols.items() if k in ("RnP1", "RnP2") and s.ok]
                best = max(seeds, key=lambda s: s.objective) if seeds else None
                sol = solve_bnc_misocp(cfg, design, params, incumbent=best)
        except Exception as exc:  # a record failure never stops the sweep
            sol = RrmSolution(name, "failed", message=f"{type(exc).__name__}: {exc}")
        sols[name] = sol
        if solutions is not None:
            solutions[name] = sol
        _fill(row, sol, cfg, design, true, time.perf_counter() - t0)
        if name == "UB":
            row["effective_throughput_bps"] = row["throughput_bps"]
        rows[name] = row
    return [rows[a] for a in ALGORITHMS if a in rows]


def _task(args):
    spec_dict, point, seed = args
    return run_point(ScenarioSpec.from_dict(spec_dict), point, seed)


def run_scenario(spec: ScenarioSpec, parallel: int = 1, progress=None) -> tuple[list[dict], list[dict]]:
    """Records ordered by (sweep point, seed, algorithm) plus a per-point summary."""
    errs = spec.validate()
    if errs:
        raise SpecError("; ".join(errs))
    tasks = [(spec.to_dict(), pt, spec.seed_base + r) for pt in spec.points() for r in range(spec.realizations)]
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            chunks = list(pool.map(_task, tasks))  # map keeps submission order
    else:
        chunks = []
        for t in tasks:
            chunks.append(_task(t))
            if progress:
                progress(len(chunks), len(tasks))
    records = [row for chunk in chunks for row in chunk]
    return records, summarize(records)


def summarize(records: list[dict]) -> list[dict]:
    groups: dict[tuple, list[dict]] = {}
    for r in records:
        groups.setdefault((r["point"], r["algorithm"]), []).append(r)
    out = []
    for (point, alg), rows in sorted(groups.items(), key=lambda kv: (kv[0][0], ALGORITHMS.index(kv[0][1]))):
        good = [r for r in rows if r["status"] in OK_STATUSES]
        thr = np.array([float(r["throughput_bps"]) for r in good])
        eff = np.array([float(r["effective_throughput_bps"]) for r in good if r["effective_throughput_bps"] != ""])
        wall = np.array([float(r["wall_time_s"]) for r in rows if r["wall_time_s"] != ""])
        out.append({
            "point": point, "algorithm": alg, "records": len(rows), "succeeded": len(good),
            "throughput_mean": float(thr.mean()) if thr.size else None,
            "throughput_std": float(thr.std()) if thr.size else None,
            "effective_throughput_mean": float(eff.mean()) if eff.size else None,
            "wall_time_median": float(np.median(wall)) if wall.size else None,
            **{k: rows[0][k] for k in ("P_tx_MBS_dBm", "P_tx_SBS_dBm", "L", "B", "N_tx_MBS", "chi_backhaul",
                                       "chi_access")},
        })
    return out


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def write_records(path: str | Path, records: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(COLUMNS))
        w.writeheader()
        for r in records:
            w.writerow({k: _cell(r.get(k, "")) for k in COLUMNS})


def records_csv(records: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(COLUMNS))
    w.writeheader()
    for r in records:
        w.writerow({k: _cell(r.get(k, "")) for k in COLUMNS})
    return buf.getvalue()


def read_records(path: str | Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------- slotted


SLOT_COLUMNS = ("slot", "round", "cluster", "ue", "served", "rate_index", "rate_bps", "cumulative_bits", "weight")


@dataclass
class SlottedState:
    n: int  # slots completed
    T: float
    cumulative: np.ndarray  # bits per global UE
    weights: np.ndarray
    history: list = field(default_factory=list)  # served global UEs per slot


def update_weights(cumulative_bits: np.ndarray, floor_bits: float = 1.0) -> np.ndarray:
    """Reciprocal cumulative throughput with an additive floor, normalized to sum 1."""
    w = 1.0 / (floor_bits + np.asarray(cumulative_bits, dtype=float))
    return w / w.sum()


def _slot_channels(full: ChannelSet, cfg: SystemConfig, candidates: list[list[int]]) -> ChannelSet:
    from dataclasses import replace

    idx = [l * cfg.U + u for l in range(cfg.L) for u in candidates[l]]
    return replace(full, h=full.h[:, idx, :])


def run_slotted(spec: ScenarioSpec, algorithm: str = "RnP1", rounds: int | None = None,
                seed: int | None = None, adapt_weights: bool = True) -> tuple[list[dict], SlottedState]:
    """Round-robin batches of U_served UEs per cluster; weights refresh after each round.

    Each round draws a fresh realization (same geometry) shared by its slots.  Returns one row per
    (slot, UE) with the cumulative bits after the slot.  ``adapt_weights=False``
    keeps equal weights throughout (the no-fairness baseline).
    """
    point = spec.points()[0]
    cfg = spec.config_for(point)
    if cfg.U % cfg.U_served:
        raise SpecError(f"U={cfg.U} is not divisible by U_served={cfg.U_served}")
    rounds = rounds if rounds is not None else (spec.slots or 10)
    seed = spec.seed_base if seed is None else seed
    params = spec.algo_params()
    per_round = cfg.U // cfg.U_served
    top = generate_topology(cfg, np.random.default_rng(seed))
    n_ue = cfg.L * cfg.U
    state = SlottedState(0, spec.slot_duration, np.zeros(n_ue), np.full(n_ue, 1.0 / n_ue))
    solver = {"RnP1": solve_rnp1, "RnP2": solve_rnp2, "BnC": solve_bnc_misocp}[algorithm]
    rows = []
    R = np.asarray(cfg.ue_table.rates)
    for rnd in range(rounds):
        remaining = [list(range(cfg.U)) for _ in range(cfg.L)]
        full = generate_channels(top, cfg, int(seed * 100003 + rnd))  # re-estimated once per round
        for k in range(per_round):
            slot = rnd * per_round + k
            cand = [list(r) for r in remaining]
            sub_w = np.array([state.weights[l * cfg.U + u] for l in range(cfg.L) for u in cand[l]])
            sub_cfg = cfg.with_(U=len(cand[0]), weights=tuple(sub_w / sub_w.sum()),
                                B_max=cfg.B_max)
            ch = _slot_channels(full, cfg, cand)
            sol = solver(sub_cfg, ch, params)
            rate_bps = np.zeros(n_ue)
            idx = np.full(n_ue, -1)
            served = []
            if sol.ok:
                ri = sol.rate_indices().reshape(cfg.L, -1)
                for l in range(cfg.L):
                    for pos, u in enumerate(cand[l]):
                        if ri[l, pos] >= 0:
                            g = l * cfg.U + u
                            idx[g] = ri[l, pos]
                            rate_bps[g] = cfg.W_bw_access * R[ri[l, pos]]
                            served.append(g)
                            remaining[l].remove(u)
            else:  # nobody served this slot; force progress through the round
                for l in range(cfg.L):
                    for u in cand[l][:cfg.U_served]:
                        remaining[l].remove(u)
            state.cumulative += rate_bps * state.T
            state.n += 1
            state.history.append(sorted(served))
            for g in range(n_ue):
                rows.append({"slot": slot, "round": rnd, "cluster": g // cfg.U, "ue": g,
                             "served": g in served, "rate_index": int(idx[g]), "rate_bps": float(rate_bps[g]),
                             "cumulative_bits": float(state.cumulative[g]), "weight": float(state.weights[g])})
        if adapt_weights:
            state.weights = update_weights(state.cumulative)
    return rows, state


def fairness_by_round(rows: list[dict], cfg_L: int, floor_bits: float = 1.0) -> np.ndarray:
    """Max/min cumulative throughput ratio per (round, cluster) at the end of each round."""
    last: dict[tuple[int, int], dict[int, float]] = {}
    for r in rows:
        last.setdefault((r["round"], r["cluster"]), {})[r["ue"]] = r["cumulative_bits"]
    n_rounds = 1 + max(r["round"] for r in rows)
    out = np.zeros((n_rounds, cfg_L))
    for (rnd, l), d in last.items():
        v = np.array(list(d.values())) + floor_bits
        out[rnd, l] = v.max() / v.min()
    return out


def write_rows(path: str | Path, rows: list[dict], columns) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns))
        w.writeheader()
        for r in rows:
            w.writerow({k: _cell(r[k]) for k in columns})


__all__ = [
    "ALGORITHMS", "COLUMNS", "SLOT_COLUMNS", "ScenarioSpec", "SlottedState", "SpecError", "design_channels",
    "fairness_by_round", "load_spec", "preset", "preset_names", "read_records", "realization", "records_csv",
    "run_point", "run_scenario", "run_slotted", "summarize", "update_weights", "write_records", "write_rows",
]
