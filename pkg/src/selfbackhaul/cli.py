"""Command-line front end: ``selfbackhaul {run,slotted,validate,oracle} SPEC``.

``SPEC`` is a JSON file or the name of a shipped preset (S1 ... S6).
Exit status is 0 only when every requested record succeeded, unless
``--allow-failures`` is given.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import scenario as sc
from .algorithms import solve_bnc_misocp
from .verify import brute_force_optimum

log = logging.getLogger("selfbackhaul")


def _spec(arg: str) -> sc.ScenarioSpec:
    path = Path(arg)
    if path.exists():
        return sc.load_spec(path)
    if arg in sc.preset_names():
        return sc.preset(arg)
    raise SystemExit(f"error: no spec file or preset named {arg!r} (presets: {', '.join(sc.preset_names())})")


def _apply_flags(spec: sc.ScenarioSpec, args) -> sc.ScenarioSpec:
    changes = {}
    if args.seed is not None:
        changes["seed_base"] = args.seed
    if args.out_dir is not None:
        changes["out_dir"] = args.out_dir
    if getattr(args, "algorithms", None):
        changes["algorithms"] = [a.strip() for a in args.algorithms.split(",") if a.strip()]
    if getattr(args, "realizations", None):
        changes["realizations"] = args.realizations
    return replace(spec, **changes)


def cmd_validate(args) -> int:
    spec = _apply_flags(_spec(args.spec), args)
    errs = spec.validate()
    for e in errs:
        print(f"invalid: {e}")
    if not errs:
        n = len(spec.points())
        print(f"ok: {spec.scenario}, {n} sweep point(s) x {spec.realizations} seed(s) x {len(spec.algorithms)} "
              f"algorithm(s) = {n * spec.realizations * len(spec.algorithms)} records")
    return 1 if errs else 0


def cmd_run(args) -> int:
    spec = _apply_flags(_spec(args.spec), args)
    errs = spec.validate()
    if errs:
        for e in errs:
            print(f"invalid: {e}", file=sys.stderr)
        return 2
    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    def progress(done, total):
        log.info("realization %d/%d", done, total)

    records, summary = sc.run_scenario(spec, parallel=args.parallel, progress=progress)
    sc.write_records(out / f"{spec.scenario}_records.csv", records)
    (out / f"{spec.scenario}_summary.json").write_text(json.dumps(summary, indent=2), encoding="utf-8")
    failed = [r for r in records if r["status"] not in sc.OK_STATUSES or r["verified"] is False]
    print(f"{len(records)} records, {len(failed)} failed -> {out}")
    for r in failed:
        print(f"  failed: point {r['point']} seed {r['seed']} {r['algorithm']}: {r['status']} {r['message']}")
    return 0 if not failed or args.allow_failures else 1


def cmd_slotted(args) -> int:
    spec = _apply_flags(_spec(args.spec), args)
    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        rows, state = sc.run_slotted(spec, algorithm=args.algorithm, rounds=args.rounds)
    except sc.SpecError as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return 2
    sc.write_rows(out / f"{spec.scenario}_slotted.csv", rows, sc.SLOT_COLUMNS)
    ratio = sc.fairness_by_round(rows, spec.config_for(spec.points()[0]).L)
    summary = {"slots": state.n, "cumulative_bits": state.cumulative.tolist(), "weights": state.weights.tolist(),
               "max_min_ratio_by_round": ratio.tolist()}
    (out / f"{spec.scenario}_slotted_summary.json").write_text(json.dumps(summary, indent=2), encoding="utf-8")
    print(f"{state.n} slots -> {out}")
    return 0


def cmd_oracle(args) -> int:
    spec = _apply_flags(_spec(args.spec), args)
    point = spec.points()[0]
    cfg = spec.config_for(point)
    params = spec.algo_params()
    status = 0
    rows = []
    for r in range(spec.realizations):
        seed = spec.seed_base + r
        ch = sc.realization(cfg, seed)
        try:
            bf = brute_force_optimum(cfg, ch, params)
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        bnc = solve_bnc_misocp(cfg, ch, params)
        a, b = bf.objective, bnc.objective if bnc.ok else -np.inf
        match = (not np.isfinite(a) and not bnc.ok) or abs(a - b) <= 1e-6 * max(1.0, abs(a))
        rows.append({"seed": seed, "brute_force": a, "bnc": b, "admissible": bf.n_admissible, "match": bool(match)})
        print(f"seed {seed}: brute force {a!r} ({bf.n_solved} solves of {bf.n_admissible}), BnC {b!r} "
              f"[{bnc.status}] {'match' if match else 'MISMATCH'}")
        if not match:
            status = 1
    if spec.out_dir:
        out = Path(spec.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{spec.scenario}_oracle.json").write_text(json.dumps(rows, indent=2), encoding="utf-8")
    return 0 if status == 0 or args.allow_failures else status


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="selfbackhaul", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("spec", help="scenario JSON file or preset name")
        sp.add_argument("--seed", type=int, help="override the seed base")
        sp.add_argument("--out-dir", help="override the output directory")
        sp.add_argument("--allow-failures", action="store_true", help="exit 0 even if some records failed")

    r = sub.add_parser("run", help="Monte-Carlo sweep")
    common(r)
    r.add_argument("--algorithms", help="comma list from UB,LB,BnC,RnP1,RnP2")
    r.add_argument("--realizations", type=int)
    r.add_argument("--parallel", type=int, default=1, help="worker processes")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("slotted", help="slotted proportional-fair run")
    common(s)
    s.add_argument("--algorithm", default="RnP1", choices=["RnP1", "RnP2", "BnC"])
    s.add_argument("--rounds", type=int)
    s.set_defaults(func=cmd_slotted)

    v = sub.add_parser("validate", help="check a spec without solving")
    common(v)
    v.add_argument("--algorithms")
    v.set_defaults(func=cmd_validate)

    o = sub.add_parser("oracle", help="branch-and-bound vs brute force on a tiny spec")
    common(o)
    o.add_argument("--realizations", type=int)
    o.set_defaults(func=cmd_oracle)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
