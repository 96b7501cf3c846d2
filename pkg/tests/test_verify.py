from dataclasses import replace

import numpy as np
import pytest

from selfbackhaul.algorithms import solve_bnc_misocp
from selfbackhaul.verify import (
    admissible_count,
    brute_force_optimum,
    check_cuts,
    check_feasibility_Pprime,
    effective_throughput,
    sinr_sbs,
    sinr_ue,
)

from instances import s1_config, small_config, tiny, tiny_config
from oracles import admissible_count_enumerated, sinr_sbs_loops, sinr_ue_loops
from selfbackhaul.scenario import realization


def _random_beams(cfg, rng):
    M = rng.standard_normal((cfg.L, cfg.n_mbs)) + 1j * rng.standard_normal((cfg.L, cfg.n_mbs))
    W = rng.standard_normal((cfg.L, cfg.B, cfg.U, cfg.n_sbs)) + 1j * rng.standard_normal((cfg.L, cfg.B, cfg.U, cfg.n_sbs))
    kappa = (rng.random((cfg.L, cfg.B, cfg.U)) < 0.6).astype(float)
    return 1e-2 * M, 1e-2 * W, kappa


def test_sinr_evaluators_match_loops():
    cfg = small_config(L=2, B=2, U=3)
    ch = realization(cfg, 9)
    M, W, kappa = _random_beams(cfg, np.random.default_rng(0))
    assert np.allclose(sinr_ue(ch, W, kappa, cfg.sigma2_UE), sinr_ue_loops(ch.h, W, kappa, cfg.sigma2_UE), rtol=1e-10)
    per, cmin = sinr_sbs(ch, M, cfg.sigma2_SBS)
    ref = sinr_sbs_loops(ch.g, M, cfg.sigma2_SBS)
    assert np.allclose(per, ref, rtol=1e-10)
    assert np.allclose(cmin, ref.reshape(cfg.L, cfg.B).min(axis=1))


def test_admissible_count_closed_form():
    for i in range(8):
        cfg = tiny_config(i)
        ref = admissible_count_enumerated(cfg.L, cfg.B, cfg.U, cfg.U_served, 2, 2, cfg.B_min, cfg.B_max,
                                          cfg.N_streams_SBS)
        assert admissible_count(cfg) == ref
    tight = tiny_config(6).with_(N_streams_SBS=1)
    assert admissible_count(tight) == admissible_count_enumerated(1, 2, 3, 2, 2, 2, 1, 2, 1)


def test_brute_force_cap():
    cfg = s1_config()
    with pytest.raises(ValueError, match="too large"):
        brute_force_optimum(cfg, realization(cfg, 1))


@pytest.fixture(scope="module")
def solved_tiny():
    cfg, ch = tiny(1)
    return cfg, ch, solve_bnc_misocp(cfg, ch)


def test_feasible_solution_passes_every_family(solved_tiny):
    cfg, ch, sol = solved_tiny
    rep = check_feasibility_Pprime(cfg, ch, sol)
    assert rep.ok, rep.messages
    assert set(rep.families) >= {"C1", "C2", "C3", "C4", "C5", "C13", "C14", "C15"}
    assert rep.objective == pytest.approx(sol.objective)
    assert '"ok": true' in rep.to_json()
    cuts = check_cuts(cfg, ch, sol)
    assert cuts["C16"].passed and cuts["C22"].passed


def _lowest_rate(beta):
    out = np.zeros_like(beta)
    out[:, 0] = 1.0
    return out


def _all_top_rate(alpha):
    out = np.zeros_like(alpha)
    out[..., -1] = alpha.sum(axis=-1)
    return out


@pytest.mark.parametrize("mutate, family", [
    (lambda s: replace(s, M=s.M * 2.0), "C3"),
    (lambda s: replace(s, W=s.W * 3.0), "C4"),
    (lambda s: replace(s, alpha=s.alpha * 0.5), "C1"),
    (lambda s: replace(s, alpha=_all_top_rate(s.alpha), beta=_lowest_rate(s.beta)), "C13"),
])
def test_violations_are_reported(solved_tiny, mutate, family):
    cfg, ch, sol = solved_tiny
    rep = check_feasibility_Pprime(cfg, ch, mutate(sol))
    assert not rep.ok and family in rep.failed()


def test_effective_throughput():
    cfg, ch = tiny(0)
    sol = solve_bnc_misocp(cfg, ch)
    assert effective_throughput(cfg, ch, sol) == pytest.approx(sol.throughput)
    # a useless multicast beam drops the whole cluster
    dead = replace(sol, M=np.zeros_like(sol.M))
    assert effective_throughput(cfg, ch, dead) == 0.0


def test_brute_force_exhaustive_agrees():
    cfg, ch = tiny(4)
    first = brute_force_optimum(cfg, ch)
    full = brute_force_optimum(cfg, ch, exhaustive=True)
    assert first.objective == pytest.approx(full.objective)
    assert full.n_solved >= first.n_solved
