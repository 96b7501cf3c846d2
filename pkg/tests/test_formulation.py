import numpy as np
import pytest

from selfbackhaul.conic import OPTIMAL, solve
from selfbackhaul.formulation import (
    FREE,
    BinaryState,
    InfeasibleConfig,
    PredesignedBeams,
    apply_state,
    binary_mse,
    binary_penalty,
    build_p0_relaxation,
    build_pub_relaxation,
    build_rnp2_relaxation,
    compute_bigM,
    design_multicast_beams,
    design_zf_beams,
    expected_variable_count,
    extract,
    layout_for,
    penalty_objective,
    surrogate_objective,
)
from selfbackhaul.system import SystemConfig

from instances import small_config, tiny
from oracles import gains_variable_count, p0_variable_count
from selfbackhaul.scenario import realization


def test_closed_form_counts_against_oracle():
    rng = np.random.default_rng(11)
    for _ in range(5):
        L, B, U = (int(v) for v in rng.integers(1, 5, size=3))
        cfg = SystemConfig(L=L, B=B, U=U + 2, U_served=1, N_tx_MBS=tuple(rng.integers(1, 5, 2)),
                           N_tx_SBS=tuple(rng.integers(1, 4, 2)))
        args = (cfg.L, cfg.B, cfg.U, 5, 5)
        assert expected_variable_count(cfg, "full") == p0_variable_count(*args, cfg.n_mbs, cfg.n_sbs)
        assert expected_variable_count(cfg, "gains") == gains_variable_count(*args)
    s1 = SystemConfig(L=2, B=3, U=6, U_served=3)
    assert expected_variable_count(s1, "full") == 1550
    assert expected_variable_count(SystemConfig(), "gains") == 1735


def test_built_programs_have_closed_form_size():
    cfg = small_config()
    ch = realization(cfg, 2)
    bigM = compute_bigM(ch, cfg)
    assert build_p0_relaxation(cfg, ch, bigM).n == expected_variable_count(cfg, "full")
    assert build_pub_relaxation(cfg, ch, bigM).n == expected_variable_count(cfg, "backhaul")
    beams = PredesignedBeams(design_zf_beams(ch, cfg), np.ones((cfg.L, cfg.n_mbs)) / np.sqrt(cfg.n_mbs))
    assert build_rnp2_relaxation(cfg, ch, beams, bigM).n == expected_variable_count(cfg, "gains")


def test_counting_conflict_raises():
    cfg = small_config(U_served=2, B=3, B_max=1)
    ch = realization(small_config(B=3), 1)
    with pytest.raises(InfeasibleConfig):
        build_p0_relaxation(cfg, ch, compute_bigM(ch, cfg))


def test_pin_zeroes_unassociated_links():
    cfg, ch = tiny(3)
    lay = layout_for(cfg, "full")
    st = BinaryState.zeros(cfg)
    st.kappa_fix[:] = 0
    prog = apply_state(build_p0_relaxation(cfg, ch, compute_bigM(ch, cfg)), lay, st)
    for blk in (lay.p, lay.w_re, lay.w_im):
        assert np.all(prog.ub[blk.ravel()] == 0) and np.all(prog.lb[blk.ravel()] == 0)
    assert FREE == -1 and np.all(st.alpha_fix == FREE)


def test_penalty_helpers():
    assert binary_penalty(np.array([0.0, 1.0, 1.0])) == 0.0
    assert binary_penalty(np.array([0.5])) == pytest.approx(0.25)
    assert binary_mse(np.array([0.1, 0.9])) == pytest.approx(0.01)


def test_linearized_objective_matches_surrogate():
    cfg, ch = tiny(5)
    lay = layout_for(cfg, "full")
    base = build_p0_relaxation(cfg, ch, compute_bigM(ch, cfg))
    rng = np.random.default_rng(0)
    ref = BinaryState(rng.random(lay.alpha.shape), rng.random(lay.beta.shape), rng.random(lay.kappa.shape))
    lam = (0.3, 0.2, 0.1)
    prog = penalty_objective(base, cfg, lay, ref, lam)
    x = rng.random(base.n)
    val = surrogate_objective(cfg, x[lay.alpha], x[lay.beta], x[lay.kappa], ref, lam)
    assert prog.objective_value(x) == pytest.approx(val, rel=1e-12)


def test_zf_beams_unit_norm_and_nulling():
    cfg = small_config(B=1, U=4, U_served=1, N_tx_SBS=(4, 4))
    ch = realization(cfg, 4)
    w = design_zf_beams(ch, cfg, eps=0.0)
    assert np.allclose(np.linalg.norm(w, axis=-1), 1.0)
    # exact ZF: a beam leaks nothing to the other UEs of its cluster
    h = ch.h[0, :4]
    leak = np.abs(h.conj() @ w[0, 0].T)
    off = leak[~np.eye(4, dtype=bool)]
    assert np.max(off) < 1e-8 * np.max(leak)


def test_multicast_average_is_phase_invariant():
    rng = np.random.default_rng(1)
    M = rng.standard_normal((2, 8)) + 1j * rng.standard_normal((2, 8))
    rot = M * np.exp(1j * rng.uniform(0, 2 * np.pi, size=(2, 1)))
    assert np.allclose(design_multicast_beams([M]), design_multicast_beams([rot]))
    with pytest.raises(ValueError):
        design_multicast_beams([])


def test_extract_scales_back_to_si():
    cfg, ch = tiny(0)
    base = build_p0_relaxation(cfg, ch, compute_bigM(ch, cfg))
    rep = solve(base)
    assert rep.status == OPTIMAL
    ex = extract(cfg, layout_for(cfg, "full"), rep.x)
    assert np.sum(np.abs(ex.M) ** 2) <= cfg.P_tx_MBS * (1 + 1e-6)
    assert np.all(ex.p.sum(axis=2) <= cfg.P_tx_SBS * (1 + 1e-6))
