"""Structural properties of the formulation and the solvers' outputs."""
import numpy as np
import pytest

from selfbackhaul.algorithms import AlgoParams, solve_bnc_misocp, solve_rnp1, solve_rnp2
from selfbackhaul.formulation import binary_penalty, compute_bigM, penalized_objective, weighted_rate
from selfbackhaul.scenario import realization
from selfbackhaul.verify import brute_force_optimum, check_cuts, check_feasibility_Pprime, sinr_sbs, sinr_ue

from instances import small_config, tiny


def _beams(cfg, rng):
    M = rng.standard_normal((cfg.L, cfg.n_mbs)) + 1j * rng.standard_normal((cfg.L, cfg.n_mbs))
    W = rng.standard_normal((cfg.L, cfg.B, cfg.U, cfg.n_sbs)) + 1j * rng.standard_normal((cfg.L, cfg.B, cfg.U, cfg.n_sbs))
    return M, W


@pytest.mark.parametrize("seed", range(5))
def test_phase_invariance(seed):
    cfg = small_config()
    ch = realization(cfg, seed)
    rng = np.random.default_rng(seed)
    M, W = _beams(cfg, rng)
    kappa = np.ones((cfg.L, cfg.B, cfg.U))
    # one phase per multicast beam, one per UE stream shared by its serving SBSs
    M_rot = M * np.exp(1j * rng.uniform(0, 2 * np.pi, (cfg.L, 1)))
    W_rot = W * np.exp(1j * rng.uniform(0, 2 * np.pi, (cfg.L, 1, cfg.U, 1)))
    assert np.allclose(sinr_sbs(ch, M, 1.0)[0], sinr_sbs(ch, M_rot, 1.0)[0], rtol=1e-10)
    assert np.allclose(sinr_ue(ch, W, kappa, 1.0), sinr_ue(ch, W_rot, kappa, 1.0), rtol=1e-10)


@pytest.mark.parametrize("seed", range(5))
def test_bigM_dominates_received_power(seed):
    # single SBS per cluster: every stream has one transmitter, so the bound is exact
    cfg = small_config(B=1, U=3, U_served=1)
    ch = realization(cfg, seed)
    bigM = compute_bigM(ch, cfg)
    rng = np.random.default_rng(seed)
    L, U, N = cfg.L, cfg.U, cfg.n_sbs
    h = ch.h.reshape(L, L * U, N)
    for trial in range(20):
        _, W = _beams(cfg, rng)
        if trial == 0:  # matched filter towards UE 0, the adversarial case
            W = np.broadcast_to(h[:, :1, :], W[:, 0].shape).copy()[:, None]
        W = W * np.sqrt(cfg.P_tx_SBS / np.sum(np.abs(W) ** 2, axis=(1, 2, 3), keepdims=True))
        amp = np.einsum("lkn,lun->klu", h.conj(), W[:, 0]).reshape(L * U, L * U)
        total = np.sqrt(np.sum(np.abs(amp) ** 2, axis=1) + cfg.sigma2_UE)
        assert np.all(total <= bigM.Q_u * (1 + 1e-9))
    for _ in range(20):
        M, _ = _beams(cfg, rng)
        M *= np.sqrt(cfg.P_tx_MBS / np.sum(np.abs(M) ** 2))
        total = np.sqrt(np.sum(np.abs(ch.g.conj() @ M.T) ** 2, axis=1) + cfg.sigma2_SBS)
        assert np.all(total <= bigM.Q_b * (1 + 1e-9))


def test_penalty_is_exact_on_binaries():
    cfg = small_config()
    rng = np.random.default_rng(0)
    lam = (3.0, 2.0, 1.0)
    for _ in range(10):
        a = (rng.random((cfg.L, cfg.U, 5)) < 0.3).astype(float)
        b = (rng.random((cfg.L, 5)) < 0.5).astype(float)
        k = (rng.random((cfg.L, cfg.B, cfg.U)) < 0.5).astype(float)
        assert penalized_objective(cfg, a, b, k, lam) == pytest.approx(weighted_rate(cfg, a))
        frac = rng.uniform(0.05, 0.95, a.shape)
        assert binary_penalty(frac) > 0
        assert penalized_objective(cfg, frac, b, k, lam) < weighted_rate(cfg, frac)


@pytest.mark.parametrize("i", [0, 1, 5, 9, 13])
def test_cuts_hold_at_exact_optima(i):
    cfg, ch = tiny(i)
    bf = brute_force_optimum(cfg, ch)
    sol = solve_bnc_misocp(cfg, ch)
    if not sol.ok:
        assert bf.status != "optimal"
        return
    assert sol.objective == pytest.approx(bf.objective, rel=1e-6)
    cuts = check_cuts(cfg, ch, sol)
    assert cuts["C16"].passed and cuts["C22"].passed, i


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_solver_outputs_lie_in_the_original_feasible_set(seed):
    cfg = small_config()
    ch = realization(cfg, seed)
    for sol in (solve_rnp1(cfg, ch), solve_rnp2(cfg, ch), solve_bnc_misocp(cfg, ch, AlgoParams(node_limit=5))):
        assert sol.ok, sol.message
        rep = check_feasibility_Pprime(cfg, ch, sol, tol=1e-6)
        assert rep.ok, (sol.algorithm, rep.failed())


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_mm_penalized_trace_is_monotone(seed):
    cfg = small_config()
    ch = realization(cfg, seed)
    # a light penalty lets the iterates leave the initial point
    sol = solve_rnp1(cfg, ch, AlgoParams(lambda_scale=0.05))
    tr = sol.trace
    assert len(tr) >= 2
    for prev, cur in zip(tr, tr[1:]):
        if cur["lambda"] != prev["lambda"]:
            continue
        scale = max(1.0, abs(prev["penalized"]))
        assert cur["surrogate"] >= prev["penalized"] - 1e-5 * scale
        assert cur["penalized"] >= prev["penalized"] - 1e-5 * scale
