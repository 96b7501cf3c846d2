"""Conic programs for joint beamforming, rate selection and association.

Builders return a :class:`~selfbackhaul.conic.ConicProgram` whose variable
order is fixed by :class:`VariableLayout`.  Three families are built here:

* the continuous relaxation of the full mixed-integer program (beamformers
  ``m_l``, ``w_{b,u}``, powers ``p``, binaries ``alpha``, ``beta``, ``kappa``),
  used by branch-and-bound and by the first relax-and-penalize method;
* the backhaul-only upper-bound relaxation (``m_l``, ``beta``);
* the gain-only relaxation over predesigned beams (``t_l``, ``v_{b,u}``).

Realification: for complex ``a`` and ``x = xr + i xi``::

    Re{a^H x} =  ar.xr + ai.xi        Im{a^H x} = ar.xi - ai.xr
    Re{a x}   =  ar.xr - ai.xi        Im{a x}   = ar.xi + ai.xr

Internally every program is normalized so that noise powers and power
budgets equal one: ``w = sqrt(P_SBS) w~``, ``p = P_SBS p~``,
``m = sqrt(P_MBS) m~`` and channels are scaled by ``sqrt(P)/sigma``.
Extraction undoes the scaling, so callers only ever see SI values.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .channel import ChannelSet
from .conic import ConicProgram, Expr, ProgramBuilder
from .system import SystemConfig

FREE = -1


class InfeasibleConfig(ValueError):
    """Counting constraints that contradict each other before any solve."""


def counting_conflicts(cfg: SystemConfig) -> list[str]:
    out = []
    if cfg.U_served > cfg.B * cfg.N_streams_SBS:
        out.append("C7/C14 conflict")
    if cfg.B > cfg.U_served * cfg.B_max:
        out.append("C8/C9 conflict")
    if cfg.U_served > cfg.U:
        out.append("C14 conflict")
    return out


# ---------------------------------------------------------------- layout


@dataclass(frozen=True)
class VariableLayout:
    """Index arrays for every variable block; unused blocks are ``None``."""

    kind: str
    n: int
    m_re: np.ndarray | None = None  # (L, N_MBS)
    m_im: np.ndarray | None = None
    w_re: np.ndarray | None = None  # (L, B, U, N_SBS)
    w_im: np.ndarray | None = None
    t_re: np.ndarray | None = None  # (L,)
    t_im: np.ndarray | None = None
    v_re: np.ndarray | None = None  # (L, B, U)
    v_im: np.ndarray | None = None
    p: np.ndarray | None = None  # (L, B, U)
    kappa: np.ndarray | None = None  # (L, B, U)
    beta: np.ndarray | None = None  # (L, J_SBS)
    alpha: np.ndarray | None = None  # (L, U, J_UE)

    @staticmethod
    def declare(b: ProgramBuilder, cfg: SystemConfig, kind: str) -> "VariableLayout":
        L, B, U = cfg.L, cfg.B, cfg.U
        Ju, Js = len(cfg.ue_table), len(cfg.sbs_table)
        blocks: dict[str, np.ndarray] = {}
        if kind in ("full", "backhaul"):
            blocks["m_re"] = b.add_variables("m_re", L * cfg.n_mbs).reshape(L, cfg.n_mbs)
            blocks["m_im"] = b.add_variables("m_im", L * cfg.n_mbs).reshape(L, cfg.n_mbs)
        if kind == "gains":
            blocks["t_re"] = b.add_variables("t_re", L)
            blocks["t_im"] = b.add_variables("t_im", L)
        if kind == "full":
            shape = (L, B, U, cfg.n_sbs)
            blocks["w_re"] = b.add_variables("w_re", int(np.prod(shape))).reshape(shape)
            blocks["w_im"] = b.add_variables("w_im", int(np.prod(shape))).reshape(shape)
        if kind == "gains":
            blocks["v_re"] = b.add_variables("v_re", L * B * U).reshape(L, B, U)
            blocks["v_im"] = b.add_variables("v_im", L * B * U).reshape(L, B, U)
        if kind in ("full", "gains"):
            blocks["p"] = b.add_variables("p", L * B * U, lb=0.0).reshape(L, B, U)
            blocks["kappa"] = b.add_variables("kappa", L * B * U, lb=0.0, ub=1.0).reshape(L, B, U)
        blocks["beta"] = b.add_variables("beta", L * Js, lb=0.0, ub=1.0).reshape(L, Js)
        if kind in ("full", "gains"):
            blocks["alpha"] = b.add_variables("alpha", L * U * Ju, lb=0.0, ub=1.0).reshape(L, U, Ju)
        return VariableLayout(kind=kind, n=b.n, **blocks)

    def binary_blocks(self) -> list[tuple[str, np.ndarray]]:
        """Binary families in branching order: alpha, beta, kappa."""
        return [(name, getattr(self, name)) for name in ("alpha", "beta", "kappa") if getattr(self, name) is not None]

    def binary_indices(self) -> np.ndarray:
        return np.concatenate([blk.ravel() for _, blk in self.binary_blocks()])

    def pin(self, lb: np.ndarray, ub: np.ndarray, mask: np.ndarray) -> None:
        """Write a flat binary mask (``FREE`` = unpinned) into bounds, in place.

        A link with kappa pinned to 0 also gets its power and beam entries
        pinned to 0; the power and norm constraints force that anyway, and the
        fixed-variable presolve then drops those columns."""
        idx = self.binary_indices()
        fixed = mask != FREE
        lb[idx[fixed]] = mask[fixed]
        ub[idx[fixed]] = mask[fixed]
        if self.kappa is None:
            return
        kap = self.kappa.ravel()
        off = idx.size - kap.size
        off_mask = mask[off:off + kap.size] == 0
        if not off_mask.any():
            return
        for blk in (self.p, self.w_re, self.w_im, self.v_re, self.v_im):
            if blk is None:
                continue
            rows = blk.reshape(kap.size, -1)[off_mask].ravel()
            lb[rows] = 0.0
            ub[rows] = 0.0


def expected_variable_count(cfg: SystemConfig, kind: str) -> int:
    """Closed-form counts of the three program families."""
    L, B, U = cfg.L, cfg.B, cfg.U
    Ju, Js = len(cfg.ue_table), len(cfg.sbs_table)
    if kind == "full":
        return 2 * L * cfg.n_mbs + 2 * L * B * U * cfg.n_sbs + 2 * L * B * U + L * Js + L * U * Ju
    if kind == "gains":
        return 2 * L + 4 * L * B * U + L * Js + L * U * Ju
    if kind == "backhaul":
        return L * Js + 2 * L * cfg.n_mbs
    raise ValueError(f"unknown layout kind {kind!r}")


# ---------------------------------------------------------------- big-M


@dataclass(frozen=True)
class BigMConstants:
    Q_u: np.ndarray  # (L*U,)
    Q_b: np.ndarray  # (L*B,)

    def __post_init__(self):
        if np.any(~(self.Q_u > 0)) or np.any(~(self.Q_b > 0)):
            raise ValueError("big-M constants must be positive")


def compute_bigM(channels: ChannelSet, cfg: SystemConfig) -> BigMConstants:
    h_energy = np.sum(np.abs(channels.h) ** 2, axis=(0, 2))  # over every SBS and antenna
    g_energy = np.sum(np.abs(channels.g) ** 2, axis=1)
    Q_u = np.sqrt(cfg.P_tx_SBS * h_energy + cfg.sigma2_UE)
    Q_b = np.sqrt(cfg.P_tx_MBS * g_energy + cfg.sigma2_SBS)
    return BigMConstants(Q_u=Q_u, Q_b=Q_b)


# ---------------------------------------------------------------- binary state


@dataclass
class BinaryState:
    """Values in [0, 1] plus a per-entry pin mask (-1 free, 0 or 1 fixed)."""

    alpha: np.ndarray  # (L, U, J_UE)
    beta: np.ndarray  # (L, J_SBS)
    kappa: np.ndarray  # (L, B, U)
    alpha_fix: np.ndarray = None
    beta_fix: np.ndarray = None
    kappa_fix: np.ndarray = None

    def __post_init__(self):
        for name in ("alpha", "beta", "kappa"):
            val = np.asarray(getattr(self, name), dtype=float)
            if np.any(val < -1e-9) or np.any(val > 1 + 1e-9):
                raise ValueError(f"{name} values must lie in [0, 1]")
            setattr(self, name, val)
            fix = getattr(self, name + "_fix")
            fix = np.full(val.shape, FREE, dtype=np.int8) if fix is None else np.asarray(fix, dtype=np.int8)
            if fix.shape != val.shape:
                raise ValueError(f"{name} mask shape mismatch")
            setattr(self, name + "_fix", fix)

    @classmethod
    def zeros(cls, cfg: SystemConfig) -> "BinaryState":
        return cls(np.zeros((cfg.L, cfg.U, len(cfg.ue_table))), np.zeros((cfg.L, len(cfg.sbs_table))),
                   np.zeros((cfg.L, cfg.B, cfg.U)))

    @classmethod
    def pinned(cls, alpha, beta, kappa) -> "BinaryState":
        """Every entry fixed to the given 0/1 values."""
        a, b, k = (np.rint(np.asarray(x, dtype=float)) for x in (alpha, beta, kappa))
        return cls(a, b, k, a.astype(np.int8), b.astype(np.int8), k.astype(np.int8))

    def flat_values(self) -> np.ndarray:
        return np.concatenate([self.alpha.ravel(), self.beta.ravel(), self.kappa.ravel()])

    def flat_mask(self) -> np.ndarray:
        return np.concatenate([self.alpha_fix.ravel(), self.beta_fix.ravel(), self.kappa_fix.ravel()])

    def with_fixed(self, flat_index: int, value: int) -> "BinaryState":
        masks = [self.alpha_fix.copy(), self.beta_fix.copy(), self.kappa_fix.copy()]
        vals = [self.alpha.copy(), self.beta.copy(), self.kappa.copy()]
        for mask, val in zip(masks, vals):
            if flat_index < mask.size:
                mask.flat[flat_index] = value
                val.flat[flat_index] = value
                break
            flat_index -= mask.size
        else:
            raise IndexError("binary index out of range")
        return BinaryState(vals[0], vals[1], vals[2], masks[0], masks[1], masks[2])

    def with_values(self, alpha, beta, kappa) -> "BinaryState":
        return BinaryState(np.clip(alpha, 0, 1), np.clip(beta, 0, 1), np.clip(kappa, 0, 1),
                           self.alpha_fix, self.beta_fix, self.kappa_fix)

    def copy(self) -> "BinaryState":
        return BinaryState(self.alpha.copy(), self.beta.copy(), self.kappa.copy(),
                           self.alpha_fix.copy(), self.beta_fix.copy(), self.kappa_fix.copy())


def binary_penalty(x: np.ndarray) -> float:
    """``sum(x - x^2)``: zero exactly on {0,1}, positive strictly inside (0, 1)."""
    x = np.asarray(x, dtype=float)
    return float(np.sum(x - x * x))


f_alpha = f_beta = f_kappa = binary_penalty


def binary_mse(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    return float(np.mean((x - np.rint(x)) ** 2)) if x.size else 0.0


def weighted_rate(cfg: SystemConfig, alpha: np.ndarray) -> float:
    w = cfg.weight_vector().reshape(cfg.L, cfg.U)
    return float(np.einsum("lu,luj,j->", w, alpha, np.asarray(cfg.ue_table.rates)))


def penalized_objective(cfg: SystemConfig, alpha, beta, kappa, penalties) -> float:
    """Weighted rate minus the binary penalties, evaluated exactly."""
    la, lb, lk = penalties
    return weighted_rate(cfg, alpha) - la * binary_penalty(alpha) - lb * binary_penalty(beta) - lk * binary_penalty(kappa)


def surrogate_objective(cfg: SystemConfig, alpha, beta, kappa, reference: BinaryState, penalties) -> float:
    """Penalized objective with the concave part linearized at ``reference``."""
    val = weighted_rate(cfg, alpha)
    for lam, x, r in zip(penalties, (alpha, beta, kappa), (reference.alpha, reference.beta, reference.kappa)):
        x, r = np.asarray(x).ravel(), np.asarray(r).ravel()
        val -= lam * float(np.sum(x) + np.sum(r * r) - 2.0 * r @ x)
    return val


# ---------------------------------------------------------------- helpers


@dataclass(frozen=True)
class _Scale:
    w: float  # sqrt(P_SBS) or 1 when the budget is zero
    p_budget: float  # normalized SBS budget (1 or 0)
    m: float
    m_budget: float
    sigma_ue: float
    sigma_sbs: float

    @staticmethod
    def of(cfg: SystemConfig) -> "_Scale":
        ps, pm = cfg.P_tx_SBS, cfg.P_tx_MBS
        return _Scale(
            w=np.sqrt(ps) if ps > 0 else 1.0, p_budget=1.0 if ps > 0 else 0.0,
            m=np.sqrt(pm) if pm > 0 else 1.0, m_budget=1.0 if pm > 0 else 0.0,
            sigma_ue=float(np.sqrt(cfg.sigma2_UE)), sigma_sbs=float(np.sqrt(cfg.sigma2_SBS)),
        )


def _re_h(a: np.ndarray, xr: np.ndarray, xi: np.ndarray) -> Expr:
    """Re{a^H x}."""
    return Expr(np.concatenate([xr.ravel(), xi.ravel()]), np.concatenate([a.real.ravel(), a.imag.ravel()]))


def _im_h(a: np.ndarray, xr: np.ndarray, xi: np.ndarray) -> Expr:
    """Im{a^H x}."""
    return Expr(np.concatenate([xi.ravel(), xr.ravel()]), np.concatenate([a.real.ravel(), -a.imag.ravel()]))


def _re_s(a: np.ndarray, xr: np.ndarray, xi: np.ndarray) -> Expr:
    """Re{a x} for the unconjugated product of gains."""
    return Expr(np.concatenate([xr.ravel(), xi.ravel()]), np.concatenate([a.real.ravel(), -a.imag.ravel()]))


def _im_s(a: np.ndarray, xr: np.ndarray, xi: np.ndarray) -> Expr:
    return Expr(np.concatenate([xi.ravel(), xr.ravel()]), np.concatenate([a.real.ravel(), a.imag.ravel()]))


def _sum(idx, coef=1.0) -> Expr:
    idx = np.asarray(idx).ravel()
    return Expr(idx, np.broadcast_to(np.asarray(coef, dtype=float), idx.shape))


def _check_inputs(cfg: SystemConfig, channels: ChannelSet, bigM: BigMConstants | None) -> None:
    channels.check_dims(cfg)
    if bigM is None:
        raise ValueError("missing big-M constants")
    if bigM.Q_u.shape != (cfg.n_ue_total,) or bigM.Q_b.shape != (cfg.n_sbs_total,):
        raise ValueError("dimension mismatch: big-M constants do not match the configuration")


def apply_state(program: ConicProgram, layout: VariableLayout, state: BinaryState | None) -> ConicProgram:
    """Pin fixed binaries through the variable bounds."""
    if state is None:
        return program
    lb, ub = program.lb.copy(), program.ub.copy()
    parts = []
    for name, blk in layout.binary_blocks():
        mask = getattr(state, name + "_fix")
        if mask.shape != blk.shape:
            raise ValueError(f"dimension mismatch: {name} mask {mask.shape} vs layout {blk.shape}")
        parts.append(np.asarray(mask, dtype=float).ravel())
    layout.pin(lb, ub, np.concatenate(parts))
    return program.with_bounds(lb, ub)


# ---------------------------------------------------------------- shared rows


def _counting_rows(b: ProgramBuilder, cfg: SystemConfig, lay: VariableLayout, sc: _Scale) -> None:
    """C2, C7-C10, C12-C14 and C17-C19 (C17 lives in the bounds of ``p``)."""
    L, B, U = cfg.L, cfg.B, cfg.U
    R_ue = np.asarray(cfg.ue_table.rates)
    R_sbs = np.asarray(cfg.sbs_table.rates)
    bw = cfg.W_bw_access / cfg.W_bw_backhaul
    for l in range(L):
        for u in range(U):
            b.add_le(_sum(lay.alpha[l, u]), 1.0, "C2")
        for s in range(B):
            b.add_le(_sum(lay.kappa[l, s]), float(cfg.N_streams_SBS), "C7")
            b.add_ge(_sum(lay.kappa[l, s]), 1.0, "C8")
        for u in range(U):
            served = _sum(lay.alpha[l, u])
            b.add_le(_sum(lay.kappa[l, :, u]), served * cfg.B_max, "C9")
            b.add_ge(_sum(lay.kappa[l, :, u]), served * cfg.B_min, "C10")
        b.add_eq(_sum(lay.beta[l]), 1.0, "C12")
        access = Expr(lay.alpha[l].ravel(), bw * np.tile(R_ue, U))
        b.add_le(access, Expr(lay.beta[l], R_sbs), "C13")
        b.add_eq(_sum(lay.alpha[l]), float(cfg.U_served), "C14")
        for s in range(B):
            b.add_le(_sum(lay.p[l, s]), sc.p_budget, "C18")
            for u in range(U):
                b.add_le(Expr.var(lay.p[l, s, u]), Expr.var(lay.kappa[l, s, u], sc.p_budget), "C19")


def _access_cones(b: ProgramBuilder, cfg: SystemConfig, bigM: BigMConstants, sc: _Scale,
                  lay: VariableLayout, signal, interference, tags=("C23", "C24", "C25")) -> None:
    """SINR cones for every UE and rate; ``signal(u)`` returns (Re, Im) of the desired term,
    ``interference(u)`` the list of member rows (Re/Im per served stream)."""
    gam = np.asarray(cfg.ue_table.sinrs)
    Q = bigM.Q_u / sc.sigma_ue
    one = Expr.constant(1.0)
    for l in range(cfg.L):
        for u in range(cfg.U):
            gu = l * cfg.U + u
            sig_re, sig_im = signal(l, u)
            members = interference(gu) + [one]
            for j in range(len(gam)):
                a = lay.alpha[l, u, j]
                head = sig_re * np.sqrt(1.0 + 1.0 / gam[j]) + Q[gu] - Expr.var(a, Q[gu])
                b.add_cone(head, members, tags[0])
                b.add_ge(sig_re, Expr.var(a, np.sqrt(gam[j])), tags[1])
            b.add_eq(sig_im, 0.0, tags[2])


def _backhaul_cones(b: ProgramBuilder, cfg: SystemConfig, bigM: BigMConstants, sc: _Scale,
                    lay: VariableLayout, signal, interference, tags=("C26", "C27")) -> None:
    gam = np.asarray(cfg.sbs_table.sinrs)
    Q = bigM.Q_b / sc.sigma_sbs
    one = Expr.constant(1.0)
    for l in range(cfg.L):
        for s in range(cfg.B):
            gb = l * cfg.B + s
            sig = signal(gb, l)
            members = interference(gb) + [one]
            for j in range(len(gam)):
                bj = lay.beta[l, j]
                head = sig * np.sqrt(1.0 + 1.0 / gam[j]) + Q[gb] - Expr.var(bj, Q[gb])
                b.add_cone(head, members, tags[0])
                b.add_ge(sig, Expr.var(bj, np.sqrt(gam[j])), tags[1])


def _full_backhaul(b, cfg, channels, bigM, sc, lay, tags=("C26", "C27")):
    g = channels.g * (sc.m / sc.sigma_sbs)

    def signal(gb, l):
        return _re_h(g[gb], lay.m_re[l], lay.m_im[l])

    def interference(gb):
        rows = []
        for l2 in range(cfg.L):
            rows.append(_re_h(g[gb], lay.m_re[l2], lay.m_im[l2]))
            rows.append(_im_h(g[gb], lay.m_re[l2], lay.m_im[l2]))
        return rows

    b.add_cone(Expr.constant(sc.m_budget), [Expr.var(i) for i in np.concatenate([lay.m_re.ravel(), lay.m_im.ravel()])], "C3")
    _backhaul_cones(b, cfg, bigM, sc, lay, signal, interference, tags)


# ---------------------------------------------------------------- builders


def build_p0_relaxation(cfg: SystemConfig, channels: ChannelSet, bigM: BigMConstants | None,
                        state: BinaryState | None = None) -> ConicProgram:
    """Continuous relaxation of the full problem; fixed binaries pinned by ``state``."""
    _check_inputs(cfg, channels, bigM)
    conflicts = counting_conflicts(cfg)
    if conflicts:
        raise InfeasibleConfig("; ".join(conflicts))
    sc = _Scale.of(cfg)
    b = ProgramBuilder("p0-relaxation")
    lay = VariableLayout.declare(b, cfg, "full")
    L, B, U = cfg.L, cfg.B, cfg.U
    h = channels.h * (sc.w / sc.sigma_ue)

    _counting_rows(b, cfg, lay, sc)
    for l in range(L):
        for s in range(B):
            for u in range(U):
                w_rows = [Expr.var(i, 2.0) for i in np.concatenate([lay.w_re[l, s, u], lay.w_im[l, s, u]])]
                k, p = lay.kappa[l, s, u], lay.p[l, s, u]
                b.add_cone(Expr([k, p], [1.0, 1.0]), w_rows + [Expr([k, p], [1.0, -1.0])], "C20")

    def signal(l, u):
        gu = l * U + u
        hs = h[l * B:(l + 1) * B, gu]  # (B, N)
        return _re_h(hs, lay.w_re[l, :, u], lay.w_im[l, :, u]), _im_h(hs, lay.w_re[l, :, u], lay.w_im[l, :, u])

    def interference(gu):
        rows = []
        for l2 in range(L):
            hs = h[l2 * B:(l2 + 1) * B, gu]
            for u2 in range(U):
                rows.append(_re_h(hs, lay.w_re[l2, :, u2], lay.w_im[l2, :, u2]))
                rows.append(_im_h(hs, lay.w_re[l2, :, u2], lay.w_im[l2, :, u2]))
        return rows

    _access_cones(b, cfg, bigM, sc, lay, signal, interference)
    _full_backhaul(b, cfg, channels, bigM, sc, lay)
    b.set_objective(Expr(lay.alpha.ravel(), _rate_coefficients(cfg)))
    return apply_state(b.build(), lay, state)


def build_pub_relaxation(cfg: SystemConfig, channels: ChannelSet, bigM: BigMConstants | None,
                         state: BinaryState | None = None) -> ConicProgram:
    """Backhaul-only relaxation.  The objective is ``sum beta R`` in bps/Hz;
    multiply by the backhaul bandwidth for throughput."""
    _check_inputs(cfg, channels, bigM)
    sc = _Scale.of(cfg)
    b = ProgramBuilder("upper-bound-relaxation")
    lay = VariableLayout.declare(b, cfg, "backhaul")
    for l in range(cfg.L):
        b.add_eq(_sum(lay.beta[l]), 1.0, "C12")
    _full_backhaul(b, cfg, channels, bigM, sc, lay)
    R = np.asarray(cfg.sbs_table.rates)
    b.set_objective(Expr(lay.beta.ravel(), np.tile(R, cfg.L)))
    return apply_state(b.build(), lay, state)


def _rate_coefficients(cfg: SystemConfig) -> np.ndarray:
    w = cfg.weight_vector().reshape(cfg.L, cfg.U)
    return (w[:, :, None] * np.asarray(cfg.ue_table.rates)[None, None, :]).ravel()


def penalty_objective(program: ConicProgram, cfg: SystemConfig, layout: VariableLayout,
                      reference: BinaryState, penalties) -> ConicProgram:
    """Swap in the linearized penalized objective around ``reference``."""
    c = np.zeros(program.n)
    c[layout.alpha.ravel()] = _rate_coefficients(cfg)
    offset = 0.0
    for lam, blk, ref in zip(penalties, (layout.alpha, layout.beta, layout.kappa),
                             (reference.alpha, reference.beta, reference.kappa)):
        r = np.asarray(ref, dtype=float).ravel()
        if r.shape != (blk.size,):
            raise ValueError("dimension mismatch: reference does not match layout")
        c[blk.ravel()] -= lam * (1.0 - 2.0 * r)
        offset -= lam * float(r @ r)
    return program.with_objective(c, offset)


def build_rnp1_subproblem(cfg: SystemConfig, channels: ChannelSet, bigM: BigMConstants | None,
                          reference: BinaryState, penalties) -> ConicProgram:
    base = build_p0_relaxation(cfg, channels, bigM, None)
    return penalty_objective(base, cfg, layout_for(cfg, "full"), reference, penalties)


def layout_for(cfg: SystemConfig, kind: str) -> VariableLayout:
    """Layout without building constraints (declaration order is deterministic)."""
    return VariableLayout.declare(ProgramBuilder(), cfg, kind)


# ---------------------------------------------------------------- predesigned beams


@dataclass(frozen=True)
class BeamCoefficients:
    A: np.ndarray  # (L*U, L, B, U): A[u, l', b', u'] = h_{l'B+b', u}^H w^_{l', b', u'}
    G: np.ndarray  # (L*B, L): G[b, l] = g_b^H m^_l

    def c(self, cfg: SystemConfig, l: int, u: int) -> np.ndarray:
        """Desired-signal coefficients c_{b,u} for b in the UE's own cluster."""
        return self.A[l * cfg.U + u, l, :, u]

    def r(self, b: int, l: int) -> float:
        return float(self.G[b, l].real)


@dataclass(frozen=True)
class PredesignedBeams:
    w_hat: np.ndarray  # (L, B, U, N_SBS), unit norm
    m_hat: np.ndarray  # (L, N_MBS), unit norm

    def __post_init__(self):
        for name in ("w_hat", "m_hat"):
            norms = np.linalg.norm(getattr(self, name), axis=-1)
            if np.any(np.abs(norms - 1.0) > 1e-9):
                raise ValueError(f"{name} must have unit-norm directions")

    def coefficients(self, channels: ChannelSet, cfg: SystemConfig) -> BeamCoefficients:
        L, B, U = cfg.L, cfg.B, cfg.U
        h = channels.h.reshape(L, B, L * U, cfg.n_sbs)
        A = np.einsum("lbkn,lbun->klbu", h.conj(), self.w_hat)
        G = channels.g.conj() @ self.m_hat.T
        return BeamCoefficients(A=A, G=G)

    def expand(self, t: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Full beamformers from gains: ``m_l = t_l m^_l``, ``w = v w^``."""
        return t[:, None] * self.m_hat, v[..., None] * self.w_hat


def _unit(v: np.ndarray) -> np.ndarray:
    nrm = np.linalg.norm(v)
    if nrm == 0:
        out = np.zeros_like(v, dtype=complex)
        out[0] = 1.0
        return out
    return v / nrm


def design_zf_beams(channels: ChannelSet, cfg: SystemConfig, eps: float = 1e-3) -> np.ndarray:
    """Regularized zero-forcing directions per SBS over all UEs of its cluster.

    Returns ``w_hat`` with shape (L, B, U, N_SBS).
    """
    L, B, U = cfg.L, cfg.B, cfg.U
    out = np.zeros((L, B, U, cfg.n_sbs), dtype=complex)
    for l in range(L):
        for s in range(B):
            H = channels.h[l * B + s, l * U:(l + 1) * U].conj()  # rows h^H
            if eps > 0:
                gram = H @ H.conj().T + eps * np.linalg.norm(H) ** 2 * np.eye(U)
                W = H.conj().T @ np.linalg.pinv(gram)
            else:
                W = np.linalg.pinv(H)
            for u in range(U):
                out[l, s, u] = _unit(W[:, u])
    return out


def design_multicast_beams(ub_solutions: list[np.ndarray], tol: float = 1e-6) -> np.ndarray:
    """Phase-align (first entry real nonnegative), normalize, average, renormalize.

    ``ub_solutions`` holds arrays of shape (L, N_MBS).
    """
    if not ub_solutions:
        raise ValueError("empty list of multicast solutions")
    shape = np.shape(ub_solutions[0])
    acc = np.zeros(shape, dtype=complex)
    for M in ub_solutions:
        M = np.asarray(M, dtype=complex)
        if M.shape != shape:
            raise ValueError("dimension mismatch between multicast solutions")
        for l in range(shape[0]):
            m = M[l]
            lead = m[np.flatnonzero(np.abs(m) > 0)[0]] if np.any(m) else 1.0
            m = m * np.conj(lead) / abs(lead)
            nrm = np.linalg.norm(m)
            if nrm > 0:
                acc[l] += m / nrm
    acc /= len(ub_solutions)
    out = np.zeros_like(acc)
    for l in range(shape[0]):
        nrm = np.linalg.norm(acc[l])
        if nrm < tol:
            raise ValueError("degenerate average")
        out[l] = acc[l] / nrm
    return out


def build_rnp2_relaxation(cfg: SystemConfig, channels: ChannelSet, beams: PredesignedBeams,
                          bigM: BigMConstants | None, state: BinaryState | None = None) -> ConicProgram:
    """Gain-only relaxation over fixed directions, with the weighted-rate objective."""
    _check_inputs(cfg, channels, bigM)
    conflicts = counting_conflicts(cfg)
    if conflicts:
        raise InfeasibleConfig("; ".join(conflicts))
    if beams.w_hat.shape != (cfg.L, cfg.B, cfg.U, cfg.n_sbs) or beams.m_hat.shape != (cfg.L, cfg.n_mbs):
        raise ValueError("dimension mismatch: beams do not match the configuration")
    sc = _Scale.of(cfg)
    coef = beams.coefficients(channels, cfg)
    A = coef.A * (sc.w / sc.sigma_ue)
    G = coef.G * (sc.m / sc.sigma_sbs)
    b = ProgramBuilder("gain-relaxation")
    lay = VariableLayout.declare(b, cfg, "gains")
    L, B, U = cfg.L, cfg.B, cfg.U

    b.add_cone(Expr.constant(sc.m_budget), [Expr.var(i) for i in np.concatenate([lay.t_re, lay.t_im])], "L1")
    _counting_rows(b, cfg, lay, sc)
    for l in range(L):
        for s in range(B):
            for u in range(U):
                k, p = lay.kappa[l, s, u], lay.p[l, s, u]
                b.add_cone(Expr([k, p], [1.0, 1.0]),
                           [Expr.var(lay.v_re[l, s, u], 2.0), Expr.var(lay.v_im[l, s, u], 2.0), Expr([k, p], [1.0, -1.0])],
                           "L2")

    def signal(l, u):
        a = A[l * U + u, l, :, u]
        return _re_s(a, lay.v_re[l, :, u], lay.v_im[l, :, u]), _im_s(a, lay.v_re[l, :, u], lay.v_im[l, :, u])

    def interference(gu):
        rows = []
        for l2 in range(L):
            for u2 in range(U):
                a = A[gu, l2, :, u2]
                rows.append(_re_s(a, lay.v_re[l2, :, u2], lay.v_im[l2, :, u2]))
                rows.append(_im_s(a, lay.v_re[l2, :, u2], lay.v_im[l2, :, u2]))
        return rows

    _access_cones(b, cfg, bigM, sc, lay, signal, interference, ("L3", "L4", "L5"))

    def bh_signal(gb, l):
        return _re_s(G[gb, l:l + 1], lay.t_re[l:l + 1], lay.t_im[l:l + 1])

    def bh_interference(gb):
        rows = []
        for l2 in range(L):
            rows.append(_re_s(G[gb, l2:l2 + 1], lay.t_re[l2:l2 + 1], lay.t_im[l2:l2 + 1]))
            rows.append(_im_s(G[gb, l2:l2 + 1], lay.t_re[l2:l2 + 1], lay.t_im[l2:l2 + 1]))
        return rows

    _backhaul_cones(b, cfg, bigM, sc, lay, bh_signal, bh_interference, ("L6", "L7"))
    b.set_objective(Expr(lay.alpha.ravel(), _rate_coefficients(cfg)))
    return apply_state(b.build(), lay, state)


def build_rnp2_subproblem(cfg: SystemConfig, channels: ChannelSet, beams: PredesignedBeams,
                          bigM: BigMConstants | None, reference: BinaryState, penalties) -> ConicProgram:
    base = build_rnp2_relaxation(cfg, channels, beams, bigM, None)
    return penalty_objective(base, cfg, layout_for(cfg, "gains"), reference, penalties)


# ---------------------------------------------------------------- extraction


@dataclass
class Extracted:
    """Solver vector mapped back to SI quantities."""

    M: np.ndarray | None  # (L, N_MBS) complex
    W: np.ndarray | None  # (L, B, U, N_SBS) complex
    p: np.ndarray | None  # (L, B, U) watts
    alpha: np.ndarray | None
    beta: np.ndarray
    kappa: np.ndarray | None
    t: np.ndarray | None = None
    v: np.ndarray | None = None
    extra: dict = field(default_factory=dict)


def extract(cfg: SystemConfig, layout: VariableLayout, x: np.ndarray,
            beams: PredesignedBeams | None = None) -> Extracted:
    sc = _Scale.of(cfg)
    get = lambda blk: None if blk is None else x[blk]  # noqa: E731
    out = Extracted(M=None, W=None, p=None, alpha=get(layout.alpha), beta=x[layout.beta], kappa=get(layout.kappa))
    if layout.p is not None:
        out.p = x[layout.p] * sc.w ** 2
    if layout.m_re is not None:
        out.M = (x[layout.m_re] + 1j * x[layout.m_im]) * sc.m
    if layout.w_re is not None:
        out.W = (x[layout.w_re] + 1j * x[layout.w_im]) * sc.w
    if layout.t_re is not None:
        out.t = (x[layout.t_re] + 1j * x[layout.t_im]) * sc.m
        out.v = (x[layout.v_re] + 1j * x[layout.v_im]) * sc.w
        if beams is not None:
            out.M, out.W = beams.expand(out.t, out.v)
    return out


def state_from_solution(ex: Extracted, base: BinaryState | None = None) -> BinaryState:
    if base is None:
        return BinaryState(np.clip(ex.alpha, 0, 1), np.clip(ex.beta, 0, 1), np.clip(ex.kappa, 0, 1))
    return base.with_values(ex.alpha, ex.beta, ex.kappa)


__all__ = [
    "BeamCoefficients", "BigMConstants", "BinaryState", "Extracted", "InfeasibleConfig", "PredesignedBeams",
    "VariableLayout", "apply_state", "binary_mse", "binary_penalty", "build_p0_relaxation",
    "build_pub_relaxation", "build_rnp1_subproblem", "build_rnp2_relaxation", "build_rnp2_subproblem",
    "compute_bigM", "counting_conflicts", "design_multicast_beams", "design_zf_beams",
    "expected_variable_count", "extract", "f_alpha", "f_beta", "f_kappa", "layout_for", "penalized_objective",
    "penalty_objective", "state_from_solution", "surrogate_objective", "weighted_rate",
]
