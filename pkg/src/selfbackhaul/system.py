"""Static problem data: dimensions, powers, rate tables, weights and geometry.

All powers are linear watts.  dBm only appears at the CLI/preset boundary
through :func:`dbm_to_watt`.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

BOLTZMANN_DBM_HZ = -174.0


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def watt_to_dbm(watt: float) -> float:
    return 10.0 * math.log10(watt) + 30.0


def thermal_noise_watt(bandwidth_hz: float, noise_figure_db: float) -> float:
    """kTB noise plus receiver noise figure."""
    return dbm_to_watt(BOLTZMANN_DBM_HZ + 10.0 * math.log10(bandwidth_hz) + noise_figure_db)


@dataclass(frozen=True)
class RateTable:
    """Ordered (spectral efficiency, target SINR) pairs, SINR in linear scale."""

    rates: tuple[float, ...]
    sinrs: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "rates", tuple(float(r) for r in self.rates))
        object.__setattr__(self, "sinrs", tuple(float(s) for s in self.sinrs))

    def __len__(self) -> int:
        return len(self.rates)

    def violations(self, name: str = "table") -> list[str]:
        out = []
        if len(self.rates) != len(self.sinrs):
            out.append(f"{name}: rates and sinrs differ in length")
            return out
        if len(self.rates) == 0:
            out.append(f"{name}: empty")
        if any(r <= 0 for r in self.rates) or any(s <= 0 for s in self.sinrs):
            out.append(f"{name}: entries must be positive")
        if any(b <= a for a, b in zip(self.rates, self.rates[1:])):
            out.append(f"{name}: rates not strictly increasing")
        if any(b <= a for a, b in zip(self.sinrs, self.sinrs[1:])):
            out.append(f"{name}: sinrs not strictly increasing")
        return out

    def best_index(self, sinr: float) -> int:
        """Largest j with sinrs[j] <= sinr, or -1 when even the first target is missed."""
        return int(np.searchsorted(np.asarray(self.sinrs), sinr, side="right")) - 1

    def truncated(self, count: int) -> "RateTable":
        return RateTable(self.rates[:count], self.sinrs[:count])

    def to_dict(self) -> dict:
        return {"rates": list(self.rates), "sinrs": list(self.sinrs)}

    @classmethod
    def from_dict(cls, d: dict) -> "RateTable":
        return cls(tuple(d["rates"]), tuple(d["sinrs"]))


# CQI-indexed rates (bps/Hz) with their minimum SINR for the target BLER.
_MCS_RATES = (0.2344, 0.6016, 1.1758, 2.7305, 5.5547)
_MCS_SINRS = (0.2159, 0.6610, 1.7474, 10.6316, 95.6974)


def default_rate_table() -> RateTable:
    return RateTable(_MCS_RATES, _MCS_SINRS)


@dataclass(frozen=True)
class SystemConfig:
    """Scalar system parameters.

    UEs and SBSs are indexed cluster-major: global UE ``l * U + u`` and global
    SBS ``l * B + b``.  ``weights`` has one entry per global UE; ``None``
    means equal priority ``1 / (L * U)``.
    """

    L: int = 5
    B: int = 3
    U: int = 20
    U_served: int = 4
    N_tx_MBS: tuple[int, int] = (16, 4)
    N_tx_SBS: tuple[int, int] = (4, 4)
    N_streams_SBS: int = 4
    B_min: int = 1
    B_max: int | None = None
    P_tx_MBS: float = dbm_to_watt(36.0)
    P_tx_SBS: float = dbm_to_watt(14.0)
    W_bw_access: float = 100e6
    W_bw_backhaul: float = 100e6
    sigma2_SBS: float = thermal_noise_watt(100e6, 7.0)
    sigma2_UE: float = thermal_noise_watt(100e6, 9.0)
    carrier_hz: float = 41e9
    weights: tuple[float, ...] | None = None
    ue_table: RateTable = field(default_factory=default_rate_table)
    sbs_table: RateTable = field(default_factory=default_rate_table)

    def __post_init__(self):
        object.__setattr__(self, "N_tx_MBS", tuple(int(v) for v in self.N_tx_MBS))
        object.__setattr__(self, "N_tx_SBS", tuple(int(v) for v in self.N_tx_SBS))
        if self.B_max is None:
            object.__setattr__(self, "B_max", self.B)
        if self.weights is not None:
            object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))

    @property
    def n_mbs(self) -> int:
        return self.N_tx_MBS[0] * self.N_tx_MBS[1]

    @property
    def n_sbs(self) -> int:
        return self.N_tx_SBS[0] * self.N_tx_SBS[1]

    @property
    def n_sbs_total(self) -> int:
        return self.L * self.B

    @property
    def n_ue_total(self) -> int:
        return self.L * self.U

    def weight_vector(self) -> np.ndarray:
        if self.weights is None:
            return np.full(self.n_ue_total, 1.0 / self.n_ue_total)
        return np.asarray(self.weights, dtype=float)

    def with_(self, **changes) -> "SystemConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["N_tx_MBS"] = list(self.N_tx_MBS)
        d["N_tx_SBS"] = list(self.N_tx_SBS)
        d["weights"] = None if self.weights is None else list(self.weights)
        d["ue_table"] = self.ue_table.to_dict()
        d["sbs_table"] = self.sbs_table.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SystemConfig":
        d = dict(d)
        for key in ("P_tx_MBS_dBm", "P_tx_SBS_dBm"):
            if key in d:
                d[key.replace("_dBm", "")] = dbm_to_watt(d.pop(key))
        if "weights" in d and d["weights"] is not None:
            d["weights"] = tuple(d["weights"])
        for key in ("ue_table", "sbs_table"):
            if key in d and isinstance(d[key], dict):
                d[key] = RateTable.from_dict(d[key])
        return cls(**d)


def validate_config(cfg: SystemConfig, ue_table: RateTable | None = None,
                    sbs_table: RateTable | None = None) -> list[str]:
    """Return every violated invariant; an empty list means the data is usable.

    Tables default to the ones carried by ``cfg``.
    """
    ue_table = cfg.ue_table if ue_table is None else ue_table
    sbs_table = cfg.sbs_table if sbs_table is None else sbs_table
    report: list[str] = []
    if cfg.L < 1:
        report.append("L: must be >= 1")
    if cfg.B < 1:
        report.append("B: must be >= 1")
    if cfg.U_served < 1:
        report.append("U_served: must be >= 1")
    if cfg.U < cfg.U_served:
        report.append("U: must be >= U_served")
    if cfg.N_streams_SBS < 1:
        report.append("N_streams_SBS: must be >= 1")
    if not (1 <= cfg.B_min <= cfg.B_max <= cfg.B):
        report.append("B_min/B_max: need 1 <= B_min <= B_max <= B")
    if min(cfg.N_tx_MBS) < 1 or min(cfg.N_tx_SBS) < 1:
        report.append("N_tx: array dimensions must be >= 1")
    if cfg.U_served > cfg.B * cfg.N_streams_SBS:
        report.append(
            f"C7/C14 conflict: U_served={cfg.U_served} exceeds B*N_streams_SBS="
            f"{cfg.B * cfg.N_streams_SBS}"
        )
    # each SBS must serve someone (C8) while admitted UEs use at most B_max SBSs
    if cfg.B > cfg.U_served * cfg.B_max:
        report.append("C8/C9 conflict: not enough admitted UEs to give every SBS one stream")
    for name in ("P_tx_MBS", "P_tx_SBS", "W_bw_access", "W_bw_backhaul", "sigma2_SBS", "sigma2_UE", "carrier_hz"):
        value = getattr(cfg, name)
        if not (np.isfinite(value) and value > 0):
            report.append(f"{name}: must be strictly positive")
    if cfg.weights is not None:
        w = np.asarray(cfg.weights)
        if w.shape != (cfg.n_ue_total,):
            report.append(f"weights: expected {cfg.n_ue_total} entries, got {w.size}")
        elif np.any(w < 0) or not np.all(np.isfinite(w)):
            report.append("weights: must be finite and nonnegative")
        elif abs(w.sum() - 1.0) > 1e-12:
            report.append(f"weights: sum to {w.sum():.15g}, expected 1")
    report.extend(ue_table.violations("ue_table"))
    report.extend(sbs_table.violations("sbs_table"))
    return report


def lower_bound_rate(cfg: SystemConfig, ue_table: RateTable | None = None) -> float:
    """Worst-case access throughput in bps: every admitted UE at the lowest rate."""
    ue_table = cfg.ue_table if ue_table is None else ue_table
    return ue_table.rates[0] * cfg.W_bw_access * cfg.U_served * cfg.L


@dataclass(frozen=True)
class TopologyParams:
    """Geometry generator settings (meters, radians)."""

    mbs_height: float = 25.0
    sbs_height: float = 10.0
    ue_height: float = 1.5
    cluster_distance: float = 150.0
    cluster_spread: float = math.radians(100.0)
    sbs_radius: float = 20.0
    ue_radius: float = 35.0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TopologyParams":
        return cls(**d)


@dataclass(frozen=True)
class Topology:
    mbs_position: np.ndarray
    mbs_boresight: tuple[float, float]
    cluster_centers: np.ndarray  # (L, 3)
    sbs_positions: np.ndarray  # (L*B, 3)
    sbs_boresights: np.ndarray  # (L*B, 2) azimuth, elevation
    ue_positions: np.ndarray  # (L*U, 3)
    L: int = field(default=0)
    B: int = field(default=0)
    U: int = field(default=0)

    def cluster_of_sbs(self, b: int) -> int:
        return b // self.B

    def cluster_of_ue(self, u: int) -> int:
        return u // self.U

    def boresight_vectors(self) -> np.ndarray:
        """Unit pointing vectors of every SBS array, shape (L*B, 3)."""
        az, el = self.sbs_boresights[:, 0], self.sbs_boresights[:, 1]
        return np.stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)], axis=1)

    def subset_ues(self, keep_local: Sequence[int]) -> "Topology":
        """Topology restricted to the same local UE indices in every cluster."""
        keep_local = list(keep_local)
        idx = [l * self.U + u for l in range(self.L) for u in keep_local]
        return replace(self, ue_positions=self.ue_positions[idx], U=len(keep_local))

    def to_dict(self) -> dict:
        return {
            "L": self.L,
            "B": self.B,
            "U": self.U,
            "mbs_position": self.mbs_position.tolist(),
            "mbs_boresight": list(self.mbs_boresight),
            "cluster_centers": self.cluster_centers.tolist(),
            "sbs_positions": self.sbs_positions.tolist(),
            "sbs_boresights": self.sbs_boresights.tolist(),
            "ue_positions": self.ue_positions.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Topology":
        return cls(
            mbs_position=np.asarray(d["mbs_position"], dtype=float),
            mbs_boresight=tuple(d["mbs_boresight"]),
            cluster_centers=np.asarray(d["cluster_centers"], dtype=float),
            sbs_positions=np.asarray(d["sbs_positions"], dtype=float),
            sbs_boresights=np.asarray(d["sbs_boresights"], dtype=float),
            ue_positions=np.asarray(d["ue_positions"], dtype=float),
            L=int(d["L"]),
            B=int(d["B"]),
            U=int(d["U"]),
        )


def _azimuth_elevation(vec: np.ndarray) -> tuple[float, float]:
    horiz = math.hypot(vec[0], vec[1])
    return math.atan2(vec[1], vec[0]), math.atan2(vec[2], horiz)


def generate_topology(cfg: SystemConfig, rng: np.random.Generator, params: TopologyParams | None = None) -> Topology:
    """Clusters on an arc facing the MBS, SBSs on a circle, UEs uniform in a disk.

    The MBS boresight points along +x; cluster centers are spread evenly over
    ``cluster_spread`` radians around it.  SBS arrays face their cluster center.
    """
    p = params or TopologyParams()
    mbs = np.array([0.0, 0.0, p.mbs_height])
    if cfg.L == 1:
        angles = np.array([0.0])
    else:
        angles = np.linspace(-p.cluster_spread / 2, p.cluster_spread / 2, cfg.L)
    centers = np.stack(
        [p.cluster_distance * np.cos(angles), p.cluster_distance * np.sin(angles), np.zeros(cfg.L)], axis=1
    )
    sbs, sbs_bore, ues = [], [], []
    for l in range(cfg.L):
        phase = rng.uniform(0, 2 * np.pi)
        for b in range(cfg.B):
            phi = phase + 2 * np.pi * b / cfg.B
            pos = centers[l] + np.array([p.sbs_radius * np.cos(phi), p.sbs_radius * np.sin(phi), p.sbs_height])
            sbs.append(pos)
            target = centers[l] + np.array([0.0, 0.0, p.ue_height])
            sbs_bore.append(_azimuth_elevation(target - pos))
        r = p.ue_radius * np.sqrt(rng.uniform(size=cfg.U))
        th = rng.uniform(0, 2 * np.pi, size=cfg.U)
        for k in range(cfg.U):
            ues.append(centers[l] + np.array([r[k] * np.cos(th[k]), r[k] * np.sin(th[k]), p.ue_height]))
    return Topology(
        mbs_position=mbs,
        mbs_boresight=(0.0, 0.0),
        cluster_centers=centers,
        sbs_positions=np.asarray(sbs),
        sbs_boresights=np.asarray(sbs_bore),
        ue_positions=np.asarray(ues),
        L=cfg.L,
        B=cfg.B,
        U=cfg.U,
    )


def save_config(path: str | Path, cfg: SystemConfig) -> None:
    Path(path).write_text(json.dumps({"config": cfg.to_dict()}, indent=2), encoding="utf-8")


def load_config(path: str | Path) -> SystemConfig:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return SystemConfig.from_dict(doc.get("config", doc))
