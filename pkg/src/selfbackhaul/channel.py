"""Backhaul/access channel generation with planar-array steering.

Simplified urban model at desk scale:

* backhaul MBS -> SBS: UMa LOS path loss, log-normal shadowing, pure LOS
  steering response (optionally Rician when ``backhaul_k_db`` is set);
* access SBS -> UE: UMi LOS/NLOS chosen by the distance-based LOS
  probability, Rician fading around the steering vector for LOS and
  i.i.d. Rayleigh for NLOS.

Path loss formulas (d in meters, f in GHz, PL in dB)::

    UMa LOS   28.0 + 22.0 log10(d) + 20 log10(f)
    UMi LOS   32.4 + 21.0 log10(d) + 20 log10(f)
    UMi NLOS  max(UMi LOS, 22.4 + 35.3 log10(d) + 21.3 log10(f) - 0.3 (h_ue - 1.5))
    P_LOS     1 if d2D <= 18 else 18/d2D + exp(-d2D/36) (1 - 18/d2D)

Every draw comes from a named stream derived from the base seed, so the
result does not depend on the order in which links are generated.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Literal

import numpy as np

from .system import SystemConfig, Topology

SPEED_OF_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class PlanarArray:
    rows: int
    cols: int
    spacing: float = 0.5
    boresight: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("array needs at least one row and one column")
        if not self.spacing > 0:
            raise ValueError("element spacing must be positive")

    @property
    def size(self) -> int:
        return self.rows * self.cols


def steering_vector(array: PlanarArray, azimuth: float, elevation: float) -> np.ndarray:
    """Unit-modulus response of a planar array, angles in the array frame.

    Element (m, n) (row-major index ``m * cols + n``) has phase
    ``2 pi d (m sin(el) + n sin(az) cos(el))`` relative to element (0, 0).
    """
    m = np.arange(array.rows)[:, None]
    n = np.arange(array.cols)[None, :]
    phase = 2 * np.pi * array.spacing * (m * np.sin(elevation) + n * np.sin(azimuth) * np.cos(elevation))
    return np.exp(1j * phase).ravel()


def _local_angles(direction: np.ndarray, boresight: tuple[float, float]) -> tuple[float, float]:
    """Azimuth/elevation of ``direction`` measured from the array boresight."""
    az0, el0 = boresight
    d = direction / np.linalg.norm(direction)
    # rotate so that the boresight becomes +x
    ca, sa = math.cos(-az0), math.sin(-az0)
    x, y, z = ca * d[0] - sa * d[1], sa * d[0] + ca * d[1], d[2]
    ce, se = math.cos(-el0), math.sin(-el0)
    x, z = ce * x - se * z, se * x + ce * z
    return math.atan2(y, x), math.asin(max(-1.0, min(1.0, z)))


@dataclass(frozen=True)
class ChannelModel:
    """Large/small-scale parameters; defaults are declared, not measured."""

    shadow_std_uma_los_db: float = 4.0
    shadow_std_umi_los_db: float = 4.0
    shadow_std_umi_nlos_db: float = 7.82
    rician_k_db: float = 10.0
    backhaul_k_db: float | None = None
    element_spacing: float = 0.5
    shadowing: bool = True
    force_los: bool | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ChannelModel":
        return cls(**d)


def pathloss_uma_los_db(d3d: float, fc_ghz: float) -> float:
    return 28.0 + 22.0 * math.log10(d3d) + 20.0 * math.log10(fc_ghz)


def pathloss_umi_los_db(d3d: float, fc_ghz: float) -> float:
    return 32.4 + 21.0 * math.log10(d3d) + 20.0 * math.log10(fc_ghz)


def pathloss_umi_nlos_db(d3d: float, fc_ghz: float, h_ue: float = 1.5) -> float:
    nlos = 22.4 + 35.3 * math.log10(d3d) + 21.3 * math.log10(fc_ghz) - 0.3 * (h_ue - 1.5)
    return max(pathloss_umi_los_db(d3d, fc_ghz), nlos)


def los_probability_umi(d2d: float) -> float:
    if d2d <= 18.0:
        return 1.0
    return 18.0 / d2d + math.exp(-d2d / 36.0) * (1.0 - 18.0 / d2d)


def _stream(seed: int, *labels) -> np.random.Generator:
    """Independent generator for one labeled draw."""
    key = ":".join(str(x) for x in (seed,) + labels).encode()
    digest = hashlib.blake2b(key, digest_size=16).digest()
    return np.random.default_rng(np.frombuffer(digest, dtype=np.uint32).tolist())


def _cn(rng: np.random.Generator, size, var: float = 1.0) -> np.ndarray:
    return np.sqrt(var / 2) * (rng.standard_normal(size) + 1j * rng.standard_normal(size))


@dataclass(frozen=True)
class ChannelSet:
    """One realization: ``g[b]`` MBS->SBS b and ``h[b, u]`` SBS b -> UE u (global indices)."""

    g: np.ndarray  # (L*B, N_MBS)
    h: np.ndarray  # (L*B, L*U, N_SBS)
    carrier_hz: float
    seed: int | None = None
    note: str = ""

    def __post_init__(self):
        if not (np.all(np.isfinite(self.g)) and np.all(np.isfinite(self.h))):
            raise ValueError("channel entries must be finite")

    def check_dims(self, cfg: SystemConfig) -> None:
        if self.g.shape != (cfg.n_sbs_total, cfg.n_mbs):
            raise ValueError(f"g has shape {self.g.shape}, expected {(cfg.n_sbs_total, cfg.n_mbs)}")
        if self.h.shape != (cfg.n_sbs_total, cfg.n_ue_total, cfg.n_sbs):
            raise ValueError(f"h has shape {self.h.shape}, expected {(cfg.n_sbs_total, cfg.n_ue_total, cfg.n_sbs)}")

    def fingerprint(self) -> str:
        """Short hash identifying the realization, used for paired-run records."""
        hsh = hashlib.sha256()
        hsh.update(np.ascontiguousarray(self.g).tobytes())
        hsh.update(np.ascontiguousarray(self.h).tobytes())
        return hsh.hexdigest()[:16]

    def subset_ues(self, U: int, keep_local) -> "ChannelSet":
        """Same local UE indices kept in every cluster (``U`` = UEs per cluster before)."""
        keep_local = list(keep_local)
        L = self.h.shape[1] // U
        idx = [l * U + u for l in range(L) for u in keep_local]
        return replace(self, h=self.h[:, idx, :])

    def to_dict(self) -> dict:
        def pack(a):
            return {"shape": list(a.shape), "data": np.stack([a.real, a.imag], axis=-1).ravel().tolist()}

        return {"carrier_hz": self.carrier_hz, "seed": self.seed, "note": self.note, "g": pack(self.g), "h": pack(self.h)}

    @classmethod
    def from_dict(cls, d: dict) -> "ChannelSet":
        def unpack(p):
            arr = np.asarray(p["data"], dtype=float).reshape(tuple(p["shape"]) + (2,))
            return arr[..., 0] + 1j * arr[..., 1]

        return cls(g=unpack(d["g"]), h=unpack(d["h"]), carrier_hz=d["carrier_hz"], seed=d.get("seed"), note=d.get("note", ""))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "ChannelSet":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _fc_ghz(cfg: SystemConfig) -> float:
    return cfg.carrier_hz / 1e9


def generate_backhaul_channels(topology: Topology, cfg: SystemConfig, seed: int,
                               model: ChannelModel | None = None) -> np.ndarray:
    """MBS -> SBS vectors, shape (L*B, N_MBS)."""
    model = model or ChannelModel()
    rows, cols = cfg.N_tx_MBS
    array = PlanarArray(rows, cols, model.element_spacing, tuple(topology.mbs_boresight))
    g = np.empty((cfg.n_sbs_total, cfg.n_mbs), dtype=complex)
    for b in range(cfg.n_sbs_total):
        vec = topology.sbs_positions[b] - topology.mbs_position
        d3d = float(np.linalg.norm(vec))
        pl_db = pathloss_uma_los_db(d3d, _fc_ghz(cfg))
        if model.shadowing:
            pl_db += model.shadow_std_uma_los_db * _stream(seed, "bh-shadow", b).standard_normal()
        a = steering_vector(array, *_local_angles(vec, array.boresight))
        if model.backhaul_k_db is not None:
            k = 10 ** (model.backhaul_k_db / 10)
            a = np.sqrt(k / (k + 1)) * a + np.sqrt(1 / (k + 1)) * _cn(_stream(seed, "bh-fading", b), a.size)
        g[b] = 10 ** (-pl_db / 20) * a
    return g


def generate_access_channels(topology: Topology, cfg: SystemConfig, seed: int,
                             model: ChannelModel | None = None) -> np.ndarray:
    """SBS -> UE vectors for every (SBS, UE) pair, shape (L*B, L*U, N_SBS)."""
    model = model or ChannelModel()
    rows, cols = cfg.N_tx_SBS
    k_lin = 10 ** (model.rician_k_db / 10) if np.isfinite(model.rician_k_db) else np.inf
    h = np.empty((cfg.n_sbs_total, cfg.n_ue_total, cfg.n_sbs), dtype=complex)
    for b in range(cfg.n_sbs_total):
        array = PlanarArray(rows, cols, model.element_spacing, tuple(topology.sbs_boresights[b]))
        for u in range(cfg.n_ue_total):
            vec = topology.ue_positions[u] - topology.sbs_positions[b]
            d3d = float(np.linalg.norm(vec))
            d2d = float(np.hypot(vec[0], vec[1]))
            rng = _stream(seed, "access", b, u)
            if model.force_los is None:
                los = rng.uniform() < los_probability_umi(d2d)
            else:
                los = bool(model.force_los)
            shadow = rng.standard_normal()
            fading = _cn(rng, cfg.n_sbs)
            if los:
                pl_db = pathloss_umi_los_db(d3d, _fc_ghz(cfg))
                std = model.shadow_std_umi_los_db
                a = steering_vector(array, *_local_angles(vec, array.boresight))
                if np.isinf(k_lin):
                    small = a
                else:
                    small = np.sqrt(k_lin / (k_lin + 1)) * a + np.sqrt(1 / (k_lin + 1)) * fading
            else:
                pl_db = pathloss_umi_nlos_db(d3d, _fc_ghz(cfg), topology.ue_positions[u][2])
                std = model.shadow_std_umi_nlos_db
                small = fading
            if model.shadowing:
                pl_db += std * shadow
            h[b, u] = 10 ** (-pl_db / 20) * small
    return h


def generate_channels(topology: Topology, cfg: SystemConfig, seed: int,
                      model: ChannelModel | None = None) -> ChannelSet:
    return ChannelSet(
        g=generate_backhaul_channels(topology, cfg, seed, model),
        h=generate_access_channels(topology, cfg, seed, model),
        carrier_hz=cfg.carrier_hz,
        seed=seed,
    )


@dataclass(frozen=True)
class PerturbationSpec:
    chi: float
    scope: Literal["backhaul", "access", "both"] = "both"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.chi <= 1.0:
            raise ValueError(f"chi must lie in [0, 1], got {self.chi}")
        if self.scope not in ("backhaul", "access", "both"):
            raise ValueError(f"unknown scope {self.scope!r}")


def perturb_vector(c: np.ndarray, chi: float, rng: np.random.Generator) -> np.ndarray:
    """``sqrt(1 - chi^2) c + chi p`` with ``p ~ CN(0, |c|^2 I / K)``."""
    if chi == 0.0:
        return c.copy()
    K = c.size
    p = _cn(rng, K, float(np.vdot(c, c).real) / K)
    return np.sqrt(1.0 - chi**2) * c + chi * p


def perturb_channels(channels: ChannelSet, spec: PerturbationSpec) -> ChannelSet:
    g, h = channels.g, channels.h
    if spec.chi > 0 and spec.scope in ("backhaul", "both"):
        g = np.stack([perturb_vector(g[b], spec.chi, _stream(spec.seed, "perturb-g", b)) for b in range(g.shape[0])])
    if spec.chi > 0 and spec.scope in ("access", "both"):
        h = h.copy()
        for b in range(h.shape[0]):
            for u in range(h.shape[1]):
                h[b, u] = perturb_vector(h[b, u], spec.chi, _stream(spec.seed, "perturb-h", b, u))
    return replace(channels, g=g, h=h, note=f"{channels.note} chi={spec.chi}:{spec.scope}".strip())
