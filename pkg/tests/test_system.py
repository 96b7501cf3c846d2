import json

import numpy as np
import pytest

from selfbackhaul.system import (
    RateTable,
    SystemConfig,
    dbm_to_watt,
    default_rate_table,
    generate_topology,
    load_config,
    lower_bound_rate,
    save_config,
    thermal_noise_watt,
    validate_config,
    watt_to_dbm,
)

from oracles import lower_bound_bps


def test_defaults_are_valid():
    cfg = SystemConfig()
    assert validate_config(cfg) == []
    assert (cfg.L, cfg.B, cfg.U, cfg.U_served, cfg.N_streams_SBS) == (5, 3, 20, 4, 4)
    assert cfg.n_mbs == 64 and cfg.n_sbs == 16


def test_unit_conversions():
    assert dbm_to_watt(30.0) == pytest.approx(1.0)
    assert watt_to_dbm(dbm_to_watt(14.0)) == pytest.approx(14.0)
    # -174 dBm/Hz + 80 dB (100 MHz) + 7 dB NF = -87 dBm
    assert watt_to_dbm(thermal_noise_watt(100e6, 7.0)) == pytest.approx(-87.0)


def test_lower_bound_matches_closed_form():
    cfg = SystemConfig()
    assert lower_bound_rate(cfg) == pytest.approx(468.8e6, rel=0, abs=1e-3)
    small = SystemConfig(L=2, B=3, U=6, U_served=3)
    assert lower_bound_rate(small) == lower_bound_bps(0.2344, 100e6, 3, 2)


@pytest.mark.parametrize("changes, needle", [
    (dict(U_served=13, N_streams_SBS=4), "C7/C14"),
    (dict(B=3, U_served=1, B_max=2), "C8/C9"),
    (dict(U=3, U_served=4), "U: must be"),
    (dict(P_tx_MBS=0.0), "P_tx_MBS"),
    (dict(weights=(1.0,) * 100), "weights"),
])
def test_validate_reports_conflicts(changes, needle):
    cfg = SystemConfig().with_(**changes)
    report = validate_config(cfg)
    assert any(needle in m for m in report), report


def test_rate_table_checks():
    assert default_rate_table().violations() == []
    bad = RateTable((1.0, 0.5), (1.0, 2.0))
    assert any("increasing" in m for m in bad.violations())
    tab = default_rate_table()
    assert tab.best_index(0.1) == -1
    assert tab.best_index(tab.sinrs[2]) == 2
    assert tab.best_index(1e9) == len(tab) - 1


def test_config_round_trip(tmp_path):
    cfg = SystemConfig(L=2, B=2, U=4, U_served=2, weights=tuple(np.full(8, 1 / 8)))
    path = tmp_path / "cfg.json"
    save_config(path, cfg)
    assert load_config(path) == cfg
    d = json.loads(path.read_text())["config"]
    d.pop("P_tx_MBS")
    d["P_tx_MBS_dBm"] = 30.0
    assert SystemConfig.from_dict(d).P_tx_MBS == pytest.approx(1.0)


def test_topology_is_seeded_and_shaped():
    cfg = SystemConfig(L=3, B=2, U=5, U_served=2)
    a = generate_topology(cfg, np.random.default_rng(7))
    b = generate_topology(cfg, np.random.default_rng(7))
    c = generate_topology(cfg, np.random.default_rng(8))
    assert a.sbs_positions.shape == (6, 3) and a.ue_positions.shape == (15, 3)
    assert np.array_equal(a.ue_positions, b.ue_positions)
    assert not np.array_equal(a.ue_positions, c.ue_positions)
    # UEs stay within their cluster disk
    for u in range(15):
        center = a.cluster_centers[a.cluster_of_ue(u)]
        assert np.hypot(*(a.ue_positions[u, :2] - center[:2])) <= 35.0 + 1e-9
