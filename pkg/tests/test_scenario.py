import dataclasses
import json

import numpy as np
import pytest

from cellshaper.errors import InfeasibleScenarioError
from cellshaper.scenario import (GUE_KIND, UAV_KIND, Building, Corridor, Scenario,
                                 SectorAntenna, Site, apply_config, baseline_config,
                                 generate_synthetic_scenario, sample_users,
                                 save_scenario, load_scenario, scenario_from_dict,
                                 scenario_to_dict)


@pytest.fixture(scope="module")
def scn16():
    return generate_synthetic_scenario(16, seed=1, with_corridors=True)


class TestGeneration:
    def test_single_site(self):
        scn = generate_synthetic_scenario(1, seed=7, with_corridors=False)
        assert len(scn.sites) == 1
        assert scn.n_antennas == 3
        assert len(scn.corridors) == 0

    def test_16_sites(self, scn16):
        assert scn16.n_antennas == 48
        assert all(22.0 <= s.z <= 56.0 for s in scn16.sites)
        assert len(scn16.corridors) == 2
        assert 10 <= len(scn16.buildings) <= 30

    def test_deterministic(self):
        a = generate_synthetic_scenario(16, seed=1, with_corridors=True)
        b = generate_synthetic_scenario(16, seed=1, with_corridors=True)
        assert json.dumps(scenario_to_dict(a)) == json.dumps(scenario_to_dict(b))

    def test_seed_changes_layout(self):
        a = generate_synthetic_scenario(4, seed=1, with_corridors=False)
        b = generate_synthetic_scenario(4, seed=2, with_corridors=False)
        assert scenario_to_dict(a) != scenario_to_dict(b)

    def test_rejects_zero_sites(self):
        with pytest.raises(ValueError):
            generate_synthetic_scenario(0, seed=1, with_corridors=False)

    def test_sector_bearings_120_apart(self, scn16):
        for s in scn16.sites:
            bearings = sorted(a.bearing_deg for a in scn16.antennas if a.site_id == s.id)
            assert len(bearings) == 3
            gaps = {round((bearings[1] - bearings[0]) % 360),
                    round((bearings[2] - bearings[1]) % 360)}
            assert gaps == {120}

    def test_sites_inside_bounds(self, scn16):
        x0, y0, x1, y1 = scn16.bounds
        for s in scn16.sites:
            assert x0 <= s.x <= x1 and y0 <= s.y <= y1

    def test_buildings_avoid_site_bases(self, scn16):
        for b in scn16.buildings:
            for s in scn16.sites:
                assert not b.contains_xy(s.x, s.y)

    def test_corridor_defaults(self, scn16):
        for c in scn16.corridors:
            assert c.length == pytest.approx(900.0)
            assert c.width == 40.0
            assert (c.hmin, c.hmax) == (140.0, 160.0)

    def test_region_scales_with_sites(self):
        scn = generate_synthetic_scenario(16, seed=1, with_corridors=False)
        side = scn.bounds[2] - scn.bounds[0]
        assert side == pytest.approx(350.0 * 4)


class TestUserDrops:
    def test_deterministic(self, scn16):
        a = sample_users(scn16, seed=42)
        b = sample_users(scn16, seed=42)
        assert a.positions.tobytes() == b.positions.tobytes()
        assert a.kinds == b.kinds

    def test_no_uavs_without_corridors(self):
        scn = generate_synthetic_scenario(4, seed=3, with_corridors=False)
        drop = sample_users(scn, seed=0)
        assert all(k == GUE_KIND for k in drop.kinds)

    def test_gue_heights_exact(self, scn16):
        drop = sample_users(scn16, seed=5)
        g = drop.indices_of(GUE_KIND)
        assert np.all(drop.positions[g, 2] == 1.5)

    def test_gues_strictly_outside_buildings(self, scn16):
        for seed in range(5):
            drop = sample_users(scn16, seed=seed)
            for i in drop.indices_of(GUE_KIND):
                x, y = drop.positions[i, 0], drop.positions[i, 1]
                for b in scn16.buildings:
                    assert not (b.x0 < x < b.x1 and b.y0 < y < b.y1)

    def test_uavs_inside_corridor_volumes(self, scn16):
        drop = sample_users(scn16, seed=9)
        for i in drop.indices_of(UAV_KIND):
            p = drop.positions[i]
            inside_any = False
            for c in scn16.corridors:
                d = np.array([c.ax1 - c.ax0, c.ay1 - c.ay0])
                L = np.linalg.norm(d)
                rel = p[:2] - np.array([c.ax0, c.ay0])
                t = np.dot(rel, d / L)
                off = (d[0] * rel[1] - d[1] * rel[0]) / L
                if (-1e-9 <= t <= L + 1e-9 and abs(off) <= c.width / 2 + 1e-9
                        and c.hmin - 1e-9 <= p[2] <= c.hmax + 1e-9):
                    inside_any = True
            assert inside_any

    def test_mean_uav_gue_ratio_two_corridors(self, scn16):
        # Poisson means: 2 * 70 UAVs vs 10 * 48 GUEs -> ratio about 0.29
        ratios = []
        for seed in range(300):
            drop = sample_users(scn16, seed=seed)
            kinds = np.array(drop.kinds)
            ratios.append(np.sum(kinds == UAV_KIND) / np.sum(kinds == GUE_KIND))
        assert np.mean(ratios) == pytest.approx(140.0 / 480.0, abs=0.02)

    def test_mean_uav_gue_ratio_four_corridors(self, scn16):
        extra = tuple(dataclasses.replace(c, ay0=c.ay0 + 150.0, ay1=c.ay1 + 150.0)
                      for c in scn16.corridors)
        scn4 = dataclasses.replace(scn16, corridors=scn16.corridors + extra)
        ratios = []
        for seed in range(300):
            drop = sample_users(scn4, seed=seed)
            kinds = np.array(drop.kinds)
            ratios.append(np.sum(kinds == UAV_KIND) / np.sum(kinds == GUE_KIND))
        assert np.mean(ratios) == pytest.approx(280.0 / 480.0, abs=0.04)

    def test_infeasible_when_fully_covered(self):
        scn = generate_synthetic_scenario(1, seed=0, with_corridors=False)
        x0, y0, x1, y1 = scn.bounds
        cover = (Building(x0=x0 - 1, y0=y0 - 1, x1=x1 + 1, y1=y1 + 1, height=50.0),)
        blocked = dataclasses.replace(scn, buildings=cover)
        with pytest.raises(InfeasibleScenarioError):
            sample_users(blocked, seed=0)


class TestApplyConfig:
    def test_baseline_vector(self, scn16):
        x = baseline_config(scn16)
        out = apply_config(scn16, x)
        assert all(a.tilt_deg == -12.0 and a.v_hpbw_deg == 10.0 for a in out.antennas)

    def test_idempotent(self, scn16):
        x = baseline_config(scn16)
        once = apply_config(scn16, x)
        twice = apply_config(once, x)
        assert scenario_to_dict(once) == scenario_to_dict(twice)

    def test_only_tilt_and_hpbw_change(self, scn16):
        rng = np.random.default_rng(0)
        n = scn16.n_antennas
        x = np.concatenate([rng.uniform(-90, 90, n), rng.uniform(1, 360, n)])
        out = apply_config(scn16, x)
        for before, after in zip(scn16.antennas, out.antennas):
            assert after.bearing_deg == before.bearing_deg
            assert after.tx_power_dbm == before.tx_power_dbm
            assert after.h_hpbw_deg == before.h_hpbw_deg
            assert after.site_id == before.site_id
        assert scenario_to_dict(out)["sites"] == scenario_to_dict(scn16)["sites"]

    def test_dimension_mismatch(self, scn16):
        with pytest.raises(ValueError):
            apply_config(scn16, np.zeros(scn16.n_antennas))

    def test_out_of_bounds_tilt(self, scn16):
        x = baseline_config(scn16)
        x[0] = 91.0
        with pytest.raises(ValueError):
            apply_config(scn16, x)

    def test_out_of_bounds_hpbw(self, scn16):
        x = baseline_config(scn16)
        x[scn16.n_antennas] = 0.0
        with pytest.raises(ValueError):
            apply_config(scn16, x)
        x[scn16.n_antennas] = 360.5
        with pytest.raises(ValueError):
            apply_config(scn16, x)

    def test_does_not_mutate_input(self, scn16):
        before = scenario_to_dict(scn16)
        x = baseline_config(scn16)
        x[:] = 5.0
        x[scn16.n_antennas:] = 20.0
        apply_config(scn16, x)
        assert scenario_to_dict(scn16) == before


class TestSerialization:
    def test_round_trip(self, scn16, tmp_path):
        path = tmp_path / "scn.json"
        save_scenario(path, scn16)
        back = load_scenario(path)
        assert scenario_to_dict(back) == scenario_to_dict(scn16)

    def test_schema_keys(self, scn16):
        d = scenario_to_dict(scn16)
        assert set(d) == {"bounds", "sites", "antennas", "buildings", "corridors",
                          "gue_density", "uav_per_corridor"}
        assert set(d["sites"][0]) == {"id", "x", "y", "z"}
        assert set(d["antennas"][0]) == {"id", "site_id", "bearing_deg", "tilt_deg",
                                         "v_hpbw_deg", "tx_power_dbm"}
        assert set(d["buildings"][0]) == {"x0", "y0", "x1", "y1", "height"}
        assert set(d["corridors"][0]) == {"ax0", "ay0", "ax1", "ay1", "width",
                                          "hmin", "hmax"}

    def test_defaults_applied(self, scn16):
        d = scenario_to_dict(scn16)
        assert d["gue_density"] == 10.0
        assert d["uav_per_corridor"] == 70.0
        back = scenario_from_dict(d)
        assert back.antennas[0].h_hpbw_deg == 65.0


class TestValidation:
    def test_antenna_count_invariant(self):
        site = Site(id=0, x=0, y=0, z=30)
        ants = tuple(SectorAntenna(id=i, site_id=0, bearing_deg=120 * i, tilt_deg=-12,
                                   v_hpbw_deg=10, tx_power_dbm=46) for i in range(2))
        with pytest.raises(ValueError):
            Scenario(sites=(site,), antennas=ants, buildings=(), bounds=(0, 0, 100, 100))

    def test_bad_tilt_rejected_on_construction(self):
        with pytest.raises(ValueError):
            SectorAntenna(id=0, site_id=0, bearing_deg=0, tilt_deg=-95,
                          v_hpbw_deg=10, tx_power_dbm=46)

    def test_corridor_heights(self):
        with pytest.raises(ValueError):
            Corridor(ax0=0, ay0=0, ax1=100, ay1=0, width=40, hmin=60, hmax=60)
