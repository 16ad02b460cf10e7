import dataclasses

import numpy as np
import pytest

from cellshaper.errors import CoverageError
from cellshaper.propagation import (AnalyticGainProvider, AnalyticParams, GainMap,
                                    GainMapProvider, export_analytic_gainmap,
                                    gainmap_omni_gain, read_gainmap, total_gain,
                                    total_gain_matrix, write_gainmap)
from cellshaper.scenario import (Building, Scenario, SectorAntenna, Site,
                                 generate_synthetic_scenario)

NO_SHADOW = AnalyticParams(sigma_los_db=0.0, sigma_nlos_db=0.0)


def single_site_scenario(buildings=()):
    site = Site(id=0, x=0.0, y=0.0, z=30.0)
    ants = tuple(SectorAntenna(id=i, site_id=0, bearing_deg=120.0 * i, tilt_deg=-12.0,
                               v_hpbw_deg=10.0, tx_power_dbm=46.0) for i in range(3))
    return Scenario(sites=(site,), antennas=ants, buildings=tuple(buildings),
                    bounds=(-1000.0, -1000.0, 1000.0, 1000.0))


class TestAnalyticModel:
    def test_free_space_reference_at_1m(self):
        scn = single_site_scenario()
        prov = AnalyticGainProvider(scn, NO_SHADOW)
        # 1 m horizontally from the mast at mast height
        g = prov.omni_gain(0, (0.0, 1.0, 30.0))
        assert g == pytest.approx(-38.4, abs=1e-9)

    def test_los_100m(self):
        scn = single_site_scenario()
        prov = AnalyticGainProvider(scn, NO_SHADOW)
        g = prov.omni_gain(0, (0.0, 100.0, 30.0))
        assert g == pytest.approx(-38.4 - 22.0 * 2.0, abs=1e-9)  # exponent 2.2, 2 decades

    def test_distance_clamped_below_1m(self):
        scn = single_site_scenario()
        prov = AnalyticGainProvider(scn, NO_SHADOW)
        assert prov.omni_gain(0, (0.0, 0.2, 30.0)) == pytest.approx(-38.4, abs=1e-9)

    def test_deterministic(self):
        scn = generate_synthetic_scenario(4, seed=2, with_corridors=False)
        prov = AnalyticGainProvider(scn)
        pos = np.array([[100.0, 200.0, 1.5], [300.0, 50.0, 1.5]])
        a = prov.omni_gain_matrix(pos)
        b = prov.omni_gain_matrix(pos)
        assert a.tobytes() == b.tobytes()

    def test_blockage_switches_exponent(self):
        # wall between mast (z=30) and a ground user at y=200
        wall = Building(x0=-50.0, y0=99.0, x1=50.0, y1=101.0, height=120.0)
        blocked = single_site_scenario(buildings=[wall])
        clear = single_site_scenario()
        p_b = AnalyticGainProvider(blocked, NO_SHADOW)
        p_c = AnalyticGainProvider(clear, NO_SHADOW)
        user = (0.0, 200.0, 1.5)
        d = np.linalg.norm(np.array(user) - np.array([0, 0, 30.0]))
        assert p_c.omni_gain(0, user) == pytest.approx(-38.4 - 22.0 * np.log10(d), abs=1e-9)
        assert p_b.omni_gain(0, user) == pytest.approx(-38.4 - 35.0 * np.log10(d), abs=1e-9)

    def test_ray_over_low_building_stays_los(self):
        low = Building(x0=-50.0, y0=99.0, x1=50.0, y1=101.0, height=5.0)
        scn = single_site_scenario(buildings=[low])
        prov = AnalyticGainProvider(scn, NO_SHADOW)
        # from 30 m mast to 150 m altitude: passes far above a 5 m roof
        g = prov.omni_gain(0, (0.0, 200.0, 150.0))
        d = np.linalg.norm([0.0, 200.0, 120.0])
        assert g == pytest.approx(-38.4 - 22.0 * np.log10(d), abs=1e-9)

    def test_sanity_bound_beyond_10m(self):
        scn = generate_synthetic_scenario(4, seed=3, with_corridors=True)
        prov = AnalyticGainProvider(scn)
        rng = np.random.default_rng(1)
        pos = np.column_stack([rng.uniform(0, 700, 500), rng.uniform(0, 700, 500),
                               rng.uniform(1.5, 160, 500)])
        gains = prov.omni_gain_matrix(pos)
        ant = scn.antenna_positions()
        dist = np.linalg.norm(pos[:, None, :] - ant[None, :, :], axis=-1)
        assert np.all(gains[dist >= 10.0] <= -30.0)

    def test_shadowing_field_statistics(self):
        scn = single_site_scenario()
        base = AnalyticGainProvider(scn, NO_SHADOW)
        shadowed = AnalyticGainProvider(scn, AnalyticParams(sigma_los_db=4.0,
                                                            sigma_nlos_db=4.0))
        rng = np.random.default_rng(0)
        n = 120_000
        # distinct 10 m cells -> independent field samples
        pos = np.column_stack([rng.uniform(-5000, 5000, n), rng.uniform(-5000, 5000, n),
                               np.full(n, 1.5)])
        s = (base.omni_gain_matrix(pos) - shadowed.omni_gain_matrix(pos))[:, 0]
        assert abs(np.mean(s)) < 0.05
        assert abs(np.std(s) - 4.0) < 0.2  # 5% of sigma

    def test_shadow_constant_within_cell_changes_across(self):
        scn = single_site_scenario()
        prov = AnalyticGainProvider(scn, AnalyticParams(sigma_los_db=6.0,
                                                        sigma_nlos_db=6.0))
        base = AnalyticGainProvider(scn, NO_SHADOW)

        def shadow(pos):
            return base.omni_gain(0, pos) - prov.omni_gain(0, pos)

        assert shadow((101.0, 52.0, 1.5)) == pytest.approx(shadow((108.0, 57.0, 1.5)),
                                                           abs=1e-12)
        assert shadow((101.0, 52.0, 1.5)) != shadow((111.0, 52.0, 1.5))

    def test_seed_changes_field(self):
        scn = single_site_scenario()
        a = AnalyticGainProvider(scn, AnalyticParams(seed=0))
        b = AnalyticGainProvider(scn, AnalyticParams(seed=1))
        pos = (123.0, 45.0, 1.5)
        assert a.omni_gain(0, pos) != b.omni_gain(0, pos)


class TestBackendEquivalence:
    def test_kernels_agree(self):
        from cellshaper._kernels import gains_numpy as pk
        try:
            from cellshaper._kernels import _gains_cy as ck
        except ImportError:
            pytest.skip("compiled backend not built")
        rng = np.random.default_rng(3)
        n_u, n_a, n_b = 150, 9, 12
        user = np.ascontiguousarray(
            np.column_stack([rng.uniform(0, 800, (n_u, 2)), rng.uniform(1.5, 160, n_u)]))
        ant = np.ascontiguousarray(
            np.column_stack([rng.uniform(0, 800, (n_a, 2)), rng.uniform(22, 56, n_a)]))
        bearing = np.ascontiguousarray(rng.uniform(0, 360, n_a))
        tilt = np.ascontiguousarray(rng.uniform(-60, 60, n_a))
        vh = np.ascontiguousarray(rng.uniform(0.5, 200, n_a))
        hh = np.ascontiguousarray(np.full(n_a, 65.0))
        ids = np.ascontiguousarray(rng.integers(0, 1000, n_a), dtype=np.int64)
        b0 = rng.uniform(0, 700, (n_b, 2))
        bld = np.ascontiguousarray(np.column_stack(
            [b0, b0 + rng.uniform(10, 90, (n_b, 2)), rng.uniform(10, 80, n_b)[:, None]]))

        p1 = pk.pattern_gain_matrix(user, ant, bearing, tilt, vh, hh)
        p2 = ck.pattern_gain_matrix(user, ant, bearing, tilt, vh, hh)
        np.testing.assert_allclose(p1, p2, atol=1e-9)

        o1 = pk.analytic_omni_matrix(user, ant, ids, bld, 38.4, 2.2, 3.5, 4.0, 6.0, 10.0, 7)
        o2 = ck.analytic_omni_matrix(user, ant, ids, bld, 38.4, 2.2, 3.5, 4.0, 6.0, 10.0, 7)
        np.testing.assert_allclose(o1, o2, atol=1e-9)


class TestTotalGain:
    def test_boresight_adds_peak_gain(self):
        scn = single_site_scenario()
        prov = AnalyticGainProvider(scn, NO_SHADOW)
        ant = dataclasses.replace(scn.antennas[0], tilt_deg=0.0)
        # due north at mast height: exactly on the 0-bearing, 0-tilt boresight
        pos = (0.0, 500.0, 30.0)
        assert total_gain(ant, pos, prov) == pytest.approx(
            prov.omni_gain(0, pos) + 14.0, abs=1e-9)

    def test_pattern_floor_case(self):
        scn = single_site_scenario()
        prov = AnalyticGainProvider(scn, NO_SHADOW)
        ant = dataclasses.replace(scn.antennas[0], bearing_deg=180.0, tilt_deg=60.0)
        pos = (0.0, 500.0, 1.5)  # behind the sector and far below its up-tilt
        assert total_gain(ant, pos, prov) == pytest.approx(
            prov.omni_gain(0, pos) + 14.0 - 25.0, abs=1e-9)

    def test_matrix_matches_scalar_composition(self):
        scn = generate_synthetic_scenario(3, seed=5, with_corridors=True)
        prov = AnalyticGainProvider(scn)
        rng = np.random.default_rng(2)
        pos = np.column_stack([rng.uniform(100, 900, (5, 2)), rng.uniform(1.5, 150, 5)])
        mat = total_gain_matrix(scn, pos, prov)
        for i in range(5):
            for j, ant in enumerate(scn.antennas):
                assert mat[i, j] == pytest.approx(total_gain(ant, pos[i], prov), abs=1e-9)


def small_gainmap():
    gains = np.full((1, 2, 3, 3), np.nan, dtype=np.float32)
    # layer z=10: x-gradient; layer z=20: constant -50
    for iy in range(3):
        for ix in range(3):
            gains[0, 0, iy, ix] = -80.0 - 10.0 * ix
            gains[0, 1, iy, ix] = -50.0
    return GainMap(origin=(0.0, 0.0), cell_size=10.0,
                   heights=np.array([10.0, 20.0]),
                   antenna_ids=np.array([7], dtype=np.uint32), gains=gains)


class TestGainMap:
    def test_node_identity(self):
        gm = small_gainmap()
        assert gainmap_omni_gain(gm, 7, (10.0, 20.0, 10.0)) == pytest.approx(-90.0)

    def test_linear_midpoint(self):
        gm = small_gainmap()
        # midpoint between nodes at -80 and -90 on the same row/layer
        assert gainmap_omni_gain(gm, 7, (5.0, 0.0, 10.0)) == pytest.approx(-85.0)

    def test_z_interpolation(self):
        gm = small_gainmap()
        v = gainmap_omni_gain(gm, 7, (0.0, 0.0, 15.0))
        assert v == pytest.approx((-80.0 - 50.0) / 2)

    def test_out_of_coverage(self):
        gm = small_gainmap()
        with pytest.raises(CoverageError):
            gainmap_omni_gain(gm, 7, (-1.0, 0.0, 10.0))
        with pytest.raises(CoverageError):
            gainmap_omni_gain(gm, 7, (21.0, 0.0, 10.0))
        with pytest.raises(CoverageError):
            gainmap_omni_gain(gm, 7, (0.0, 0.0, 25.0))

    def test_unknown_antenna(self):
        with pytest.raises(CoverageError):
            gainmap_omni_gain(small_gainmap(), 3, (0.0, 0.0, 10.0))

    def test_nan_falls_back_to_nearest_valid(self):
        # corner (x=10, y=0) is invalid; the other three are valid
        gains = np.array([[[[-60.0, np.nan], [-70.0, -72.0]]]], dtype=np.float32)
        gm = GainMap(origin=(0.0, 0.0), cell_size=10.0, heights=np.array([5.0]),
                     antenna_ids=np.array([0], dtype=np.uint32), gains=gains)
        # (9, 1): valid-corner distances tie at (0,0) and (10,10); (0,0) wins -> -60
        assert gainmap_omni_gain(gm, 0, (9.0, 1.0, 5.0)) == pytest.approx(-60.0)
        # (9.9, 9): nearest valid corner is (10, 10) -> -72
        assert gainmap_omni_gain(gm, 0, (9.9, 9.0, 5.0)) == pytest.approx(-72.0)

    def test_all_nan_neighbors_error(self):
        gains = np.full((1, 1, 2, 2), np.nan, dtype=np.float32)
        gm = GainMap(origin=(0.0, 0.0), cell_size=10.0, heights=np.array([5.0]),
                     antenna_ids=np.array([0], dtype=np.uint32), gains=gains)
        with pytest.raises(CoverageError):
            gainmap_omni_gain(gm, 0, (5.0, 5.0, 5.0))

    def test_file_round_trip_bit_exact(self, tmp_path):
        scn = generate_synthetic_scenario(2, seed=4, with_corridors=False)
        gm = export_analytic_gainmap(scn, AnalyticParams(), cell_size=50.0,
                                     heights=[1.5, 150.0])
        path = tmp_path / "map.cgm"
        write_gainmap(path, gm)
        back = read_gainmap(path)
        assert back.origin == gm.origin
        assert back.cell_size == gm.cell_size
        np.testing.assert_array_equal(back.heights, gm.heights)
        np.testing.assert_array_equal(back.antenna_ids, gm.antenna_ids)
        assert back.gains.tobytes() == gm.gains.tobytes()

    def test_magic_checked(self, tmp_path):
        p = tmp_path / "bad.cgm"
        p.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(ValueError):
            read_gainmap(p)

    def test_value_range_enforced(self):
        gains = np.full((1, 1, 2, 2), 5.0, dtype=np.float32)
        with pytest.raises(ValueError):
            GainMap(origin=(0.0, 0.0), cell_size=10.0, heights=np.array([5.0]),
                    antenna_ids=np.array([0], dtype=np.uint32), gains=gains)


class TestGainMapProvider:
    def test_matches_analytic_at_nodes(self):
        scn = generate_synthetic_scenario(2, seed=4, with_corridors=False)
        params = AnalyticParams()
        gm = export_analytic_gainmap(scn, params, cell_size=100.0, heights=[1.5, 150.0])
        analytic = AnalyticGainProvider(scn, params)
        prov = GainMapProvider(scn, gm)
        # grid nodes away from buildings reproduce the analytic values (float32)
        x0, y0, _, _ = scn.bounds
        pos = np.array([[x0 + 300.0, y0 + 400.0, 1.5]])
        node_ok = not any(b.contains_xy(pos[0, 0], pos[0, 1]) for b in scn.buildings)
        if node_ok:
            a = analytic.omni_gain_matrix(pos)
            g = prov.omni_gain_matrix(pos)
            np.testing.assert_allclose(g, np.clip(a, -250, 0), rtol=0, atol=1e-3)

    def test_missing_antenna_rejected(self):
        scn = generate_synthetic_scenario(2, seed=4, with_corridors=False)
        gm = export_analytic_gainmap(scn, AnalyticParams(), cell_size=200.0, heights=[1.5])
        clipped = GainMap(origin=gm.origin, cell_size=gm.cell_size, heights=gm.heights,
                          antenna_ids=gm.antenna_ids[:-1], gains=gm.gains[:-1])
        with pytest.raises(ValueError):
            GainMapProvider(scn, clipped)
