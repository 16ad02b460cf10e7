"""Omnidirectional channel gain providers and total-gain composition.

A gain provider supplies the omnidirectional large-scale channel gain
(pathloss-inclusive, antenna gain excluded) between any sector antenna and
any 3D position. Two providers are available:

* :class:`AnalyticGainProvider` — self-contained log-distance model with
  line-of-sight switching against the scenario's buildings and
  deterministic hash-based shadowing (constant on 10 m grid cells).
* :class:`GainMapProvider` — trilinear interpolation over a precomputed
  gain grid, the ingestion path for externally ray-traced channels.

Total gain = omni gain + peak antenna gain + pattern attenuation.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np

from . import _kernels, antenna
from .errors import CoverageError
from .scenario import Scenario, SectorAntenna

GAINMAP_MAGIC = b"CGM1"


@dataclass(frozen=True)
class AnalyticParams:
    """Log-distance pathloss and shadowing parameters (urban-macro flavour)."""

    pl_ref_db: float = 38.4  # free-space loss at 1 m, 2 GHz
    exponent_los: float = 2.2
    exponent_nlos: float = 3.5
    sigma_los_db: float = 4.0
    sigma_nlos_db: float = 6.0
    shadow_cell_m: float = 10.0
    seed: int = 0


@runtime_checkable
class GainProvider(Protocol):
    """Omnidirectional gain source; implementations must be immutable."""

    def omni_gain(self, antenna_id: int, position) -> float: ...

    def omni_gain_matrix(self, positions) -> np.ndarray: ...

    def antenna_position(self, antenna_id: int) -> np.ndarray: ...


class _ProviderBase:
    """Common antenna bookkeeping for providers tied to a scenario."""

    def __init__(self, scenario: Scenario):
        self._ant_xyz = np.ascontiguousarray(scenario.antenna_positions(), dtype=float)
        self._ant_ids = np.ascontiguousarray([a.id for a in scenario.antennas],
                                             dtype=np.int64)
        self._col_of = {a.id: i for i, a in enumerate(scenario.antennas)}

    def antenna_position(self, antenna_id: int) -> np.ndarray:
        return self._ant_xyz[self._col_of[antenna_id]]

    def omni_gain(self, antenna_id: int, position) -> float:
        pos = np.ascontiguousarray(position, dtype=float).reshape(1, 3)
        return float(self.omni_gain_matrix(pos)[0, self._col_of[antenna_id]])


class AnalyticGainProvider(_ProviderBase):
    """Deterministic analytic channel model over a scenario's geometry."""

    def __init__(self, scenario: Scenario, params: AnalyticParams = AnalyticParams()):
        super().__init__(scenario)
        self.params = params
        self._buildings = np.ascontiguousarray(scenario.buildings_array(), dtype=float)

    def omni_gain_matrix(self, positions) -> np.ndarray:
        """(n_pos, n_antennas) omni gains in dB."""
        pos = np.ascontiguousarray(positions, dtype=float)
        p = self.params
        return _kernels.analytic_omni_matrix(
            pos, self._ant_xyz, self._ant_ids, self._buildings,
            p.pl_ref_db, p.exponent_los, p.exponent_nlos,
            p.sigma_los_db, p.sigma_nlos_db, p.shadow_cell_m, p.seed)


@dataclass(frozen=True, eq=False)
class GainMap:
    """Gridded omni gains: per antenna, per height layer, (ny, nx) float32.

    Grid node (ix, iy) sits at origin + ix/iy * cell_size; layer k at
    heights[k]. NaN marks indoor/invalid cells. Finite values must lie in
    [-250, 0] dB.
    """

    origin: tuple  # (x, y) of grid node (0, 0)
    cell_size: float
    heights: np.ndarray  # ascending z of each layer
    antenna_ids: np.ndarray
    gains: np.ndarray  # (n_antennas, n_heights, ny, nx) float32

    def __post_init__(self):
        if self.gains.ndim != 4:
            raise ValueError("gains must be (n_antennas, n_heights, ny, nx)")
        n_a, n_z, _, _ = self.gains.shape
        if n_a != len(self.antenna_ids) or n_z != len(self.heights):
            raise ValueError("gain array dims inconsistent with ids/heights")
        if np.any(np.diff(self.heights) <= 0):
            raise ValueError("heights must be strictly ascending")
        finite = self.gains[np.isfinite(self.gains)]
        if finite.size and (finite.min() < -250.0 or finite.max() > 0.0):
            raise ValueError("finite gain values must lie in [-250, 0] dB")

    @property
    def nx(self):
        return self.gains.shape[3]

    @property
    def ny(self):
        return self.gains.shape[2]


def write_gainmap(path, gm: GainMap):
    """Write the binary gain-map format (magic CGM1, little-endian header)."""
    with open(path, "wb") as f:
        f.write(GAINMAP_MAGIC)
        f.write(struct.pack("<ddd", gm.origin[0], gm.origin[1], gm.cell_size))
        f.write(struct.pack("<II", gm.nx, gm.ny))
        f.write(struct.pack("<I", len(gm.heights)))
        f.write(np.asarray(gm.heights, dtype="<f8").tobytes())
        f.write(struct.pack("<I", len(gm.antenna_ids)))
        f.write(np.asarray(gm.antenna_ids, dtype="<u4").tobytes())
        # Antenna-major, then z-major, then row-major (y rows of x values).
        f.write(np.ascontiguousarray(gm.gains, dtype="<f4").tobytes())


def read_gainmap(path) -> GainMap:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != GAINMAP_MAGIC:
        raise ValueError("not a gain-map file (bad magic)")
    off = 4
    ox, oy, cell = struct.unpack_from("<ddd", raw, off)
    off += 24
    nx, ny = struct.unpack_from("<II", raw, off)
    off += 8
    (n_z,) = struct.unpack_from("<I", raw, off)
    off += 4
    heights = np.frombuffer(raw, dtype="<f8", count=n_z, offset=off).copy()
    off += 8 * n_z
    (n_a,) = struct.unpack_from("<I", raw, off)
    off += 4
    ids = np.frombuffer(raw, dtype="<u4", count=n_a, offset=off).copy()
    off += 4 * n_a
    gains = np.frombuffer(raw, dtype="<f4", count=n_a * n_z * ny * nx, offset=off)
    gains = gains.reshape(n_a, n_z, ny, nx).copy()
    return GainMap(origin=(ox, oy), cell_size=cell, heights=heights,
                   antenna_ids=ids, gains=gains)


def gainmap_omni_gain(gm: GainMap, antenna_id: int, position) -> float:
    """Trilinear interpolation; nearest valid corner when NaNs contribute."""
    cols = np.nonzero(gm.antenna_ids == antenna_id)[0]
    if len(cols) == 0:
        raise CoverageError(f"antenna {antenna_id} not present in gain map")
    pos = np.asarray(position, dtype=float).reshape(1, 3)
    return float(_interp_gainmap(gm, int(cols[0]), pos)[0])


def _interp_gainmap(gm: GainMap, col: int, pos: np.ndarray) -> np.ndarray:
    """Interpolate one antenna's grid at (n, 3) positions."""
    x = (pos[:, 0] - gm.origin[0]) / gm.cell_size
    y = (pos[:, 1] - gm.origin[1]) / gm.cell_size
    z = pos[:, 2]
    eps = 1e-9
    h = gm.heights
    oob = (x < -eps) | (x > gm.nx - 1 + eps) | (y < -eps) | (y > gm.ny - 1 + eps) \
        | (z < h[0] - eps) | (z > h[-1] + eps)
    if np.any(oob):
        raise CoverageError("position outside gain-map volume")

    x = np.clip(x, 0.0, gm.nx - 1)
    y = np.clip(y, 0.0, gm.ny - 1)
    ix0 = np.minimum(x.astype(int), gm.nx - 2) if gm.nx > 1 else np.zeros(len(x), int)
    iy0 = np.minimum(y.astype(int), gm.ny - 2) if gm.ny > 1 else np.zeros(len(y), int)
    fx = x - ix0
    fy = y - iy0

    iz0 = np.clip(np.searchsorted(h, z, side="right") - 1, 0, max(len(h) - 2, 0))
    if len(h) > 1:
        fz = np.clip((z - h[iz0]) / (h[iz0 + 1] - h[iz0]), 0.0, 1.0)
        iz1 = iz0 + 1
    else:
        fz = np.zeros(len(z))
        iz1 = iz0

    grid = gm.gains[col].astype(np.float64)  # (nz, ny, nx)
    ix1 = np.minimum(ix0 + 1, gm.nx - 1)
    iy1 = np.minimum(iy0 + 1, gm.ny - 1)

    corners = np.stack([grid[izz, iyy, ixx] for izz, iyy, ixx in (
        (iz0, iy0, ix0), (iz0, iy0, ix1), (iz0, iy1, ix0), (iz0, iy1, ix1),
        (iz1, iy0, ix0), (iz1, iy0, ix1), (iz1, iy1, ix0), (iz1, iy1, ix1))])
    weights = np.stack([
        (1 - fz) * (1 - fy) * (1 - fx), (1 - fz) * (1 - fy) * fx,
        (1 - fz) * fy * (1 - fx), (1 - fz) * fy * fx,
        fz * (1 - fy) * (1 - fx), fz * (1 - fy) * fx,
        fz * fy * (1 - fx), fz * fy * fx])

    out = np.einsum("cn,cn->n", weights, np.nan_to_num(corners))
    bad = np.any(np.isnan(corners), axis=0)
    if np.any(bad):
        # Fall back to the nearest valid contributing corner by 3D distance.
        cx = np.stack([ix0, ix1, ix0, ix1, ix0, ix1, ix0, ix1]) * gm.cell_size + gm.origin[0]
        cy = np.stack([iy0, iy0, iy1, iy1, iy0, iy0, iy1, iy1]) * gm.cell_size + gm.origin[1]
        cz = h[np.stack([iz0, iz0, iz0, iz0, iz1, iz1, iz1, iz1])]
        d2 = (cx - pos[:, 0]) ** 2 + (cy - pos[:, 1]) ** 2 + (cz - pos[:, 2]) ** 2
        d2 = np.where(np.isnan(corners), np.inf, d2)
        for n in np.nonzero(bad)[0]:
            best = np.argmin(d2[:, n])
            if not np.isfinite(d2[best, n]):
                raise CoverageError("all neighboring gain-map cells are invalid")
            out[n] = corners[best, n]
    return out


class GainMapProvider(_ProviderBase):
    """Gain provider backed by a gridded gain map."""

    def __init__(self, scenario: Scenario, gm: GainMap):
        super().__init__(scenario)
        missing = [a.id for a in scenario.antennas if a.id not in set(gm.antenna_ids.tolist())]
        if missing:
            raise ValueError(f"gain map lacks antennas {missing}")
        self._gm = gm
        self._map_col = {int(aid): i for i, aid in enumerate(gm.antenna_ids)}
        self._scenario_ids = [a.id for a in scenario.antennas]

    def omni_gain_matrix(self, positions) -> np.ndarray:
        pos = np.asarray(positions, dtype=float)
        out = np.empty((len(pos), len(self._scenario_ids)))
        for j, aid in enumerate(self._scenario_ids):
            out[:, j] = _interp_gainmap(self._gm, self._map_col[aid], pos)
        return out


def total_gain(ant: SectorAntenna, position, provider: GainProvider) -> float:
    """Omni gain + peak gain + pattern attenuation, in dB."""
    bs = provider.antenna_position(ant.id)
    phi, theta = antenna.ray_angles(bs, position)
    params = antenna.PatternParams(bearing_deg=ant.bearing_deg, tilt_deg=ant.tilt_deg,
                                   v_hpbw_deg=ant.v_hpbw_deg, h_hpbw_deg=ant.h_hpbw_deg)
    return (provider.omni_gain(ant.id, position)
            + antenna.max_gain(ant.v_hpbw_deg)
            + float(antenna.pattern_gain(phi, theta, params)))


def total_gain_matrix(scenario: Scenario, positions, provider: GainProvider) -> np.ndarray:
    """(n_pos, n_antennas) total gains for the scenario's current config."""
    pos = np.ascontiguousarray(positions, dtype=float)
    ant_xyz = np.ascontiguousarray(scenario.antenna_positions(), dtype=float)
    bearing = np.ascontiguousarray([a.bearing_deg for a in scenario.antennas], dtype=float)
    tilt = np.ascontiguousarray([a.tilt_deg for a in scenario.antennas], dtype=float)
    v_hpbw = np.ascontiguousarray([a.v_hpbw_deg for a in scenario.antennas], dtype=float)
    h_hpbw = np.ascontiguousarray([a.h_hpbw_deg for a in scenario.antennas], dtype=float)
    pattern = _kernels.pattern_gain_matrix(pos, ant_xyz, bearing, tilt, v_hpbw, h_hpbw)
    return provider.omni_gain_matrix(pos) + pattern


def export_analytic_gainmap(scenario: Scenario, params: AnalyticParams,
                            cell_size: float, heights) -> GainMap:
    """Sample the analytic model on a grid covering the scenario bounds.

    Grid nodes inside a building volume are marked NaN; values are clipped
    to the gain-map range [-250, 0] dB.
    """
    x0, y0, x1, y1 = scenario.bounds
    nx = int(np.floor((x1 - x0) / cell_size)) + 1
    ny = int(np.floor((y1 - y0) / cell_size)) + 1
    heights = np.asarray(sorted(heights), dtype=float)
    provider = AnalyticGainProvider(scenario, params)

    xs = x0 + np.arange(nx) * cell_size
    ys = y0 + np.arange(ny) * cell_size
    gx, gy = np.meshgrid(xs, ys)  # (ny, nx)
    n_a = scenario.n_antennas
    gains = np.empty((n_a, len(heights), ny, nx), dtype=np.float32)
    barr = scenario.buildings_array()

    for k, hz in enumerate(heights):
        pos = np.column_stack([gx.ravel(), gy.ravel(), np.full(gx.size, hz)])
        vals = np.clip(provider.omni_gain_matrix(pos), -250.0, 0.0)
        if len(barr):
            indoor = np.zeros(len(pos), dtype=bool)
            for b in barr:
                indoor |= ((pos[:, 0] >= b[0]) & (pos[:, 0] <= b[2])
                           & (pos[:, 1] >= b[1]) & (pos[:, 1] <= b[3])
                           & (pos[:, 2] < b[4]))
            vals[indoor, :] = np.nan
        gains[:, k, :, :] = vals.T.reshape(n_a, ny, nx).astype(np.float32)

    return GainMap(origin=(x0, y0), cell_size=cell_size, heights=heights,
                   antenna_ids=np.array([a.id for a in scenario.antennas], dtype=np.uint32),
                   gains=gains)
