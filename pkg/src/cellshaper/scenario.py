"""Network topology, geometry, and user distributions.

A :class:`Scenario` is an immutable description of the world: deployment
sites with three-sector antennas, axis-aligned box buildings, region
bounds, and optional UAV corridors. User drops are pure functions of
(scenario, seed).

Coordinates are meters (x east, y north, z up); angles degrees; powers dBm.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleScenarioError

GUE_HEIGHT_M = 1.5
DEFAULT_GUE_DENSITY = 10.0  # per sector, on average
DEFAULT_UAV_PER_CORRIDOR = 70.0
DEFAULT_TX_POWER_DBM = 46.0
DEFAULT_CORRIDOR = dict(length=900.0, width=40.0, hmin=140.0, hmax=160.0)

BASELINE_TILT_DEG = -12.0
BASELINE_V_HPBW_DEG = 10.0

TILT_BOUNDS_DEG = (-90.0, 90.0)
V_HPBW_BOUNDS_DEG = (0.0, 360.0)  # lower bound exclusive

GUE_KIND = "gue"
UAV_KIND = "uav"


@dataclass(frozen=True)
class Site:
    id: int
    x: float
    y: float
    z: float  # antenna height above ground

    @property
    def position(self):
        return np.array([self.x, self.y, self.z])


@dataclass(frozen=True)
class SectorAntenna:
    id: int
    site_id: int
    bearing_deg: float
    tilt_deg: float
    v_hpbw_deg: float
    tx_power_dbm: float
    h_hpbw_deg: float = 65.0  # fixed for all sectors

    def __post_init__(self):
        lo, hi = TILT_BOUNDS_DEG
        if not lo <= self.tilt_deg <= hi:
            raise ValueError(f"tilt {self.tilt_deg} outside [{lo}, {hi}] deg")
        if not V_HPBW_BOUNDS_DEG[0] < self.v_hpbw_deg <= V_HPBW_BOUNDS_DEG[1]:
            raise ValueError(f"vertical HPBW {self.v_hpbw_deg} outside (0, 360] deg")


@dataclass(frozen=True)
class Building:
    """Axis-aligned box: footprint [x0,x1]x[y0,y1], z from ground to height."""

    x0: float
    y0: float
    x1: float
    y1: float
    height: float

    def __post_init__(self):
        if self.height <= 0:
            raise ValueError("building height must be > 0")
        if self.x1 <= self.x0 or self.y1 <= self.y0:
            raise ValueError("degenerate building footprint")

    def contains_xy(self, x, y):
        return self.x0 <= x <= self.x1 and self.y0 <= y <= self.y1


@dataclass(frozen=True)
class Corridor:
    """UAV route: horizontal axis segment swept by a width, between two heights."""

    ax0: float
    ay0: float
    ax1: float
    ay1: float
    width: float
    hmin: float
    hmax: float

    def __post_init__(self):
        if self.hmin >= self.hmax:
            raise ValueError("corridor needs hmin < hmax")
        if self.width <= 0:
            raise ValueError("corridor width must be > 0")

    @property
    def length(self):
        return math.hypot(self.ax1 - self.ax0, self.ay1 - self.ay0)


@dataclass(frozen=True)
class Scenario:
    sites: tuple
    antennas: tuple  # ordered by antenna id; tilt/v_hpbw are the only tunable fields
    buildings: tuple
    bounds: tuple  # (x0, y0, x1, y1)
    corridors: tuple = ()
    gue_density: float = DEFAULT_GUE_DENSITY
    uav_per_corridor: float = DEFAULT_UAV_PER_CORRIDOR

    def __post_init__(self):
        ids = [a.id for a in self.antennas]
        if ids != sorted(ids) or len(set(ids)) != len(ids):
            raise ValueError("antennas must be ordered by unique id")
        site_ids = [s.id for s in self.sites]
        if len(set(site_ids)) != len(site_ids):
            raise ValueError("site ids must be unique")
        if len(self.antennas) != 3 * len(self.sites):
            raise ValueError("expected exactly 3 sector antennas per site")

    @property
    def n_antennas(self):
        return len(self.antennas)

    def site_of(self, antenna: SectorAntenna) -> Site:
        return next(s for s in self.sites if s.id == antenna.site_id)

    def antenna_positions(self):
        """(n_antennas, 3) array of antenna positions (site mast top)."""
        by_id = {s.id: s for s in self.sites}
        return np.array([[by_id[a.site_id].x, by_id[a.site_id].y, by_id[a.site_id].z]
                         for a in self.antennas])

    def buildings_array(self):
        """(n_buildings, 5) array [x0, y0, x1, y1, height]."""
        if not self.buildings:
            return np.zeros((0, 5))
        return np.array([[b.x0, b.y0, b.x1, b.y1, b.height] for b in self.buildings])


@dataclass(frozen=True, eq=False)
class UserDrop:
    """One random placement of users. positions is (n, 3); kinds aligns with it."""

    positions: np.ndarray
    kinds: tuple

    @property
    def n_users(self):
        return len(self.kinds)

    def indices_of(self, kind):
        return np.array([i for i, k in enumerate(self.kinds) if k == kind], dtype=int)


def config_dim(scenario: Scenario) -> int:
    """Length of a configuration vector: one tilt plus one HPBW per antenna."""
    return 2 * scenario.n_antennas


def baseline_config(scenario: Scenario) -> np.ndarray:
    """Uniform baseline: every sector at -12 deg tilt, 10 deg vertical HPBW."""
    n = scenario.n_antennas
    return np.concatenate([np.full(n, BASELINE_TILT_DEG), np.full(n, BASELINE_V_HPBW_DEG)])


def apply_config(scenario: Scenario, x) -> Scenario:
    """Return a scenario copy with antenna i's tilt = x[i], HPBW = x[n + i].

    Bearings, powers, positions, and the horizontal HPBW are untouched.
    """
    x = np.asarray(x, dtype=float)
    n = scenario.n_antennas
    if x.shape != (2 * n,):
        raise ValueError(f"config vector must have length {2 * n}, got shape {x.shape}")
    tilts, hpbws = x[:n], x[n:]
    lo, hi = TILT_BOUNDS_DEG
    if np.any(tilts < lo) or np.any(tilts > hi):
        raise ValueError("tilt out of [-90, 90] deg")
    if np.any(hpbws <= V_HPBW_BOUNDS_DEG[0]) or np.any(hpbws > V_HPBW_BOUNDS_DEG[1]):
        raise ValueError("vertical HPBW out of (0, 360] deg")
    antennas = tuple(
        dataclasses.replace(a, tilt_deg=float(tilts[i]), v_hpbw_deg=float(hpbws[i]))
        for i, a in enumerate(scenario.antennas)
    )
    return dataclasses.replace(scenario, antennas=antennas)


def generate_synthetic_scenario(n_sites: int, seed: int, with_corridors: bool,
                                n_corridors: int = 2) -> Scenario:
    """Generate a deterministic synthetic deployment.

    Sites sit on a jittered grid inside a square region of side
    350 * sqrt(n_sites) meters; mast heights are uniform in [22, 56] m; each
    site carries three sectors at 0/120/240 deg plus a per-site random
    offset. 10-30 box buildings (10-80 m tall) avoid site bases. With
    corridors enabled, ``n_corridors`` routes cross the region at
    140-160 m altitude.
    """
    if n_sites < 1:
        raise ValueError("n_sites must be >= 1")
    rng = np.random.default_rng(seed)

    side = 350.0 * math.sqrt(n_sites)
    bounds = (0.0, 0.0, side, side)

    cols = math.ceil(math.sqrt(n_sites))
    rows = math.ceil(n_sites / cols)
    pitch_x, pitch_y = side / cols, side / rows

    sites = []
    for i in range(n_sites):
        r, c = divmod(i, cols)
        cx = (c + 0.5) * pitch_x
        cy = (r + 0.5) * pitch_y
        jx = rng.uniform(-0.25, 0.25) * pitch_x
        jy = rng.uniform(-0.25, 0.25) * pitch_y
        z = rng.uniform(22.0, 56.0)
        sites.append(Site(id=i, x=float(cx + jx), y=float(cy + jy), z=float(z)))

    antennas = []
    for s in sites:
        offset = rng.uniform(0.0, 360.0)
        for k in range(3):
            antennas.append(SectorAntenna(
                id=3 * s.id + k,
                site_id=s.id,
                bearing_deg=float((offset + 120.0 * k) % 360.0),
                tilt_deg=BASELINE_TILT_DEG,
                v_hpbw_deg=BASELINE_V_HPBW_DEG,
                tx_power_dbm=DEFAULT_TX_POWER_DBM,
            ))

    n_buildings = int(rng.integers(10, 31))
    buildings = []
    attempts = 0
    while len(buildings) < n_buildings and attempts < 1000:
        attempts += 1
        w = rng.uniform(20.0, 80.0)
        dpt = rng.uniform(20.0, 80.0)
        x0 = rng.uniform(0.0, side - w)
        y0 = rng.uniform(0.0, side - dpt)
        h = rng.uniform(10.0, 80.0)
        b = Building(x0=float(x0), y0=float(y0), x1=float(x0 + w), y1=float(y0 + dpt),
                     height=float(h))
        if any(b.contains_xy(s.x, s.y) for s in sites):
            continue
        buildings.append(b)

    corridors = []
    if with_corridors:
        length = DEFAULT_CORRIDOR["length"]
        for k in range(n_corridors):
            # Parallel west-east routes spread across the middle of the region.
            frac = (k + 1) / (n_corridors + 1)
            cy = bounds[1] + frac * side
            cx = side / 2.0 + rng.uniform(-0.1, 0.1) * side
            half = length / 2.0
            corridors.append(Corridor(
                ax0=float(cx - half), ay0=float(cy), ax1=float(cx + half), ay1=float(cy),
                width=DEFAULT_CORRIDOR["width"],
                hmin=DEFAULT_CORRIDOR["hmin"], hmax=DEFAULT_CORRIDOR["hmax"],
            ))

    return Scenario(sites=tuple(sites), antennas=tuple(antennas),
                    buildings=tuple(buildings), bounds=bounds,
                    corridors=tuple(corridors))


def sample_users(scenario: Scenario, seed: int) -> UserDrop:
    """Drop one random user population.

    Ground users: Poisson count with mean gue_density * n_antennas, uniform
    over the outdoor ground area (rejection-sampled against building
    footprints), at 1.5 m. UAVs: per corridor, Poisson count with mean
    uav_per_corridor, uniform in the corridor volume.
    """
    rng = np.random.default_rng(seed)
    x0, y0, x1, y1 = scenario.bounds
    positions = []
    kinds = []

    n_gue = int(rng.poisson(scenario.gue_density * scenario.n_antennas))
    accepted = 0
    rejections = 0
    max_rejections = 10000 + 1000 * n_gue
    while accepted < n_gue:
        px = rng.uniform(x0, x1)
        py = rng.uniform(y0, y1)
        if any(b.contains_xy(px, py) for b in scenario.buildings):
            rejections += 1
            if rejections > max_rejections:
                raise InfeasibleScenarioError(
                    "could not place ground users outdoors; buildings cover the region")
            continue
        positions.append((px, py, GUE_HEIGHT_M))
        kinds.append(GUE_KIND)
        accepted += 1

    for c in scenario.corridors:
        n_uav = int(rng.poisson(scenario.uav_per_corridor))
        if n_uav == 0:
            continue
        t = rng.uniform(0.0, 1.0, size=n_uav)
        u = rng.uniform(-0.5, 0.5, size=n_uav) * c.width
        h = rng.uniform(c.hmin, c.hmax, size=n_uav)
        dx, dy = c.ax1 - c.ax0, c.ay1 - c.ay0
        norm = math.hypot(dx, dy)
        nx, ny = -dy / norm, dx / norm  # unit normal to the axis
        for i in range(n_uav):
            px = c.ax0 + t[i] * dx + u[i] * nx
            py = c.ay0 + t[i] * dy + u[i] * ny
            positions.append((px, py, h[i]))
            kinds.append(UAV_KIND)

    pos = np.array(positions, dtype=float) if positions else np.zeros((0, 3))
    return UserDrop(positions=pos, kinds=tuple(kinds))


# ---------------------------------------------------------------------------
# JSON serialization

def scenario_to_dict(s: Scenario) -> dict:
    return {
        "bounds": {"x0": s.bounds[0], "y0": s.bounds[1], "x1": s.bounds[2], "y1": s.bounds[3]},
        "sites": [{"id": st.id, "x": st.x, "y": st.y, "z": st.z} for st in s.sites],
        "antennas": [{"id": a.id, "site_id": a.site_id, "bearing_deg": a.bearing_deg,
                      "tilt_deg": a.tilt_deg, "v_hpbw_deg": a.v_hpbw_deg,
                      "tx_power_dbm": a.tx_power_dbm} for a in s.antennas],
        "buildings": [{"x0": b.x0, "y0": b.y0, "x1": b.x1, "y1": b.y1, "height": b.height}
                      for b in s.buildings],
        "corridors": [{"ax0": c.ax0, "ay0": c.ay0, "ax1": c.ax1, "ay1": c.ay1,
                       "width": c.width, "hmin": c.hmin, "hmax": c.hmax}
                      for c in s.corridors],
        "gue_density": s.gue_density,
        "uav_per_corridor": s.uav_per_corridor,
    }


def scenario_from_dict(d: dict) -> Scenario:
    b = d["bounds"]
    return Scenario(
        sites=tuple(Site(**st) for st in d["sites"]),
        antennas=tuple(SectorAntenna(**a) for a in d["antennas"]),
        buildings=tuple(Building(**bd) for bd in d["buildings"]),
        bounds=(b["x0"], b["y0"], b["x1"], b["y1"]),
        corridors=tuple(Corridor(**c) for c in d.get("corridors", [])),
        gue_density=d.get("gue_density", DEFAULT_GUE_DENSITY),
        uav_per_corridor=d.get("uav_per_corridor", DEFAULT_UAV_PER_CORRIDOR),
    )


def save_scenario(path, scenario: Scenario):
    with open(path, "w") as f:
        json.dump(scenario_to_dict(scenario), f, indent=1)


def load_scenario(path) -> Scenario:
    with open(path) as f:
        return scenario_from_dict(json.load(f))
