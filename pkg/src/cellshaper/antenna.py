"""Parametric sector antenna pattern.

Single-element 3GPP-style pattern (TR 36.814 flavour): parabolic main lobe
in each plane, per-plane side-lobe floors, and a combined floor. The peak
gain scales inversely with the vertical half-power beamwidth, anchored at
14 dBi for the canonical 10 deg vertical / 65 deg horizontal sector antenna.

All angles are degrees, all gains dB. Functions accept scalars or numpy
arrays and broadcast.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

HORIZONTAL_FLOOR_DB = 25.0
VERTICAL_FLOOR_DB = 20.0
COMBINED_FLOOR_DB = 25.0

# Peak gain anchor: 10 deg vertical HPBW with the fixed 65 deg horizontal
# HPBW gives 14 dBi.
REF_MAX_GAIN_DBI = 14.0
REF_V_HPBW_DEG = 10.0
MAX_GAIN_CLAMP_DBI = (-10.0, 30.0)


@dataclass(frozen=True)
class PatternParams:
    """Orientation and beamwidths of one sector antenna."""

    bearing_deg: float
    tilt_deg: float
    v_hpbw_deg: float
    h_hpbw_deg: float = 65.0

    def __post_init__(self):
        if self.v_hpbw_deg <= 0:
            raise ValueError(f"vertical HPBW must be > 0, got {self.v_hpbw_deg}")
        if self.h_hpbw_deg <= 0:
            raise ValueError(f"horizontal HPBW must be > 0, got {self.h_hpbw_deg}")


def wrap_angle_deg(angle):
    """Wrap an angle (degrees) into [-180, 180)."""
    return (np.asarray(angle) + 180.0) % 360.0 - 180.0


def horizontal_attenuation(phi_deg, params: PatternParams):
    """Horizontal-plane attenuation in dB (<= 0) at azimuth ``phi_deg``.

    Parabolic in the bearing-relative azimuth, floored at -25 dB.
    """
    dphi = wrap_angle_deg(np.asarray(phi_deg, dtype=float) - params.bearing_deg)
    return -np.minimum(12.0 * (dphi / params.h_hpbw_deg) ** 2, HORIZONTAL_FLOOR_DB)


def vertical_attenuation(theta_deg, params: PatternParams):
    """Vertical-plane attenuation in dB (<= 0) at elevation ``theta_deg``.

    Parabolic in the tilt-relative elevation, floored at -20 dB. The
    elevation is not wrapped (it is geometrically confined to [-90, 90]).
    """
    dtheta = np.asarray(theta_deg, dtype=float) - params.tilt_deg
    return -np.minimum(12.0 * (dtheta / params.v_hpbw_deg) ** 2, VERTICAL_FLOOR_DB)


def pattern_gain(phi_deg, theta_deg, params: PatternParams):
    """Normalized pattern gain in dB (<= 0): A_H + A_V floored at -25 dB."""
    a = horizontal_attenuation(phi_deg, params) + vertical_attenuation(theta_deg, params)
    return -np.minimum(-a, COMBINED_FLOOR_DB)


def max_gain(v_hpbw_deg):
    """Peak antenna gain in dBi for a given vertical HPBW.

    Inverse-proportional directivity scaling through the 14 dBi anchor at
    10 deg, clamped to [-10, 30] dBi so degenerate beamwidths stay physical.
    """
    v = np.asarray(v_hpbw_deg, dtype=float)
    if np.any(v <= 0):
        raise ValueError("vertical HPBW must be > 0")
    g = REF_MAX_GAIN_DBI - 10.0 * np.log10(v / REF_V_HPBW_DEG)
    g = np.clip(g, *MAX_GAIN_CLAMP_DBI)
    return float(g) if np.isscalar(v_hpbw_deg) else g


def ray_angles(bs_position, ue_position):
    """Azimuth and elevation (degrees) of the BS -> UE ray.

    Azimuth is measured like bearings: 0 deg = +y (north), increasing
    clockwise, returned in [-180, 180). Elevation is positive above the
    horizon.
    """
    bs = np.asarray(bs_position, dtype=float)
    ue = np.asarray(ue_position, dtype=float)
    d = ue - bs
    if not np.any(d):
        raise ValueError("BS and UE positions coincide")
    horiz = math.hypot(d[0], d[1])
    phi = math.degrees(math.atan2(d[0], d[1]))
    if phi >= 180.0:  # atan2 returns (-180, 180]; normalize to [-180, 180)
        phi -= 360.0
    theta = math.degrees(math.atan2(d[2], horiz))
    return phi, theta
