"""Pure-numpy gain kernels (fallback backend).

Two dense kernels shared with the compiled backend:

* :func:`pattern_gain_matrix` — antenna gain (peak gain + pattern
  attenuation) for every (user, antenna) pair; depends on the tunable
  tilt/beamwidth configuration.
* :func:`analytic_omni_matrix` — configuration-independent omnidirectional
  channel gain: log-distance pathloss with line-of-sight switching against
  box buildings plus deterministic hash-based shadowing.

The compiled backend must produce the same numbers (up to last-ulp libm
differences); tests compare the two.
"""

from __future__ import annotations

import numpy as np

# Pattern constants (kept in sync with cellshaper.antenna).
_H_FLOOR = 25.0
_V_FLOOR = 20.0
_COMBINED_FLOOR = 25.0
_REF_GAIN = 14.0
_REF_V_HPBW = 10.0
_GAIN_CLAMP_LO = -10.0
_GAIN_CLAMP_HI = 30.0

# splitmix64 mixing constants.
_SM_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_SM_M1 = np.uint64(0xBF58476D1CE4E5B9)
_SM_M2 = np.uint64(0x94D049BB133111EB)

# Rational approximation to the standard normal inverse CDF (Acklam).
_NDTRI_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
            1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_NDTRI_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
            6.680131188771972e+01, -1.328068155288572e+01)
_NDTRI_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
            -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_NDTRI_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
            3.754408661907416e+00)
_NDTRI_PLOW = 0.02425


def pattern_gain_matrix(user_xyz, ant_xyz, bearing_deg, tilt_deg, v_hpbw_deg,
                        h_hpbw_deg):
    """Antenna gain in dB for every (user, antenna) pair, shape (n_u, n_a)."""
    user_xyz = np.asarray(user_xyz, dtype=float)
    ant_xyz = np.asarray(ant_xyz, dtype=float)
    d = user_xyz[:, None, :] - ant_xyz[None, :, :]  # (n_u, n_a, 3)
    dh = np.hypot(d[..., 0], d[..., 1])

    az = np.degrees(np.arctan2(d[..., 0], d[..., 1]))
    dphi = (az - bearing_deg[None, :] + 180.0) % 360.0 - 180.0
    elev = np.degrees(np.arctan2(d[..., 2], dh))

    a_h = -np.minimum(12.0 * (dphi / h_hpbw_deg[None, :]) ** 2, _H_FLOOR)
    a_v = -np.minimum(12.0 * ((elev - tilt_deg[None, :]) / v_hpbw_deg[None, :]) ** 2,
                      _V_FLOOR)
    att = np.maximum(a_h + a_v, -_COMBINED_FLOOR)

    peak = np.clip(_REF_GAIN - 10.0 * np.log10(v_hpbw_deg / _REF_V_HPBW),
                   _GAIN_CLAMP_LO, _GAIN_CLAMP_HI)
    return peak[None, :] + att


def analytic_omni_matrix(user_xyz, ant_xyz, ant_ids, buildings, pl_ref_db,
                         exponent_los, exponent_nlos, sigma_los_db, sigma_nlos_db,
                         shadow_cell_m, seed):
    """Omnidirectional channel gain in dB for every (user, antenna) pair.

    ``buildings`` is (n_b, 5): x0, y0, x1, y1, height. Line of sight is lost
    when the 3D segment antenna -> user crosses any building box. Distance
    is clamped to 1 m.
    """
    user_xyz = np.asarray(user_xyz, dtype=float)
    ant_xyz = np.asarray(ant_xyz, dtype=float)
    d = user_xyz[:, None, :] - ant_xyz[None, :, :]
    dist = np.maximum(np.sqrt((d ** 2).sum(axis=-1)), 1.0)

    blocked = _segments_blocked(ant_xyz, user_xyz, buildings)
    exponent = np.where(blocked, exponent_nlos, exponent_los)
    sigma = np.where(blocked, sigma_nlos_db, sigma_los_db)

    shadow = sigma * _shadow_field(user_xyz, ant_ids, shadow_cell_m, seed)
    return -(pl_ref_db + 10.0 * exponent * np.log10(dist) + shadow)


def _segments_blocked(ant_xyz, user_xyz, buildings):
    """(n_u, n_a) bool: does the antenna->user segment hit any building box?"""
    n_u, n_a = len(user_xyz), len(ant_xyz)
    blocked = np.zeros((n_u, n_a), dtype=bool)
    if len(buildings) == 0:
        return blocked
    o = np.broadcast_to(ant_xyz[None, :, :], (n_u, n_a, 3))
    dvec = user_xyz[:, None, :] - ant_xyz[None, :, :]
    for b in buildings:
        lo = np.array([b[0], b[1], 0.0])
        hi = np.array([b[2], b[3], b[4]])
        tmin = np.zeros((n_u, n_a))
        tmax = np.ones((n_u, n_a))
        for ax in range(3):
            da = dvec[..., ax]
            oa = o[..., ax]
            parallel = da == 0.0
            with np.errstate(divide="ignore", invalid="ignore"):
                t1 = (lo[ax] - oa) / da
                t2 = (hi[ax] - oa) / da
            t_lo = np.minimum(t1, t2)
            t_hi = np.maximum(t1, t2)
            inside = (oa >= lo[ax]) & (oa <= hi[ax])
            t_lo = np.where(parallel, np.where(inside, -np.inf, np.inf), t_lo)
            t_hi = np.where(parallel, np.where(inside, np.inf, -np.inf), t_hi)
            tmin = np.maximum(tmin, t_lo)
            tmax = np.minimum(tmax, t_hi)
        blocked |= tmin <= tmax
    return blocked


def _splitmix64(z):
    z = (z ^ (z >> np.uint64(30))) * _SM_M1
    z = (z ^ (z >> np.uint64(27))) * _SM_M2
    return z ^ (z >> np.uint64(31))


def _hash_u64(seed, ix, iy, iz, aid):
    """Mix grid-cell indices and antenna id into one 64-bit hash."""
    with np.errstate(over="ignore"):
        k = _splitmix64(np.uint64(seed) + _SM_GAMMA)
        k = _splitmix64((k ^ ix.astype(np.uint64)) + _SM_GAMMA)
        k = _splitmix64((k ^ iy.astype(np.uint64)) + _SM_GAMMA)
        k = _splitmix64((k ^ iz.astype(np.uint64)) + _SM_GAMMA)
        k = _splitmix64((k ^ aid.astype(np.uint64)) + _SM_GAMMA)
    return k


def _ndtri(u):
    """Standard normal inverse CDF, rational approximation (|rel err| < 1.2e-9)."""
    u = np.asarray(u, dtype=float)
    a, b, c, dd = _NDTRI_A, _NDTRI_B, _NDTRI_C, _NDTRI_D
    x = np.empty_like(u)

    central = (u >= _NDTRI_PLOW) & (u <= 1.0 - _NDTRI_PLOW)
    q = u - 0.5
    r = q * q
    num = ((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]
    den = ((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0
    x[central] = (num * q / den)[central]

    low = u < _NDTRI_PLOW
    if np.any(low):
        q = np.sqrt(-2.0 * np.log(u[low]))
        num = ((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]
        den = (((dd[0] * q + dd[1]) * q + dd[2]) * q + dd[3]) * q + 1.0
        x[low] = num / den

    high = u > 1.0 - _NDTRI_PLOW
    if np.any(high):
        q = np.sqrt(-2.0 * np.log(1.0 - u[high]))
        num = ((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]
        x[high] = -num / ((((dd[0] * q + dd[1]) * q + dd[2]) * q + dd[3]) * q + 1.0)
    return x


def _shadow_field(user_xyz, ant_ids, cell_m, seed):
    """Unit-variance Gaussian shadowing, constant on 10 m grid cells.

    Deterministic in (position cell, antenna id, seed); shape (n_u, n_a).
    """
    ix = np.floor(user_xyz[:, 0] / cell_m).astype(np.int64)
    iy = np.floor(user_xyz[:, 1] / cell_m).astype(np.int64)
    iz = np.floor(user_xyz[:, 2] / cell_m).astype(np.int64)
    aid = np.asarray(ant_ids, dtype=np.int64)
    shape = (len(user_xyz), len(aid))
    k = _hash_u64(seed,
                  np.broadcast_to(ix[:, None], shape),
                  np.broadcast_to(iy[:, None], shape),
                  np.broadcast_to(iz[:, None], shape),
                  np.broadcast_to(aid[None, :], shape))
    u = ((k >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53
    return _ndtri(u)
