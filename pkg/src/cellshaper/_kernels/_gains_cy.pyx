# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled gain kernels.

Scalar-loop twins of the numpy fallback in ``gains_numpy``; same formulas,
same hash-based shadowing, selected at import time by ``cellshaper._kernels``.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport atan2, fabs, floor, fmod, hypot, log, log10, sqrt

cnp.import_array()

cdef double H_FLOOR = 25.0
cdef double V_FLOOR = 20.0
cdef double COMBINED_FLOOR = 25.0
cdef double REF_GAIN = 14.0
cdef double REF_V_HPBW = 10.0
cdef double GAIN_CLAMP_LO = -10.0
cdef double GAIN_CLAMP_HI = 30.0
cdef double RAD2DEG = 57.29577951308232

cdef unsigned long long SM_GAMMA = 0x9E3779B97F4A7C15ULL
cdef unsigned long long SM_M1 = 0xBF58476D1CE4E5B9ULL
cdef unsigned long long SM_M2 = 0x94D049BB133111EBULL

# Acklam rational approximation to the inverse standard normal CDF.
cdef double NA0 = -3.969683028665376e+01, NA1 = 2.209460984245205e+02
cdef double NA2 = -2.759285104469687e+02, NA3 = 1.383577518672690e+02
cdef double NA4 = -3.066479806614716e+01, NA5 = 2.506628277459239e+00
cdef double NB0 = -5.447609879822406e+01, NB1 = 1.615858368580409e+02
cdef double NB2 = -1.556989798598866e+02, NB3 = 6.680131188771972e+01
cdef double NB4 = -1.328068155288572e+01
cdef double NC0 = -7.784894002430293e-03, NC1 = -3.223964580411365e-01
cdef double NC2 = -2.400758277161838e+00, NC3 = -2.549732539343734e+00
cdef double NC4 = 4.374664141464968e+00, NC5 = 2.938163982698783e+00
cdef double ND0 = 7.784695709041462e-03, ND1 = 3.224671290700398e-01
cdef double ND2 = 2.445134137142996e+00, ND3 = 3.754408661907416e+00
cdef double PLOW = 0.02425


cdef inline unsigned long long _splitmix64(unsigned long long z) nogil:
    z = (z ^ (z >> 30)) * SM_M1
    z = (z ^ (z >> 27)) * SM_M2
    return z ^ (z >> 31)


cdef inline double _ndtri(double u) nogil:
    cdef double q, r, num, den
    if u < PLOW:
        q = sqrt(-2.0 * log(u))
        num = ((((NC0 * q + NC1) * q + NC2) * q + NC3) * q + NC4) * q + NC5
        den = (((ND0 * q + ND1) * q + ND2) * q + ND3) * q + 1.0
        return num / den
    elif u <= 1.0 - PLOW:
        q = u - 0.5
        r = q * q
        num = ((((NA0 * r + NA1) * r + NA2) * r + NA3) * r + NA4) * r + NA5
        den = ((((NB0 * r + NB1) * r + NB2) * r + NB3) * r + NB4) * r + 1.0
        return num * q / den
    else:
        q = sqrt(-2.0 * log(1.0 - u))
        num = ((((NC0 * q + NC1) * q + NC2) * q + NC3) * q + NC4) * q + NC5
        den = (((ND0 * q + ND1) * q + ND2) * q + ND3) * q + 1.0
        return -num / den


cdef inline double _shadow_normal(unsigned long long seed, long long ix,
                                  long long iy, long long iz,
                                  long long aid) nogil:
    cdef unsigned long long k = _splitmix64(seed + SM_GAMMA)
    k = _splitmix64((k ^ <unsigned long long> ix) + SM_GAMMA)
    k = _splitmix64((k ^ <unsigned long long> iy) + SM_GAMMA)
    k = _splitmix64((k ^ <unsigned long long> iz) + SM_GAMMA)
    k = _splitmix64((k ^ <unsigned long long> aid) + SM_GAMMA)
    cdef double u = (<double> (k >> 11) + 0.5) * (2.0 ** -53)
    return _ndtri(u)


cdef inline double _wrap180(double a) nogil:
    a = fmod(a + 180.0, 360.0)
    if a < 0.0:
        a += 360.0
    return a - 180.0


def pattern_gain_matrix(double[:, ::1] user_xyz, double[:, ::1] ant_xyz,
                        double[::1] bearing_deg, double[::1] tilt_deg,
                        double[::1] v_hpbw_deg, double[::1] h_hpbw_deg):
    """Antenna gain in dB for every (user, antenna) pair, shape (n_u, n_a)."""
    cdef Py_ssize_t n_u = user_xyz.shape[0]
    cdef Py_ssize_t n_a = ant_xyz.shape[0]
    out_arr = np.empty((n_u, n_a), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef double dx, dy, dz, dh, az, dphi, elev, a_h, a_v, att, peak, g

    with nogil:
        for j in range(n_a):
            peak = REF_GAIN - 10.0 * log10(v_hpbw_deg[j] / REF_V_HPBW)
            if peak < GAIN_CLAMP_LO:
                peak = GAIN_CLAMP_LO
            elif peak > GAIN_CLAMP_HI:
                peak = GAIN_CLAMP_HI
            for i in range(n_u):
                dx = user_xyz[i, 0] - ant_xyz[j, 0]
                dy = user_xyz[i, 1] - ant_xyz[j, 1]
                dz = user_xyz[i, 2] - ant_xyz[j, 2]
                dh = hypot(dx, dy)
                az = atan2(dx, dy) * RAD2DEG
                dphi = _wrap180(az - bearing_deg[j])
                elev = atan2(dz, dh) * RAD2DEG
                a_h = 12.0 * (dphi / h_hpbw_deg[j]) ** 2
                if a_h > H_FLOOR:
                    a_h = H_FLOOR
                a_v = 12.0 * ((elev - tilt_deg[j]) / v_hpbw_deg[j]) ** 2
                if a_v > V_FLOOR:
                    a_v = V_FLOOR
                att = -(a_h + a_v)
                if att < -COMBINED_FLOOR:
                    att = -COMBINED_FLOOR
                out[i, j] = peak + att
    return out_arr


def analytic_omni_matrix(double[:, ::1] user_xyz, double[:, ::1] ant_xyz,
                         long long[::1] ant_ids, double[:, ::1] buildings,
                         double pl_ref_db, double exponent_los,
                         double exponent_nlos, double sigma_los_db,
                         double sigma_nlos_db, double shadow_cell_m,
                         unsigned long long seed):
    """Omnidirectional channel gain in dB for every (user, antenna) pair."""
    cdef Py_ssize_t n_u = user_xyz.shape[0]
    cdef Py_ssize_t n_a = ant_xyz.shape[0]
    cdef Py_ssize_t n_b = buildings.shape[0]
    out_arr = np.empty((n_u, n_a), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, k
    cdef double dx, dy, dz, dist, exponent, sigma, shadow, pl
    cdef long long ix, iy, iz
    cdef bint blocked

    with nogil:
        for i in range(n_u):
            ix = <long long> floor(user_xyz[i, 0] / shadow_cell_m)
            iy = <long long> floor(user_xyz[i, 1] / shadow_cell_m)
            iz = <long long> floor(user_xyz[i, 2] / shadow_cell_m)
            for j in range(n_a):
                dx = user_xyz[i, 0] - ant_xyz[j, 0]
                dy = user_xyz[i, 1] - ant_xyz[j, 1]
                dz = user_xyz[i, 2] - ant_xyz[j, 2]
                dist = sqrt(dx * dx + dy * dy + dz * dz)
                if dist < 1.0:
                    dist = 1.0
                blocked = False
                for k in range(n_b):
                    if _segment_hits_box(ant_xyz[j, 0], ant_xyz[j, 1], ant_xyz[j, 2],
                                         dx, dy, dz,
                                         buildings[k, 0], buildings[k, 1], 0.0,
                                         buildings[k, 2], buildings[k, 3],
                                         buildings[k, 4]):
                        blocked = True
                        break
                if blocked:
                    exponent = exponent_nlos
                    sigma = sigma_nlos_db
                else:
                    exponent = exponent_los
                    sigma = sigma_los_db
                shadow = sigma * _shadow_normal(seed, ix, iy, iz, ant_ids[j])
                pl = pl_ref_db + 10.0 * exponent * log10(dist)
                out[i, j] = -(pl + shadow)
    return out_arr


cdef inline bint _segment_hits_box(double ox, double oy, double oz,
                                   double dx, double dy, double dz,
                                   double lx, double ly, double lz,
                                   double hx, double hy, double hz) nogil:
    """Slab test: does the segment origin + t*d, t in [0, 1], cross the box?"""
    cdef double tmin = 0.0
    cdef double tmax = 1.0
    if not _clip_axis(ox, dx, lx, hx, &tmin, &tmax):
        return False
    if not _clip_axis(oy, dy, ly, hy, &tmin, &tmax):
        return False
    if not _clip_axis(oz, dz, lz, hz, &tmin, &tmax):
        return False
    return tmin <= tmax


cdef inline bint _clip_axis(double o, double d, double lo, double hi,
                            double* tmin, double* tmax) nogil:
    cdef double t1, t2, tmp
    if d == 0.0:
        return lo <= o <= hi
    t1 = (lo - o) / d
    t2 = (hi - o) / d
    if t1 > t2:
        tmp = t1
        t1 = t2
        t2 = tmp
    if t1 > tmin[0]:
        tmin[0] = t1
    if t2 < tmax[0]:
        tmax[0] = t2
    return tmin[0] <= tmax[0]
