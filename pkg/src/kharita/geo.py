"""Geodesic and angular primitives shared by every other module.

Distances are meters on the WGS-84 ellipsoid, headings are degrees
clockwise from true north in [0, 360).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

# WGS-84
EARTH_A = 6378137.0
EARTH_B = 6356752.314245
EARTH_F = 1.0 / 298.257223563
# mean radius (2a + b) / 3, used by the great-circle fallback
EARTH_R = (2.0 * EARTH_A + EARTH_B) / 3.0
# meters per degree of latitude, good enough for grid bucketing
M_PER_DEG_LAT = math.pi * EARTH_A / 180.0
# the meridian arc per degree varies ~110574..111694 m with latitude;
# grid math that must never undersize a cell divides by this lower bound
M_PER_DEG_LAT_MIN = 110500.0

_VINCENTY_TOL = 1e-12
_VINCENTY_MAX_ITER = 100


@dataclass(slots=True)
class GpsPoint:
    """One GPS fix. heading/speed may be absent until inferred."""

    vehicle_id: str
    timestamp: float          # epoch seconds
    lat: float
    lon: float
    speed_kmh: float | None = None
    heading_deg: float | None = None


def valid_latlon(lat: float, lon: float) -> bool:
    return (math.isfinite(lat) and math.isfinite(lon)
            and -90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0)


def normalize_heading(deg: float) -> float:
    """Wrap a heading in degrees into [0, 360)."""
    h = math.fmod(deg, 360.0)
    if h < 0.0:
        h += 360.0
    return h if h < 360.0 else 0.0


def angle_diff_deg(a: float, b: float) -> float:
    """Circular distance between two headings, in [0, 180]."""
    d = abs(a - b) % 360.0
    return d if d <= 180.0 else 360.0 - d


def _haversine_m(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dp = p2 - p1
    dl = math.radians(lon2 - lon1)
    s = math.sin(dp / 2.0) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2.0) ** 2
    return 2.0 * EARTH_R * math.asin(min(1.0, math.sqrt(s)))


def vincenty_m(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    """Inverse geodesic distance in meters (Vincenty, WGS-84).

    Iterates to 1e-12 with a 100-iteration cap; the rare non-convergent
    near-antipodal pairs fall back to the great-circle distance.
    """
    if lat1 == lat2 and lon1 == lon2:
        return 0.0
    u1 = math.atan((1.0 - EARTH_F) * math.tan(math.radians(lat1)))
    u2 = math.atan((1.0 - EARTH_F) * math.tan(math.radians(lat2)))
    ell = math.radians(lon2 - lon1)
    sin_u1, cos_u1 = math.sin(u1), math.cos(u1)
    sin_u2, cos_u2 = math.sin(u2), math.cos(u2)

    lam = ell
    for _ in range(_VINCENTY_MAX_ITER):
        sin_lam, cos_lam = math.sin(lam), math.cos(lam)
        sin_sigma = math.sqrt((cos_u2 * sin_lam) ** 2
                              + (cos_u1 * sin_u2 - sin_u1 * cos_u2 * cos_lam) ** 2)
        if sin_sigma == 0.0:
            return 0.0
        cos_sigma = sin_u1 * sin_u2 + cos_u1 * cos_u2 * cos_lam
        sigma = math.atan2(sin_sigma, cos_sigma)
        sin_alpha = cos_u1 * cos_u2 * sin_lam / sin_sigma
        cos_sq_alpha = 1.0 - sin_alpha * sin_alpha
        if cos_sq_alpha == 0.0:
            cos_2sm = 0.0          # equatorial line
        else:
            cos_2sm = cos_sigma - 2.0 * sin_u1 * sin_u2 / cos_sq_alpha
        c = EARTH_F / 16.0 * cos_sq_alpha * (4.0 + EARTH_F * (4.0 - 3.0 * cos_sq_alpha))
        lam_prev = lam
        lam = ell + (1.0 - c) * EARTH_F * sin_alpha * (
            sigma + c * sin_sigma * (cos_2sm + c * cos_sigma * (-1.0 + 2.0 * cos_2sm ** 2)))
        if abs(lam - lam_prev) < _VINCENTY_TOL:
            break
    else:
        return _haversine_m(lat1, lon1, lat2, lon2)

    u_sq = cos_sq_alpha * (EARTH_A ** 2 - EARTH_B ** 2) / EARTH_B ** 2
    big_a = 1.0 + u_sq / 16384.0 * (4096.0 + u_sq * (-768.0 + u_sq * (320.0 - 175.0 * u_sq)))
    big_b = u_sq / 1024.0 * (256.0 + u_sq * (-128.0 + u_sq * (74.0 - 47.0 * u_sq)))
    delta_sigma = big_b * sin_sigma * (
        cos_2sm + big_b / 4.0 * (
            cos_sigma * (-1.0 + 2.0 * cos_2sm ** 2)
            - big_b / 6.0 * cos_2sm * (-3.0 + 4.0 * sin_sigma ** 2) * (-3.0 + 4.0 * cos_2sm ** 2)))
    return EARTH_B * big_a * (sigma - delta_sigma)


def vincenty_m_many(lat1, lon1, lat2, lon2) -> np.ndarray:
    """Vectorized Vincenty over numpy arrays (broadcast to a common shape).

    Same contract as vincenty_m: 1e-12 tolerance, 100-iteration cap,
    great-circle fallback for pairs that fail to converge.
    """
    lat1, lon1, lat2, lon2 = np.broadcast_arrays(
        *(np.asarray(x, dtype=np.float64) for x in (lat1, lon1, lat2, lon2)))
    shape = lat1.shape
    lat1 = lat1.ravel(); lon1 = lon1.ravel()
    lat2 = lat2.ravel(); lon2 = lon2.ravel()

    u1 = np.arctan((1.0 - EARTH_F) * np.tan(np.radians(lat1)))
    u2 = np.arctan((1.0 - EARTH_F) * np.tan(np.radians(lat2)))
    ell = np.radians(lon2 - lon1)
    sin_u1, cos_u1 = np.sin(u1), np.cos(u1)
    sin_u2, cos_u2 = np.sin(u2), np.cos(u2)

    out = np.zeros(lat1.shape, dtype=np.float64)
    # indices still being iterated; shrinks as pairs converge
    idx = np.arange(lat1.size)
    lam = ell.copy()
    sin_sigma = np.zeros_like(lam)
    cos_sigma = np.ones_like(lam)
    sigma = np.zeros_like(lam)
    cos_sq_alpha = np.ones_like(lam)
    cos_2sm = np.zeros_like(lam)
    done = np.zeros(lam.shape, dtype=bool)

    su1, cu1, su2, cu2, el = sin_u1, cos_u1, sin_u2, cos_u2, ell
    for _ in range(_VINCENTY_MAX_ITER):
        sin_lam = np.sin(lam); cos_lam = np.cos(lam)
        ss = np.hypot(cu2 * sin_lam, cu1 * su2 - su1 * cu2 * cos_lam)
        cs = su1 * su2 + cu1 * cu2 * cos_lam
        sg = np.arctan2(ss, cs)
        coincident = ss == 0.0
        with np.errstate(divide="ignore", invalid="ignore"):
            sin_alpha = np.where(coincident, 0.0, cu1 * cu2 * sin_lam / ss)
        csa = 1.0 - sin_alpha * sin_alpha
        with np.errstate(divide="ignore", invalid="ignore"):
            c2 = np.where(csa == 0.0, 0.0, cs - 2.0 * su1 * su2 / np.where(csa == 0.0, 1.0, csa))
        c = EARTH_F / 16.0 * csa * (4.0 + EARTH_F * (4.0 - 3.0 * csa))
        lam_new = el + (1.0 - c) * EARTH_F * sin_alpha * (
            sg + c * ss * (c2 + c * cs * (-1.0 + 2.0 * c2 ** 2)))
        conv = (np.abs(lam_new - lam) < _VINCENTY_TOL) | coincident

        sin_sigma[idx] = ss; cos_sigma[idx] = cs; sigma[idx] = sg
        cos_sq_alpha[idx] = csa; cos_2sm[idx] = c2
        done[idx[conv]] = True
        lam = lam_new
        if conv.all():
            break
        # keep iterating only the stragglers
        keep = ~conv
        idx = idx[keep]
        lam = lam[keep]
        su1 = su1[keep]; cu1 = cu1[keep]
        su2 = su2[keep]; cu2 = cu2[keep]
        el = el[keep]

    u_sq = cos_sq_alpha * (EARTH_A ** 2 - EARTH_B ** 2) / EARTH_B ** 2
    big_a = 1.0 + u_sq / 16384.0 * (4096.0 + u_sq * (-768.0 + u_sq * (320.0 - 175.0 * u_sq)))
    big_b = u_sq / 1024.0 * (256.0 + u_sq * (-128.0 + u_sq * (74.0 - 47.0 * u_sq)))
    delta_sigma = big_b * sin_sigma * (
        cos_2sm + big_b / 4.0 * (
            cos_sigma * (-1.0 + 2.0 * cos_2sm ** 2)
            - big_b / 6.0 * cos_2sm * (-3.0 + 4.0 * sin_sigma ** 2) * (-3.0 + 4.0 * cos_2sm ** 2)))
    out = EARTH_B * big_a * (sigma - delta_sigma)
    out[sin_sigma == 0.0] = 0.0

    if not done.all():
        bad = ~done
        p1 = np.radians(lat1[bad]); p2 = np.radians(lat2[bad])
        dl = np.radians(lon2[bad] - lon1[bad])
        s = np.sin((p2 - p1) / 2.0) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dl / 2.0) ** 2
        out[bad] = 2.0 * EARTH_R * np.arcsin(np.minimum(1.0, np.sqrt(s)))
    return out.reshape(shape)


def combined_distance_m(lat1: float, lon1: float, h1: float,
                        lat2: float, lon2: float, h2: float,
                        theta_m: float) -> float:
    """Joint location+heading distance in meters.

    Euclidean combination of the geodesic separation and the heading
    separation scaled so that 180 degrees apart costs theta_m meters.
    """
    dg = vincenty_m(lat1, lon1, lat2, lon2)
    da = theta_m * angle_diff_deg(h1, h2) / 180.0
    return math.hypot(dg, da)


def circular_mean_deg(headings) -> float:
    """Mean direction of headings in degrees, in [0, 360).

    For a degenerate set whose mean resultant vector vanishes (e.g. two
    opposite headings) the mean direction is undefined; the first input
    heading is returned and a RuntimeWarning is emitted.
    """
    h = np.asarray(headings, dtype=np.float64)
    if h.size == 0:
        raise ValueError("circular_mean_deg of an empty set")
    r = np.radians(h)
    s = float(np.mean(np.sin(r)))
    c = float(np.mean(np.cos(r)))
    if abs(s) < 1e-12 and abs(c) < 1e-12:
        warnings.warn("degenerate heading set: mean resultant is zero, "
                      "falling back to first heading", RuntimeWarning, stacklevel=2)
        return normalize_heading(float(h.flat[0]))
    return normalize_heading(math.degrees(math.atan2(s, c)))


def heading_variability_deg(headings, mean_deg: float | None = None) -> float:
    """Mean circular deviation of headings from their circular mean."""
    h = np.asarray(headings, dtype=np.float64)
    if h.size == 0:
        raise ValueError("heading_variability_deg of an empty set")
    if mean_deg is None:
        mean_deg = circular_mean_deg(h)
    d = np.abs(h - mean_deg) % 360.0
    d = np.where(d > 180.0, 360.0 - d, d)
    return float(np.mean(d))


def initial_bearing_deg(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    """Forward azimuth from the first point to the second, in [0, 360).

    Undefined for coincident points; raises ValueError there.
    """
    if lat1 == lat2 and lon1 == lon2:
        raise ValueError("bearing undefined for coincident points")
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dl = math.radians(lon2 - lon1)
    y = math.sin(dl) * math.cos(p2)
    x = math.cos(p1) * math.sin(p2) - math.sin(p1) * math.cos(p2) * math.cos(dl)
    return normalize_heading(math.degrees(math.atan2(y, x)))


def initial_bearing_deg_many(lat1, lon1, lat2, lon2) -> np.ndarray:
    """Vectorized initial_bearing_deg. Coincident pairs yield 0."""
    p1 = np.radians(np.asarray(lat1, dtype=np.float64))
    p2 = np.radians(np.asarray(lat2, dtype=np.float64))
    dl = np.radians(np.asarray(lon2, dtype=np.float64) - np.asarray(lon1, dtype=np.float64))
    y = np.sin(dl) * np.cos(p2)
    x = np.cos(p1) * np.sin(p2) - np.sin(p1) * np.cos(p2) * np.cos(dl)
    return np.degrees(np.arctan2(y, x)) % 360.0
