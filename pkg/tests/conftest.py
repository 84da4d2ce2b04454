import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "omnisal", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("omnisal")


def smooth_pattern(height: int) -> np.ndarray:
    """Degree-1 spherical-harmonic mix on the ERP grid."""
    from omnisal.sphere import erp_pixel_centers

    lat, lon = erp_pixel_centers(height, 2 * height)
    la, lo = np.meshgrid(lat, lon, indexing="ij")
    return 0.5 + 0.3 * np.cos(la) * np.cos(lo) + 0.2 * np.sin(la) + 0.1 * np.cos(la) * np.sin(lo)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tangent_oracle(lat0, lon0, lat, lon):
    """Gnomonic coordinates from explicit east/north basis vectors."""
    c = np.array([math.cos(lat0) * math.cos(lon0), math.cos(lat0) * math.sin(lon0), math.sin(lat0)])
    q = np.array([math.cos(lat) * math.cos(lon), math.cos(lat) * math.sin(lon), math.sin(lat)])
    east = np.array([-math.sin(lon0), math.cos(lon0), 0.0])
    north = np.array([-math.sin(lat0) * math.cos(lon0), -math.sin(lat0) * math.sin(lon0), math.cos(lat0)])
    d = c @ q
    return (east @ q) / d, (north @ q) / d, d


def two_cluster_trace(rate=120.0, dwell_s=0.4, jitter_deg=0.2):
    """Two dwell clusters 10 deg apart joined by a three-sample saccade.

    Jitter is a symmetric cross around each center so the normalized mean of
    the unit vectors sits on the center to well under 0.01 deg.
    """
    from omnisal.gaze import GazeSample
    from omnisal.sphere import SphericalCoord

    centers = [(12.0, -40.0), (12.0, -30.0)]
    offsets = [(0.0, 0.0), (jitter_deg, 0.0), (-jitter_deg, 0.0), (0.0, jitter_deg), (0.0, -jitter_deg)]
    trace = []
    t = 0.0
    n = int(round(dwell_s * rate))
    for k, (lat, lon) in enumerate(centers):
        for i in range(n):
            d_lat, d_lon = offsets[i % 5]
            trace.append(GazeSample(t, SphericalCoord.from_degrees(lat + d_lat, lon + d_lon)))
            t += 1 / rate
        if k == 0:
            for frac in (0.25, 0.5, 0.75):
                trace.append(GazeSample(t, SphericalCoord.from_degrees(12.0, -40.0 + 10.0 * frac)))
                t += 1 / rate
    return trace, centers
