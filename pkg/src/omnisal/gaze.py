"""Eye-tracking post-processing on the sphere.

Fixations are found with a dispersion-threshold (I-DT) scan where the
dispersion of a window is the largest great-circle angle between any two of
its gaze directions.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .metrics import cc
from .sphere import SphericalCoord, angular_distance, erp_pixel_centers, from_unit, to_unit

MAX_DISPERSION_DEG = 1.5
MIN_DURATION_S = 0.1
DENSITY_SIGMA_DEG = 1.0
CONSISTENCY_WINDOW_S = 2.0

FIXATION_HEADER = ("subject_id", "start_s", "duration_s", "lat_deg", "lon_deg")


@dataclass(frozen=True)
class GazeSample:
    timestamp: float
    direction: SphericalCoord


@dataclass(frozen=True)
class Fixation:
    start: float
    duration: float
    centroid: SphericalCoord


def _trace_arrays(trace: Sequence[GazeSample]):
    t = np.array([s.timestamp for s in trace], dtype=np.float64)
    if len(t) > 1 and np.any(np.diff(t) <= 0):
        raise ValueError("gaze trace timestamps must be strictly increasing")
    lat = np.array([s.direction.lat for s in trace], dtype=np.float64)
    lon = np.array([s.direction.lon for s in trace], dtype=np.float64)
    return t, np.ascontiguousarray(to_unit(lat, lon).reshape(-1, 3))


def idt_fixations(
    trace: Sequence[GazeSample],
    max_dispersion_deg: float = MAX_DISPERSION_DEG,
    min_duration: float = MIN_DURATION_S,
) -> list[Fixation]:
    """Non-overlapping fixations whose dispersion stays within the threshold.

    A candidate window starts at the first sample and spans ``min_duration``;
    if its dispersion is acceptable it is grown sample by sample, otherwise
    the start advances by one sample.
    """
    if not trace:
        return []
    t, xyz = _trace_arrays(trace)
    cos_thresh = math.cos(math.radians(max_dispersion_deg))
    spans = kernels.idt_scan(xyz, t, cos_thresh, float(min_duration))
    out = []
    for i, j in spans:
        mean = xyz[i : j + 1].mean(axis=0)
        lat, lon = from_unit(mean / np.linalg.norm(mean))
        out.append(Fixation(float(t[i]), float(t[j] - t[i]), SphericalCoord(float(lat), float(lon))))
    return out


def window_dispersion(trace: Sequence[GazeSample]) -> float:
    """Largest pairwise great-circle angle (radians), by brute force."""
    _, xyz = _trace_arrays(trace)
    return float(angular_distance(xyz[:, None, :], xyz[None, :, :]).max()) if len(xyz) else 0.0


def density_map(fixations: Iterable[Fixation], height: int, width: int,
                sigma_deg: float = DENSITY_SIGMA_DEG) -> np.ndarray:
    """Sum of spherical Gaussians ``exp(-g^2 / 2 sigma^2)`` on the ERP grid, sum 1."""
    fixations = list(fixations)
    if width != 2 * height:
        raise ValueError("density map requires W == 2H")
    if sigma_deg <= 0:
        raise ValueError("sigma must be positive")
    if not fixations:
        raise ValueError("no fixations")
    lat, lon = erp_pixel_centers(height, width)
    grid = to_unit(*np.meshgrid(lat, lon, indexing="ij"))
    sigma = math.radians(sigma_deg)
    acc = np.zeros((height, width))
    for f in fixations:
        g = angular_distance(grid, to_unit(f.centroid.lat, f.centroid.lon))
        acc += np.exp(-(g * g) / (2 * sigma * sigma))
    return acc / acc.sum()


def pixel_of(coord: SphericalCoord, height: int, width: int) -> tuple[int, int]:
    i = int(math.floor((math.pi / 2 - coord.lat) / math.pi * height))
    j = int(math.floor((coord.lon + math.pi) / (2 * math.pi) * width)) % width
    return min(max(i, 0), height - 1), j


def fixation_map(fixations: Iterable[Fixation], height: int, width: int) -> np.ndarray:
    if width != 2 * height:
        raise ValueError("fixation map requires W == 2H")
    out = np.zeros((height, width))
    for f in fixations:
        out[pixel_of(f.centroid, height, width)] = 1.0
    return out


def inter_subject_consistency(
    fixations_by_subject: dict[str, Sequence[Fixation]],
    window_s: float = CONSISTENCY_WINDOW_S,
    height: int = 64,
    width: int = 128,
    sigma_deg: float = DENSITY_SIGMA_DEG,
) -> list[tuple[float, float]]:
    """Leave-one-out agreement per time window.

    For each window and subject, the density map of that subject's fixations
    (by start time) is correlated with the pooled map of everyone else; the
    score is the mean CC over subjects with fixations in the window. Windows
    where fewer than two subjects contribute score NaN.
    """
    if len(fixations_by_subject) < 3:
        raise ValueError("inter-subject consistency needs at least three subjects")
    subjects = sorted(fixations_by_subject)
    end = max((f.start for fs in fixations_by_subject.values() for f in fs), default=0.0)
    n_windows = int(math.floor(end / window_s)) + 1
    results = []
    for w in range(n_windows):
        lo, hi = w * window_s, (w + 1) * window_s
        inside = {s: [f for f in fixations_by_subject[s] if lo <= f.start < hi] for s in subjects}
        scores = []
        for s in subjects:
            others = [f for o in subjects if o != s for f in inside[o]]
            if not inside[s] or not others:
                continue
            try:
                scores.append(cc(density_map(inside[s], height, width, sigma_deg),
                                 density_map(others, height, width, sigma_deg)))
            except ValueError:
                continue
        results.append((lo, float(np.mean(scores)) if len(scores) >= 2 else float("nan")))
    return results


# --------------------------------------------------------------------- I/O --


def read_gaze_csv(path) -> list[GazeSample]:
    """Read ``timestamp_s,lat_deg,lon_deg`` rows."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"timestamp_s", "lat_deg", "lon_deg"} - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"gaze CSV lacks columns {sorted(missing)}")
        for row in reader:
            out.append(GazeSample(float(row["timestamp_s"]),
                                  SphericalCoord.from_degrees(float(row["lat_deg"]), float(row["lon_deg"]))))
    return out


def write_fixation_csv(path, rows: Iterable[tuple[str, Fixation]]) -> None:
    ordered = sorted(rows, key=lambda r: (r[0], r[1].start))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(FIXATION_HEADER)
        for subject, f in ordered:
            lat, lon = f.centroid.degrees()
            writer.writerow([subject, repr(f.start), repr(f.duration), repr(lat), repr(lon)])


def read_fixation_csv(path) -> dict[str, list[Fixation]]:
    out: dict[str, list[Fixation]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != FIXATION_HEADER:
            raise ValueError(f"fixation CSV header must be {','.join(FIXATION_HEADER)}")
        for row in reader:
            f = Fixation(float(row["start_s"]), float(row["duration_s"]),
                         SphericalCoord.from_degrees(float(row["lat_deg"]), float(row["lon_deg"])))
            out.setdefault(row["subject_id"], []).append(f)
    return out
