"""Spherical, equirectangular (ERP) and tangent-plane coordinate math.

Conventions used throughout the package:

* latitude ``lat`` in ``[-pi/2, pi/2]`` (north positive), longitude ``lon`` in
  ``[-pi, pi)``.
* ERP pixel ``(i, j)`` of an ``H x W`` raster (``W == 2H``) has its center at
  ``lat = pi/2 - pi (i + 0.5) / H`` and ``lon = -pi + 2 pi (j + 0.5) / W``.
* Unit vectors are ``(cos lat cos lon, cos lat sin lon, sin lat)``.
* Tangent pixel ``(v, u)`` (row, column) of a ``p x p`` patch sits at plane
  coordinates ``x = (2 (u + 0.5) / p - 1) tan(fov/2)`` and
  ``y = (1 - 2 (v + 0.5) / p) tan(fov/2)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp

from . import kernels

__all__ = [
    "SphericalCoord",
    "ViewportLayout",
    "SamplingMap",
    "canonical_lon",
    "to_unit",
    "from_unit",
    "angular_distance",
    "erp_pixel_centers",
    "erp_fractional_coords",
    "default_layout",
    "augmented_layout",
    "gnomonic_forward",
    "gnomonic_inverse",
    "gnomonic_point_forward",
    "tangent_plane_grid",
    "build_sampling_map",
    "project_to_tangents",
    "back_project",
    "overlap_mask",
]

TWO_PI = 2.0 * math.pi


class SphericalCoord(NamedTuple):
    lat: float
    lon: float

    @classmethod
    def from_degrees(cls, lat_deg: float, lon_deg: float) -> "SphericalCoord":
        return cls(math.radians(lat_deg), math.radians(lon_deg)).canonical()

    def canonical(self) -> "SphericalCoord":
        if not -math.pi / 2 - 1e-12 <= self.lat <= math.pi / 2 + 1e-12:
            raise ValueError(f"latitude {self.lat} outside [-pi/2, pi/2]")
        lat = min(max(self.lat, -math.pi / 2), math.pi / 2)
        return SphericalCoord(lat, float(canonical_lon(self.lon)))

    def degrees(self) -> tuple[float, float]:
        return math.degrees(self.lat), math.degrees(self.lon)


def canonical_lon(lon):
    """Wrap longitude(s) into ``[-pi, pi)``."""
    out = np.mod(np.asarray(lon, dtype=np.float64) + math.pi, TWO_PI) - math.pi
    # mod can return exactly 2pi - tiny -> pi after the shift
    out = np.where(out >= math.pi, out - TWO_PI, out)
    return out if np.ndim(out) else float(out)


def to_unit(lat, lon):
    lat = np.asarray(lat, dtype=np.float64)
    lon = np.asarray(lon, dtype=np.float64)
    cl = np.cos(lat)
    return np.stack([cl * np.cos(lon), cl * np.sin(lon), np.sin(lat)], axis=-1)


def from_unit(v):
    v = np.asarray(v, dtype=np.float64)
    lat = np.arctan2(v[..., 2], np.hypot(v[..., 0], v[..., 1]))
    lon = canonical_lon(np.arctan2(v[..., 1], v[..., 0]))
    return lat, lon


def angular_distance(a, b):
    """Great-circle angle between unit vectors (broadcasting), robust near 0."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    cross = np.linalg.norm(np.cross(a, b), axis=-1)
    return np.arctan2(cross, np.sum(a * b, axis=-1))


def erp_pixel_centers(height: int, width: int):
    lat = math.pi / 2 - math.pi * (np.arange(height) + 0.5) / height
    lon = -math.pi + TWO_PI * (np.arange(width) + 0.5) / width
    return lat, lon


def erp_fractional_coords(lat, lon, height: int, width: int):
    """Fractional (row, col) of a direction, in pixel-center units."""
    row = (math.pi / 2 - np.asarray(lat)) / math.pi * height - 0.5
    col = (np.asarray(lon) + math.pi) / TWO_PI * width - 0.5
    return row, col


def _check_erp_shape(height: int, width: int) -> None:
    if height < 1 or width != 2 * height:
        raise ValueError(f"ERP raster must satisfy W == 2H, got H={height}, W={width}")


@dataclass(frozen=True)
class ViewportLayout:
    """Tangent viewport centers plus a shared field of view and patch size."""

    centers: tuple[SphericalCoord, ...]
    fov_deg: float = 80.0
    patch_size: int = 224

    def __post_init__(self):
        if not 0.0 < self.fov_deg < 180.0:
            raise ValueError(f"fov must lie strictly inside (0, 180) degrees, got {self.fov_deg}")
        if self.patch_size < 1:
            raise ValueError("patch_size must be positive")
        object.__setattr__(
            self, "centers", tuple(SphericalCoord(*c).canonical() for c in self.centers)
        )

    def __len__(self) -> int:
        return len(self.centers)

    @property
    def half_extent(self) -> float:
        """``tan(fov / 2)``: half-width of the tangent patch in plane units."""
        return math.tan(math.radians(self.fov_deg) / 2)

    def lat_lon(self) -> tuple[np.ndarray, np.ndarray]:
        arr = np.array(self.centers, dtype=np.float64).reshape(-1, 2)
        return arr[:, 0], arr[:, 1]

    def with_patch_size(self, patch_size: int) -> "ViewportLayout":
        return ViewportLayout(self.centers, self.fov_deg, patch_size)

    def rotated(self, dlon: float) -> "ViewportLayout":
        return ViewportLayout(
            tuple(SphericalCoord(c.lat, c.lon + dlon) for c in self.centers),
            self.fov_deg,
            self.patch_size,
        )

    def to_dict(self) -> dict:
        return {
            "centers_deg": [list(c.degrees()) for c in self.centers],
            "fov_deg": self.fov_deg,
            "patch_size": self.patch_size,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "ViewportLayout":
        unknown = set(d) - {"centers_deg", "fov_deg", "patch_size"}
        if unknown:
            raise ValueError(f"unknown layout keys: {sorted(unknown)}")
        centers = tuple(SphericalCoord.from_degrees(lat, lon) for lat, lon in d["centers_deg"])
        return cls(centers, float(d["fov_deg"]), int(d["patch_size"]))

    @classmethod
    def from_json(cls, text: str) -> "ViewportLayout":
        return cls.from_dict(json.loads(text))


def _rings(latitudes_deg, ring_sizes, lon_offset_deg=0.0):
    centers = []
    for lat, n in zip(latitudes_deg, ring_sizes):
        for k in range(n):
            centers.append(SphericalCoord.from_degrees(lat, lon_offset_deg + 360.0 * k / n))
    return tuple(centers)


def default_layout(
    ring_sizes: Sequence[int] = (3, 6, 6, 3),
    latitudes_deg: Sequence[float] = (-67.5, -22.5, 22.5, 67.5),
    fov_deg: float = 80.0,
    patch_size: int = 224,
) -> ViewportLayout:
    """The 18-viewport layout: four latitude rings, equally spaced from lon 0."""
    if len(ring_sizes) != len(latitudes_deg):
        raise ValueError("ring_sizes and latitudes_deg differ in length")
    return ViewportLayout(_rings(latitudes_deg, ring_sizes), fov_deg, patch_size)


AUGMENTATIONS = ("shifted", "wide_fov", "coarse")


def augmented_layout(kind: str, patch_size: int = 224) -> ViewportLayout:
    """Second tangent set used by the consistency loss.

    ``shifted`` moves every default center by +45 deg longitude, ``wide_fov``
    keeps the centers at 120 deg FOV, ``coarse`` uses 10 viewports on rings
    at -60/0/+60 deg (3, 4, 3 per ring) with 120 deg FOV.
    """
    kind = kind.replace("-", "_")
    base = default_layout(patch_size=patch_size)
    if kind == "shifted":
        return base.rotated(math.radians(45.0))
    if kind == "wide_fov":
        return ViewportLayout(base.centers, 120.0, patch_size)
    if kind == "coarse":
        return ViewportLayout(_rings((-60.0, 0.0, 60.0), (3, 4, 3)), 120.0, patch_size)
    raise ValueError(f"unknown augmentation {kind!r}; expected one of {AUGMENTATIONS}")


def layout_by_name(name: str, patch_size: int = 224) -> ViewportLayout:
    if name == "default":
        return default_layout(patch_size=patch_size)
    return augmented_layout(name, patch_size=patch_size)


# ---------------------------------------------------------------- gnomonic --


def gnomonic_forward(lat0, lon0, lat, lon):
    """Vectorized gnomonic projection onto the plane tangent at ``(lat0, lon0)``.

    Returns ``(x, y, cos_c)``; entries with ``cos_c <= 0`` lie behind the
    plane and get NaN coordinates.
    """
    dlon = np.asarray(lon, dtype=np.float64) - lon0
    sl0, cl0 = np.sin(lat0), np.cos(lat0)
    sl, cl = np.sin(lat), np.cos(lat)
    cos_dlon = np.cos(dlon)
    cos_c = sl0 * sl + cl0 * cl * cos_dlon
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(cos_c > 0, 1.0 / cos_c, np.nan)
    x = cl * np.sin(dlon) * inv
    y = (cl0 * sl - sl0 * cl * cos_dlon) * inv
    return x, y, cos_c


def gnomonic_inverse(lat0, lon0, x, y):
    """Inverse gnomonic projection; total on the whole plane."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    rho = np.hypot(x, y)
    c = np.arctan(rho)
    sc, cc = np.sin(c), np.cos(c)
    sl0, cl0 = np.sin(lat0), np.cos(lat0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(rho > 0, y * sc / rho, 0.0)
    lat = np.arcsin(np.clip(cc * sl0 + ratio * cl0, -1.0, 1.0))
    lon = lon0 + np.arctan2(x * sc, rho * cl0 * cc - y * sl0 * sc)
    return lat, canonical_lon(lon)


# cos(c) below this counts as on the horizon (cos(pi/2) evaluates to 6e-17)
_HORIZON_EPS = 1e-12


def gnomonic_point_forward(center: SphericalCoord, q: SphericalCoord) -> tuple[float, float]:
    """Project a single point; raises when ``q`` is not in front of the plane."""
    x, y, cos_c = gnomonic_forward(center.lat, center.lon, q.lat, q.lon)
    if not cos_c > _HORIZON_EPS:
        raise ValueError("point lies on or behind the tangent plane (separation >= 90 deg)")
    return float(x), float(y)


def tangent_plane_grid(fov_deg: float, patch_size: int):
    """Plane coordinates ``(x, y)`` of every tangent pixel center, shape (p, p)."""
    half = math.tan(math.radians(fov_deg) / 2)
    s = (2.0 * (np.arange(patch_size) + 0.5) / patch_size - 1.0) * half
    x = np.broadcast_to(s[None, :], (patch_size, patch_size))
    y = np.broadcast_to(-s[:, None], (patch_size, patch_size))
    return x, y


# ------------------------------------------------------------ sampling map --


def _bilinear_corners(rows, cols, height, width, wrap):
    """Flat corner indices and weights reproducing :func:`kernels.bilinear_sample`."""
    r = np.clip(rows, 0.0, height - 1)
    r0 = np.minimum(np.floor(r).astype(np.int64), max(height - 2, 0))
    r1 = r0 + 1 if height > 1 else r0
    fr = r - r0
    if wrap:
        c0 = np.floor(cols).astype(np.int64)
        fc = cols - c0
        c0 = c0 % width
        c1 = (c0 + 1) % width
    else:
        q = np.clip(cols, 0.0, width - 1)
        c0 = np.minimum(np.floor(q).astype(np.int64), max(width - 2, 0))
        c1 = c0 + 1 if width > 1 else c0
        fc = q - c0
    idx = np.stack([r0 * width + c0, r0 * width + c1, r1 * width + c0, r1 * width + c1], -1)
    wts = np.stack([(1 - fr) * (1 - fc), (1 - fr) * fc, fr * (1 - fc), fr * fc], -1)
    return idx, wts


@dataclass(frozen=True, eq=False)
class SamplingMap:
    """Precomputed ERP <-> tangent resampling tables for one layout and raster.

    ``erp_rows/erp_cols`` (T, p, p) give, for every tangent pixel, the
    fractional ERP position to sample. The ``entry_*`` arrays list every
    (ERP pixel, covering viewport) pair with the fractional tangent position
    of the ERP pixel center, sorted by viewport then pixel.
    """

    layout: ViewportLayout
    height: int
    width: int
    erp_rows: np.ndarray
    erp_cols: np.ndarray
    coverage: np.ndarray
    entry_pixel: np.ndarray
    entry_view: np.ndarray
    entry_rows: np.ndarray
    entry_cols: np.ndarray
    entry_cos: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def num_views(self) -> int:
        return len(self.layout)

    @property
    def patch_size(self) -> int:
        return self.layout.patch_size

    def entry_weights(self, weighting: str = "uniform") -> np.ndarray:
        if weighting == "uniform":
            return np.ones_like(self.entry_cos)
        if weighting == "cosine":
            return self.entry_cos.copy()
        raise ValueError(f"unknown weighting {weighting!r}")

    @cached_property
    def projection_matrix(self) -> sp.csr_matrix:
        """Sparse (T*p*p, H*W) operator: tangent pixels from an ERP raster."""
        idx, wts = _bilinear_corners(
            self.erp_rows.ravel(), self.erp_cols.ravel(), self.height, self.width, wrap=True
        )
        n = idx.shape[0]
        rows = np.repeat(np.arange(n), 4)
        return sp.csr_matrix(
            (wts.ravel(), (rows, idx.ravel())), shape=(n, self.height * self.width)
        )

    def backprojection_matrix(self, weighting: str = "uniform") -> sp.csr_matrix:
        """Sparse (H*W, T*p*p) averaging operator; uncovered rows are empty."""
        key = ("back", weighting)
        if key not in self._cache:
            p = self.patch_size
            idx, wts = _bilinear_corners(self.entry_rows, self.entry_cols, p, p, wrap=False)
            idx = idx + (self.entry_view * p * p)[:, None]
            ew = self.entry_weights(weighting)
            total = np.bincount(self.entry_pixel, weights=ew, minlength=self.height * self.width)
            scale = ew / total[self.entry_pixel]
            rows = np.repeat(self.entry_pixel, 4)
            vals = (wts * scale[:, None]).ravel()
            self._cache[key] = sp.csr_matrix(
                (vals, (rows, idx.ravel())),
                shape=(self.height * self.width, self.num_views * p * p),
            )
        return self._cache[key]


def build_sampling_map(layout: ViewportLayout, height: int, width: int) -> SamplingMap:
    _check_erp_shape(height, width)
    p = layout.patch_size
    half = layout.half_extent
    gx, gy = tangent_plane_grid(layout.fov_deg, p)
    lat_c, lon_c = layout.lat_lon()
    t_count = len(layout)

    erp_rows = np.empty((t_count, p, p))
    erp_cols = np.empty((t_count, p, p))
    for t in range(t_count):
        lat, lon = gnomonic_inverse(lat_c[t], lon_c[t], gx, gy)
        erp_rows[t], erp_cols[t] = erp_fractional_coords(lat, lon, height, width)

    plat, plon = erp_pixel_centers(height, width)
    lat_grid = np.repeat(plat, width)
    lon_grid = np.tile(plon, height)
    pix = np.arange(height * width)
    pixels, views, rows, cols, coss = [], [], [], [], []
    for t in range(t_count):
        x, y, cos_c = gnomonic_forward(lat_c[t], lon_c[t], lat_grid, lon_grid)
        with np.errstate(invalid="ignore"):
            inside = (cos_c > 0) & (np.abs(x) <= half) & (np.abs(y) <= half)
        pixels.append(pix[inside])
        views.append(np.full(int(inside.sum()), t, dtype=np.int64))
        cols.append((x[inside] / half + 1.0) * p / 2 - 0.5)
        rows.append((1.0 - y[inside] / half) * p / 2 - 0.5)
        coss.append(cos_c[inside])

    def cat(parts, dtype):
        return np.concatenate(parts).astype(dtype) if parts else np.zeros(0, dtype=dtype)

    entry_pixel = cat(pixels, np.int64)
    coverage = np.bincount(entry_pixel, minlength=height * width).reshape(height, width)
    return SamplingMap(
        layout=layout,
        height=height,
        width=width,
        erp_rows=erp_rows,
        erp_cols=erp_cols,
        coverage=coverage,
        entry_pixel=entry_pixel,
        entry_view=cat(views, np.int64),
        entry_rows=cat(rows, np.float64),
        entry_cols=cat(cols, np.float64),
        entry_cos=cat(coss, np.float64),
    )


def _as_hwc(arr: np.ndarray) -> tuple[np.ndarray, bool]:
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 2:
        return np.ascontiguousarray(arr[:, :, None]), True
    if arr.ndim == 3:
        return np.ascontiguousarray(arr), False
    raise ValueError(f"expected (H, W) or (H, W, C) array, got shape {arr.shape}")


def project_to_tangents(erp: np.ndarray, smap: SamplingMap) -> np.ndarray:
    """Bilinearly resample an ERP raster into ``(T, p, p[, C])`` tangent patches."""
    img, squeeze = _as_hwc(erp)
    if img.shape[:2] != (smap.height, smap.width):
        raise ValueError(
            f"ERP is {img.shape[:2]} but sampling map was built for {(smap.height, smap.width)}"
        )
    p = smap.patch_size
    vals = kernels.bilinear_sample(
        img, np.ascontiguousarray(smap.erp_rows.ravel()), np.ascontiguousarray(smap.erp_cols.ravel()), True
    )
    out = vals.reshape(smap.num_views, p, p, img.shape[2])
    return out[..., 0] if squeeze else out


def back_project(
    patches: np.ndarray, smap: SamplingMap, height: int | None = None,
    width: int | None = None, weighting: str = "uniform",
) -> tuple[np.ndarray, np.ndarray]:
    """Blend tangent patches back onto the ERP raster.

    Every covered pixel receives the weighted average of the bilinear samples
    of all covering patches. Returns ``(erp, weight)``; uncovered pixels are
    0 with weight 0.
    """
    height = smap.height if height is None else height
    width = smap.width if width is None else width
    if (height, width) != (smap.height, smap.width):
        raise ValueError("raster size differs from the sampling map")
    patches = np.asarray(patches, dtype=np.float64)
    squeeze = patches.ndim == 3
    if squeeze:
        patches = patches[..., None]
    p = smap.patch_size
    if patches.shape[:3] != (smap.num_views, p, p):
        raise ValueError(f"expected {smap.num_views} patches of {p}x{p}, got {patches.shape[:3]}")
    c = patches.shape[3]
    ew = smap.entry_weights(weighting)
    bounds = np.searchsorted(smap.entry_view, np.arange(smap.num_views + 1))
    vals = np.concatenate([
        kernels.bilinear_sample(
            np.ascontiguousarray(patches[t]),
            np.ascontiguousarray(smap.entry_rows[bounds[t]:bounds[t + 1]]),
            np.ascontiguousarray(smap.entry_cols[bounds[t]:bounds[t + 1]]),
            False,
        )
        for t in range(smap.num_views)
    ]) if smap.num_views else np.zeros((0, c))
    # Blend deviations from each pixel's first sample so equal samples
    # reproduce their value exactly.
    ref = np.zeros((height * width, c))
    first_pix, first_idx = np.unique(smap.entry_pixel, return_index=True)
    ref[first_pix] = vals[first_idx]
    acc = np.zeros((height * width, c))
    wacc = np.zeros(height * width)
    kernels.scatter_add(
        np.ascontiguousarray(smap.entry_pixel), np.ascontiguousarray(vals - ref[smap.entry_pixel]),
        np.ascontiguousarray(ew), acc, wacc,
    )
    covered = wacc > 0
    acc[covered] /= wacc[covered, None]
    erp = (ref + acc).reshape(height, width, c)
    weight = wacc.reshape(height, width)
    return (erp[..., 0] if squeeze else erp), weight


def overlap_mask(layout: ViewportLayout, height: int, width: int) -> np.ndarray:
    """Per-pixel count of viewports whose tangent patch contains the pixel."""
    _check_erp_shape(height, width)
    if len(layout) == 0:
        return np.zeros((height, width))
    return build_sampling_map(layout, height, width).coverage.astype(np.float64)
