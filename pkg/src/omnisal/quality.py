"""Saliency-weighted PSNR and WS-PSNR for ERP video, plus correlation stats."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from scipy import stats

from .sphere import erp_pixel_centers

Y_MAX = 255.0


def _frames(seq) -> list[np.ndarray]:
    return [np.asarray(f, dtype=np.float64) for f in seq]


def _weighted_frame_psnr(ref, imp, w) -> float:
    if ref.shape != imp.shape or ref.shape != w.shape:
        raise ValueError("reference, impaired and weight frames must share a shape")
    wsum = w.sum()
    if not wsum > 0:
        raise ValueError("saliency weights are all zero")
    err = np.sum((ref - imp) ** 2 * w)
    if err == 0:
        return math.inf
    return 10.0 * math.log10(Y_MAX**2 * wsum / err)


def latitude_weights(height: int, width: int) -> np.ndarray:
    lat, _ = erp_pixel_centers(height, width)
    return np.repeat(np.cos(lat)[:, None], width, axis=1)


def _pooled(ref, imp, sal, use_latitude: bool) -> float:
    ref, imp, sal = _frames(ref), _frames(imp), _frames(sal)
    if not (len(ref) == len(imp) == len(sal)) or not ref:
        raise ValueError("videos and saliency need equal, non-zero frame counts")
    vals = []
    for r, i, s in zip(ref, imp, sal):
        if np.any(s < 0):
            raise ValueError("saliency weights must be non-negative")
        total = s.sum()
        if not total > 0:
            raise ValueError("saliency weights are all zero")
        # normalizing first makes exact rescalings of s give bitwise-equal weights
        s = s / total
        w = s * latitude_weights(*r.shape) if use_latitude else s
        vals.append(_weighted_frame_psnr(r, i, w))
    return float(np.mean(vals))


def weighted_psnr(ref: Sequence, imp: Sequence, sal: Sequence) -> float:
    """Per-frame saliency-weighted PSNR (dB), averaged over frames; inf when lossless."""
    return _pooled(ref, imp, sal, use_latitude=False)


def weighted_ws_psnr(ref: Sequence, imp: Sequence, sal: Sequence) -> float:
    """As :func:`weighted_psnr` with the extra ``cos(latitude)`` pixel weight."""
    return _pooled(ref, imp, sal, use_latitude=True)


def per_frame(ref, imp, sal) -> list[dict]:
    rows = []
    for k, (r, i, s) in enumerate(zip(_frames(ref), _frames(imp), _frames(sal))):
        rows.append({
            "frame": k,
            "wpsnr": _weighted_frame_psnr(r, i, s),
            "wwspsnr": _weighted_frame_psnr(r, i, s * latitude_weights(*r.shape)),
        })
    return rows


def _pair(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) == 0:
        raise ValueError("inputs must be equal-length non-empty sequences")
    return x, y


def pcc(x, y) -> float:
    x, y = _pair(x, y)
    xc, yc = x - x.mean(), y - y.mean()
    denom = math.sqrt(float(np.sum(xc * xc) * np.sum(yc * yc)))
    if denom == 0:
        raise ValueError("pcc undefined for constant input")
    return float(np.sum(xc * yc) / denom)


def srcc(x, y) -> float:
    """Spearman rank correlation with average ranks for ties."""
    x, y = _pair(x, y)
    return pcc(stats.rankdata(x), stats.rankdata(y))


def rmse(x, y) -> float:
    x, y = _pair(x, y)
    return float(np.sqrt(np.mean((x - y) ** 2)))
