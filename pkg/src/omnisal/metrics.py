"""Saliency metrics (numpy) and the differentiable training losses (tensor).

Evaluation metrics follow the usual saliency-benchmark conventions; the
KL divergence always takes the reference distribution as its first argument.
"""

from __future__ import annotations

import numpy as np

from . import tensor as tt
from .tensor import Tensor

EPS = 1e-7
SMSE_WEIGHT = 0.05
_SUM_TOL = 1e-6

__all__ = [
    "kld",
    "cc",
    "sim",
    "nss",
    "smse",
    "kld_loss",
    "cc_term",
    "smse_loss",
    "supervised_loss",
    "vac_loss",
    "normalize_sum",
]


def normalize_sum(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    s = a.sum()
    if not s > 0:
        raise ValueError("map has no positive mass")
    return a / s


def _require_sum1(*maps) -> None:
    for m in maps:
        if np.any(m < 0):
            raise ValueError("saliency map has negative values")
        if abs(float(m.sum()) - 1.0) > _SUM_TOL:
            raise ValueError(f"saliency map sums to {m.sum():.6g}, expected 1")


def _fixations(fix) -> np.ndarray:
    fix = np.asarray(fix) > 0
    if not fix.any():
        raise ValueError("fixation map is empty")
    return fix


def kld(a, b, eps: float = EPS) -> float:
    """``sum a log(eps + a / (b + eps))``; use ``kld(ground_truth, prediction)``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _require_sum1(a, b)
    return float(np.sum(a * np.log(eps + a / (b + eps))))


def cc(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    ac = a - a.mean()
    bc = b - b.mean()
    denom = np.sqrt(np.sum(ac * ac) * np.sum(bc * bc))
    if denom == 0:
        raise ValueError("cc is undefined for a constant map")
    return float(np.sum(ac * bc) / denom)


def sim(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _require_sum1(a, b)
    return float(np.minimum(a, b).sum())


def nss(p, fix) -> float:
    p = np.asarray(p, dtype=np.float64)
    fix = _fixations(fix)
    # rounding in the mean gives a tiny nonzero std for constant maps
    if p.max() == p.min():
        return 0.0
    return float(((p - p.mean()) / p.std())[fix].mean())


def _minmax(a: np.ndarray) -> np.ndarray:
    lo, hi = a.min(), a.max()
    # constant maps normalize to zeros
    return (a - lo) / (hi - lo) if hi > lo else np.zeros_like(a)


def smse(p, q, fix) -> float:
    """Squared error of min-max normalized maps, averaged over fixated pixels."""
    fix = _fixations(fix)
    d = _minmax(np.asarray(p, dtype=np.float64)) - _minmax(np.asarray(q, dtype=np.float64))
    return float(np.mean(d[fix] ** 2))


# ------------------------------------------------------------ tensor losses --


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def kld_loss(a, b, eps: float = EPS, weight=None) -> Tensor:
    """Differentiable ``sum a log(eps + a / (b + eps)) [* w]``."""
    a, b = _as_tensor(a), _as_tensor(b)
    term = a * tt.log(eps + a / (b + eps))
    if weight is not None:
        term = term * _as_tensor(weight)
    return tt.sum(term)


def cc_term(a, b) -> Tensor:
    """Differentiable Pearson correlation of two maps."""
    a, b = _as_tensor(a), _as_tensor(b)
    ac = a - tt.mean(a)
    bc = b - tt.mean(b)
    return tt.sum(ac * bc) / tt.sqrt(tt.sum(ac * ac) * tt.sum(bc * bc))


def _minmax_t(x: Tensor) -> Tensor:
    lo = tt.amin(x)
    return (x - lo) / (tt.amax(x) - lo)


def smse_loss(p, q, fix) -> Tensor:
    fix = _fixations(fix)
    p, q = _as_tensor(p), _as_tensor(q)
    if np.ptp(q.data) == 0:
        qn = Tensor(np.zeros_like(q.data))
    else:
        qn = _minmax_t(q)
    d = _minmax_t(p) - qn
    return tt.scale(tt.sum(d * d * Tensor(fix.astype(np.float64))), 1.0 / fix.sum())


def supervised_loss(p, q_s, q_f, alpha: float = SMSE_WEIGHT) -> Tensor:
    """``KLD(q_s, p) + (1 - CC(p, q_s)) + alpha * SMSE(p, q_s, q_f)``."""
    p, q_s = _as_tensor(p), _as_tensor(q_s)
    if p.shape != q_s.shape or p.shape != np.shape(q_f):
        raise ValueError("prediction, density and fixation maps must share a shape")
    return (
        kld_loss(q_s, p)
        + (1.0 - cc_term(p, q_s))
        + tt.scale(smse_loss(p, q_s, q_f), alpha)
    )


def vac_loss(y_hat, y_bar, weight=None, eps: float = EPS) -> Tensor:
    """Consistency between ERP predictions from two tangent layouts.

    Weighted KL term plus ``1 - sum(y_hat y_bar w) / sqrt(sum y_hat^2 sum y_bar^2)``.
    ``weight`` defaults to ones; typically the overlap mask of the layout.
    """
    y_hat, y_bar = _as_tensor(y_hat), _as_tensor(y_bar)
    if y_hat.shape != y_bar.shape:
        raise ValueError("VAC maps must share a shape")
    if weight is None:
        w = Tensor(np.ones(y_hat.shape))
    else:
        w = _as_tensor(weight)
        if w.shape != y_hat.shape:
            raise ValueError("weight mask must match the map shape")
        if np.any(w.data < 0):
            raise ValueError("weight mask must be non-negative")
    kl = kld_loss(y_hat, y_bar, eps, weight=w)
    num = tt.sum(y_hat * y_bar * w)
    den = tt.sqrt(tt.sum(y_hat * y_hat) * tt.sum(y_bar * y_bar))
    return kl + (1.0 - num / den)
