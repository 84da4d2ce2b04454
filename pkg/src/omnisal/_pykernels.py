"""Pure numpy/Python versions of the compiled kernels.

Used when the extension is not built, and as the reference in tests.
"""

import numpy as np


def bilinear_sample(img, rows, cols, wrap):
    h, w = img.shape[:2]
    r = np.clip(rows, 0.0, h - 1)
    r0 = np.minimum(np.floor(r).astype(np.int64), max(h - 2, 0))
    r1 = r0 + 1 if h > 1 else r0
    fr = (r - r0)[:, None]
    if wrap:
        c0 = np.floor(cols).astype(np.int64)
        fc = (cols - c0)[:, None]
        c0 = c0 % w
        c1 = (c0 + 1) % w
    else:
        q = np.clip(cols, 0.0, w - 1)
        c0 = np.minimum(np.floor(q).astype(np.int64), max(w - 2, 0))
        c1 = c0 + 1 if w > 1 else c0
        fc = (q - c0)[:, None]
    a00, a01, a10, a11 = img[r0, c0], img[r0, c1], img[r1, c0], img[r1, c1]
    top = a00 + fc * (a01 - a00)
    bot = a10 + fc * (a11 - a10)
    return top + fr * (bot - top)


def scatter_add(index, values, weights, out, wout):
    # np.add.at is unbuffered and applies updates in index order
    np.add.at(out, index, weights[:, None] * values)
    np.add.at(wout, index, weights)


def idt_scan(xyz, t, cos_thresh, min_duration, tol=1e-9):
    n = len(xyz)
    spans = []
    i = 0
    while i < n:
        later = np.flatnonzero(t[i:] - t[i] >= min_duration - tol)
        if len(later) == 0:
            break
        j = i + int(later[0])
        win = xyz[i : j + 1]
        if (win @ win.T).min() < cos_thresh:
            i += 1
            continue
        while j + 1 < n and (xyz[i : j + 1] @ xyz[j + 1]).min() >= cos_thresh:
            j += 1
        spans.append((i, j))
        i = j + 1
    return spans
