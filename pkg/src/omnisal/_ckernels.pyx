# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops. Signatures mirror :mod:`omnisal._pykernels`."""
import numpy as np
cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()


def bilinear_sample(const double[:, :, ::1] img, const double[::1] rows,
                    const double[::1] cols, bint wrap):
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1], c = img.shape[2]
    cdef Py_ssize_t n = rows.shape[0]
    out_arr = np.empty((n, c), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t k, ch, r0, r1, c0, c1
    cdef double r, q, fr, fc, a, b
    for k in range(n):
        r = rows[k]
        if r < 0.0:
            r = 0.0
        elif r > h - 1:
            r = h - 1
        r0 = <Py_ssize_t>floor(r)
        if r0 > h - 2:
            r0 = h - 2 if h > 1 else 0
        r1 = r0 + 1 if h > 1 else 0
        fr = r - r0
        q = cols[k]
        if wrap:
            c0 = <Py_ssize_t>floor(q)
            fc = q - c0
            c0 = c0 % w
            if c0 < 0:
                c0 += w
            c1 = (c0 + 1) % w
        else:
            if q < 0.0:
                q = 0.0
            elif q > w - 1:
                q = w - 1
            c0 = <Py_ssize_t>floor(q)
            if c0 > w - 2:
                c0 = w - 2 if w > 1 else 0
            c1 = c0 + 1 if w > 1 else 0
            fc = q - c0
        for ch in range(c):
            # lerp form keeps constant regions exact
            a = img[r0, c0, ch] + fc * (img[r0, c1, ch] - img[r0, c0, ch])
            b = img[r1, c0, ch] + fc * (img[r1, c1, ch] - img[r1, c0, ch])
            out[k, ch] = a + fr * (b - a)
    return out_arr


def scatter_add(const cnp.int64_t[::1] index, const double[:, ::1] values,
                const double[::1] weights, double[:, ::1] out, double[::1] wout):
    cdef Py_ssize_t n = index.shape[0], c = values.shape[1]
    cdef Py_ssize_t k, ch, i
    cdef double wk
    for k in range(n):
        i = index[k]
        wk = weights[k]
        for ch in range(c):
            out[i, ch] += wk * values[k, ch]
        wout[i] += wk


cdef inline double _dot(const double[:, ::1] p, Py_ssize_t a, Py_ssize_t b) nogil:
    return p[a, 0] * p[b, 0] + p[a, 1] * p[b, 1] + p[a, 2] * p[b, 2]


def idt_scan(const double[:, ::1] xyz, const double[::1] t, double cos_thresh,
             double min_duration, double tol=1e-9):
    cdef Py_ssize_t n = xyz.shape[0]
    cdef Py_ssize_t i = 0, j, a, b
    cdef bint ok
    spans = []
    while i < n:
        j = i
        while j < n and t[j] - t[i] < min_duration - tol:
            j += 1
        if j >= n:
            break
        ok = True
        for a in range(i, j + 1):
            for b in range(a + 1, j + 1):
                if _dot(xyz, a, b) < cos_thresh:
                    ok = False
                    break
            if not ok:
                break
        if not ok:
            i += 1
            continue
        while j + 1 < n:
            ok = True
            for a in range(i, j + 1):
                if _dot(xyz, a, j + 1) < cos_thresh:
                    ok = False
                    break
            if not ok:
                break
            j += 1
        spans.append((i, j))
        i = j + 1
    return spans
