# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled affine warp kernel; must stay bit-identical to _warp_py."""

import numpy as np

cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()


def affine_warp(const cnp.uint8_t[:, :, :] pixels, coeffs, fill):
    cdef double a = coeffs[0]
    cdef double b = coeffs[1]
    cdef double c = coeffs[2]
    cdef double d = coeffs[3]
    cdef double e = coeffs[4]
    cdef double f = coeffs[5]
    cdef Py_ssize_t h = pixels.shape[0]
    cdef Py_ssize_t w = pixels.shape[1]
    cdef double fill0 = fill[0]
    cdef double fill1 = fill[1]
    cdef double fill2 = fill[2]

    out = np.empty((h, w, 3), dtype=np.uint8)
    cdef const cnp.uint8_t[:, :, :] src = pixels
    cdef cnp.uint8_t[:, :, :] dst = out

    cdef Py_ssize_t x, y, k, x0, y0
    cdef double sx, sy, fx, fy, v00, v01, v10, v11, top, bot, acc
    cdef double fill_k

    for y in range(h):
        for x in range(w):
            sx = a * x + b * y + c
            sy = d * x + e * y + f
            x0 = <Py_ssize_t>floor(sx)
            y0 = <Py_ssize_t>floor(sy)
            fx = sx - floor(sx)
            fy = sy - floor(sy)
            for k in range(3):
                fill_k = fill0 if k == 0 else (fill1 if k == 1 else fill2)
                v00 = src[y0, x0, k] if (0 <= x0 < w and 0 <= y0 < h) else fill_k
                v01 = src[y0, x0 + 1, k] if (0 <= x0 + 1 < w and 0 <= y0 < h) else fill_k
                v10 = src[y0 + 1, x0, k] if (0 <= x0 < w and 0 <= y0 + 1 < h) else fill_k
                v11 = src[y0 + 1, x0 + 1, k] if (0 <= x0 + 1 < w and 0 <= y0 + 1 < h) else fill_k
                top = (1.0 - fx) * v00 + fx * v01
                bot = (1.0 - fx) * v10 + fx * v11
                acc = (1.0 - fy) * top + fy * bot
                acc = floor(acc + 0.5)
                if acc < 0.0:
                    acc = 0.0
                elif acc > 255.0:
                    acc = 255.0
                dst[y, x, k] = <cnp.uint8_t>acc
    return out
