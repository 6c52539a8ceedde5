"""Pure-numpy affine warp, the fallback when the compiled kernel is absent.

Arithmetic mirrors the Cython kernel operation-for-operation so both
backends produce bit-identical output.
"""

from __future__ import annotations

import numpy as np


def affine_warp(pixels: np.ndarray, coeffs, fill) -> np.ndarray:
    """Inverse-mapped affine warp with bilinear sampling and constant fill.

    For every destination pixel (x, y) the source location is
    x_src = a*x + b*y + c, y_src = d*x + e*y + f with (a..f) = coeffs.
    Source neighbors outside the raster contribute `fill`.
    """
    a, b, c, d, e, f = (float(v) for v in coeffs)
    h, w = pixels.shape[:2]
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    sx = a * xs + b * ys + c
    sy = d * xs + e * ys + f

    x0 = np.floor(sx)
    y0 = np.floor(sy)
    fx = sx - x0
    fy = sy - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)

    fill_arr = np.asarray(fill, dtype=np.float64)
    src = pixels.astype(np.float64)

    def fetch(xi, yi):
        valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        vals = src[np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)]
        return np.where(valid[..., None], vals, fill_arr)

    v00 = fetch(x0, y0)
    v01 = fetch(x0 + 1, y0)
    v10 = fetch(x0, y0 + 1)
    v11 = fetch(x0 + 1, y0 + 1)

    fx = fx[..., None]
    fy = fy[..., None]
    top = (1.0 - fx) * v00 + fx * v01
    bot = (1.0 - fx) * v10 + fx * v11
    acc = (1.0 - fy) * top + fy * bot
    return np.clip(np.floor(acc + 0.5), 0, 255).astype(np.uint8)
