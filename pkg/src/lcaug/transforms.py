"""The augmentation operation set: color-side and geometry-side transforms.

Every function is deterministic given its drawn parameters; randomness
(magnitudes, flip axis, cutout center, noise draws) lives in the policy
layer. Output dimensions always equal input dimensions.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .image import GRAY_FILL, ImageU8, clamp_u8, luminance, rgb_to_ycbcr, ycbcr_to_rgb
from .kernels import affine_warp


class OperationKind(enum.Enum):
    SAMPLE_PAIRING = "SamplePairing"
    GAUSSIAN_NOISE = "GaussianNoise"
    SOLARIZE_ADD = "SolarizeAdd"
    COLOR = "Color"
    CONTRAST = "Contrast"
    BRIGHTNESS = "Brightness"
    SHARPNESS = "Sharpness"
    COLOR_SHIFT = "ColorShift"
    EQUALIZE_YUV = "EqualizeYUV"
    EQUALIZE = "Equalize"
    POSTERIZE = "Posterize"
    AUTOCONTRAST = "AutoContrast"
    ROTATE = "Rotate"
    FLIP = "Flip"
    CUTOUT = "Cutout"
    SHEAR_X = "ShearX"
    SHEAR_Y = "ShearY"
    SCALE = "Scale"


@dataclass(frozen=True)
class OperationSpec:
    """An operation plus its magnitude interval (None when magnitude-free)."""

    kind: OperationKind
    magnitude_range: tuple[float, float] | None
    integer: bool = False


OPERATION_SPECS: dict[OperationKind, OperationSpec] = {
    spec.kind: spec
    for spec in [
        OperationSpec(OperationKind.SAMPLE_PAIRING, (0.0, 0.4)),
        OperationSpec(OperationKind.GAUSSIAN_NOISE, (0.0, 0.4)),
        OperationSpec(OperationKind.SOLARIZE_ADD, (1, 110), integer=True),
        OperationSpec(OperationKind.COLOR, (0.1, 1.9)),
        OperationSpec(OperationKind.CONTRAST, (0.1, 1.9)),
        OperationSpec(OperationKind.BRIGHTNESS, (0.1, 1.9)),
        OperationSpec(OperationKind.SHARPNESS, (0.1, 1.9)),
        OperationSpec(OperationKind.COLOR_SHIFT, (-20, 20), integer=True),
        OperationSpec(OperationKind.EQUALIZE_YUV, None),
        OperationSpec(OperationKind.EQUALIZE, None),
        OperationSpec(OperationKind.POSTERIZE, (4, 8), integer=True),
        OperationSpec(OperationKind.AUTOCONTRAST, None),
        OperationSpec(OperationKind.ROTATE, (-30.0, 30.0)),
        OperationSpec(OperationKind.FLIP, None),
        OperationSpec(OperationKind.CUTOUT, (0, 60), integer=True),
        OperationSpec(OperationKind.SHEAR_X, (-0.3, 0.3)),
        OperationSpec(OperationKind.SHEAR_Y, (-0.3, 0.3)),
        OperationSpec(OperationKind.SCALE, (0.6, 1.4)),
    ]
}


def _blend(image: ImageU8, degenerate: np.ndarray, m: float) -> ImageU8:
    """out = clamp(round(D + m * (P - D))) with float64 intermediate."""
    p = image.pixels.astype(np.float64)
    d = np.asarray(degenerate, dtype=np.float64)
    return ImageU8(clamp_u8(d + m * (p - d)))


def enhance_color(image: ImageU8, m: float) -> ImageU8:
    """Blend toward the per-pixel grayscale degenerate; m=1 is identity."""
    if m == 1.0:
        return image
    p = image.pixels
    gray = luminance(p[..., 0], p[..., 1], p[..., 2])
    return _blend(image, np.repeat(gray[..., None], 3, axis=2), m)


def enhance_contrast(image: ImageU8, m: float) -> ImageU8:
    """Blend toward a uniform image at the rounded mean luminance."""
    if m == 1.0:
        return image
    p = image.pixels
    gray = luminance(p[..., 0], p[..., 1], p[..., 2])
    mean = float(np.floor(gray.astype(np.float64).mean() + 0.5))
    return _blend(image, np.full_like(p, mean, dtype=np.float64), m)


def enhance_brightness(image: ImageU8, m: float) -> ImageU8:
    """Blend toward black: out = clamp(round(m * P))."""
    if m == 1.0:
        return image
    return _blend(image, np.zeros_like(image.pixels, dtype=np.float64), m)


_SMOOTH_KERNEL = np.array([[1, 1, 1], [1, 5, 1], [1, 1, 1]], dtype=np.float64) / 13.0


def enhance_sharpness(image: ImageU8, m: float) -> ImageU8:
    """Blend toward a 3x3-smoothed interior (1-pixel border untouched)."""
    if m == 1.0:
        return image
    p = image.pixels.astype(np.float64)
    degenerate = p.copy()
    if image.height >= 3 and image.width >= 3:
        for c in range(3):
            ch = p[..., c]
            acc = np.zeros_like(ch[1:-1, 1:-1])
            for dy in range(3):
                for dx in range(3):
                    acc += _SMOOTH_KERNEL[dy, dx] * ch[dy : dy + ch.shape[0] - 2, dx : dx + ch.shape[1] - 2]
            degenerate[1:-1, 1:-1, c] = acc
    return _blend(image, degenerate, m)


def solarize_add(image: ImageU8, add: int) -> ImageU8:
    """Add `add` to every channel value below 128, clamped."""
    p = image.pixels.astype(np.int32)
    out = np.where(p < 128, np.clip(p + add, 0, 255), p)
    return ImageU8(out.astype(np.uint8))


def posterize(image: ImageU8, bits: int) -> ImageU8:
    """Keep the top `bits` bits of every channel value."""
    mask = 0xFF & ~((1 << (8 - bits)) - 1)
    return ImageU8(image.pixels & np.uint8(mask))


def _equalize_lut(channel: np.ndarray) -> np.ndarray:
    hist = np.bincount(channel.ravel(), minlength=256)
    cdf = np.cumsum(hist)
    nonzero = cdf[hist > 0]
    cdf_min = int(nonzero[0])
    n = int(cdf[-1])
    if n == cdf_min:
        return np.arange(256, dtype=np.uint8)
    lut = np.floor((cdf - cdf_min) * 255.0 / (n - cdf_min) + 0.5)
    return np.clip(lut, 0, 255).astype(np.uint8)


def equalize(image: ImageU8) -> ImageU8:
    """Histogram-equalize each RGB channel independently."""
    out = np.empty_like(image.pixels)
    for c in range(3):
        out[..., c] = _equalize_lut(image.pixels[..., c])[image.pixels[..., c]]
    return ImageU8(out)


def equalize_yuv(image: ImageU8) -> ImageU8:
    """Convert to YCbCr, equalize each plane, convert back."""
    ycc = rgb_to_ycbcr(image.pixels)
    out = np.empty_like(ycc)
    for c in range(3):
        out[..., c] = _equalize_lut(ycc[..., c])[ycc[..., c]]
    return ImageU8(ycbcr_to_rgb(out))


def autocontrast(image: ImageU8) -> ImageU8:
    """Stretch each channel to the full [0, 255] range."""
    out = np.empty_like(image.pixels)
    for c in range(3):
        ch = image.pixels[..., c]
        lo = int(ch.min())
        hi = int(ch.max())
        if lo == hi:
            out[..., c] = ch
        else:
            lut = clamp_u8((np.arange(256) - lo) * 255.0 / (hi - lo))
            out[..., c] = lut[ch]
    return ImageU8(out)


def color_shift(image: ImageU8, dr: int, dg: int, db: int) -> ImageU8:
    """Add one (dr, dg, db) delta to every pixel, clamped."""
    p = image.pixels.astype(np.int32) + np.array([dr, dg, db], dtype=np.int32)
    return ImageU8(np.clip(p, 0, 255).astype(np.uint8))


def gaussian_noise(image: ImageU8, m: float, rng: np.random.Generator) -> ImageU8:
    """Add i.i.d. normal noise with sigma = m * 255 per channel value."""
    if m == 0.0:
        return image
    sigma = m * 255.0
    noise = rng.standard_normal(image.pixels.shape) * sigma
    return ImageU8(clamp_u8(image.pixels.astype(np.float64) + noise))


def sample_pairing(image_a: ImageU8, image_b: ImageU8, w: float) -> ImageU8:
    """Convex blend of two same-size images; the first image's label wins."""
    if image_a.pixels.shape != image_b.pixels.shape:
        raise ValueError(
            f"dimension mismatch: {image_a.width}x{image_a.height} vs "
            f"{image_b.width}x{image_b.height}"
        )
    a = image_a.pixels.astype(np.float64)
    b = image_b.pixels.astype(np.float64)
    return ImageU8(clamp_u8((1.0 - w) * a + w * b))


def _warp(image: ImageU8, coeffs) -> ImageU8:
    return ImageU8(affine_warp(image.pixels, coeffs, GRAY_FILL))


def rotate(image: ImageU8, deg: float) -> ImageU8:
    """Rotate about the image center with bilinear sampling and gray fill."""
    if deg == 0.0:
        return image
    cx = (image.width - 1) / 2.0
    cy = (image.height - 1) / 2.0
    theta = math.radians(deg)
    cos_t = math.cos(theta)
    sin_t = math.sin(theta)
    # Inverse map: rotate destination offsets by -theta.
    a, b = cos_t, sin_t
    d, e = -sin_t, cos_t
    c = cx - a * cx - b * cy
    f = cy - d * cx - e * cy
    return _warp(image, (a, b, c, d, e, f))


def shear_x(image: ImageU8, m: float) -> ImageU8:
    """Horizontal shear about the middle row."""
    if m == 0.0:
        return image
    cy = (image.height - 1) / 2.0
    return _warp(image, (1.0, m, -m * cy, 0.0, 1.0, 0.0))


def shear_y(image: ImageU8, m: float) -> ImageU8:
    """Vertical shear about the middle column."""
    if m == 0.0:
        return image
    cx = (image.width - 1) / 2.0
    return _warp(image, (1.0, 0.0, 0.0, m, 1.0, -m * cx))


def scale(image: ImageU8, s: float) -> ImageU8:
    """Center-anchored zoom on the same canvas; s<1 leaves a gray border."""
    if s <= 0:
        raise ValueError(f"scale factor must be positive, got {s}")
    if s == 1.0:
        return image
    cx = (image.width - 1) / 2.0
    cy = (image.height - 1) / 2.0
    inv = 1.0 / s
    return _warp(image, (inv, 0.0, cx - inv * cx, 0.0, inv, cy - inv * cy))


def flip(image: ImageU8, axis: str) -> ImageU8:
    """Mirror along 'horizontal' (reverse columns) or 'vertical' (rows)."""
    if axis == "horizontal":
        return ImageU8(image.pixels[:, ::-1])
    if axis == "vertical":
        return ImageU8(image.pixels[::-1])
    raise ValueError(f"unknown flip axis {axis!r}")


def cutout(image: ImageU8, side: int, cx: int, cy: int) -> ImageU8:
    """Gray out a side x side square centered at (cx, cy), clipped to bounds."""
    if side <= 0:
        return image
    x0 = max(0, cx - side // 2)
    y0 = max(0, cy - side // 2)
    x1 = min(image.width, cx - side // 2 + side)
    y1 = min(image.height, cy - side // 2 + side)
    if x0 >= x1 or y0 >= y1:
        return image
    out = image.pixels.copy()
    out[y0:y1, x0:x1] = GRAY_FILL
    return ImageU8(out)
