"""8-bit RGB image container, PPM (P6) codec, color conversion and sampling.

All pixel arithmetic in this package follows one rounding rule: round half
up, then clamp to [0, 255]. Pixel i is centered at coordinate i, so integer
coordinates reproduce stored pixel values exactly.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

GRAY_FILL = (128, 128, 128)


class PpmError(ValueError):
    """Malformed PPM payload."""


class PpmMagicError(PpmError):
    """Input does not start with a binary P6 header."""


class PpmMaxvalError(PpmError):
    """Declared maxval is not 255."""


class PpmTruncatedError(PpmError):
    """Payload shorter than width * height * 3."""


def round_half_up(x):
    """Round with ties toward +inf (0.5 -> 1, 1.5 -> 2, -0.5 -> 0)."""
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5)


def clamp_u8(x) -> np.ndarray:
    """Round half up and clamp into uint8 range."""
    return np.clip(round_half_up(x), 0, 255).astype(np.uint8)


@dataclass(frozen=True)
class ImageU8:
    """Row-major 8-bit RGB raster backed by an (H, W, 3) uint8 array."""

    pixels: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.pixels, dtype=np.uint8)
        if p.ndim != 3 or p.shape[2] != 3 or p.shape[0] < 1 or p.shape[1] < 1:
            raise ValueError(f"expected (H, W, 3) uint8 array, got shape {p.shape}")
        p = np.ascontiguousarray(p)
        p.setflags(write=False)
        object.__setattr__(self, "pixels", p)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, ImageU8):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and bool(
            np.array_equal(self.pixels, other.pixels)
        )

    @staticmethod
    def full(width: int, height: int, rgb=(0, 0, 0)) -> "ImageU8":
        return ImageU8(np.full((height, width, 3), rgb, dtype=np.uint8))


_TOKEN = re.compile(rb"[^\s]+")


def _next_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    # Skip whitespace and '#' comments (which run to end of line).
    n = len(buf)
    while pos < n:
        c = buf[pos : pos + 1]
        if c.isspace():
            pos += 1
        elif c == b"#":
            while pos < n and buf[pos : pos + 1] != b"\n":
                pos += 1
        else:
            break
    m = _TOKEN.match(buf, pos)
    if m is None:
        raise PpmTruncatedError("unexpected end of header")
    return m.group(0), m.end()


def load_ppm(data: bytes) -> ImageU8:
    """Decode a binary P6 PPM with maxval 255."""
    if not data.startswith(b"P6"):
        raise PpmMagicError("not a binary P6 PPM")
    pos = 2
    fields = []
    for _ in range(3):
        tok, pos = _next_token(data, pos)
        if not tok.isdigit():
            raise PpmError(f"non-numeric header token {tok!r}")
        fields.append(int(tok))
    width, height, maxval = fields
    if maxval != 255:
        raise PpmMaxvalError(f"unsupported maxval {maxval}, only 255")
    if width < 1 or height < 1:
        raise PpmError(f"invalid dimensions {width}x{height}")
    # Exactly one whitespace byte separates the header from the payload.
    pos += 1
    need = width * height * 3
    payload = data[pos : pos + need]
    if len(payload) < need:
        raise PpmTruncatedError(
            f"need {need} payload bytes for {width}x{height}, got {len(payload)}"
        )
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)
    return ImageU8(pixels)


def save_ppm(image: ImageU8) -> bytes:
    """Encode to the canonical P6 form: "P6\\n<w> <h>\\n255\\n" + raw triples."""
    header = f"P6\n{image.width} {image.height}\n255\n".encode("ascii")
    return header + image.pixels.tobytes()


def load_image(data: bytes) -> ImageU8:
    """Decode PPM, or fall back to Pillow for PNG/JPEG ingestion."""
    if data.startswith(b"P6"):
        return load_ppm(data)
    try:
        import io

        from PIL import Image as PilImage
    except ImportError as exc:
        raise PpmError("not a P6 PPM and Pillow is unavailable") from exc
    with PilImage.open(io.BytesIO(data)) as im:
        return ImageU8(np.asarray(im.convert("RGB"), dtype=np.uint8))


def luminance(r, g, b):
    """ITU-R 601 luma, rounded half up into [0, 255]."""
    y = 0.299 * np.asarray(r, dtype=np.float64) + 0.587 * np.asarray(g, np.float64) + 0.114 * np.asarray(b, np.float64)
    return np.clip(round_half_up(y), 0, 255).astype(np.uint8)


_RGB2YCC = np.array(
    [
        [0.299, 0.587, 0.114],
        [-0.168736, -0.331264, 0.5],
        [0.5, -0.418688, -0.081312],
    ]
)
_YCC2RGB = np.linalg.inv(_RGB2YCC)
_YCC_OFFSET = np.array([0.0, 128.0, 128.0])


def rgb_to_ycbcr(pixels: np.ndarray) -> np.ndarray:
    """Full-range BT.601 RGB -> YCbCr on an (..., 3) array, clamped uint8."""
    rgb = np.asarray(pixels, dtype=np.float64)
    return clamp_u8(rgb @ _RGB2YCC.T + _YCC_OFFSET)


def ycbcr_to_rgb(pixels: np.ndarray) -> np.ndarray:
    """Inverse of rgb_to_ycbcr (round-trip differs by at most 1 per channel)."""
    ycc = np.asarray(pixels, dtype=np.float64) - _YCC_OFFSET
    return clamp_u8(ycc @ _YCC2RGB.T)


def bilinear_sample(image: ImageU8, x: float, y: float, fill=GRAY_FILL):
    """Sample one RGB value at real coordinates with bilinear interpolation.

    Neighbors outside the raster contribute `fill`. Channels are rounded
    half up at the end.
    """
    x0 = int(np.floor(x))
    y0 = int(np.floor(y))
    fx = x - x0
    fy = y - y0
    fill_arr = np.asarray(fill, dtype=np.float64)
    acc = np.zeros(3, dtype=np.float64)
    for dy, wy in ((0, 1.0 - fy), (1, fy)):
        for dx, wx in ((0, 1.0 - fx), (1, fx)):
            w = wx * wy
            if w == 0.0:
                continue
            xi, yi = x0 + dx, y0 + dy
            if 0 <= xi < image.width and 0 <= yi < image.height:
                acc += w * image.pixels[yi, xi].astype(np.float64)
            else:
                acc += w * fill_arr
    return tuple(int(v) for v in clamp_u8(acc))
