"""Pixel-grid containers, color-space conversion, and bit-exact file I/O.

Images are row-major with the origin at the top-left pixel. RGB channels are
8-bit; HSV stores hue in degrees [0, 360) with unit-range saturation and
value. Depth maps carry the sensing-disc mask so every downstream statistic
runs over the same pixel set.

On-disk formats:

* images: binary PPM (``P6``, maxval 255)
* depth maps: ``DMAP`` magic, one version byte, width and height as 32-bit
  little-endian unsigned, ``width*height`` 32-bit little-endian IEEE-754
  depths in mm, then one mask byte (0/1) per pixel
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

MAX_DEPTH_MM = 0.5  # full-scale membrane indentation used throughout the study

_DMAP_MAGIC = b"DMAP"
_DMAP_VERSION = 1


class PpmFormatError(ValueError):
    """Malformed or unsupported PPM data."""


class DmapFormatError(ValueError):
    """Malformed or unsupported depth-map data."""


def _frozen_array(values, dtype):
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


def quantize_channels(values):
    """Real-valued channels -> uint8 with clipping and round-half-up ties."""
    clipped = np.clip(values, 0.0, 255.0)
    return np.floor(clipped + 0.5).astype(np.uint8)


@dataclass(frozen=True)
class RgbImage:
    """8-bit RGB image, ``pixels`` shaped (height, width, 3)."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError("RGB pixels must be shaped (height, width, 3) and non-empty")
        if px.dtype != np.uint8:
            if not np.issubdtype(px.dtype, np.integer):
                raise ValueError("RGB channels must be integers")
            if px.min() < 0 or px.max() > 255:
                raise ValueError("RGB channels must lie in [0, 255]")
        object.__setattr__(self, "pixels", _frozen_array(px, np.uint8))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class HsvImage:
    """HSV image: hue in degrees [0, 360), saturation and value in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 3 or px.shape[2] != 3 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError("HSV pixels must be shaped (height, width, 3) and non-empty")
        h, s, v = px[..., 0], px[..., 1], px[..., 2]
        if not (np.all(h >= 0.0) and np.all(h < 360.0)):
            raise ValueError("hue must lie in [0, 360)")
        if not (np.all(s >= 0.0) and np.all(s <= 1.0) and np.all(v >= 0.0) and np.all(v <= 1.0)):
            raise ValueError("saturation and value must lie in [0, 1]")
        object.__setattr__(self, "pixels", _frozen_array(px, np.float64))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def hue(self):
        return self.pixels[..., 0]

    @property
    def saturation(self):
        return self.pixels[..., 1]

    @property
    def value(self):
        return self.pixels[..., 2]


@dataclass(frozen=True)
class DeformationMap:
    """Per-pixel indentation depths (mm, float32) plus the sensing-disc mask.

    Depths are non-negative everywhere and never exceed ``MAX_DEPTH_MM``
    inside the mask; both bounds are enforced on construction.
    """

    depths: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        depths = np.asarray(self.depths, dtype=np.float32)
        mask = np.asarray(self.mask, dtype=bool)
        if depths.ndim != 2 or depths.shape[0] < 1 or depths.shape[1] < 1:
            raise ValueError("depths must be a non-empty 2-D grid")
        if mask.shape != depths.shape:
            raise ValueError("mask shape must match depths shape")
        if not np.all(depths >= 0.0):
            raise ValueError("depths must be non-negative")
        if mask.any() and float(depths[mask].max()) > MAX_DEPTH_MM:
            raise ValueError(f"masked depths must not exceed {MAX_DEPTH_MM} mm")
        object.__setattr__(self, "depths", _frozen_array(depths, np.float32))
        object.__setattr__(self, "mask", _frozen_array(mask, bool))

    @property
    def width(self) -> int:
        return self.depths.shape[1]

    @property
    def height(self) -> int:
        return self.depths.shape[0]


def validate_deformation_map(dmap: DeformationMap, geom: "SensorGeometry | None" = None):
    """Re-check the depth-map invariants; raises ValueError on violation.

    With ``geom`` given, also checks that the mask is the sensing disc of
    that geometry.
    """
    depths = np.asarray(dmap.depths, dtype=np.float64)
    if not np.all(np.isfinite(depths)):
        raise ValueError("depths must be finite")
    if not np.all(depths >= 0.0):
        raise ValueError("depths must be non-negative")
    if dmap.mask.any() and float(depths[dmap.mask].max()) > MAX_DEPTH_MM:
        raise ValueError(f"masked depths must not exceed {MAX_DEPTH_MM} mm")
    if geom is not None:
        if (dmap.height, dmap.width) != (geom.height, geom.width):
            raise ValueError("map dimensions do not match geometry")
        if not np.array_equal(dmap.mask, geom.disc_mask):
            raise ValueError("mask is not the sensing disc of the geometry")


@dataclass(frozen=True)
class SensorGeometry:
    """Image dimensions plus the physical scale of the sensing face.

    The sensing disc is centered on the image; a pixel belongs to the disc
    when its center lies within ``sensing_radius_mm`` of the image center.
    """

    width: int = 320
    height: int = 240
    sensing_radius_mm: float = 3.5
    mm_per_pixel: float = 0.05

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be positive")
        if self.sensing_radius_mm <= 0 or self.mm_per_pixel <= 0:
            raise ValueError("sensing radius and scale must be positive")
        half_extent = self.mm_per_pixel * (min(self.width, self.height) - 1) / 2.0
        if self.sensing_radius_mm > half_extent:
            raise ValueError("sensing disc does not fit inside the image")

    @cached_property
    def coords_mm(self):
        """(x, y) pixel-center coordinate grids in mm, origin at image center."""
        x = (np.arange(self.width, dtype=np.float64) - (self.width - 1) / 2.0) * self.mm_per_pixel
        y = (np.arange(self.height, dtype=np.float64) - (self.height - 1) / 2.0) * self.mm_per_pixel
        gx, gy = np.meshgrid(x, y)
        gx.setflags(write=False)
        gy.setflags(write=False)
        return gx, gy

    @cached_property
    def disc_mask(self):
        gx, gy = self.coords_mm
        mask = gx * gx + gy * gy <= self.sensing_radius_mm**2
        mask.setflags(write=False)
        return mask

    @cached_property
    def normalized_coords(self):
        """(u, v) grids in [0, 1]: u = col/(width-1), v = row/(height-1)."""
        u = np.arange(self.width, dtype=np.float64) / max(self.width - 1, 1)
        v = np.arange(self.height, dtype=np.float64) / max(self.height - 1, 1)
        gu, gv = np.meshgrid(u, v)
        gu.setflags(write=False)
        gv.setflags(write=False)
        return gu, gv

    def zero_map(self) -> DeformationMap:
        return DeformationMap(np.zeros((self.height, self.width), dtype=np.float32), self.disc_mask)


def rgb_to_hsv(img: RgbImage) -> HsvImage:
    """Standard hexcone conversion; achromatic pixels get hue 0."""
    rgb = img.pixels.astype(np.float64) / 255.0
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    maxc = rgb.max(axis=-1)
    minc = rgb.min(axis=-1)
    v = maxc
    chroma = maxc - minc
    s = np.where(maxc > 0.0, chroma / np.where(maxc > 0.0, maxc, 1.0), 0.0)

    nonzero = chroma > 0.0
    safe = np.where(nonzero, chroma, 1.0)
    r_max = nonzero & (maxc == r)
    g_max = nonzero & (maxc == g) & ~r_max
    b_max = nonzero & ~r_max & ~g_max
    sector = np.zeros_like(chroma)
    sector = np.where(r_max, np.mod((g - b) / safe, 6.0), sector)
    sector = np.where(g_max, (b - r) / safe + 2.0, sector)
    sector = np.where(b_max, (r - g) / safe + 4.0, sector)
    h = 60.0 * sector
    h = np.where(h >= 360.0, h - 360.0, h)
    return HsvImage(np.stack([h, s, v], axis=-1))


def hsv_to_rgb_real(hue, saturation, value):
    """HSV channel grids -> real-valued RGB channels in [0, 255] (no rounding)."""
    sector = np.asarray(hue, dtype=np.float64) / 60.0
    i = np.floor(sector).astype(np.int64) % 6
    f = sector - np.floor(sector)
    p = value * (1.0 - saturation)
    q = value * (1.0 - saturation * f)
    t = value * (1.0 - saturation * (1.0 - f))
    r = np.choose(i, [value, q, p, p, t, value])
    g = np.choose(i, [t, value, value, q, p, p])
    b = np.choose(i, [p, p, t, value, value, q])
    return np.stack([r, g, b], axis=-1) * 255.0


def hsv_to_rgb(img: HsvImage) -> RgbImage:
    """Inverse of :func:`rgb_to_hsv` up to 8-bit quantization (round half up)."""
    real = hsv_to_rgb_real(img.hue, img.saturation, img.value)
    return RgbImage(quantize_channels(real))


def hue_delta(h_after, h_before):
    """Minimal signed hue difference in (-180, 180]; +180 for opposite hues.

    Accepts scalars or arrays of degrees in [0, 360).
    """
    diff = np.mod(np.asarray(h_after, dtype=np.float64) - np.asarray(h_before, dtype=np.float64), 360.0)
    out = np.where(diff > 180.0, diff - 360.0, diff)
    if out.ndim == 0:
        return float(out)
    return out


# ---------------------------------------------------------------------------
# PPM (P6) files


def save_ppm(path, img: RgbImage):
    header = f"P6\n{img.width} {img.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + img.pixels.tobytes())


def _next_ppm_token(data: bytes, pos: int):
    while pos < len(data):
        ch = data[pos]
        if ch in b" \t\r\n":
            pos += 1
        elif ch == ord("#"):
            while pos < len(data) and data[pos] != ord("\n"):
                pos += 1
        else:
            break
    start = pos
    while pos < len(data) and data[pos] not in b" \t\r\n":
        pos += 1
    if start == pos:
        raise PpmFormatError("malformed header: unexpected end of header")
    return data[start:pos], pos


def load_ppm(path) -> RgbImage:
    data = Path(path).read_bytes()
    magic, pos = _next_ppm_token(data, 0)
    if magic != b"P6":
        raise PpmFormatError(f"malformed header: expected P6, got {magic!r}")
    fields = []
    for name in ("width", "height", "maxval"):
        token, pos = _next_ppm_token(data, pos)
        try:
            fields.append(int(token))
        except ValueError:
            raise PpmFormatError(f"malformed header: non-numeric {name} {token!r}") from None
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise PpmFormatError("malformed header: non-positive dimensions")
    if maxval != 255:
        raise PpmFormatError(f"unsupported maxval {maxval}")
    if pos >= len(data) or data[pos] not in b" \t\r\n":
        raise PpmFormatError("malformed header: missing whitespace after maxval")
    pos += 1  # exactly one whitespace byte separates header and payload
    payload = data[pos : pos + width * height * 3]
    if len(payload) < width * height * 3:
        raise PpmFormatError("unexpected end of pixel data")
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)
    return RgbImage(pixels)


# ---------------------------------------------------------------------------
# DMAP depth-map files


def save_dmap(path, dmap: DeformationMap):
    head = _DMAP_MAGIC + bytes([_DMAP_VERSION]) + struct.pack("<II", dmap.width, dmap.height)
    body = dmap.depths.astype("<f4").tobytes() + dmap.mask.astype(np.uint8).tobytes()
    Path(path).write_bytes(head + body)


def load_dmap(path) -> DeformationMap:
    data = Path(path).read_bytes()
    if len(data) < 4 or data[:4] != _DMAP_MAGIC:
        raise DmapFormatError("bad magic")
    if len(data) < 13:
        raise DmapFormatError("truncated header")
    version = data[4]
    if version != _DMAP_VERSION:
        raise DmapFormatError(f"unsupported version {version}")
    width, height = struct.unpack("<II", data[5:13])
    if width < 1 or height < 1:
        raise DmapFormatError("invalid dimensions")
    n = width * height
    depth_bytes = data[13 : 13 + 4 * n]
    if len(depth_bytes) < 4 * n:
        raise DmapFormatError("truncated depth payload")
    mask_bytes = data[13 + 4 * n : 13 + 5 * n]
    if len(mask_bytes) < n:
        raise DmapFormatError("truncated mask payload")
    if len(data) > 13 + 5 * n:
        raise DmapFormatError("unexpected trailing bytes")
    mask_vals = np.frombuffer(mask_bytes, dtype=np.uint8)
    if not np.all((mask_vals == 0) | (mask_vals == 1)):
        raise DmapFormatError("invalid mask byte")
    depths = np.frombuffer(depth_bytes, dtype="<f4").reshape(height, width)
    return DeformationMap(depths, mask_vals.reshape(height, width).astype(bool))
