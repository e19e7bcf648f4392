"""Raw-reading differencing: amplified difference images and HSV delta fields.

The amplified difference image ("imprint") is computed on raw RGB channel
values in real arithmetic, clipped to [0, 255], then rounded half-up to
8 bits.  The HSV delta field is the per-pixel feature bundle consumed by
depth calibration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imaging import HsvImage, RgbImage, hue_delta, quantize_channels, rgb_to_hsv


@dataclass(frozen=True)
class ImprintParams:
    """Amplification ``alpha`` and offset ``beta`` (default 255/2)."""

    alpha: float = 5.0
    beta: float = 127.5

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")


def augmented_imprint(ref: RgbImage, contact: RgbImage, params: ImprintParams | None = None) -> RgbImage:
    """Per channel: clip(alpha * (contact - ref) + beta, 0, 255), rounded half-up."""
    if params is None:
        params = ImprintParams()
    if (ref.height, ref.width) != (contact.height, contact.width):
        raise ValueError("reference and contact images differ in size")
    diff = contact.pixels.astype(np.float64) - ref.pixels.astype(np.float64)
    return RgbImage(quantize_channels(params.alpha * diff + params.beta))


@dataclass(frozen=True)
class ColorDeltaField:
    """Per-pixel (dH, dS, dV) between two readings plus normalized coordinates.

    ``dh`` is the minimal signed hue difference in degrees, ``ds``/``dv`` are
    plain differences; ``u``/``v`` are column/row positions normalized to
    [0, 1].
    """

    dh: np.ndarray
    ds: np.ndarray
    dv: np.ndarray
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        shape = self.dh.shape
        for name in ("ds", "dv", "u", "v"):
            if getattr(self, name).shape != shape:
                raise ValueError("delta-field channels must share one shape")
        if np.abs(self.dh).max(initial=0.0) > 180.0:
            raise ValueError("hue deltas must lie in [-180, 180]")
        if np.abs(self.ds).max(initial=0.0) > 1.0 or np.abs(self.dv).max(initial=0.0) > 1.0:
            raise ValueError("saturation/value deltas must lie in [-1, 1]")

    @property
    def width(self) -> int:
        return self.dh.shape[1]

    @property
    def height(self) -> int:
        return self.dh.shape[0]

    def feature_rows(self, mask=None):
        """Stack (dH, dS, dV, u, v) into an (N, 5) row matrix.

        ``mask`` selects pixels; all pixels in row-major order when omitted.
        """
        channels = (self.dh, self.ds, self.dv, self.u, self.v)
        if mask is None:
            return np.stack([c.ravel() for c in channels], axis=1)
        return np.stack([c[mask] for c in channels], axis=1)


def color_delta(ref: RgbImage, contact: RgbImage) -> ColorDeltaField:
    """HSV change from ``ref`` to ``contact`` with hue wrap handled."""
    if (ref.height, ref.width) != (contact.height, contact.width):
        raise ValueError("reference and contact images differ in size")
    hsv_ref = rgb_to_hsv(ref)
    hsv_con = rgb_to_hsv(contact)
    dh = hue_delta(hsv_con.hue, hsv_ref.hue)
    ds = hsv_con.saturation - hsv_ref.saturation
    dv = hsv_con.value - hsv_ref.value
    u_axis = np.arange(ref.width, dtype=np.float64) / max(ref.width - 1, 1)
    v_axis = np.arange(ref.height, dtype=np.float64) / max(ref.height - 1, 1)
    u, v = np.meshgrid(u_axis, v_axis)
    return ColorDeltaField(dh=dh, ds=ds, dv=dv, u=u, v=v)
