"""Log-polar resampling: rotation becomes circular translation.

A 2-D image is sampled on rings about a center point: angular position
``i`` sits at angle ``2*pi*i / angular_bins`` and ring ``j`` at radius
``R * a**j`` (outermost first).  The resulting tensor has one channel per
ring and a circular angular axis, so rotating the image by one angular
step translates the tensor by one position along that axis.

Angles are measured from the +x (column) axis toward +y (row) axis; with
rows growing downward this is clockwise on screen.  All interpolation is
bilinear with zero outside the image.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .circular import CircularTensor
from .errors import ConfigError, ShapeError

RADIAL_GRIDS = ("geometric", "linear")


@dataclass(frozen=True)
class PolarGridSpec:
    """Sampling grid for the polar transform.

    ``center`` is ``(x, y)`` in pixel coordinates (column, row); defaults
    to the image center.  ``radial_grid`` selects radii ``R * a**j``
    (geometric, strictly decreasing from R) or ``j * R / radial_bins``
    (linear, increasing from 0).
    """

    angular_bins: int = 36
    radial_bins: int = 36
    radius: float = 112.0
    decay: float = 0.92
    center: tuple[float, float] | None = None
    radial_grid: str = "geometric"

    def __post_init__(self):
        if self.angular_bins < 2:
            raise ConfigError("angular_bins must be >= 2")
        if self.radial_bins < 1:
            raise ConfigError("radial_bins must be >= 1")
        if self.radius <= 0:
            raise ConfigError("radius must be positive")
        if not 0.0 < self.decay < 1.0:
            raise ConfigError("decay must lie in (0, 1)")
        if self.radial_grid not in RADIAL_GRIDS:
            raise ConfigError(f"radial_grid must be one of {RADIAL_GRIDS}")

    def radii(self) -> np.ndarray:
        j = np.arange(self.radial_bins)
        if self.radial_grid == "geometric":
            return self.radius * self.decay**j
        return j * self.radius / self.radial_bins

    def angles(self) -> np.ndarray:
        return 2.0 * np.pi * np.arange(self.angular_bins) / self.angular_bins

    def center_for(self, image_shape: tuple[int, int]) -> tuple[float, float]:
        if self.center is not None:
            return self.center
        h, w = image_shape
        return ((w - 1) / 2.0, (h - 1) / 2.0)

    @property
    def degrees_per_bin(self) -> float:
        return 360.0 / self.angular_bins


def _as_image(image) -> np.ndarray:
    if isinstance(image, CircularTensor):
        image = image.values
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"expected a 2-D image, got shape {arr.shape}")
    return arr


def bilinear_sample(image: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Bilinear interpolation at (row, col) points; zero outside the image."""
    h, w = image.shape
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    wy = ys - y0
    wx = xs - x0
    out = np.zeros(ys.shape)
    for dy, dx, weight in (
        (0, 0, (1 - wy) * (1 - wx)),
        (0, 1, (1 - wy) * wx),
        (1, 0, wy * (1 - wx)),
        (1, 1, wy * wx),
    ):
        yy = y0 + dy
        xx = x0 + dx
        valid = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        vals = np.where(valid, image[np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)], 0.0)
        out += weight * vals
    return out


def to_polar(image, spec: PolarGridSpec) -> np.ndarray:
    """Sample the image onto the polar grid.

    Returns a ``(radial_bins, angular_bins)`` stack: one channel per ring,
    circular along the angular axis.  Raises if the outer radius cannot
    reach the image at all from the center.
    """
    img = _as_image(image)
    h, w = img.shape
    cx, cy = spec.center_for((h, w))
    corner_dist = max(
        np.hypot(cx - x, cy - y) for x in (0.0, w - 1.0) for y in (0.0, h - 1.0)
    )
    if spec.radius > corner_dist:
        raise ConfigError(
            f"outer radius {spec.radius} exceeds the farthest image corner "
            f"({corner_dist:.2f} px from center ({cx}, {cy}))"
        )
    angles = spec.angles()
    radii = spec.radii()
    xs = cx + radii[:, None] * np.cos(angles)[None, :]
    ys = cy + radii[:, None] * np.sin(angles)[None, :]
    return bilinear_sample(img, ys, xs)


def rotate_image(image, degrees: float, center: tuple[float, float] | None = None) -> np.ndarray:
    """Rotate about the center by inverse mapping with bilinear sampling.

    Positive angles rotate in the same direction as increasing polar
    angle, so rotating by ``k * 360 / angular_bins`` degrees translates
    the polar tensor by ``k`` angular positions.
    """
    img = _as_image(image)
    h, w = img.shape
    if center is None:
        cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    else:
        cx, cy = center
    theta = np.deg2rad(degrees)
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    yy, xx = np.mgrid[0:h, 0:w]
    dx = xx - cx
    dy = yy - cy
    src_x = cx + cos_t * dx + sin_t * dy
    src_y = cy - sin_t * dx + cos_t * dy
    return bilinear_sample(img, src_y, src_x)
