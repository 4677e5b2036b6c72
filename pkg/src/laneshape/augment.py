"""Training-time augmentation: horizontal flip and uniform scale.

Both transforms move the image and the ground-truth polylines together so
the pair stays consistent; flipping also reverses the left-to-right lane
order.  Scale 1.0 and double flips are exact identities on coordinates.
"""

from __future__ import annotations

import numpy as np

from .geometry import LanePolyline
from .matching import GroundTruthItem, GroundTruthSet


def _real_and_padding(gts: GroundTruthSet):
    real = [it for it in gts.items if it.is_lane]
    pad = [it for it in gts.items if not it.is_lane]
    return real, pad


def flip_horizontal(image: np.ndarray,
                    gts: GroundTruthSet) -> tuple[np.ndarray, GroundTruthSet]:
    """Mirror about the vertical center line; lane order reverses."""
    w = image.shape[1]
    real, pad = _real_and_padding(gts)
    flipped = []
    for it in reversed(real):
        pts = it.polyline.points.copy()
        pts[:, 0] = (w - 1) - pts[:, 0]
        flipped.append(GroundTruthItem(True, LanePolyline(pts), it.alpha, it.beta))
    return np.ascontiguousarray(image[:, ::-1]), GroundTruthSet(tuple(flipped + pad))


def scale_uniform(image: np.ndarray, gts: GroundTruthSet,
                  factor: float) -> tuple[np.ndarray, GroundTruthSet]:
    """Resample the image by `factor` and scale polyline coordinates with it."""
    if factor <= 0:
        raise ValueError("scale factor must be positive")
    if factor == 1.0:
        return image, gts
    h, w = image.shape
    new_h, new_w = max(1, round(h * factor)), max(1, round(w * factor))
    image_scaled = _resize_bilinear(image, new_h, new_w)
    real, pad = _real_and_padding(gts)
    scaled = []
    for it in real:
        pts = it.polyline.points * factor
        scaled.append(GroundTruthItem(True, LanePolyline(pts), it.alpha, it.beta))
    return image_scaled, GroundTruthSet(tuple(scaled + pad))


def _resize_bilinear(image: np.ndarray, new_h: int, new_w: int) -> np.ndarray:
    h, w = image.shape
    src = image.astype(np.float64)
    ys = (np.arange(new_h) + 0.5) * h / new_h - 0.5
    xs = (np.arange(new_w) + 0.5) * w / new_w - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    x1 = np.clip(x0 + 1, 0, w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)[:, None]
    wx = np.clip(xs - x0, 0.0, 1.0)[None, :]
    top = src[np.ix_(y0, x0)] * (1 - wx) + src[np.ix_(y0, x1)] * wx
    bot = src[np.ix_(y1, x0)] * (1 - wx) + src[np.ix_(y1, x1)] * wx
    out = top * (1 - wy) + bot * wy
    if image.dtype == np.uint8:
        return np.clip(np.rint(out), 0, 255).astype(np.uint8)
    return out.astype(image.dtype)
