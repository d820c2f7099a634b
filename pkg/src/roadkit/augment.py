"""Training-time image and box augmentations with deterministic seeding.

Affine (scale/shear/perspective), 4-image mosaic, mixup blending, and
copy-paste of labeled patches.  Every operation is a pure function of
its inputs and the supplied random generator; derive the generator per
image with :func:`roadkit.seeding.rng_for` so parallel application stays
reproducible.  Classes are never altered by any augmentation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import RetainPolicy, clip_to_bounds, iou
from .types import Annotation, Box, DamageClass

FILL_GRAY = 114  # constant fill for exposed canvas and out-of-image samples


@dataclass(frozen=True)
class AugmentParams:
    """Augmentation magnitudes and probabilities."""

    scale: float = 0.7  # +/- gain around 1.0
    shear: float = 0.01  # +/- degrees
    perspective: float = 0.0001  # +/- fraction
    mosaic_p: float = 0.5
    mixup_p: float = 0.1
    paste_in_p: float = 0.05

    def __post_init__(self) -> None:
        if self.scale < 0:
            raise ValueError("scale gain must be >= 0")
        for name in ("mosaic_p", "mixup_p", "paste_in_p"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be a probability, got {p}")


@dataclass(frozen=True)
class ImageBuffer:
    """Row-major 8-bit RGB pixel grid."""

    data: np.ndarray  # (h, w, 3) uint8

    def __post_init__(self) -> None:
        arr = np.asarray(self.data, dtype=np.uint8)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"expected (h, w, 3) pixels, got shape {arr.shape}")
        object.__setattr__(self, "data", arr)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @classmethod
    def filled(cls, width: int, height: int, value: int = FILL_GRAY) -> "ImageBuffer":
        return cls(np.full((height, width, 3), value, dtype=np.uint8))


def write_ppm(img: ImageBuffer, path: str | Path) -> None:
    """Binary PPM (P6), the bit-exact lossless fixture format."""
    with open(path, "wb") as fh:
        fh.write(f"P6\n{img.width} {img.height}\n255\n".encode("ascii"))
        fh.write(img.data.tobytes())


def read_ppm(path: str | Path) -> ImageBuffer:
    with open(path, "rb") as fh:
        raw = fh.read()
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":  # comment to end of line
            while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        fields.append(raw[start:pos])
    if fields[0] != b"P6" or fields[3] != b"255":
        raise ValueError(f"unsupported PPM header: {fields}")
    width, height = int(fields[1]), int(fields[2])
    pos += 1  # single whitespace after maxval
    pixels = np.frombuffer(raw[pos : pos + width * height * 3], dtype=np.uint8)
    if pixels.size != width * height * 3:
        raise ValueError("truncated PPM pixel data")
    return ImageBuffer(pixels.reshape(height, width, 3).copy())


def _sample_homography(
    width: int, height: int, params: AugmentParams, rng: np.random.Generator
) -> np.ndarray:
    """3x3 map composed about the image center; draw order is fixed."""
    s = max(0.01, rng.uniform(1.0 - params.scale, 1.0 + params.scale))
    shear_x = math.tan(math.radians(rng.uniform(-params.shear, params.shear)))
    shear_y = math.tan(math.radians(rng.uniform(-params.shear, params.shear)))
    px = rng.uniform(-params.perspective, params.perspective)
    py = rng.uniform(-params.perspective, params.perspective)

    cx, cy = width / 2.0, height / 2.0
    to_center = np.array([[1, 0, -cx], [0, 1, -cy], [0, 0, 1]], dtype=np.float64)
    scale = np.array([[s, 0, 0], [0, s, 0], [0, 0, 1]], dtype=np.float64)
    shear = np.array([[1, shear_x, 0], [shear_y, 1, 0], [0, 0, 1]], dtype=np.float64)
    persp = np.array([[1, 0, 0], [0, 1, 0], [px, py, 1]], dtype=np.float64)
    back = np.array([[1, 0, cx], [0, 1, cy], [0, 0, 1]], dtype=np.float64)
    return back @ persp @ shear @ scale @ to_center


def _warp_pixels(img: ImageBuffer, matrix: np.ndarray) -> ImageBuffer:
    """Inverse-map bilinear warp with constant gray fill."""
    h, w = img.height, img.width
    inv = np.linalg.inv(matrix)
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    ones = np.ones_like(xs)
    src = inv @ np.stack([xs.ravel(), ys.ravel(), ones.ravel()])
    sx = src[0] / src[2]
    sy = src[1] / src[2]

    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    fx = sx - x0
    fy = sy - y0
    valid = (x0 >= 0) & (y0 >= 0) & (x0 <= w - 1) & (y0 <= h - 1)
    inside = (x0 >= 0) & (y0 >= 0) & (x0 < w - 1) & (y0 < h - 1)

    data = img.data.astype(np.float64)
    out = np.full((h * w, 3), float(FILL_GRAY))
    ix0 = np.clip(x0, 0, w - 1)
    iy0 = np.clip(y0, 0, h - 1)
    ix1 = np.clip(x0 + 1, 0, w - 1)
    iy1 = np.clip(y0 + 1, 0, h - 1)
    p00 = data[iy0, ix0]
    p01 = data[iy0, ix1]
    p10 = data[iy1, ix0]
    p11 = data[iy1, ix1]
    fx_col = fx[:, None]
    fy_col = fy[:, None]
    blended = (
        p00 * (1 - fx_col) * (1 - fy_col)
        + p01 * fx_col * (1 - fy_col)
        + p10 * (1 - fx_col) * fy_col
        + p11 * fx_col * fy_col
    )
    # on the outer edge only the clamped (nearest) sample is defined
    out[valid] = np.where(inside[valid, None], blended[valid], p00[valid])
    return ImageBuffer(np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8).reshape(h, w, 3))


def _transform_boxes(anns: Sequence[Annotation], matrix: np.ndarray) -> list[Annotation]:
    """Map each box through the homography and take the axis-aligned hull."""
    out: list[Annotation] = []
    for ann in anns:
        b = ann.box
        corners = np.array(
            [
                [b.x_min, b.y_min, 1.0],
                [b.x_max, b.y_min, 1.0],
                [b.x_min, b.y_max, 1.0],
                [b.x_max, b.y_max, 1.0],
            ]
        ).T
        mapped = matrix @ corners
        xs = mapped[0] / mapped[2]
        ys = mapped[1] / mapped[2]
        out.append(Annotation(ann.cls, Box(xs.min(), ys.min(), xs.max(), ys.max())))
    return out


def random_affine(
    img: ImageBuffer,
    anns: Sequence[Annotation],
    params: AugmentParams,
    rng: np.random.Generator,
    retain_policy: RetainPolicy | None = None,
) -> tuple[ImageBuffer, list[Annotation]]:
    """Apply one sampled scale/shear/perspective homography to pixels and boxes."""
    matrix = _sample_homography(img.width, img.height, params, rng)
    if np.allclose(matrix, np.eye(3)):
        return img, list(anns)
    warped = _warp_pixels(img, matrix)
    moved = _transform_boxes(anns, matrix)
    outcome = clip_to_bounds(moved, img.width, img.height, retain_policy)
    return warped, list(outcome.kept)


def _resize_nearest(img: ImageBuffer, width: int, height: int) -> ImageBuffer:
    ys = (np.arange(height) * img.height / height).astype(np.int64)
    xs = (np.arange(width) * img.width / width).astype(np.int64)
    return ImageBuffer(img.data[ys[:, None], xs[None, :]])


def mosaic(
    items: Sequence[tuple[ImageBuffer, Sequence[Annotation]]],
    out_size: int,
    center_jitter: float,
    rng: np.random.Generator,
    retain_policy: RetainPolicy | None = None,
) -> tuple[ImageBuffer, list[Annotation]]:
    """Tile 4 images around a jittered center on a 2S x 2S canvas.

    Each image is resized to exactly fill its quadrant; annotations are
    scaled and translated with it, then clipped to the canvas.  With zero
    jitter and S x S inputs this is an exact quadrant tiling.
    """
    if len(items) != 4:
        raise ValueError(f"mosaic needs exactly 4 inputs, got {len(items)}")
    if not 0.0 <= center_jitter < 1.0:
        raise ValueError("center_jitter must be in [0,1)")
    side = 2 * out_size
    cx = out_size + rng.uniform(-center_jitter, center_jitter) * out_size
    cy = out_size + rng.uniform(-center_jitter, center_jitter) * out_size
    cx = int(min(max(round(cx), 1), side - 1))
    cy = int(min(max(round(cy), 1), side - 1))

    canvas = np.full((side, side, 3), FILL_GRAY, dtype=np.uint8)
    quadrants = (  # (x0, y0, x1, y1) per input, clockwise from top-left
        (0, 0, cx, cy),
        (cx, 0, side, cy),
        (0, cy, cx, side),
        (cx, cy, side, side),
    )
    merged: list[Annotation] = []
    for (img, anns), (x0, y0, x1, y1) in zip(items, quadrants):
        qw, qh = x1 - x0, y1 - y0
        resized = _resize_nearest(img, qw, qh)
        canvas[y0:y1, x0:x1] = resized.data
        sx = qw / img.width
        sy = qh / img.height
        for ann in anns:
            b = ann.box
            merged.append(
                Annotation(
                    ann.cls,
                    Box(b.x_min * sx + x0, b.y_min * sy + y0, b.x_max * sx + x0, b.y_max * sy + y0),
                )
            )
    outcome = clip_to_bounds(merged, side, side, retain_policy)
    return ImageBuffer(canvas), list(outcome.kept)


def mixup(
    a: tuple[ImageBuffer, Sequence[Annotation]],
    b: tuple[ImageBuffer, Sequence[Annotation]],
    lam: float,
) -> tuple[ImageBuffer, list[Annotation]]:
    """Blend pixels by lam and union the annotation lists."""
    img_a, anns_a = a
    img_b, anns_b = b
    if (img_a.width, img_a.height) != (img_b.width, img_b.height):
        raise ValueError(
            f"mixup dims differ: {img_a.width}x{img_a.height} vs {img_b.width}x{img_b.height}"
        )
    blended = img_a.data.astype(np.float64) * lam + img_b.data.astype(np.float64) * (1.0 - lam)
    pixels = np.clip(np.floor(blended + 0.5), 0, 255).astype(np.uint8)
    return ImageBuffer(pixels), list(anns_a) + list(anns_b)


def paste_in(
    dst: tuple[ImageBuffer, Sequence[Annotation]],
    src_patches: Sequence[tuple[ImageBuffer, DamageClass]],
    rng: np.random.Generator,
    max_iou: float = 0.3,
    max_tries: int = 30,
) -> tuple[ImageBuffer, list[Annotation]]:
    """Paste labeled patches at sampled spots that stay clear of other boxes.

    A placement must have IoU < ``max_iou`` with every existing and
    previously pasted box; after ``max_tries`` failures a patch is skipped.
    """
    img, anns = dst
    out = img.data.copy()
    placed = list(anns)
    for patch, cls in src_patches:
        if patch.width >= img.width or patch.height >= img.height:
            raise ValueError(
                f"patch {patch.width}x{patch.height} does not fit inside {img.width}x{img.height}"
            )
        for _ in range(max_tries):
            x = int(rng.integers(0, img.width - patch.width + 1))
            y = int(rng.integers(0, img.height - patch.height + 1))
            candidate = Box(x, y, x + patch.width, y + patch.height)
            if all(iou(candidate, a.box) < max_iou for a in placed):
                out[y : y + patch.height, x : x + patch.width] = patch.data
                placed.append(Annotation(cls, candidate))
                break
    return ImageBuffer(out), placed
