"""Coordinate transforms: IoU, crop-region mapping, size dispatch.

The crop path mirrors the large-image handling of the dataset: a square
region anchored at the lower-left corner is cut out, annotations are
clipped into it, and predicted boxes are later translated back into the
original frame.  Region origins are integers, which makes crop followed
by remap an exact identity on in-region boxes (see tests).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Sequence

from .types import Annotation, Box, Detection, Frame


@dataclass(frozen=True)
class CropRegion:
    """Square region inside an original image, origin in integer pixels."""

    x0: int
    y0: int
    size: int

    def __post_init__(self) -> None:
        if self.size <= 0:
            raise ValueError(f"region size must be positive, got {self.size}")
        if self.x0 < 0 or self.y0 < 0:
            raise ValueError(f"region origin must be non-negative, got ({self.x0}, {self.y0})")

    @property
    def x1(self) -> int:
        return self.x0 + self.size

    @property
    def y1(self) -> int:
        return self.y0 + self.size


@dataclass(frozen=True)
class RetainPolicy:
    """When to keep a box that was clipped at a region boundary.

    A clipped box survives iff its remaining area is at least
    ``min_area_ratio`` of the original area and both sides are at least
    ``min_side`` pixels.
    """

    min_area_ratio: float = 0.20
    min_side: float = 2.0

    def keeps(self, original: Box, clipped: Box) -> bool:
        orig_area = original.area()
        if orig_area <= 0.0:
            return False
        if clipped.area() < self.min_area_ratio * orig_area:
            return False
        return min(clipped.width, clipped.height) >= self.min_side


@dataclass(frozen=True)
class ClipOutcome:
    """Result of clipping a set of annotations into a region."""

    kept: tuple[Annotation, ...]
    dropped: int
    modified: int


def iou(a: Box, b: Box) -> float:
    """Intersection over union of two boxes; 0 when the union is empty."""
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0.0 or iy <= 0.0:
        inter = 0.0
    else:
        inter = ix * iy
    union = a.area() + b.area() - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def is_large(image_dims: tuple[int, int], thresholds: tuple[int, int] = (1824, 1824)) -> bool:
    """True iff both dimensions strictly exceed their thresholds."""
    width, height = image_dims
    return width > thresholds[0] and height > thresholds[1]


def lower_left_region(image_dims: tuple[int, int], size: int) -> CropRegion:
    """The size x size square in the lower-left corner of the image."""
    width, height = image_dims
    if width < size or height < size:
        raise ValueError(f"image {width}x{height} smaller than crop size {size}")
    return CropRegion(x0=0, y0=height - size, size=size)


def _clip_box(box: Box, x0: float, y0: float, x1: float, y1: float) -> Box | None:
    """Intersect ``box`` with a rectangle; None when the overlap is empty."""
    cx0 = max(box.x_min, x0)
    cy0 = max(box.y_min, y0)
    cx1 = min(box.x_max, x1)
    cy1 = min(box.y_max, y1)
    if cx0 >= cx1 or cy0 >= cy1:
        return None
    return Box(cx0, cy0, cx1, cy1)


def crop_annotations(
    annotations: Sequence[Annotation],
    region: CropRegion,
    retain_policy: RetainPolicy | None = None,
) -> ClipOutcome:
    """Clip annotations into ``region`` and translate them to region-local coordinates.

    Boxes outside the region, or clipped below the retain policy, are
    dropped.  ``kept + dropped`` always equals the input count;
    ``modified`` counts kept boxes whose shape changed.
    """
    policy = retain_policy or RetainPolicy()
    kept: list[Annotation] = []
    dropped = 0
    modified = 0
    for ann in annotations:
        clipped = _clip_box(ann.box, region.x0, region.y0, region.x1, region.y1)
        if clipped is None:
            dropped += 1
            continue
        changed = clipped != ann.box
        if changed and not policy.keeps(ann.box, clipped):
            dropped += 1
            continue
        if changed:
            modified += 1
        kept.append(Annotation(ann.cls, clipped.translated(-region.x0, -region.y0)))
    return ClipOutcome(kept=tuple(kept), dropped=dropped, modified=modified)


def clip_to_bounds(
    annotations: Sequence[Annotation],
    width: float,
    height: float,
    retain_policy: RetainPolicy | None = None,
) -> ClipOutcome:
    """Clip annotations to the image rectangle without any translation."""
    policy = retain_policy or RetainPolicy()
    kept: list[Annotation] = []
    dropped = 0
    modified = 0
    for ann in annotations:
        clipped = _clip_box(ann.box, 0.0, 0.0, width, height)
        if clipped is None:
            dropped += 1
            continue
        changed = clipped != ann.box
        if changed and not policy.keeps(ann.box, clipped):
            dropped += 1
            continue
        if changed:
            modified += 1
        kept.append(Annotation(ann.cls, clipped))
    return ClipOutcome(kept=tuple(kept), dropped=dropped, modified=modified)


def remap_to_original(
    det: Detection,
    region: CropRegion,
    image_dims: tuple[int, int] | None = None,
) -> Detection:
    """Translate a cropped-frame detection back into the original frame.

    Inverse of the crop translation.  When ``image_dims`` is given the
    result is clamped to the original image rectangle.
    """
    if det.frame is not Frame.CROPPED:
        raise ValueError(f"detection for {det.image_id!r} is in frame {det.frame.value}, expected cropped")
    box = det.box.translated(region.x0, region.y0)
    if image_dims is not None:
        box = box.clamped(image_dims[0], image_dims[1])
    return replace(det, box=box, frame=Frame.ORIGINAL)


def scaled_label_size(
    image_dims: tuple[float, float],
    box_dims: tuple[float, float],
    target: tuple[float, float],
) -> tuple[float, float]:
    """Size of a label after resizing the whole image to ``target`` dims."""
    img_w, img_h = image_dims
    box_w, box_h = box_dims
    if img_w <= 0 or img_h <= 0 or target[0] <= 0 or target[1] <= 0:
        raise ValueError("dimensions must be positive")
    return (box_w * target[0] / img_w, box_h * target[1] / img_h)


def partition_by_size(
    dims: Iterable[tuple[str, tuple[int, int]]],
    thresholds: tuple[int, int],
) -> tuple[list[str], list[str]]:
    """Split (id, dims) pairs into (large_ids, normal_ids) preserving order."""
    large: list[str] = []
    normal: list[str] = []
    for image_id, d in dims:
        (large if is_large(d, thresholds) else normal).append(image_id)
    return large, normal
