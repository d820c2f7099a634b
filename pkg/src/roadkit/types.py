"""Core value types shared by every pipeline stage.

Coordinate convention: continuous pixels, origin at the top-left corner,
y grows downward.  Box width is ``x_max - x_min`` with no inclusive-pixel
adjustment.  All types are immutable and safe to share between workers.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Iterable


class DamageClass(enum.IntEnum):
    """The four damage categories with stable integer codes."""

    D00 = 0  # vertical (longitudinal) crack
    D10 = 1  # traversal crack
    D20 = 2  # alligator crack
    D40 = 3  # pothole

    @classmethod
    def from_name(cls, name: str) -> "DamageClass":
        try:
            return cls[name]
        except KeyError:
            raise ValueError(f"unknown damage class name {name!r}") from None

    @classmethod
    def names(cls) -> list[str]:
        return [c.name for c in cls]


class Split(str, enum.Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"
    UNASSIGNED = "unassigned"


class Frame(str, enum.Enum):
    """Which coordinate frame a detection's box lives in."""

    ORIGINAL = "original"
    CROPPED = "cropped"
    LETTERBOXED = "letterboxed"


@dataclass(frozen=True)
class Box:
    """Axis-aligned box in pixel coordinates with x_min <= x_max, y_min <= y_max."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self) -> None:
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValueError(
                f"inverted box: ({self.x_min}, {self.y_min}, {self.x_max}, {self.y_max})"
            )

    @classmethod
    def normalized(cls, x1: float, y1: float, x2: float, y2: float) -> "Box":
        """Build a box from unordered corner coordinates."""
        return cls(min(x1, x2), min(y1, y2), max(x1, x2), max(y1, y2))

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    def area(self) -> float:
        return max(0.0, self.width) * max(0.0, self.height)

    def clamped(self, width: float, height: float) -> "Box":
        """Clip to the rectangle [0, width] x [0, height]."""
        clip = lambda v, hi: min(max(v, 0.0), hi)  # noqa: E731
        return Box(
            clip(self.x_min, width),
            clip(self.y_min, height),
            clip(self.x_max, width),
            clip(self.y_max, height),
        )

    def translated(self, dx: float, dy: float) -> "Box":
        return Box(self.x_min + dx, self.y_min + dy, self.x_max + dx, self.y_max + dy)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)


@dataclass(frozen=True)
class Annotation:
    """One labeled damage instance."""

    cls: DamageClass
    box: Box


@dataclass(frozen=True)
class ImageRecord:
    """Image metadata plus its annotations; no pixel data."""

    id: str
    folder: str
    width: int
    height: int
    annotations: tuple[Annotation, ...] = ()
    split: Split = Split.UNASSIGNED

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"image {self.id!r}: non-positive dims {self.width}x{self.height}")
        object.__setattr__(self, "annotations", tuple(self.annotations))
        for ann in self.annotations:
            b = ann.box
            if b.x_min < 0 or b.y_min < 0 or b.x_max > self.width or b.y_max > self.height:
                raise ValueError(
                    f"image {self.id!r}: annotation box {b.as_tuple()} outside "
                    f"[0,{self.width}]x[0,{self.height}]"
                )

    def with_split(self, split: Split) -> "ImageRecord":
        return replace(self, split=split)


@dataclass(frozen=True)
class Detection:
    """Predicted box with class and confidence, traceable to an image."""

    cls: DamageClass
    box: Box
    confidence: float
    image_id: str
    frame: Frame = Frame.ORIGINAL

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")


@dataclass(frozen=True)
class PipelineConfig:
    """Every tunable of the preparation and inference pipeline.

    ``batch_large``/``batch_normal`` follow the batch-pair convention where
    the first number is the batch size for large images.  ``conf_normal``
    and ``conf_large`` are the per-path confidence floors.
    """

    crop_size: int = 1824
    large_min_width: int = 1824  # strict >, both dims, for the large-image path
    large_min_height: int = 1824
    batch_large: int = 12
    batch_normal: int = 24
    conf_normal: float = 0.50
    conf_large: float = 0.35
    nms_iou: float = 0.45
    tta_enabled: bool = False
    seed: int = 0


def validate_config(cfg: PipelineConfig) -> list[str]:
    """Return a description of every violated config invariant (empty = valid)."""
    problems: list[str] = []
    if cfg.crop_size <= 0:
        problems.append("crop_size not positive")
    elif cfg.crop_size % 32 != 0:
        problems.append("crop_size not multiple of 32")
    if cfg.large_min_width <= 0:
        problems.append("large_min_width not positive")
    if cfg.large_min_height <= 0:
        problems.append("large_min_height not positive")
    if cfg.batch_large < 1:
        problems.append("batch_large not positive")
    if cfg.batch_normal < 1:
        problems.append("batch_normal not positive")
    for name in ("conf_normal", "conf_large", "nms_iou"):
        value = getattr(cfg, name)
        if not 0.0 < value < 1.0:
            problems.append(f"{name} out of (0,1)")
    if not isinstance(cfg.seed, int) or not -(2**63) <= cfg.seed < 2**64:
        problems.append("seed not a 64-bit integer")
    return problems


def group_by_folder(records: Iterable[ImageRecord]) -> dict[str, list[ImageRecord]]:
    grouped: dict[str, list[ImageRecord]] = {}
    for rec in records:
        grouped.setdefault(rec.folder, []).append(rec)
    return grouped
