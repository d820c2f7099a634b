"""Annotation formats and dataset bookkeeping.

Covers VOC XML parsing, YOLO label text emission/parsing, class code
remapping for merged external datasets, the deterministic train/val
split, per-folder distribution statistics, and the line-delimited JSON
manifest that the CLI passes between stages.

VOC coordinates are taken as-is (no 1-based/inclusive adjustment); the
sub-pixel difference is immaterial at detection scale and keeps the
YOLO round-trip exact to quantization.
"""

from __future__ import annotations

import json
import logging
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence, TextIO

from .seeding import mix64, stable_id_hash
from .types import Annotation, Box, DamageClass, ImageRecord, Split, group_by_folder

logger = logging.getLogger(__name__)


class VocParseError(ValueError):
    """Malformed VOC XML; carries the (line, column) position when known."""

    def __init__(self, message: str, position: tuple[int, int] | None = None):
        if position is not None:
            message = f"{message} (line {position[0]}, column {position[1]})"
        super().__init__(message)
        self.position = position


class YoloParseError(ValueError):
    """Bad YOLO label line; carries the zero-based line index."""

    def __init__(self, message: str, line_index: int):
        super().__init__(f"line {line_index}: {message}")
        self.line_index = line_index


@dataclass(frozen=True)
class VocParseResult:
    """Annotations plus bookkeeping about what was dropped."""

    annotations: tuple[Annotation, ...]
    image_dims: tuple[int, int]
    skipped: int = 0
    skipped_names: tuple[str, ...] = ()
    object_errors: tuple[str, ...] = ()


def parse_voc(xml_text: str, image_dims: tuple[int, int] | None = None) -> VocParseResult:
    """Parse one VOC XML document into in-bounds annotations.

    Objects whose ``<name>`` is not one of the four damage classes are
    skipped and counted.  Boxes are clamped to the image rectangle.
    Inverted boxes are skipped per object with an error message rather
    than failing the whole file.
    """
    try:
        root = ET.fromstring(xml_text)
    except ET.ParseError as exc:
        raise VocParseError(f"malformed XML: {exc.msg if hasattr(exc, 'msg') else exc}",
                            getattr(exc, "position", None)) from exc

    if image_dims is None:
        size = root.find("size")
        if size is None or size.find("width") is None or size.find("height") is None:
            raise VocParseError("missing <size> element and no image_dims given")
        image_dims = (int(size.find("width").text), int(size.find("height").text))
    width, height = image_dims
    if width <= 0 or height <= 0:
        raise VocParseError(f"non-positive image dims {width}x{height}")

    annotations: list[Annotation] = []
    skipped = 0
    skipped_names: list[str] = []
    object_errors: list[str] = []
    for index, obj in enumerate(root.iter("object")):
        name_el = obj.find("name")
        box_el = obj.find("bndbox")
        if name_el is None or name_el.text is None or box_el is None:
            object_errors.append(f"object {index}: missing <name> or <bndbox>")
            continue
        name = name_el.text.strip()
        try:
            cls = DamageClass.from_name(name)
        except ValueError:
            skipped += 1
            skipped_names.append(name)
            continue
        try:
            coords = {tag: float(box_el.find(tag).text) for tag in ("xmin", "ymin", "xmax", "ymax")}
        except (TypeError, AttributeError, ValueError):
            object_errors.append(f"object {index} ({name}): unreadable <bndbox>")
            continue
        if coords["xmin"] > coords["xmax"] or coords["ymin"] > coords["ymax"]:
            object_errors.append(
                f"object {index} ({name}): inverted bndbox "
                f"({coords['xmin']}, {coords['ymin']}, {coords['xmax']}, {coords['ymax']})"
            )
            continue
        box = Box(coords["xmin"], coords["ymin"], coords["xmax"], coords["ymax"]).clamped(width, height)
        annotations.append(Annotation(cls, box))
    return VocParseResult(
        annotations=tuple(annotations),
        image_dims=image_dims,
        skipped=skipped,
        skipped_names=tuple(skipped_names),
        object_errors=tuple(object_errors),
    )


def write_yolo(annotations: Sequence[Annotation], image_dims: tuple[int, int]) -> list[str]:
    """Emit YOLO label lines: ``cls cx cy w h`` normalized, 6 decimals.

    Zero-area boxes produce no line; a warning is logged for each.
    """
    width, height = image_dims
    lines: list[str] = []
    for ann in annotations:
        box = ann.box
        if box.width <= 0 or box.height <= 0:
            logger.warning("zero-area box %s omitted from YOLO output", box.as_tuple())
            continue
        cx = (box.x_min + box.x_max) / 2.0 / width
        cy = (box.y_min + box.y_max) / 2.0 / height
        w = box.width / width
        h = box.height / height
        lines.append(f"{int(ann.cls)} {cx:.6f} {cy:.6f} {w:.6f} {h:.6f}")
    return lines


def format_voc(rec: ImageRecord) -> str:
    """Render a record as a VOC XML document with integer box corners."""
    objects = []
    for ann in rec.annotations:
        b = ann.box
        objects.append(
            "  <object>\n"
            f"    <name>{ann.cls.name}</name>\n"
            "    <bndbox>\n"
            f"      <xmin>{int(round(b.x_min))}</xmin>\n"
            f"      <ymin>{int(round(b.y_min))}</ymin>\n"
            f"      <xmax>{int(round(b.x_max))}</xmax>\n"
            f"      <ymax>{int(round(b.y_max))}</ymax>\n"
            "    </bndbox>\n"
            "  </object>\n"
        )
    return (
        "<annotation>\n"
        f"  <folder>{rec.folder}</folder>\n"
        f"  <filename>{rec.id}.jpg</filename>\n"
        "  <size>\n"
        f"    <width>{rec.width}</width>\n"
        f"    <height>{rec.height}</height>\n"
        "    <depth>3</depth>\n"
        "  </size>\n" + "".join(objects) + "</annotation>\n"
    )


def parse_yolo(lines: Iterable[str], image_dims: tuple[int, int]) -> list[Annotation]:
    """Parse YOLO label lines back into pixel-space annotations.

    Inverse of :func:`write_yolo` up to the 6-decimal quantization
    (under 0.5 px per coordinate at dataset image sizes).
    """
    width, height = image_dims
    annotations: list[Annotation] = []
    for index, raw in enumerate(lines):
        line = raw.strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) != 5:
            raise YoloParseError(f"expected 5 fields, got {len(fields)}", index)
        try:
            cls_code = int(fields[0])
            cx, cy, w, h = (float(v) for v in fields[1:])
        except ValueError as exc:
            raise YoloParseError(f"unparseable value ({exc})", index) from exc
        try:
            cls = DamageClass(cls_code)
        except ValueError:
            raise YoloParseError(f"class code {cls_code} not in 0..3", index) from None
        for name, value in (("cx", cx), ("cy", cy), ("w", w), ("h", h)):
            if not 0.0 <= value <= 1.0:
                raise YoloParseError(f"{name} out of range [0,1]: {value}", index)
        box = Box.normalized(
            (cx - w / 2.0) * width,
            (cy - h / 2.0) * height,
            (cx + w / 2.0) * width,
            (cy + h / 2.0) * height,
        ).clamped(width, height)
        annotations.append(Annotation(cls, box))
    return annotations


@dataclass(frozen=True)
class ClassRemap:
    """Maps external integer class codes onto internal damage classes."""

    mapping: Mapping[int, DamageClass]

    @classmethod
    def pothole_dataset(cls) -> "ClassRemap":
        """The external single-class pothole set: its code 0 is a pothole."""
        return cls({0: DamageClass.D40})

    @classmethod
    def identity(cls) -> "ClassRemap":
        return cls({int(c): c for c in DamageClass})


def remap_classes(annotations: Sequence[Annotation], remap: ClassRemap) -> list[Annotation]:
    """Replace class codes through ``remap``; boxes are untouched."""
    out: list[Annotation] = []
    for ann in annotations:
        code = int(ann.cls)
        try:
            new_cls = remap.mapping[code]
        except KeyError:
            raise ValueError(f"unmapped code {code}") from None
        out.append(Annotation(new_cls, ann.box))
    return out


def split_dataset(
    records: Sequence[ImageRecord],
    val_fraction: float,
    seed: int,
    no_test_folders: frozenset[str] | set[str] = frozenset(),
) -> list[ImageRecord]:
    """Assign train/val splits per folder, deterministically.

    Selection depends only on ``(seed, image id)``: images are ranked by
    a stable per-id hash and the lowest-ranked ``round(n * val_fraction)``
    (at least 1 when the folder has 2+ images, at most n - 1) go to val.
    Folders named in ``no_test_folders`` go entirely to train.  Records
    already marked test keep their split.
    """
    if not 0.0 < val_fraction < 1.0:
        raise ValueError(f"val_fraction must be in (0,1), got {val_fraction}")
    assigned: dict[str, Split] = {}
    for folder, members in group_by_folder(records).items():
        eligible = [r for r in members if r.split is not Split.TEST]
        if folder in no_test_folders:
            for rec in eligible:
                assigned[rec.id] = Split.TRAIN
            continue
        n = len(eligible)
        if n == 0:
            continue
        if n == 1:
            n_val = 0
        else:
            n_val = min(n - 1, max(1, int(n * val_fraction + 0.5)))
        ranked = sorted(eligible, key=lambda r: (mix64(seed, stable_id_hash(r.id)), r.id))
        for rank, rec in enumerate(ranked):
            assigned[rec.id] = Split.VAL if rank < n_val else Split.TRAIN
    return [rec.with_split(assigned[rec.id]) if rec.id in assigned else rec for rec in records]


@dataclass(frozen=True)
class DistributionReport:
    """Per-folder class counts plus image/label totals."""

    class_counts: Mapping[str, tuple[int, int, int, int]]  # folder -> counts by class code
    image_counts: Mapping[str, int]

    def label_count(self, folder: str) -> int:
        return sum(self.class_counts[folder])

    def total_labels(self) -> int:
        return sum(sum(counts) for counts in self.class_counts.values())

    def total_images(self) -> int:
        return sum(self.image_counts.values())

    def validate(self) -> None:
        # label totals must equal the sum of the four class counts
        for folder, counts in self.class_counts.items():
            if len(counts) != len(DamageClass):
                raise AssertionError(f"folder {folder!r}: expected 4 class counts, got {len(counts)}")

    def histogram_data(self) -> tuple[list[str], dict[str, list[int]]]:
        """(folders, {class name -> counts per folder}) ready for plotting."""
        folders = sorted(self.class_counts)
        series = {
            cls.name: [self.class_counts[f][int(cls)] for f in folders] for cls in DamageClass
        }
        return folders, series


def distribution_stats(records: Sequence[ImageRecord]) -> DistributionReport:
    """Exact per-(folder, class) label counts and per-folder image counts."""
    class_counts: dict[str, list[int]] = {}
    image_counts: dict[str, int] = {}
    for rec in records:
        counts = class_counts.setdefault(rec.folder, [0, 0, 0, 0])
        image_counts[rec.folder] = image_counts.get(rec.folder, 0) + 1
        for ann in rec.annotations:
            counts[int(ann.cls)] += 1
    report = DistributionReport(
        class_counts={f: tuple(c) for f, c in class_counts.items()},
        image_counts=dict(image_counts),
    )
    report.validate()
    return report


def write_stats_csv(report: DistributionReport, stream: TextIO) -> None:
    """CSV rows ``folder,class,count`` with per-folder and grand totals."""
    stream.write("folder,class,count\n")
    for folder in sorted(report.class_counts):
        counts = report.class_counts[folder]
        for cls in DamageClass:
            stream.write(f"{folder},{cls.name},{counts[int(cls)]}\n")
        stream.write(f"{folder},total,{sum(counts)}\n")
    stream.write(f"all,total,{report.total_labels()}\n")


# --- manifest persistence (line-delimited JSON) ---


def record_to_json(rec: ImageRecord) -> str:
    payload = {
        "id": rec.id,
        "folder": rec.folder,
        "width": rec.width,
        "height": rec.height,
        "split": rec.split.value,
        "annotations": [
            {"cls": int(a.cls), "box": list(a.box.as_tuple())} for a in rec.annotations
        ],
    }
    return json.dumps(payload, separators=(",", ":"))


def record_from_json(line: str) -> ImageRecord:
    try:
        payload = json.loads(line)
        annotations = tuple(
            Annotation(DamageClass(a["cls"]), Box(*a["box"])) for a in payload["annotations"]
        )
        return ImageRecord(
            id=payload["id"],
            folder=payload["folder"],
            width=payload["width"],
            height=payload["height"],
            annotations=annotations,
            split=Split(payload.get("split", "unassigned")),
        )
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"bad manifest record: {exc}") from exc


def write_manifest(records: Iterable[ImageRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(record_to_json(rec) + "\n")


def read_manifest(path: str | Path) -> list[ImageRecord]:
    records: list[ImageRecord] = []
    with open(path, "r", encoding="utf-8") as fh:
        for index, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(record_from_json(line))
            except ValueError as exc:
                raise ValueError(f"line {index}: {exc}") from exc
    return records
