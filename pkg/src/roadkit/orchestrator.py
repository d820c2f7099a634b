"""Inference pipeline: dispatch, batching, remapping, timing.

Images are routed by size: large ones go through a lower-left crop and a
single backend, the rest are letterboxed and run through every
normal-path backend whose outputs are ensemble-fused.  Each path has its
own batch size and confidence floor.  All final boxes are reported in
the original image frame.

Backends are pluggable.  :class:`StubBackend` is a deterministic test
double driven by per-image rules; :class:`OnnxBackend` runs interchange
models exported with the companion export tool.  Results never depend on
batch composition, manifest order, or worker count.
"""

from __future__ import annotations

import json
import logging
import math
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Protocol, Sequence, TextIO

import numpy as np

from .augment import ImageBuffer
from .geometry import CropRegion, is_large, lower_left_region
from .metrics import ensemble_fuse
from .types import (
    Box,
    DamageClass,
    Detection,
    Frame,
    ImageRecord,
    PipelineConfig,
    validate_config,
)

logger = logging.getLogger(__name__)

LETTERBOX_FILL = 114
TTA_SCALE = 0.83  # relative input size of the scaled test-time variant


class BackendError(RuntimeError):
    """A backend could not produce output for an image."""


@dataclass(frozen=True)
class TransformRecord:
    """Every scale/offset between an original image and its prepared form.

    Forward direction (apply) is original -> prepared: optional crop,
    then scale, then padding offsets, then optional horizontal flip.
    ``invert_box`` is the exact algebraic inverse.
    """

    original_width: int
    original_height: int
    prepared_width: int
    prepared_height: int
    crop: CropRegion | None = None
    scale_x: float = 1.0
    scale_y: float = 1.0
    pad_x: float = 0.0
    pad_y: float = 0.0
    hflip: bool = False

    @property
    def is_identity(self) -> bool:
        return (
            self.crop is None
            and self.scale_x == 1.0
            and self.scale_y == 1.0
            and self.pad_x == 0.0
            and self.pad_y == 0.0
            and not self.hflip
        )

    def apply_to_box(self, box: Box) -> Box:
        x1, y1, x2, y2 = box.as_tuple()
        if self.crop is not None:
            x1, x2 = x1 - self.crop.x0, x2 - self.crop.x0
            y1, y2 = y1 - self.crop.y0, y2 - self.crop.y0
        x1, x2 = x1 * self.scale_x + self.pad_x, x2 * self.scale_x + self.pad_x
        y1, y2 = y1 * self.scale_y + self.pad_y, y2 * self.scale_y + self.pad_y
        if self.hflip:
            x1, x2 = self.prepared_width - x2, self.prepared_width - x1
        return Box(x1, y1, x2, y2)

    def invert_box(self, box: Box) -> Box:
        x1, y1, x2, y2 = box.as_tuple()
        if self.hflip:
            x1, x2 = self.prepared_width - x2, self.prepared_width - x1
        x1, x2 = (x1 - self.pad_x) / self.scale_x, (x2 - self.pad_x) / self.scale_x
        y1, y2 = (y1 - self.pad_y) / self.scale_y, (y2 - self.pad_y) / self.scale_y
        if self.crop is not None:
            x1, x2 = x1 + self.crop.x0, x2 + self.crop.x0
            y1, y2 = y1 + self.crop.y0, y2 + self.crop.y0
        return Box(x1, y1, x2, y2)


@dataclass(frozen=True)
class PreparedImage:
    """One image as a backend sees it, with the way back."""

    image_id: str
    width: int
    height: int
    transform: TransformRecord
    large_path: bool
    pixels: np.ndarray | None = None  # (h, w, 3) uint8, only when pixel data flows


class ModelBackend(Protocol):
    """Contract for anything that can predict on prepared images.

    ``predict`` returns one detection list per input, in the prepared
    frame, same order as the batch.  ``deterministic`` declares that
    identical inputs always yield identical outputs.
    """

    name: str
    input_size: int
    deterministic: bool

    def predict(self, batch: Sequence[PreparedImage]) -> list[list[Detection]]: ...


@dataclass(frozen=True)
class StubRule:
    """A canned detection in the original image frame."""

    cls: DamageClass
    box: Box
    confidence: float


@dataclass
class StubBackend:
    """Deterministic backend that projects canned detections into whatever
    frame it is asked to predict in.

    Behaves like a perfect detector for its rule set: rules outside a
    crop disappear, flipped inputs yield flipped boxes.  An optional
    fixed per-call sleep makes batching effects measurable, and ids in
    ``fail_ids`` raise to exercise failure isolation.
    """

    rules: Mapping[str, tuple[StubRule, ...]]
    name: str = "stub"
    input_size: int = 1824
    deterministic: bool = True
    call_overhead_s: float = 0.0
    fail_ids: frozenset[str] = frozenset()

    @classmethod
    def from_seed(
        cls,
        seed: int,
        records: Sequence[ImageRecord],
        max_per_image: int = 4,
        **kwargs: object,
    ) -> "StubBackend":
        """Generate integer-coordinate rules per image from a seed."""
        from .seeding import rng_for

        rules: dict[str, tuple[StubRule, ...]] = {}
        for rec in records:
            rng = rng_for(seed, rec.id)
            n = int(rng.integers(0, max_per_image + 1))
            per_image = []
            for _ in range(n):
                w = int(rng.integers(8, max(9, rec.width // 3)))
                h = int(rng.integers(8, max(9, rec.height // 3)))
                x = int(rng.integers(0, rec.width - w + 1))
                y = int(rng.integers(0, rec.height - h + 1))
                conf = round(float(rng.uniform(0.05, 0.99)), 4)
                klass = DamageClass(int(rng.integers(0, 4)))
                per_image.append(StubRule(klass, Box(x, y, x + w, y + h), conf))
            rules[rec.id] = tuple(per_image)
        return cls(rules=rules, **kwargs)  # type: ignore[arg-type]

    def predict(self, batch: Sequence[PreparedImage]) -> list[list[Detection]]:
        if self.call_overhead_s > 0.0:
            time.sleep(self.call_overhead_s)
        outputs: list[list[Detection]] = []
        for prep in batch:
            if prep.image_id in self.fail_ids:
                raise BackendError(f"injected failure for {prep.image_id!r}")
            frame = Frame.CROPPED if prep.large_path else Frame.LETTERBOXED
            dets: list[Detection] = []
            for rule in self.rules.get(prep.image_id, ()):
                projected = prep.transform.apply_to_box(rule.box)
                clipped = projected.clamped(prep.width, prep.height)
                if clipped.width <= 0.0 or clipped.height <= 0.0:
                    continue  # the backend cannot see boxes outside its view
                dets.append(Detection(rule.cls, clipped, rule.confidence, prep.image_id, frame))
            outputs.append(dets)
        return outputs


@dataclass(frozen=True)
class ModelSidecar:
    """Metadata shipped next to an interchange model file."""

    input_size: int
    class_names: tuple[str, ...]
    mean: tuple[float, float, float]
    std: tuple[float, float, float]


def sidecar_path_for(model_path: str | Path) -> Path:
    """`model.onnx` -> `model.meta.json`."""
    return Path(model_path).with_suffix(".meta.json")


def load_model_sidecar(path: str | Path) -> ModelSidecar:
    """Parse and validate the JSON sidecar; raises ValueError on any defect."""
    try:
        payload = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValueError(f"cannot read sidecar {path}: {exc}") from exc
    if not isinstance(payload, dict):
        raise ValueError("sidecar must be a JSON object")
    unknown = set(payload) - {"input_size", "class_names", "normalization"}
    if unknown:
        raise ValueError(f"sidecar has unknown keys: {sorted(unknown)}")
    size = payload.get("input_size")
    if not isinstance(size, int) or isinstance(size, bool) or size <= 0:
        raise ValueError(f"input_size must be a positive integer, got {size!r}")
    names = payload.get("class_names")
    if (
        not isinstance(names, list)
        or not names
        or not all(isinstance(n, str) and n for n in names)
    ):
        raise ValueError("class_names must be a non-empty list of names")
    norm = payload.get("normalization")
    if not isinstance(norm, dict) or set(norm) != {"mean", "std"}:
        raise ValueError("normalization must be an object with mean and std")
    channels: dict[str, tuple[float, float, float]] = {}
    for key in ("mean", "std"):
        vals = norm[key]
        if not isinstance(vals, list) or len(vals) != 3:
            raise ValueError(f"normalization.{key} must have 3 entries")
        try:
            channels[key] = tuple(float(v) for v in vals)  # type: ignore[assignment]
        except (TypeError, ValueError):
            raise ValueError(f"normalization.{key} entries must be numbers") from None
    if any(v == 0.0 for v in channels["std"]):
        raise ValueError("normalization.std entries must be non-zero")
    return ModelSidecar(size, tuple(names), channels["mean"], channels["std"])


class OnnxBackend:
    """Runs an exported interchange model through onnxruntime.

    Requires the optional runtime; constructing without it raises with
    install guidance.  The model contract: input is a normalized float
    (1, 3, s, s) plane stack, outputs are (boxes, scores, classes) in
    the prepared frame.
    """

    def __init__(self, model_path: str | Path, sidecar: ModelSidecar | None = None):
        try:
            import onnxruntime  # type: ignore[import-not-found]
        except ImportError as exc:
            raise RuntimeError(
                "onnxruntime is not installed; install the package's 'onnx' extra "
                "to run real models (the stub backend needs no extras)"
            ) from exc
        self._session = onnxruntime.InferenceSession(
            str(model_path), providers=["CPUExecutionProvider"]
        )
        self._input_name = self._session.get_inputs()[0].name
        meta = sidecar if sidecar is not None else load_model_sidecar(sidecar_path_for(model_path))
        self.sidecar = meta
        self.name = Path(model_path).stem
        self.input_size = meta.input_size
        self.deterministic = True

    def predict(self, batch: Sequence[PreparedImage]) -> list[list[Detection]]:
        outputs: list[list[Detection]] = []
        mean = np.asarray(self.sidecar.mean, dtype=np.float32).reshape(3, 1, 1)
        std = np.asarray(self.sidecar.std, dtype=np.float32).reshape(3, 1, 1)
        for prep in batch:
            if prep.pixels is None:
                raise BackendError(f"no pixel data for {prep.image_id!r}")
            planes = prep.pixels.astype(np.float32).transpose(2, 0, 1) / 255.0
            x = ((planes - mean) / std)[None, ...]
            boxes, scores, classes = self._session.run(None, {self._input_name: x})
            frame = Frame.CROPPED if prep.large_path else Frame.LETTERBOXED
            dets = []
            for b, s, c in zip(np.atleast_2d(boxes), np.atleast_1d(scores), np.atleast_1d(classes)):
                clipped = Box.normalized(*map(float, b)).clamped(prep.width, prep.height)
                if clipped.width <= 0.0 or clipped.height <= 0.0:
                    continue
                dets.append(
                    Detection(DamageClass(int(c)), clipped, float(s), prep.image_id, frame)
                )
            outputs.append(dets)
        return outputs


@dataclass(frozen=True)
class Batch:
    """One inference batch: a path tag plus its member image ids."""

    kind: str  # "large" | "normal"
    image_ids: tuple[str, ...]

    def __post_init__(self) -> None:
        if self.kind not in ("large", "normal"):
            raise ValueError(f"batch kind must be large or normal, got {self.kind!r}")
        if not self.image_ids:
            raise ValueError("batch must contain at least one image")


@dataclass(frozen=True)
class BatchPlan:
    batches: tuple[Batch, ...]

    @property
    def image_ids(self) -> list[str]:
        return [i for b in self.batches for i in b.image_ids]


def plan_batches(records: Sequence[ImageRecord], cfg: PipelineConfig) -> BatchPlan:
    """Partition by size, then chunk each partition in stable id order."""
    problems = validate_config(cfg)
    if problems:
        raise ValueError("invalid config: " + "; ".join(problems))
    seen: set[str] = set()
    for rec in records:
        if rec.id in seen:
            raise ValueError(f"duplicate image id {rec.id!r}")
        seen.add(rec.id)
    thresholds = (cfg.large_min_width, cfg.large_min_height)
    large_ids = sorted(r.id for r in records if is_large((r.width, r.height), thresholds))
    normal_ids = sorted(r.id for r in records if not is_large((r.width, r.height), thresholds))
    batches: list[Batch] = []
    for kind, ids, size in (("large", large_ids, cfg.batch_large), ("normal", normal_ids, cfg.batch_normal)):
        for start in range(0, len(ids), size):
            batches.append(Batch(kind, tuple(ids[start : start + size])))
    return BatchPlan(tuple(batches))


def _letterbox_pixels(img: ImageBuffer, new_w: int, new_h: int, out: int) -> np.ndarray:
    from .augment import _resize_nearest

    canvas = np.full((out, out, 3), LETTERBOX_FILL, dtype=np.uint8)
    resized = _resize_nearest(img, new_w, new_h)
    dx = (out - new_w) // 2
    dy = (out - new_h) // 2
    canvas[dy : dy + new_h, dx : dx + new_w] = resized.data
    return canvas


def preprocess(
    record: ImageRecord,
    large: bool,
    cfg: PipelineConfig,
    input_size: int,
    pixels: ImageBuffer | None = None,
) -> PreparedImage:
    """Build the backend view of one image plus its inverse transform.

    Large path: lower-left square crop, then scale to the backend size.
    Normal path: aspect-preserving letterbox with centered gray padding.
    A large-flagged image smaller than the crop square falls back to the
    normal path with a warning.
    """
    if large and (record.width < cfg.crop_size or record.height < cfg.crop_size):
        logger.warning(
            "image %s is %dx%d, smaller than crop size %d; using the normal path",
            record.id,
            record.width,
            record.height,
            cfg.crop_size,
        )
        large = False
    if large:
        region = lower_left_region((record.width, record.height), cfg.crop_size)
        scale = input_size / cfg.crop_size
        transform = TransformRecord(
            original_width=record.width,
            original_height=record.height,
            prepared_width=input_size,
            prepared_height=input_size,
            crop=region,
            scale_x=scale,
            scale_y=scale,
        )
        prep_pixels = None
        if pixels is not None:
            from .augment import _resize_nearest

            crop = ImageBuffer(pixels.data[region.y0 : region.y1, region.x0 : region.x1])
            prep_pixels = _resize_nearest(crop, input_size, input_size).data
        return PreparedImage(record.id, input_size, input_size, transform, True, prep_pixels)

    ratio = min(input_size / record.width, input_size / record.height)
    new_w = max(1, int(round(record.width * ratio)))
    new_h = max(1, int(round(record.height * ratio)))
    pad_x = (input_size - new_w) / 2.0
    pad_y = (input_size - new_h) / 2.0
    transform = TransformRecord(
        original_width=record.width,
        original_height=record.height,
        prepared_width=input_size,
        prepared_height=input_size,
        scale_x=ratio,
        scale_y=ratio,
        pad_x=pad_x,
        pad_y=pad_y,
    )
    prep_pixels = _letterbox_pixels(pixels, new_w, new_h, input_size) if pixels is not None else None
    return PreparedImage(record.id, input_size, input_size, transform, False, prep_pixels)


@dataclass(frozen=True)
class StageTiming:
    """Wall-clock milliseconds spent on one image, per stage."""

    image_id: str
    preprocess_ms: float
    inference_ms: float
    postprocess_ms: float
    run: int = 1

    def __post_init__(self) -> None:
        for name in ("preprocess_ms", "inference_ms", "postprocess_ms"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} negative for {self.image_id!r}")

    @property
    def total_ms(self) -> float:
        return self.preprocess_ms + self.inference_ms + self.postprocess_ms


@dataclass(frozen=True)
class LatencyReport:
    rows: tuple[StageTiming, ...]

    @property
    def runs(self) -> int:
        return max((r.run for r in self.rows), default=0)

    @property
    def mean_seconds_per_image(self) -> float:
        if not self.rows:
            return 0.0
        return statistics.fmean(r.total_ms for r in self.rows) / 1000.0

    @property
    def median_seconds_per_image(self) -> float:
        if not self.rows:
            return 0.0
        return statistics.median(r.total_ms for r in self.rows) / 1000.0

    @property
    def throughput_images_per_s(self) -> float:
        mean = self.mean_seconds_per_image
        return 1.0 / mean if mean > 0.0 else 0.0

    def mean_ms(self, stage: str) -> float:
        """Mean of one stage column ('preprocess', 'inference', 'postprocess')."""
        if not self.rows:
            return 0.0
        return statistics.fmean(getattr(r, f"{stage}_ms") for r in self.rows)


@dataclass(frozen=True)
class PipelineResult:
    detections: dict[str, tuple[Detection, ...]]
    failures: dict[str, str]
    latency: LatencyReport


def _predict_batch(
    backend: ModelBackend, preps: Sequence[PreparedImage]
) -> tuple[list[list[Detection] | None], dict[str, str], float]:
    """Run one batch; on failure, retry image-by-image so one bad image
    cannot take down its batchmates.  Returns (per-image outputs with
    None for failures, failure reasons, elapsed seconds)."""
    start = time.perf_counter()
    try:
        outs = backend.predict(list(preps))
        if len(outs) != len(preps):
            raise BackendError(
                f"backend {backend.name!r} returned {len(outs)} outputs for {len(preps)} inputs"
            )
        return list(outs), {}, time.perf_counter() - start
    except Exception:
        outputs: list[list[Detection] | None] = []
        failures: dict[str, str] = {}
        for prep in preps:
            try:
                outputs.append(backend.predict([prep])[0])
            except Exception as exc:
                outputs.append(None)
                failures[prep.image_id] = f"{backend.name}: {exc}"
        return outputs, failures, time.perf_counter() - start


def _to_original(det: Detection, transform: TransformRecord, record: ImageRecord) -> Detection:
    box = transform.invert_box(det.box).clamped(record.width, record.height)
    return replace(det, box=box, frame=Frame.ORIGINAL)


def _timed_preprocess(
    record: ImageRecord, large: bool, cfg: PipelineConfig, input_size: int
) -> tuple[PreparedImage, float]:
    start = time.perf_counter()
    prep = preprocess(record, large, cfg, input_size)
    return prep, (time.perf_counter() - start) * 1000.0


def run_pipeline(
    records: Sequence[ImageRecord],
    backends: Mapping[str, Sequence[ModelBackend]],
    cfg: PipelineConfig,
    jobs: int = 1,
    run_index: int = 1,
) -> PipelineResult:
    """Execute the full dispatch/batch/predict/remap pipeline.

    Normal images run through every normal-path backend and the outputs
    are ensemble-fused; large images run through the first large-path
    backend only.  Both paths then filter at their confidence floor.
    Output assembly is ordered by image id, so results are independent
    of manifest order, batch partition, and ``jobs``.
    """
    problems = validate_config(cfg)
    if problems:
        raise ValueError("invalid config: " + "; ".join(problems))
    if jobs < 1:
        raise ValueError(f"jobs must be >= 1, got {jobs}")
    by_id: dict[str, ImageRecord] = {}
    for rec in records:
        if rec.id in by_id:
            raise ValueError(f"duplicate image id {rec.id!r}")
        by_id[rec.id] = rec
    normal_backends = list(backends.get("normal", ()))
    large_backends = list(backends.get("large", ()))[:1]  # single model on this path
    plan = plan_batches(list(by_id.values()), cfg)
    for batch in plan.batches:
        pool = large_backends if batch.kind == "large" else normal_backends
        if not pool:
            raise ValueError(f"no backend configured for the {batch.kind} path")

    if cfg.tta_enabled:
        return _run_tta(by_id, normal_backends, large_backends, cfg, run_index)

    detections: dict[str, tuple[Detection, ...]] = {}
    failures: dict[str, str] = {}
    pre_ms: dict[str, float] = {}
    inf_ms: dict[str, float] = {}
    post_ms: dict[str, float] = {}

    pool_exec = ThreadPoolExecutor(max_workers=jobs) if jobs > 1 else None
    try:
        for batch in plan.batches:
            members = [by_id[i] for i in batch.image_ids]
            large = batch.kind == "large"
            path_backends = large_backends if large else normal_backends
            threshold = cfg.conf_large if large else cfg.conf_normal

            # (backend, aligned outputs, preps) per backend over this batch
            stage_outputs: list[tuple[ModelBackend, list[list[Detection] | None], list[PreparedImage]]] = []
            for backend in path_backends:
                if pool_exec is not None:
                    prepped = list(
                        pool_exec.map(
                            lambda rec: _timed_preprocess(rec, large, cfg, backend.input_size),
                            members,
                        )
                    )
                else:
                    prepped = [_timed_preprocess(rec, large, cfg, backend.input_size) for rec in members]
                preps = [p for p, _ in prepped]
                for rec, (_, ms) in zip(members, prepped):
                    pre_ms[rec.id] = pre_ms.get(rec.id, 0.0) + ms
                outs, fails, elapsed = _predict_batch(backend, preps)
                share = elapsed * 1000.0 / len(members)
                for rec in members:
                    inf_ms[rec.id] = inf_ms.get(rec.id, 0.0) + share
                failures.update(fails)
                stage_outputs.append((backend, outs, preps))

            for idx, rec in enumerate(members):
                start = time.perf_counter()
                if rec.id not in failures:
                    lists: list[list[Detection]] = []
                    for backend, outs, preps in stage_outputs:
                        raw = outs[idx]
                        if raw is None:
                            continue
                        lists.append([_to_original(d, preps[idx].transform, rec) for d in raw])
                    fused = ensemble_fuse(lists, cfg.nms_iou)
                    detections[rec.id] = tuple(d for d in fused if d.confidence >= threshold)
                post_ms[rec.id] = (time.perf_counter() - start) * 1000.0
    finally:
        if pool_exec is not None:
            pool_exec.shutdown()

    rows = tuple(
        StageTiming(
            image_id=image_id,
            preprocess_ms=pre_ms.get(image_id, 0.0),
            inference_ms=inf_ms.get(image_id, 0.0),
            postprocess_ms=post_ms.get(image_id, 0.0),
            run=run_index,
        )
        for image_id in sorted(by_id)
    )
    ordered = {i: detections[i] for i in sorted(detections)}
    ordered_failures = {i: failures[i] for i in sorted(failures)}
    return PipelineResult(ordered, ordered_failures, LatencyReport(rows))


def tta_run(
    record: ImageRecord, backend: ModelBackend, cfg: PipelineConfig
) -> list[Detection]:
    """Predict on {identity, horizontal flip, scaled} views and fuse.

    Each variant's boxes are inverted back to the original frame before
    ensemble fusion, so classes and confidences pass through untouched.
    """
    if not cfg.tta_enabled:
        raise ValueError("test-time augmentation is disabled in this config")
    large = is_large((record.width, record.height), (cfg.large_min_width, cfg.large_min_height))
    base = preprocess(record, large, cfg, backend.input_size)
    flipped = replace(base, transform=replace(base.transform, hflip=True))
    scaled_size = max(32, int(round(backend.input_size * TTA_SCALE)))
    scaled = preprocess(record, large, cfg, scaled_size)

    variant_lists: list[list[Detection]] = []
    for prep in (base, flipped, scaled):
        outs = backend.predict([prep])[0]
        variant_lists.append([_to_original(d, prep.transform, record) for d in outs])
    return ensemble_fuse(variant_lists, cfg.nms_iou)


def _run_tta(
    by_id: Mapping[str, ImageRecord],
    normal_backends: Sequence[ModelBackend],
    large_backends: Sequence[ModelBackend],
    cfg: PipelineConfig,
    run_index: int,
) -> PipelineResult:
    """Per-image three-variant flow used when TTA is on (no batching)."""
    detections: dict[str, tuple[Detection, ...]] = {}
    failures: dict[str, str] = {}
    rows: list[StageTiming] = []
    thresholds = (cfg.large_min_width, cfg.large_min_height)
    for image_id in sorted(by_id):
        rec = by_id[image_id]
        large = is_large((rec.width, rec.height), thresholds)
        path_backends = large_backends if large else normal_backends
        threshold = cfg.conf_large if large else cfg.conf_normal
        start = time.perf_counter()
        try:
            lists = [tta_run(rec, backend, cfg) for backend in path_backends]
        except Exception as exc:
            failures[image_id] = str(exc)
            rows.append(StageTiming(image_id, 0.0, (time.perf_counter() - start) * 1000.0, 0.0, run_index))
            continue
        infer_ms = (time.perf_counter() - start) * 1000.0
        start = time.perf_counter()
        fused = ensemble_fuse(lists, cfg.nms_iou)
        detections[image_id] = tuple(d for d in fused if d.confidence >= threshold)
        rows.append(
            StageTiming(
                image_id,
                0.0,
                infer_ms,
                (time.perf_counter() - start) * 1000.0,
                run_index,
            )
        )
    return PipelineResult(detections, failures, LatencyReport(tuple(rows)))


def measure(
    records: Sequence[ImageRecord],
    backends: Mapping[str, Sequence[ModelBackend]],
    cfg: PipelineConfig,
    repetitions: int = 1,
    jobs: int = 1,
) -> LatencyReport:
    """Time the pipeline end to end over one or more repetitions."""
    if repetitions < 1:
        raise ValueError(f"repetitions must be >= 1, got {repetitions}")
    rows: list[StageTiming] = []
    for run in range(1, repetitions + 1):
        result = run_pipeline(records, backends, cfg, jobs=jobs, run_index=run)
        rows.extend(result.latency.rows)
    return LatencyReport(tuple(rows))


def _det_sort_key(d: Detection) -> tuple:
    return (-d.confidence, d.box.x_min, d.box.y_min, d.box.x_max, d.box.y_max, int(d.cls))


def write_detections_jsonl(
    detections: Mapping[str, Sequence[Detection]], stream: TextIO
) -> None:
    """One JSON object per detection: image_id, class, corners, confidence."""
    for image_id in sorted(detections):
        for det in sorted(detections[image_id], key=_det_sort_key):
            stream.write(
                json.dumps(
                    {
                        "image_id": image_id,
                        "class": int(det.cls),
                        "x1": det.box.x_min,
                        "y1": det.box.y_min,
                        "x2": det.box.x_max,
                        "y2": det.box.y_max,
                        "confidence": det.confidence,
                    },
                    separators=(",", ":"),
                )
                + "\n"
            )


def read_detections_jsonl(stream: TextIO) -> dict[str, list[Detection]]:
    """Inverse of :func:`write_detections_jsonl`; boxes are original-frame."""
    out: dict[str, list[Detection]] = {}
    for index, line in enumerate(stream, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            det = Detection(
                DamageClass(int(obj["class"])),
                Box.normalized(
                    float(obj["x1"]), float(obj["y1"]), float(obj["x2"]), float(obj["y2"])
                ),
                float(obj["confidence"]),
                str(obj["image_id"]),
                Frame.ORIGINAL,
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"detections line {index}: {exc}") from exc
        out.setdefault(det.image_id, []).append(det)
    return out


def write_challenge_csv(
    detections: Mapping[str, Sequence[Detection]],
    stream: TextIO,
    class_offset: int = 1,
    filename_suffix: str = ".jpg",
) -> None:
    """Submission-style rows: `<filename>,<cls x1 y1 x2 y2> ...`.

    Coordinates are rounded to integer pixels; class codes are shifted
    by ``class_offset`` (external numbering starts at 1).  Images with
    no detections still get a row.
    """
    for image_id in sorted(detections):
        name = image_id if "." in image_id else image_id + filename_suffix
        parts = []
        for det in sorted(detections[image_id], key=_det_sort_key):
            coords = [int(math.floor(v + 0.5)) for v in det.box.as_tuple()]
            parts.append(f"{int(det.cls) + class_offset} " + " ".join(str(c) for c in coords))
        stream.write(f"{name}," + " ".join(parts) + "\n")


def write_latency_csv(report: LatencyReport, stream: TextIO) -> None:
    """Per-image rows followed by aggregate rows."""
    stream.write("row_type,run,image_id,preprocess_ms,inference_ms,postprocess_ms,total_ms\n")
    for r in report.rows:
        stream.write(
            f"image,{r.run},{r.image_id},{r.preprocess_ms:.6f},{r.inference_ms:.6f},"
            f"{r.postprocess_ms:.6f},{r.total_ms:.6f}\n"
        )
    aggregates = (
        ("images_timed", float(len(report.rows))),
        ("runs", float(report.runs)),
        ("mean_seconds_per_image", report.mean_seconds_per_image),
        ("median_seconds_per_image", report.median_seconds_per_image),
        ("throughput_images_per_s", report.throughput_images_per_s),
    )
    for key, value in aggregates:
        stream.write(f"aggregate,all,{key},,,,{value:.9g}\n")
