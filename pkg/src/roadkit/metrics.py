"""Detection evaluation: greedy matching, AP/mAP@0.5, F1, NMS, ensemble fusion.

Matching is the standard greedy protocol: predictions in descending
confidence, each taking the highest-IoU unmatched ground truth of its
class at IoU >= 0.5.  AP uses all-point interpolation (exact area under
the precision-recall staircase).  F1 is micro-aggregated over images and
classes by default; macro is available.  Ties are broken by
(confidence desc, x_min asc, y_min asc) everywhere so results never
depend on input order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence, TextIO

from .geometry import iou
from .types import Annotation, Box, DamageClass, Detection


def _det_key(d: Detection) -> tuple:
    b = d.box
    return (-d.confidence, b.x_min, b.y_min, b.x_max, b.y_max, int(d.cls))


def nms(dets: Sequence[Detection], iou_thresh: float) -> list[Detection]:
    """Greedy per-class non-maximum suppression.

    Keeps the highest-confidence box of each overlapping group; a box is
    suppressed when its IoU with any already-kept box of the same class
    exceeds ``iou_thresh``.  Output sorted by descending confidence.
    """
    kept: list[Detection] = []
    by_class: dict[int, list[Detection]] = {}
    for d in dets:
        by_class.setdefault(int(d.cls), []).append(d)
    for cls_dets in by_class.values():
        cls_kept: list[Detection] = []
        for d in sorted(cls_dets, key=_det_key):
            if all(iou(d.box, k.box) <= iou_thresh for k in cls_kept):
                cls_kept.append(d)
        kept.extend(cls_kept)
    return sorted(kept, key=_det_key)


def ensemble_fuse(det_lists: Sequence[Sequence[Detection]], iou_thresh: float) -> list[Detection]:
    """Fuse per-model outputs for one image: concatenate then NMS."""
    merged: list[Detection] = []
    for dets in det_lists:
        merged.extend(dets)
    return nms(merged, iou_thresh)


@dataclass(frozen=True)
class PredMatch:
    detection: Detection
    is_tp: bool
    gt_index: int | None  # index into the ground-truth list, when matched


@dataclass(frozen=True)
class MatchResult:
    """Per-prediction TP/FP flags (descending confidence) plus the FN count."""

    matches: tuple[PredMatch, ...]
    fn: int

    @property
    def tp(self) -> int:
        return sum(1 for m in self.matches if m.is_tp)

    @property
    def fp(self) -> int:
        return len(self.matches) - self.tp


def match_detections(
    preds: Sequence[Detection],
    gts: Sequence[Annotation],
    iou_thresh: float = 0.5,
) -> MatchResult:
    """Greedy-match one image's predictions against its ground truth.

    Each prediction (in descending confidence) claims the unmatched
    ground truth of its class with the highest IoU >= ``iou_thresh``;
    equal IoU goes to the lowest ground-truth index.
    """
    taken = [False] * len(gts)
    matches: list[PredMatch] = []
    for det in sorted(preds, key=_det_key):
        best_iou = 0.0
        best_idx: int | None = None
        for idx, gt in enumerate(gts):
            if taken[idx] or gt.cls != det.cls:
                continue
            value = iou(det.box, gt.box)
            if value >= iou_thresh and value > best_iou:
                best_iou = value
                best_idx = idx
        if best_idx is not None:
            taken[best_idx] = True
            matches.append(PredMatch(det, True, best_idx))
        else:
            matches.append(PredMatch(det, False, None))
    fn = taken.count(False)
    return MatchResult(matches=tuple(matches), fn=fn)


GroundTruth = Mapping[str, Sequence[Annotation]]


def _flat_matches(
    preds: Sequence[Detection],
    gts: GroundTruth,
    iou_thresh: float,
    cls: DamageClass | None = None,
) -> tuple[list[tuple[Detection, bool]], int]:
    """Match per image and merge: ((det, is_tp) sorted desc, total GT count)."""
    by_image: dict[str, list[Detection]] = {}
    for d in preds:
        if cls is None or d.cls == cls:
            by_image.setdefault(d.image_id, []).append(d)
    flagged: list[tuple[Detection, bool]] = []
    for image_id, image_preds in by_image.items():
        image_gts = [g for g in gts.get(image_id, ()) if cls is None or g.cls == cls]
        result = match_detections(image_preds, image_gts, iou_thresh)
        flagged.extend((m.detection, m.is_tp) for m in result.matches)
    total_gt = sum(
        sum(1 for g in anns if cls is None or g.cls == cls) for anns in gts.values()
    )
    flagged.sort(key=lambda pair: _det_key(pair[0]))
    return flagged, total_gt


@dataclass(frozen=True)
class PRCurve:
    """Precision/recall at each confidence breakpoint, descending confidence."""

    confidences: tuple[float, ...]
    precision: tuple[float, ...]
    recall: tuple[float, ...]

    def __post_init__(self) -> None:
        for r0, r1 in zip(self.recall, self.recall[1:]):
            if r1 < r0:
                raise ValueError("recall must be non-decreasing along the curve")


def pr_curve(
    preds: Sequence[Detection],
    gts: GroundTruth,
    cls: DamageClass,
    iou_thresh: float = 0.5,
) -> PRCurve:
    flagged, total_gt = _flat_matches(preds, gts, iou_thresh, cls)
    confs: list[float] = []
    precision: list[float] = []
    recall: list[float] = []
    tp = 0
    for rank, (det, is_tp) in enumerate(flagged, start=1):
        tp += 1 if is_tp else 0
        confs.append(det.confidence)
        precision.append(tp / rank)
        recall.append(tp / total_gt if total_gt else 0.0)
    return PRCurve(tuple(confs), tuple(precision), tuple(recall))


def average_precision(
    preds: Sequence[Detection],
    gts: GroundTruth,
    cls: DamageClass,
    iou_thresh: float = 0.5,
) -> float:
    """All-point-interpolated area under the class's PR staircase.

    0 when the class has ground truth but no detections, and 0 in the
    fully empty case.
    """
    curve = pr_curve(preds, gts, cls, iou_thresh)
    if not curve.recall:
        return 0.0
    # precision envelope: best precision at any recall >= r
    env = list(curve.precision)
    for i in range(len(env) - 2, -1, -1):
        env[i] = max(env[i], env[i + 1])
    ap = 0.0
    prev_recall = 0.0
    for r, p in zip(curve.recall, env):
        if r > prev_recall:
            ap += (r - prev_recall) * p
            prev_recall = r
    return ap


def map50(
    preds: Sequence[Detection],
    gts: GroundTruth,
    iou_thresh: float = 0.5,
) -> float:
    """Mean AP over the classes that appear in the ground truth.

    NaN when the ground truth is empty (no class to average over).
    """
    present = sorted({g.cls for anns in gts.values() for g in anns})
    if not present:
        return float("nan")
    return sum(average_precision(preds, gts, c, iou_thresh) for c in present) / len(present)


def f1_at(
    preds: Sequence[Detection],
    gts: GroundTruth,
    conf_thresh: float,
    iou_thresh: float = 0.5,
    average: str = "micro",
) -> tuple[float, float, float]:
    """(precision, recall, F1) for predictions with confidence >= ``conf_thresh``.

    ``micro`` pools TP/FP/FN over all images and classes; ``macro``
    averages per-class scores over the classes present in the ground
    truth or predictions.
    """
    if average not in ("micro", "macro"):
        raise ValueError(f"average must be micro or macro, got {average!r}")
    surviving = [d for d in preds if d.confidence >= conf_thresh]
    if average == "micro":
        flagged, total_gt = _flat_matches(surviving, gts, iou_thresh)
        tp = sum(1 for _, is_tp in flagged if is_tp)
        fp = len(flagged) - tp
        fn = total_gt - tp
        return _prf(tp, fp, fn)
    classes = sorted(
        {g.cls for anns in gts.values() for g in anns} | {d.cls for d in surviving}
    )
    if not classes:
        return (0.0, 0.0, 0.0)
    scores = []
    for cls in classes:
        flagged, total_gt = _flat_matches(surviving, gts, iou_thresh, cls)
        tp = sum(1 for _, is_tp in flagged if is_tp)
        scores.append(_prf(tp, len(flagged) - tp, total_gt - tp))
    n = len(scores)
    return tuple(sum(s[i] for s in scores) / n for i in range(3))  # type: ignore[return-value]


def _prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return (precision, recall, f1)


def f1_sweep(
    preds: Sequence[Detection],
    gts: GroundTruth,
    grid_step: float = 0.001,
    iou_thresh: float = 0.5,
) -> list[tuple[float, float]]:
    """Micro F1 at every threshold on the grid plus observed confidences.

    Greedy matching of a confidence-filtered set equals a prefix of the
    full match (predictions are processed in descending confidence), so
    one matching pass serves every threshold.  Observed confidences are
    added to the grid so no distinct operating point is skipped.
    Returns (threshold, f1) pairs in ascending threshold order.
    """
    if not 0.0 < grid_step <= 1.0:
        raise ValueError(f"grid_step must be in (0,1], got {grid_step}")
    flagged, total_gt = _flat_matches(preds, gts, iou_thresh)
    confs_desc = [d.confidence for d, _ in flagged]
    cum_tp = []
    tp = 0
    for _, is_tp in flagged:
        tp += 1 if is_tp else 0
        cum_tp.append(tp)

    n_steps = int(round(1.0 / grid_step))
    thresholds = sorted(
        {min(1.0, k * grid_step) for k in range(n_steps + 1)} | set(confs_desc)
    )
    points: list[tuple[float, float]] = []
    for t in thresholds:
        # predictions with confidence >= t form a prefix of the sorted list
        lo, hi = 0, len(confs_desc)
        while lo < hi:
            mid = (lo + hi) // 2
            if confs_desc[mid] >= t:
                lo = mid + 1
            else:
                hi = mid
        k = lo
        tp_k = cum_tp[k - 1] if k else 0
        _, _, f1 = _prf(tp_k, k - tp_k, total_gt - tp_k)
        points.append((t, f1))
    return points


def best_f1_sweep(
    preds: Sequence[Detection],
    gts: GroundTruth,
    grid_step: float = 0.001,
    iou_thresh: float = 0.5,
) -> tuple[float, float]:
    """(best_conf, best_f1) over the sweep; ties resolve to the lowest threshold."""
    best_conf, best_f1 = 0.0, -1.0
    for t, f1 in f1_sweep(preds, gts, grid_step, iou_thresh):
        if f1 > best_f1:
            best_conf, best_f1 = t, f1
    return best_conf, max(best_f1, 0.0)


def per_class_ap(
    preds: Sequence[Detection],
    gts: GroundTruth,
    iou_thresh: float = 0.5,
) -> dict[DamageClass, float]:
    present = sorted({g.cls for anns in gts.values() for g in anns})
    return {cls: average_precision(preds, gts, cls, iou_thresh) for cls in present}


def write_eval_csv(
    stream: TextIO,
    ap_by_class: Mapping[DamageClass, float],
    mean_ap: float,
    operating: tuple[float, float, float, float],  # (conf, precision, recall, f1)
    sweep_points: Iterable[tuple[float, float]],
) -> None:
    """One CSV with per-class AP, the operating point, and the F1 sweep."""
    stream.write("record,key,precision,recall,f1,ap\n")
    for cls in sorted(ap_by_class):
        stream.write(f"ap,{cls.name},,,,{ap_by_class[cls]:.6f}\n")
    stream.write(f"map,all,,,,{mean_ap:.6f}\n")
    conf, precision, recall, f1 = operating
    stream.write(f"operating,{conf:.3f},{precision:.6f},{recall:.6f},{f1:.6f},\n")
    for t, f1_value in sweep_points:
        stream.write(f"sweep,{t:.3f},,,{f1_value:.6f},\n")
