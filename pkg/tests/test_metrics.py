"""Evaluation metrics vs brute-force oracles and hand-computed cases."""

import io

import pytest

from roadkit.metrics import (
    average_precision,
    best_f1_sweep,
    ensemble_fuse,
    f1_at,
    f1_sweep,
    map50,
    match_detections,
    nms,
    per_class_ap,
    pr_curve,
    write_eval_csv,
)
from roadkit.types import Annotation, Box, DamageClass, Detection


def _iou(a: Box, b: Box) -> float:
    ix = max(0.0, min(a.x_max, b.x_max) - max(a.x_min, b.x_min))
    iy = max(0.0, min(a.y_max, b.y_max) - max(a.y_min, b.y_min))
    inter = ix * iy
    union = a.area() + b.area() - inter
    return inter / union if union > 0 else 0.0


def _key(d: Detection):
    return (-d.confidence, d.box.x_min, d.box.y_min, d.box.x_max, d.box.y_max, int(d.cls))


def nms_oracle(dets, thresh):
    """Naive per-class keep-best-then-filter loop."""
    out = []
    for cls in {d.cls for d in dets}:
        pool = sorted((d for d in dets if d.cls == cls), key=_key)
        while pool:
            best = pool.pop(0)
            out.append(best)
            pool = [d for d in pool if _iou(best.box, d.box) <= thresh]
    return sorted(out, key=_key)


def match_oracle(preds, gts, thresh):
    """Independent greedy matcher returning (tp_flags, fn)."""
    taken = set()
    flags = []
    for det in sorted(preds, key=_key):
        candidates = [
            (idx, _iou(det.box, gt.box))
            for idx, gt in enumerate(gts)
            if idx not in taken and gt.cls == det.cls
        ]
        candidates = [(i, v) for i, v in candidates if v >= thresh]
        if candidates:
            best = max(candidates, key=lambda pair: (pair[1], -pair[0]))
            taken.add(best[0])
            flags.append(True)
        else:
            flags.append(False)
    return flags, len(gts) - len(taken)


def det(cls, x1, y1, x2, y2, conf, image="img"):
    return Detection(DamageClass(cls), Box(x1, y1, x2, y2), conf, image)


def ann(cls, x1, y1, x2, y2):
    return Annotation(DamageClass(cls), Box(x1, y1, x2, y2))


def random_dets(rng, n, image="img"):
    out = []
    for _ in range(n):
        x, y = int(rng.integers(0, 12)), int(rng.integers(0, 12))
        w, h = int(rng.integers(1, 9)), int(rng.integers(1, 9))
        conf = float(rng.choice([0.1, 0.2, 0.3, 0.5, 0.7, 0.8, 0.9]))
        out.append(det(int(rng.integers(0, 2)), x, y, x + w, y + h, conf, image))
    return out


class TestNms:
    def test_against_oracle_fuzzed(self, rng):
        for _ in range(1000):
            dets = random_dets(rng, int(rng.integers(0, 11)))
            thresh = float(rng.choice([0.3, 0.45, 0.5]))
            assert nms(dets, thresh) == nms_oracle(dets, thresh)

    def test_keeps_highest_confidence(self):
        a = det(0, 0, 0, 10, 10, 0.9)
        b = det(0, 1, 1, 10, 10, 0.8)  # heavy overlap with a
        assert nms([b, a], 0.45) == [a]

    def test_classes_do_not_suppress_each_other(self):
        a = det(0, 0, 0, 10, 10, 0.9)
        b = det(1, 0, 0, 10, 10, 0.8)
        assert nms([a, b], 0.45) == [a, b]

    def test_order_invariance(self, rng):
        dets = random_dets(rng, 10)
        shuffled = list(dets)
        rng.shuffle(shuffled)
        assert nms(dets, 0.45) == nms(shuffled, 0.45)

    def test_idempotent(self, rng):
        once = nms(random_dets(rng, 10), 0.45)
        assert nms(once, 0.45) == once

    def test_confidence_tie_breaks_by_position(self):
        left = det(0, 0, 0, 10, 10, 0.5)
        right = det(0, 5, 0, 15, 10, 0.5)  # IoU 1/3 < 0.45: both kept, left first
        assert nms([right, left], 0.45) == [left, right]

    def test_filter_then_nms_equals_nms_then_filter(self, rng):
        for _ in range(100):
            dets = random_dets(rng, 8)
            pre = nms([d for d in dets if d.confidence >= 0.5], 0.45)
            post = [d for d in nms(dets, 0.45) if d.confidence >= 0.5]
            assert pre == post


class TestEnsembleFuse:
    def test_equals_concat_then_nms(self, rng):
        lists = [random_dets(rng, 5), random_dets(rng, 5), random_dets(rng, 3)]
        merged = [d for dets in lists for d in dets]
        assert ensemble_fuse(lists, 0.45) == nms(merged, 0.45)

    def test_duplicate_boxes_collapse(self):
        a = det(2, 0, 0, 10, 10, 0.9)
        b = det(2, 0, 0, 10, 10, 0.7)
        assert ensemble_fuse([[a], [b]], 0.45) == [a]

    def test_empty_inputs(self):
        assert ensemble_fuse([], 0.45) == []
        assert ensemble_fuse([[], []], 0.45) == []


class TestMatchDetections:
    def test_against_oracle_fuzzed(self, rng):
        for _ in range(500):
            preds = random_dets(rng, int(rng.integers(0, 7)))
            gts = [
                ann(int(rng.integers(0, 2)), x, y, x + w, y + h)
                for x, y, w, h in rng.integers(1, 9, size=(int(rng.integers(0, 6)), 4))
            ]
            result = match_detections(preds, gts, 0.5)
            flags, fn = match_oracle(preds, gts, 0.5)
            assert [m.is_tp for m in result.matches] == flags
            assert result.fn == fn

    def test_each_gt_claimed_once(self):
        gts = [ann(0, 0, 0, 10, 10)]
        preds = [det(0, 0, 0, 10, 10, 0.9), det(0, 1, 1, 10, 10, 0.8)]
        result = match_detections(preds, gts, 0.5)
        assert [m.is_tp for m in result.matches] == [True, False]
        assert result.fn == 0

    def test_class_must_agree(self):
        result = match_detections([det(1, 0, 0, 10, 10, 0.9)], [ann(0, 0, 0, 10, 10)], 0.5)
        assert result.tp == 0
        assert result.fn == 1

    def test_higher_iou_wins(self):
        gts = [ann(0, 0, 0, 10, 10), ann(0, 0, 0, 12, 12)]
        result = match_detections([det(0, 0, 0, 12, 12, 0.9)], gts, 0.5)
        assert result.matches[0].gt_index == 1

    def test_equal_iou_takes_lowest_index(self):
        gts = [ann(0, 0, 0, 10, 10), ann(0, 0, 0, 10, 10)]
        result = match_detections([det(0, 0, 0, 10, 10, 0.9)], gts, 0.5)
        assert result.matches[0].gt_index == 0

    def test_matches_sorted_by_confidence(self, rng):
        preds = random_dets(rng, 6)
        result = match_detections(preds, [], 0.5)
        confs = [m.detection.confidence for m in result.matches]
        assert confs == sorted(confs, reverse=True)


class TestAveragePrecision:
    def two_gt_case(self):
        gts = {"i": [ann(0, 0, 0, 10, 10), ann(0, 20, 20, 30, 30)]}
        preds = [
            det(0, 0, 0, 10, 10, 0.9, "i"),  # TP
            det(0, 40, 40, 50, 50, 0.8, "i"),  # FP
            det(0, 20, 20, 30, 30, 0.7, "i"),  # TP
        ]
        return preds, gts

    def test_hand_case_five_sixths(self):
        preds, gts = self.two_gt_case()
        # (1 TP, 1 FP, 1 TP) over 2 GT: area 0.5*1 + 0.5*(2/3) = 5/6
        assert average_precision(preds, gts, DamageClass.D00) == pytest.approx(5 / 6, abs=1e-15)

    def test_perfect_case_is_one(self):
        gts = {"i": [ann(1, 0, 0, 10, 10)]}
        preds = [det(1, 0, 0, 10, 10, 0.9, "i")]
        assert average_precision(preds, gts, DamageClass.D10) == 1.0

    def test_no_detections_is_zero(self):
        gts = {"i": [ann(0, 0, 0, 10, 10)]}
        assert average_precision([], gts, DamageClass.D00) == 0.0

    def test_map_mixes_perfect_and_undetected(self):
        gts = {"i": [ann(0, 0, 0, 10, 10), ann(1, 20, 20, 30, 30)]}
        preds = [det(0, 0, 0, 10, 10, 0.9, "i")]
        assert map50(preds, gts) == 0.5

    def test_map_nan_when_no_ground_truth(self):
        import math

        assert math.isnan(map50([det(0, 0, 0, 5, 5, 0.9)], {}))

    def test_per_class_ap_covers_gt_classes(self):
        preds, gts = self.two_gt_case()
        result = per_class_ap(preds, gts)
        assert list(result) == [DamageClass.D00]


class TestPrCurve:
    def test_recall_monotone(self, rng):
        preds = random_dets(rng, 20)
        gts = {"img": [ann(int(rng.integers(0, 2)), x, y, x + w, y + h)
                       for x, y, w, h in rng.integers(1, 9, size=(8, 4))]}
        curve = pr_curve(preds, gts, DamageClass.D00)
        assert list(curve.recall) == sorted(curve.recall)

    def test_empty_gt_zero_recall(self):
        curve = pr_curve([det(0, 0, 0, 5, 5, 0.9)], {}, DamageClass.D00)
        assert curve.recall == (0.0,)
        assert curve.precision == (0.0,)


class TestF1At:
    def fixture(self):
        gts = {
            "a": [ann(0, 0, 0, 10, 10), ann(0, 20, 20, 30, 30)],
            "b": [ann(1, 0, 0, 10, 10)],
        }
        preds = [
            det(0, 0, 0, 10, 10, 0.9, "a"),  # TP
            det(0, 50, 50, 60, 60, 0.8, "a"),  # FP
            det(1, 0, 0, 10, 10, 0.7, "b"),  # TP
        ]
        return preds, gts

    def test_micro_pools_counts(self):
        preds, gts = self.fixture()
        precision, recall, f1 = f1_at(preds, gts, 0.5)
        assert precision == pytest.approx(2 / 3)
        assert recall == pytest.approx(2 / 3)
        assert f1 == pytest.approx(2 / 3)

    def test_macro_averages_classes(self):
        preds, gts = self.fixture()
        _, _, f1 = f1_at(preds, gts, 0.5, average="macro")
        # D00: P=R=F1=0.5; D10: perfect -> macro F1 = 0.75
        assert f1 == pytest.approx(0.75)

    def test_threshold_is_inclusive(self):
        preds, gts = self.fixture()
        p_lo = f1_at(preds, gts, 0.7)
        p_hi = f1_at(preds, gts, 0.7000001)
        assert p_lo != p_hi  # the 0.7 prediction sits exactly on the floor

    def test_perfect_is_one(self):
        gts = {"a": [ann(2, 0, 0, 10, 10)]}
        preds = [det(2, 0, 0, 10, 10, 0.99, "a")]
        assert f1_at(preds, gts, 0.5) == (1.0, 1.0, 1.0)

    def test_bad_average_rejected(self):
        with pytest.raises(ValueError, match="average"):
            f1_at([], {}, 0.5, average="weird")


class TestF1Sweep:
    def sweep_oracle(self, preds, gts, thresholds):
        """From-scratch micro F1 at each threshold via full rematching."""
        values = []
        for t in thresholds:
            _, _, f1 = f1_at(preds, gts, t)
            values.append((t, f1))
        return values

    def random_eval(self, rng, images=4):
        preds, gts = [], {}
        for i in range(images):
            image = f"im{i}"
            preds.extend(random_dets(rng, int(rng.integers(0, 8)), image))
            gts[image] = [
                ann(int(rng.integers(0, 2)), x, y, x + w, y + h)
                for x, y, w, h in rng.integers(1, 9, size=(int(rng.integers(0, 5)), 4))
            ]
        # spread confidences continuously so operating points are distinct
        preds = [
            Detection(d.cls, d.box, float(rng.uniform(0.01, 0.99)), d.image_id) for d in preds
        ]
        return preds, gts

    def test_sweep_matches_from_scratch_recomputation(self, rng):
        preds, gts = self.random_eval(rng)
        points = dict(f1_sweep(preds, gts))
        sampled = list(points)[:: max(1, len(points) // 25)]
        for t, want in self.sweep_oracle(preds, gts, sampled):
            assert points[t] == pytest.approx(want, abs=1e-12)

    def test_best_equals_exhaustive_over_observed_confidences(self, rng):
        for _ in range(20):
            preds, gts = self.random_eval(rng)
            candidates = sorted({d.confidence for d in preds} | {0.0})
            oracle_best = max(
                (f1_at(preds, gts, t)[2] for t in candidates), default=0.0
            )
            conf, best = best_f1_sweep(preds, gts)
            assert best == pytest.approx(oracle_best, abs=1e-12)
            # the reported threshold actually achieves the reported F1
            assert f1_at(preds, gts, conf)[2] == pytest.approx(best, abs=1e-12)

    def test_tie_resolves_to_lowest_threshold(self):
        gts = {"a": [ann(0, 0, 0, 10, 10)]}
        preds = [det(0, 0, 0, 10, 10, 0.6, "a")]
        conf, best = best_f1_sweep(preds, gts)
        assert best == 1.0
        assert conf == 0.0  # F1 is 1.0 from threshold 0 onward

    def test_no_predictions(self):
        conf, best = best_f1_sweep([], {"a": [ann(0, 0, 0, 10, 10)]})
        assert best == 0.0

    def test_bad_grid_step(self):
        with pytest.raises(ValueError, match="grid_step"):
            f1_sweep([], {}, grid_step=0.0)


class TestEvalCsv:
    def test_layout(self):
        buf = io.StringIO()
        write_eval_csv(
            buf,
            {DamageClass.D00: 0.5, DamageClass.D40: 0.25},
            0.375,
            (0.5, 0.6, 0.7, 0.646154),
            [(0.0, 0.646154), (0.5, 0.6)],
        )
        lines = buf.getvalue().splitlines()
        assert lines[0] == "record,key,precision,recall,f1,ap"
        assert "ap,D00,,,,0.500000" in lines
        assert "map,all,,,,0.375000" in lines
        assert "operating,0.500,0.600000,0.700000,0.646154," in lines
        assert lines[-1] == "sweep,0.500,,,0.600000,"
