"""Core value types: construction rules, validation, config checks."""

import pytest

from roadkit.types import (
    Annotation,
    Box,
    DamageClass,
    Detection,
    Frame,
    ImageRecord,
    PipelineConfig,
    Split,
    group_by_folder,
    validate_config,
)


class TestDamageClass:
    def test_codes_are_stable(self):
        assert [int(c) for c in DamageClass] == [0, 1, 2, 3]
        assert DamageClass.D40 == 3

    def test_from_name(self):
        assert DamageClass.from_name("D20") is DamageClass.D20

    def test_from_name_rejects_unknown(self):
        with pytest.raises(ValueError, match="D50"):
            DamageClass.from_name("D50")

    def test_names(self):
        assert DamageClass.names() == ["D00", "D10", "D20", "D40"]


class TestBox:
    def test_inverted_raises(self):
        with pytest.raises(ValueError, match="inverted"):
            Box(10, 0, 5, 5)
        with pytest.raises(ValueError, match="inverted"):
            Box(0, 10, 5, 5)

    def test_normalized_orders_corners(self):
        assert Box.normalized(30, 40, 10, 20) == Box(10, 20, 30, 40)

    def test_degenerate_allowed(self):
        b = Box(5, 5, 5, 9)
        assert b.width == 0
        assert b.area() == 0.0

    def test_dimensions_and_area(self):
        b = Box(1, 2, 4, 10)
        assert (b.width, b.height, b.area()) == (3, 8, 24)

    def test_clamped(self):
        assert Box(-5, -5, 15, 15).clamped(10, 10) == Box(0, 0, 10, 10)
        # fully outside collapses onto the border
        assert Box(20, 20, 30, 30).clamped(10, 10) == Box(10, 10, 10, 10)

    def test_translated(self):
        assert Box(1, 2, 3, 4).translated(10, 20) == Box(11, 22, 13, 24)

    def test_as_tuple(self):
        assert Box(1, 2, 3, 4).as_tuple() == (1, 2, 3, 4)


class TestImageRecord:
    def test_valid(self):
        rec = ImageRecord("a", "Czech", 100, 80, (Annotation(DamageClass.D00, Box(0, 0, 100, 80)),))
        assert rec.split is Split.UNASSIGNED

    def test_rejects_non_positive_dims(self):
        with pytest.raises(ValueError, match="non-positive"):
            ImageRecord("a", "Czech", 0, 80)

    def test_rejects_out_of_bounds_annotation(self):
        with pytest.raises(ValueError, match="outside"):
            ImageRecord("a", "Czech", 100, 80, (Annotation(DamageClass.D00, Box(0, 0, 101, 50)),))

    def test_with_split_returns_new_record(self):
        rec = ImageRecord("a", "Czech", 10, 10)
        tagged = rec.with_split(Split.VAL)
        assert tagged.split is Split.VAL
        assert rec.split is Split.UNASSIGNED


class TestDetection:
    def test_confidence_bounds(self):
        Detection(DamageClass.D00, Box(0, 0, 1, 1), 0.0, "a")
        Detection(DamageClass.D00, Box(0, 0, 1, 1), 1.0, "a")
        with pytest.raises(ValueError, match="confidence"):
            Detection(DamageClass.D00, Box(0, 0, 1, 1), 1.5, "a")

    def test_default_frame(self):
        d = Detection(DamageClass.D00, Box(0, 0, 1, 1), 0.5, "a")
        assert d.frame is Frame.ORIGINAL


class TestConfig:
    def test_defaults_are_valid(self):
        assert validate_config(PipelineConfig()) == []

    def test_default_values(self):
        cfg = PipelineConfig()
        assert cfg.crop_size == 1824
        assert (cfg.large_min_width, cfg.large_min_height) == (1824, 1824)
        assert (cfg.batch_large, cfg.batch_normal) == (12, 24)
        assert (cfg.conf_normal, cfg.conf_large) == (0.50, 0.35)
        assert cfg.nms_iou == 0.45

    @pytest.mark.parametrize(
        "field,value,message",
        [
            ("crop_size", 1800, "multiple of 32"),
            ("crop_size", -32, "not positive"),
            ("batch_large", 0, "batch_large"),
            ("batch_normal", 0, "batch_normal"),
            ("conf_normal", 0.0, "conf_normal"),
            ("conf_large", 1.0, "conf_large"),
            ("nms_iou", -0.1, "nms_iou"),
            ("large_min_width", 0, "large_min_width"),
        ],
    )
    def test_violations_are_reported(self, field, value, message):
        from dataclasses import replace

        problems = validate_config(replace(PipelineConfig(), **{field: value}))
        assert any(message in p for p in problems)


def test_group_by_folder():
    records = [
        ImageRecord("a", "X", 10, 10),
        ImageRecord("b", "Y", 10, 10),
        ImageRecord("c", "X", 10, 10),
    ]
    grouped = group_by_folder(records)
    assert sorted(grouped) == ["X", "Y"]
    assert [r.id for r in grouped["X"]] == ["a", "c"]
