"""Shared fixtures: synthetic records, stub backends, acceptance reporting."""

from __future__ import annotations

import numpy as np
import pytest

from roadkit.orchestrator import StubBackend
from roadkit.types import Annotation, Box, DamageClass, ImageRecord

LARGE_DIMS = (4040, 2041)  # the dashboard-camera size that triggers the crop path


def make_record(
    image_id: str,
    width: int = 640,
    height: int = 640,
    folder: str = "Czech",
    boxes: list[tuple[int, int, int, int, int]] | None = None,
) -> ImageRecord:
    """Record with (cls, x1, y1, x2, y2) integer boxes."""
    anns = tuple(
        Annotation(DamageClass(cls), Box(x1, y1, x2, y2)) for cls, x1, y1, x2, y2 in boxes or []
    )
    return ImageRecord(image_id, folder, width, height, anns)


def mixed_records(count: int = 60, large_every: int = 3) -> list[ImageRecord]:
    """Synthetic manifest mixing large, normal, and boundary-size images."""
    records = []
    for i in range(count):
        if i % large_every == 0:
            width, height = LARGE_DIMS
            folder = "Norway"
        elif i % large_every == 1:
            width, height = 640, 640
            folder = "Czech"
        else:
            width, height = 1824, 1824  # boundary: not large (strict >)
            folder = "Japan"
        records.append(make_record(f"img_{i:04d}", width, height, folder))
    return records


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20250817)


@pytest.fixture(scope="session")
def manifest60() -> list[ImageRecord]:
    return mixed_records(60)


def stub_ensemble(records, seed: int = 11, input_size: int = 640, crop_size: int = 1824):
    """Two-member normal ensemble plus a large-path stub sharing rules."""
    a = StubBackend.from_seed(seed, records, name="stub-a", input_size=input_size)
    b = StubBackend.from_seed(seed + 1, records, name="stub-b", input_size=input_size)
    large = StubBackend(rules=a.rules, name="stub-large", input_size=crop_size)
    return {"normal": [a, b], "large": [large]}


# --- acceptance criterion reporting ---

_acceptance_results: list[tuple[str, str]] = []


@pytest.hookimpl(wrapper=True)
def pytest_runtest_makereport(item, call):
    report = yield
    if report.when == "call":
        marker = item.get_closest_marker("acceptance")
        if marker is not None:
            name = marker.kwargs.get("name", item.name)
            _acceptance_results.append((name, "PASS" if report.passed else "FAIL"))
    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _acceptance_results:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for name, status in _acceptance_results:
        terminalreporter.write_line(f"{status}  {name}")
