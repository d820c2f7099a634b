"""JSON sidecar written next to every exported model.

The inference side keys its preprocessing off this file: input size,
class-name table (index order must match the detector's class channel
order), and per-channel normalization applied after the 0-255 to 0-1
scaling.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

CLASS_NAMES = ("D00", "D10", "D20", "D40")


@dataclass(frozen=True)
class ExportManifest:
    """Everything the sidecar records about one exported model."""

    input_size: int
    class_names: tuple[str, ...] = CLASS_NAMES
    mean: tuple[float, float, float] = (0.0, 0.0, 0.0)
    std: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self) -> None:
        if not isinstance(self.input_size, int) or self.input_size <= 0:
            raise ValueError(f"input_size must be a positive integer, got {self.input_size!r}")
        if len(self.class_names) != len(CLASS_NAMES):
            raise ValueError(
                f"expected {len(CLASS_NAMES)} class names in channel order, "
                f"got {len(self.class_names)}"
            )
        if not all(isinstance(n, str) and n for n in self.class_names):
            raise ValueError("class names must be non-empty strings")
        for label, values in (("mean", self.mean), ("std", self.std)):
            if len(values) != 3:
                raise ValueError(f"{label} must have one entry per colour channel")
        if any(v == 0.0 for v in self.std):
            raise ValueError("std entries must be non-zero")

    def to_json(self) -> str:
        payload = {
            "input_size": self.input_size,
            "class_names": list(self.class_names),
            "normalization": {"mean": list(self.mean), "std": list(self.std)},
        }
        return json.dumps(payload, indent=2) + "\n"


def sidecar_path_for(model_path: str | Path) -> Path:
    """`model.onnx` -> `model.meta.json`, matching the consumer's lookup."""
    return Path(model_path).with_suffix(".meta.json")


def write_sidecar(manifest: ExportManifest, model_path: str | Path) -> Path:
    out = sidecar_path_for(model_path)
    out.write_text(manifest.to_json())
    return out
