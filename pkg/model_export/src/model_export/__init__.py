"""Convert a tiny detector checkpoint into an ONNX file plus JSON sidecar.

The exporter is deliberately free of any dependency on the inference
toolkit: the two sides meet only at the interchange files themselves
(`model.onnx` + `model.meta.json`).
"""

from model_export.detector import TinyDetector, fuse_detector, load_checkpoint, save_checkpoint
from model_export.evaluator import LoadedModel, load_model, run_model
from model_export.onnx_model import export_detector
from model_export.sidecar import CLASS_NAMES, ExportManifest, sidecar_path_for, write_sidecar

__all__ = [
    "CLASS_NAMES",
    "ExportManifest",
    "LoadedModel",
    "TinyDetector",
    "export_detector",
    "fuse_detector",
    "load_checkpoint",
    "load_model",
    "run_model",
    "save_checkpoint",
    "sidecar_path_for",
    "write_sidecar",
]

__version__ = "0.1.0"
