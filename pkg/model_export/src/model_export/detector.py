"""Tiny anchor-free detector and its checkpoint handling.

The network is the smallest thing that still exercises the full export
path: two stride-2 conv + batch-norm + SiLU stages, then two 1x1 heads
over the resulting stride-4 grid.  Each cell emits one candidate box
anchored at the cell centre plus four per-class confidences, so the
forward pass returns static-shape `(boxes (N, 4), scores (N,),
classes (N,) int64)` tensors with N = (size / 4) ** 2.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from torch import nn

CHECKPOINT_FORMAT = "tiny-detector-v1"


def grid_constants(input_size: int) -> tuple[np.ndarray, np.ndarray]:
    """Constant decode tensors for a given square input size.

    `centers` holds per-cell centre coordinates laid out channel-wise as
    (cx, cy, cx, cy); `extent` holds (-s/2, -s/2, s/2, s/2).  The box for
    a cell is `centers + sigmoid(raw) * extent`, which always yields
    x_min < cx < x_max (and likewise for y) because sigmoid is in (0, 1).
    """
    cells = input_size // 4
    coords = (np.arange(cells, dtype=np.float32) + 0.5) * 4.0
    cx = np.broadcast_to(coords[None, :], (cells, cells))
    cy = np.broadcast_to(coords[:, None], (cells, cells))
    centers = np.stack([cx, cy, cx, cy])[None].astype(np.float32)
    half = input_size / 2.0
    extent = np.array([-half, -half, half, half], dtype=np.float32).reshape(1, 4, 1, 1)
    return centers, extent


class TinyDetector(nn.Module):
    """Static-shape detector over a stride-4 cell grid."""

    def __init__(self, input_size: int = 64, fused: bool = False):
        if input_size < 8 or input_size % 4:
            raise ValueError(
                f"input size must be a multiple of 4 and at least 8, got {input_size}"
            )
        super().__init__()
        self.input_size = input_size
        self.fused = fused
        self.stem1 = nn.Conv2d(3, 8, 3, stride=2, padding=1)
        self.bn1 = nn.Identity() if fused else nn.BatchNorm2d(8)
        self.stem2 = nn.Conv2d(8, 16, 3, stride=2, padding=1)
        self.bn2 = nn.Identity() if fused else nn.BatchNorm2d(16)
        self.head_box = nn.Conv2d(16, 4, 1)
        self.head_cls = nn.Conv2d(16, 4, 1)
        centers, extent = grid_constants(input_size)
        # Not persisted: the grids are a pure function of input_size, so
        # checkpoints stay loadable at a different export resolution.
        self.register_buffer("centers", torch.from_numpy(centers), persistent=False)
        self.register_buffer("extent", torch.from_numpy(extent), persistent=False)

    @property
    def num_cells(self) -> int:
        return (self.input_size // 4) ** 2

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        act = nn.functional.silu(self.bn1(self.stem1(x)))
        act = nn.functional.silu(self.bn2(self.stem2(act)))
        box_unit = torch.sigmoid(self.head_box(act))
        box_grid = self.centers + box_unit * self.extent
        boxes = box_grid.permute(0, 2, 3, 1).reshape(-1, 4)
        cls_prob = torch.sigmoid(self.head_cls(act))
        scores = cls_prob.amax(dim=1).reshape(-1)
        classes = cls_prob.argmax(dim=1).reshape(-1)
        return boxes, scores, classes


def random_detector(seed: int, input_size: int = 64) -> TinyDetector:
    """Seeded random initialization, including batch-norm statistics.

    Running statistics are randomized too so that folding batch norm
    into the convolutions is a real transformation rather than a no-op.
    """
    gen = torch.Generator().manual_seed(seed)
    model = TinyDetector(input_size)
    with torch.no_grad():
        for param in model.parameters():
            param.copy_(torch.empty_like(param).normal_(0.0, 0.5, generator=gen))
        for bn in (model.bn1, model.bn2):
            bn.running_mean.copy_(
                torch.empty_like(bn.running_mean).normal_(0.0, 0.3, generator=gen)
            )
            bn.running_var.copy_(
                torch.empty_like(bn.running_var).uniform_(0.5, 1.5, generator=gen)
            )
    return model.eval()


def fuse_detector(model: TinyDetector) -> TinyDetector:
    """Fold each batch norm into its preceding convolution.

    w' = w * g / sqrt(v + eps), b' = beta + (b - mean) * g / sqrt(v + eps).
    """
    if model.fused:
        raise ValueError("detector is already fused")
    fused = TinyDetector(model.input_size, fused=True)
    with torch.no_grad():
        for conv_name in ("head_box", "head_cls"):
            getattr(fused, conv_name).load_state_dict(getattr(model, conv_name).state_dict())
        for conv_name, bn_name in (("stem1", "bn1"), ("stem2", "bn2")):
            conv, bn = getattr(model, conv_name), getattr(model, bn_name)
            target = getattr(fused, conv_name)
            scale = bn.weight / torch.sqrt(bn.running_var + bn.eps)
            target.weight.copy_(conv.weight * scale.reshape(-1, 1, 1, 1))
            target.bias.copy_(bn.bias + (conv.bias - bn.running_mean) * scale)
    return fused.eval()


def save_checkpoint(model: TinyDetector, path: str | Path) -> Path:
    out = Path(path)
    torch.save(
        {
            "format": CHECKPOINT_FORMAT,
            "input_size": model.input_size,
            "fused": model.fused,
            "state_dict": model.state_dict(),
        },
        out,
    )
    return out


def load_checkpoint(path: str | Path, input_size: int | None = None) -> TinyDetector:
    """Rebuild a detector from disk; raises ValueError with the cause.

    `input_size` overrides the size recorded in the checkpoint, which is
    possible because the convolutions are resolution-independent.
    """
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise ValueError(f"cannot load checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a {CHECKPOINT_FORMAT} checkpoint")
    missing = {"input_size", "fused", "state_dict"} - set(payload)
    if missing:
        raise ValueError(f"checkpoint {path} lacks keys: {sorted(missing)}")
    model = TinyDetector(
        input_size if input_size is not None else payload["input_size"],
        fused=payload["fused"],
    )
    try:
        model.load_state_dict(payload["state_dict"])
    except (RuntimeError, ValueError) as exc:
        raise ValueError(f"checkpoint {path} does not fit the detector: {exc}") from exc
    return model.eval()


def export_arrays(model: TinyDetector):
    """Weights plus decode constants as numpy, ready for serialization."""
    from model_export.onnx_model import DetectorArrays

    weights = {
        name: tensor.detach().cpu().numpy().astype(np.float32, copy=True)
        for name, tensor in model.state_dict().items()
    }
    centers, extent = grid_constants(model.input_size)
    weights["centers"] = centers
    weights["extent"] = extent
    epsilon = 0.0 if model.fused else float(model.bn1.eps)
    return DetectorArrays(
        weights=weights,
        input_size=model.input_size,
        fused=model.fused,
        epsilon=epsilon,
    )
