"""Desk-scale tensor numerics for the model's two architectural tricks.

Implements a reference conv2d, inference-mode batch norm, the conv+BN
reparameterization that folds normalization into the convolution, the
coordinate-attention forward pass (per-axis pooled descriptors, shared
1x1 transform, two sigmoid gates), and label-smoothing targets.  All of
it runs on plain float64 numpy; nothing here trains.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

import numpy as np


@dataclass(frozen=True)
class Tensor3:
    """Dense C x H x W value grid."""

    data: np.ndarray  # shape (c, h, w), float64

    def __post_init__(self) -> None:
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3:
            raise ValueError(f"expected 3 dims (c,h,w), got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor contains non-finite values")
        object.__setattr__(self, "data", arr)

    @property
    def c(self) -> int:
        return self.data.shape[0]

    @property
    def h(self) -> int:
        return self.data.shape[1]

    @property
    def w(self) -> int:
        return self.data.shape[2]

    @classmethod
    def zeros(cls, c: int, h: int, w: int) -> "Tensor3":
        return cls(np.zeros((c, h, w)))


@dataclass(frozen=True)
class Conv2dParams:
    """Weights [c_out, c_in, k, k], bias [c_out], square kernel."""

    weights: np.ndarray
    bias: np.ndarray
    stride: int = 1
    padding: int = 0

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        if w.ndim != 4 or w.shape[2] != w.shape[3]:
            raise ValueError(f"weights must be (c_out, c_in, k, k), got {w.shape}")
        if b.shape != (w.shape[0],):
            raise ValueError(f"bias must be ({w.shape[0]},), got {b.shape}")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if self.padding < 0:
            raise ValueError("padding must be >= 0")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def c_out(self) -> int:
        return self.weights.shape[0]

    @property
    def c_in(self) -> int:
        return self.weights.shape[1]

    @property
    def kernel(self) -> int:
        return self.weights.shape[2]


@dataclass(frozen=True)
class BatchNormParams:
    """Inference-mode batch norm statistics and affine parameters."""

    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5

    def __post_init__(self) -> None:
        arrays = {}
        for name in ("gamma", "beta", "running_mean", "running_var"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.ndim != 1:
                raise ValueError(f"{name} must be 1-D, got shape {arr.shape}")
            arrays[name] = arr
        sizes = {a.shape[0] for a in arrays.values()}
        if len(sizes) != 1:
            raise ValueError("batch norm parameter lengths disagree")
        if np.any(arrays["running_var"] < 0):
            raise ValueError("running_var must be non-negative")
        if self.eps <= 0 and np.any(arrays["running_var"] == 0):
            raise ValueError("eps must be positive when variance can be zero")
        for name, arr in arrays.items():
            object.__setattr__(self, name, arr)

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]

    @classmethod
    def identity(cls, channels: int, eps: float = 0.0) -> "BatchNormParams":
        return cls(
            gamma=np.ones(channels),
            beta=np.zeros(channels),
            running_mean=np.zeros(channels),
            running_var=np.ones(channels),
            eps=eps if eps > 0 else 1e-300,
        )


def conv2d(x: Tensor3, p: Conv2dParams) -> Tensor3:
    """Direct cross-correlation with stride and zero padding."""
    if x.c != p.c_in:
        raise ValueError(f"input has {x.c} channels, conv expects {p.c_in}")
    k = p.kernel
    padded = np.pad(x.data, ((0, 0), (p.padding, p.padding), (p.padding, p.padding)))
    out_h = (x.h + 2 * p.padding - k) // p.stride + 1
    out_w = (x.w + 2 * p.padding - k) // p.stride + 1
    if out_h <= 0 or out_w <= 0:
        raise ValueError(f"kernel {k} with padding {p.padding} does not fit input {x.h}x{x.w}")
    out = np.zeros((p.c_out, out_h, out_w))
    # accumulate one kernel offset at a time over strided views
    for dy in range(k):
        for dx in range(k):
            window = padded[:, dy : dy + out_h * p.stride : p.stride, dx : dx + out_w * p.stride : p.stride]
            out += np.einsum("oc,chw->ohw", p.weights[:, :, dy, dx], window)
    out += p.bias[:, None, None]
    return Tensor3(out)


def batchnorm_infer(x: Tensor3, p: BatchNormParams) -> Tensor3:
    """Per-channel gamma * (x - mean) / sqrt(var + eps) + beta."""
    if x.c != p.channels:
        raise ValueError(f"input has {x.c} channels, batch norm expects {p.channels}")
    scale = p.gamma / np.sqrt(p.running_var + p.eps)
    shift = p.beta - p.running_mean * scale
    return Tensor3(x.data * scale[:, None, None] + shift[:, None, None])


def fuse_conv_bn(conv: Conv2dParams, bn: BatchNormParams) -> Conv2dParams:
    """Fold inference-mode batch norm into the preceding convolution.

    Returns conv' with w' = w * gamma/sqrt(var+eps) per output channel and
    b' = beta + (b - mean) * gamma/sqrt(var+eps), so that
    conv2d(x, conv') == batchnorm_infer(conv2d(x, conv), bn) for all x.
    """
    if bn.channels != conv.c_out:
        raise ValueError(f"batch norm has {bn.channels} channels, conv outputs {conv.c_out}")
    factor = bn.gamma / np.sqrt(bn.running_var + bn.eps)
    weights = conv.weights * factor[:, None, None, None]
    bias = bn.beta + (conv.bias - bn.running_mean) * factor
    return replace(conv, weights=weights, bias=bias)


def _hardswish(x: np.ndarray) -> np.ndarray:
    return x * np.clip(x + 3.0, 0.0, 6.0) / 6.0


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass(frozen=True)
class CoordAttnParams:
    """Parameters of one coordinate-attention block.

    ``conv1`` maps c -> m over the concatenated pooled descriptors and is
    followed by an inference-mode per-channel norm and a hard-swish.  The
    two head convs map m -> c and feed the sigmoid gates.
    """

    conv1_w: np.ndarray  # (m, c)
    conv1_b: np.ndarray  # (m,)
    norm: BatchNormParams  # over m channels
    conv_h_w: np.ndarray  # (c, m)
    conv_h_b: np.ndarray  # (c,)
    conv_w_w: np.ndarray  # (c, m)
    conv_w_b: np.ndarray  # (c,)

    def __post_init__(self) -> None:
        for name in ("conv1_w", "conv1_b", "conv_h_w", "conv_h_b", "conv_w_w", "conv_w_b"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        m, c = self.conv1_w.shape
        if self.norm.channels != m:
            raise ValueError("norm channel count must match mid channels")
        for name in ("conv_h_w", "conv_w_w"):
            if getattr(self, name).shape != (c, m):
                raise ValueError(f"{name} must be (c, m) = ({c}, {m})")

    @property
    def mid_channels(self) -> int:
        return self.conv1_w.shape[0]

    @property
    def channels(self) -> int:
        return self.conv1_w.shape[1]

    @staticmethod
    def mid_for(channels: int, reduction: int) -> int:
        return max(8, channels // reduction)

    @classmethod
    def zeros(cls, channels: int, reduction: int = 32) -> "CoordAttnParams":
        m = cls.mid_for(channels, reduction)
        return cls(
            conv1_w=np.zeros((m, channels)),
            conv1_b=np.zeros(m),
            norm=BatchNormParams.identity(m),
            conv_h_w=np.zeros((channels, m)),
            conv_h_b=np.zeros(channels),
            conv_w_w=np.zeros((channels, m)),
            conv_w_b=np.zeros(channels),
        )

    @classmethod
    def random(cls, channels: int, reduction: int, rng: np.random.Generator) -> "CoordAttnParams":
        m = cls.mid_for(channels, reduction)
        return cls(
            conv1_w=rng.normal(0, 0.5, (m, channels)),
            conv1_b=rng.normal(0, 0.1, m),
            norm=BatchNormParams(
                gamma=rng.uniform(0.5, 1.5, m),
                beta=rng.normal(0, 0.1, m),
                running_mean=rng.normal(0, 0.2, m),
                running_var=rng.uniform(0.2, 1.5, m),
                eps=1e-5,
            ),
            conv_h_w=rng.normal(0, 0.5, (channels, m)),
            conv_h_b=rng.normal(0, 0.1, channels),
            conv_w_w=rng.normal(0, 0.5, (channels, m)),
            conv_w_b=rng.normal(0, 0.1, channels),
        )


def coord_attention(x: Tensor3, p: CoordAttnParams) -> Tensor3:
    """Coordinate-attention forward pass; output shape equals input shape.

    Height and width are pooled separately into per-axis descriptors,
    transformed jointly, then split into two sigmoid gates g_h (c, h) and
    g_w (c, w); the output is x * g_h * g_w broadcast over the grid.
    """
    if x.c != p.channels:
        raise ValueError(f"input has {x.c} channels, attention expects {p.channels}")
    z_h = x.data.mean(axis=2)  # (c, h)
    z_w = x.data.mean(axis=1)  # (c, w)
    u = np.concatenate([z_h, z_w], axis=1)  # (c, h + w)
    v = p.conv1_w @ u + p.conv1_b[:, None]  # (m, h + w)
    scale = p.norm.gamma / np.sqrt(p.norm.running_var + p.norm.eps)
    v = v * scale[:, None] + (p.norm.beta - p.norm.running_mean * scale)[:, None]
    v = _hardswish(v)
    v_h, v_w = v[:, : x.h], v[:, x.h :]
    g_h = _sigmoid(p.conv_h_w @ v_h + p.conv_h_b[:, None])  # (c, h)
    g_w = _sigmoid(p.conv_w_w @ v_w + p.conv_w_b[:, None])  # (c, w)
    return Tensor3(x.data * g_h[:, :, None] * g_w[:, None, :])


def smooth_targets(eps: float) -> tuple[float, float]:
    """Binary detector-style smoothed targets (1 - eps/2, eps/2)."""
    if not 0.0 <= eps < 1.0:
        raise ValueError(f"smoothing rate must be in [0,1), got {eps}")
    return (1.0 - eps / 2.0, eps / 2.0)


# --- flat float32 weight fixtures (little-endian data + JSON shape header) ---


def save_weight_arrays(
    base_path: str | Path,
    arrays: Mapping[str, np.ndarray],
    meta: Mapping[str, float | int] | None = None,
) -> None:
    """Write ``<base>.json`` (shapes/offsets/meta) and ``<base>.bin`` (f32 LE)."""
    base = Path(base_path)
    header: dict = {"dtype": "float32", "byte_order": "little", "arrays": [], "meta": dict(meta or {})}
    offset = 0
    with open(base.with_suffix(".bin"), "wb") as fh:
        for name in sorted(arrays):
            arr = np.ascontiguousarray(arrays[name], dtype="<f4")
            header["arrays"].append({"name": name, "shape": list(arr.shape), "offset": offset})
            fh.write(arr.tobytes())
            offset += arr.size
    with open(base.with_suffix(".json"), "w", encoding="utf-8") as fh:
        json.dump(header, fh, indent=2)
        fh.write("\n")


def load_weight_arrays(base_path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Inverse of :func:`save_weight_arrays`; returns (arrays, meta)."""
    base = Path(base_path)
    with open(base.with_suffix(".json"), "r", encoding="utf-8") as fh:
        header = json.load(fh)
    if header.get("dtype") != "float32" or header.get("byte_order") != "little":
        raise ValueError("unsupported weight fixture encoding")
    flat = np.fromfile(base.with_suffix(".bin"), dtype="<f4")
    arrays: dict[str, np.ndarray] = {}
    for entry in header["arrays"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        chunk = flat[entry["offset"] : entry["offset"] + count]
        if chunk.size != count:
            raise ValueError(f"weight fixture truncated at array {entry['name']!r}")
        arrays[entry["name"]] = chunk.reshape(entry["shape"]).astype(np.float64)
    return arrays, dict(header.get("meta", {}))
