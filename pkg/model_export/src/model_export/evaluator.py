"""Reference executor for the exported model files.

Parses the protobuf wire format back into a graph description and runs
it with numpy, covering exactly the operator subset the exporter emits:
Conv, BatchNormalization, Sigmoid, Mul, Add, Transpose, Reshape,
ReduceMax and ArgMax.  Float arithmetic runs in float64, so comparisons
against the float32 network isolate serialization mistakes from
round-off.

This is a verification tool, not a deployment runtime: production
inference goes through onnxruntime, which reads the same file.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from model_export import protowire as wire
from model_export.onnx_model import ELEM_FLOAT, ELEM_INT64

_DTYPES = {ELEM_FLOAT: np.dtype("<f4"), ELEM_INT64: np.dtype("<i8")}

# AttributeProto.type values the exporter uses.
_ATTR_FLOAT = 1
_ATTR_INT = 2
_ATTR_INTS = 7


@dataclass(frozen=True)
class TensorInfo:
    name: str
    elem_type: int
    dims: tuple[object, ...]  # ints, or strings for symbolic dimensions


@dataclass(frozen=True)
class EvalNode:
    op_type: str
    inputs: tuple[str, ...]
    outputs: tuple[str, ...]
    name: str
    attrs: Mapping[str, object]


@dataclass(frozen=True)
class LoadedModel:
    ir_version: int
    producer_name: str
    opset_version: int
    graph_name: str
    inputs: tuple[TensorInfo, ...]
    outputs: tuple[TensorInfo, ...]
    initializers: Mapping[str, np.ndarray]
    nodes: tuple[EvalNode, ...]


def _only(fields: dict[int, list], number: int, default=None):
    values = fields.get(number)
    if not values:
        return default
    if len(values) > 1:
        raise ValueError(f"field {number} repeated where one value was expected")
    return values[0]


def _text(fields: dict[int, list], number: int, default: str = "") -> str:
    value = _only(fields, number)
    return default if value is None else value.decode("utf-8")


def _parse_tensor(buf: bytes) -> tuple[str, np.ndarray]:
    fields = wire.decode_fields(buf)
    dims: list[int] = []
    for entry in fields.get(1, []):
        dims.extend(wire.decode_packed_int64(entry))
    elem = _only(fields, 2, 0)
    if elem not in _DTYPES:
        raise ValueError(f"unsupported tensor data type {elem}")
    name = _text(fields, 8)
    raw = _only(fields, 9)
    if raw is None:
        raise ValueError(f"initializer {name!r} carries no raw_data")
    array = np.frombuffer(raw, dtype=_DTYPES[elem]).reshape(dims)
    return name, array


def _parse_attribute(buf: bytes) -> tuple[str, object]:
    fields = wire.decode_fields(buf)
    name = _text(fields, 1)
    kind = _only(fields, 20, 0)
    if kind == _ATTR_FLOAT:
        raw = _only(fields, 2)
        value = 0.0 if raw is None else float(np.frombuffer(raw, dtype="<f4")[0])
    elif kind == _ATTR_INT:
        raw = _only(fields, 3)
        value = 0 if raw is None else wire.to_int64(raw)
    elif kind == _ATTR_INTS:
        value = []
        for entry in fields.get(8, []):
            value.extend(wire.decode_packed_int64(entry))
    else:
        raise ValueError(f"attribute {name!r} has unsupported type {kind}")
    return name, value


def _parse_node(buf: bytes) -> EvalNode:
    fields = wire.decode_fields(buf)
    return EvalNode(
        op_type=_text(fields, 4),
        inputs=tuple(v.decode("utf-8") for v in fields.get(1, [])),
        outputs=tuple(v.decode("utf-8") for v in fields.get(2, [])),
        name=_text(fields, 3),
        attrs=dict(_parse_attribute(v) for v in fields.get(5, [])),
    )


def _parse_value_info(buf: bytes) -> TensorInfo:
    fields = wire.decode_fields(buf)
    name = _text(fields, 1)
    type_fields = wire.decode_fields(_only(fields, 2, b""))
    tensor_fields = wire.decode_fields(_only(type_fields, 1, b""))
    elem = _only(tensor_fields, 1, 0)
    dims: list[object] = []
    shape = _only(tensor_fields, 2)
    if shape is not None:
        for dim_buf in wire.decode_fields(shape).get(1, []):
            dim_fields = wire.decode_fields(dim_buf)
            param = _only(dim_fields, 2)
            if param is not None:
                dims.append(param.decode("utf-8"))
            else:
                dims.append(wire.to_int64(_only(dim_fields, 1, 0)))
    return TensorInfo(name, elem, tuple(dims))


def load_model(path: str | Path) -> LoadedModel:
    """Parse a serialized model; raises ValueError on malformed bytes."""
    fields = wire.decode_fields(Path(path).read_bytes())
    graph_buf = _only(fields, 7)
    if graph_buf is None:
        raise ValueError(f"{path} contains no graph")
    opset_version = 0
    for entry in fields.get(8, []):
        opset_fields = wire.decode_fields(entry)
        if _text(opset_fields, 1) == "":
            opset_version = wire.to_int64(_only(opset_fields, 2, 0))
    graph = wire.decode_fields(graph_buf)
    initializers = dict(_parse_tensor(v) for v in graph.get(5, []))
    return LoadedModel(
        ir_version=wire.to_int64(_only(fields, 1, 0)),
        producer_name=_text(fields, 2),
        opset_version=opset_version,
        graph_name=_text(graph, 2),
        inputs=tuple(_parse_value_info(v) for v in graph.get(11, [])),
        outputs=tuple(_parse_value_info(v) for v in graph.get(12, [])),
        initializers=initializers,
        nodes=tuple(_parse_node(v) for v in graph.get(1, [])),
    )


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    positive = x >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-x[positive]))
    exp = np.exp(x[~positive])
    out[~positive] = exp / (1.0 + exp)
    return out


def _op_conv(node: EvalNode, values: Sequence[np.ndarray]) -> np.ndarray:
    x, weight = values[0], values[1]
    if node.attrs.get("group", 1) != 1:
        raise ValueError("grouped convolution is not supported")
    if any(d != 1 for d in node.attrs.get("dilations", [1, 1])):
        raise ValueError("dilated convolution is not supported")
    pads = list(node.attrs.get("pads", [0, 0, 0, 0]))
    sh, sw = node.attrs.get("strides", [1, 1])
    top, left, bottom, right = pads
    padded = np.pad(x, ((0, 0), (0, 0), (top, bottom), (left, right)))
    windows = sliding_window_view(padded, weight.shape[2:], axis=(2, 3))
    windows = windows[:, :, ::sh, ::sw]
    out = np.einsum("nchwkl,ockl->nohw", windows, weight)
    if len(values) > 2:
        out = out + values[2].reshape(1, -1, 1, 1)
    return out


def _op_batch_norm(node: EvalNode, values: Sequence[np.ndarray]) -> np.ndarray:
    x, scale, bias, mean, var = values
    eps = node.attrs.get("epsilon", 1e-5)
    shape = (1, -1, 1, 1)
    return scale.reshape(shape) * (x - mean.reshape(shape)) / np.sqrt(
        var.reshape(shape) + eps
    ) + bias.reshape(shape)


def _op_reshape(node: EvalNode, values: Sequence[np.ndarray]) -> np.ndarray:
    data, shape = values
    dims = [int(data.shape[i]) if d == 0 else int(d) for i, d in enumerate(shape)]
    return data.reshape(dims)


_OPS = {
    "Conv": _op_conv,
    "BatchNormalization": _op_batch_norm,
    "Sigmoid": lambda node, v: _sigmoid(v[0]),
    "Mul": lambda node, v: v[0] * v[1],
    "Add": lambda node, v: v[0] + v[1],
    "Transpose": lambda node, v: np.transpose(v[0], node.attrs["perm"]),
    "Reshape": _op_reshape,
    "ReduceMax": lambda node, v: np.max(
        v[0], axis=tuple(node.attrs["axes"]), keepdims=bool(node.attrs.get("keepdims", 1))
    ),
    "ArgMax": lambda node, v: np.argmax(v[0], axis=int(node.attrs.get("axis", 0)))
    if not node.attrs.get("keepdims", 1)
    else np.expand_dims(
        np.argmax(v[0], axis=int(node.attrs.get("axis", 0))),
        int(node.attrs.get("axis", 0)),
    ),
}


def run_model(model: LoadedModel, feeds: Mapping[str, np.ndarray]) -> list[np.ndarray]:
    """Execute the graph; returns arrays in declared output order."""
    env: dict[str, np.ndarray] = {}
    for name, array in model.initializers.items():
        env[name] = array.astype(np.float64) if array.dtype == np.float32 else array
    for info in model.inputs:
        if info.name not in feeds:
            raise ValueError(f"missing feed for graph input {info.name!r}")
    for name, array in feeds.items():
        arr = np.asarray(array)
        env[name] = arr.astype(np.float64) if arr.dtype.kind == "f" else arr
    for node in model.nodes:
        op = _OPS.get(node.op_type)
        if op is None:
            raise ValueError(f"operator {node.op_type!r} is not supported")
        missing = [name for name in node.inputs if name not in env]
        if missing:
            raise ValueError(f"node {node.name!r} reads undefined tensors {missing}")
        env[node.outputs[0]] = op(node, [env[name] for name in node.inputs])
    for info in model.outputs:
        if info.name not in env:
            raise ValueError(f"graph output {info.name!r} was never produced")
    return [env[info.name] for info in model.outputs]
