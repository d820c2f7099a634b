"""Hand-written ONNX serialization for the tiny detector graph.

The environment this tool targets ships no `onnx` wheel, so the model
file is assembled directly in protobuf wire format from the upstream
`onnx.proto3` field numbers.  Encoding is canonical proto3: fields are
written in ascending field-number order and scalar fields holding their
type's default (0, 0.0, "") are omitted, which makes the output
byte-identical to what the protobuf runtime would serialize for the
same message.

Only the message subset the detector needs is covered: ModelProto with
one opset import, a GraphProto of plain NodeProtos, float/int64
initializers carried as ``raw_data``, and static tensor shapes.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from model_export import protowire as wire

# TensorProto.DataType values.
ELEM_FLOAT = 1
ELEM_INT64 = 7

# AttributeProto.AttributeType values.
_ATTR_FLOAT = 1
_ATTR_INT = 2
_ATTR_INTS = 7

_NUMPY_DTYPES = {ELEM_FLOAT: np.dtype("<f4"), ELEM_INT64: np.dtype("<i8")}

IR_VERSION = 8
OPSET_VERSION = 13
PRODUCER_NAME = "model-export"
PRODUCER_VERSION = "0.1.0"


def tensor_proto(name: str, array: np.ndarray) -> bytes:
    """Serialize an initializer (dims, data_type, name, raw_data)."""
    if array.dtype == np.float32:
        elem = ELEM_FLOAT
    elif array.dtype == np.int64:
        elem = ELEM_INT64
    else:
        raise ValueError(f"unsupported initializer dtype {array.dtype} for {name!r}")
    out = bytearray()
    if array.ndim:
        out += wire.packed_varint_field(1, list(array.shape))
    out += wire.varint_field(2, elem)
    out += wire.string_field(8, name)
    raw = np.ascontiguousarray(array, dtype=_NUMPY_DTYPES[elem]).tobytes()
    if raw:
        out += wire.bytes_field(9, raw)
    return bytes(out)


def attr_float(name: str, value: float) -> bytes:
    out = wire.string_field(1, name)
    if value != 0.0:
        out += wire.float_field(2, value)
    return out + wire.varint_field(20, _ATTR_FLOAT)


def attr_int(name: str, value: int) -> bytes:
    out = wire.string_field(1, name)
    if value != 0:
        out += wire.varint_field(3, value)
    return out + wire.varint_field(20, _ATTR_INT)


def attr_ints(name: str, values: Sequence[int]) -> bytes:
    out = wire.string_field(1, name)
    if values:
        out += wire.packed_varint_field(8, list(values))
    return out + wire.varint_field(20, _ATTR_INTS)


def node_proto(
    op_type: str,
    inputs: Sequence[str],
    outputs: Sequence[str],
    *,
    name: str = "",
    attributes: Sequence[bytes] = (),
) -> bytes:
    out = bytearray()
    for tensor in inputs:
        out += wire.string_field(1, tensor)
    for tensor in outputs:
        out += wire.string_field(2, tensor)
    if name:
        out += wire.string_field(3, name)
    out += wire.string_field(4, op_type)
    for attribute in attributes:
        out += wire.bytes_field(5, attribute)
    return bytes(out)


def value_info(name: str, elem_type: int, dims: Sequence[int]) -> bytes:
    shape = b"".join(
        wire.bytes_field(1, wire.varint_field(1, d) if d else b"") for d in dims
    )
    tensor = wire.varint_field(1, elem_type) + wire.bytes_field(2, shape)
    type_proto = wire.bytes_field(1, tensor)
    return wire.string_field(1, name) + wire.bytes_field(2, type_proto)


def graph_proto(
    *,
    name: str,
    nodes: Sequence[bytes],
    initializers: Sequence[bytes],
    inputs: Sequence[bytes],
    outputs: Sequence[bytes],
) -> bytes:
    out = bytearray()
    for node in nodes:
        out += wire.bytes_field(1, node)
    out += wire.string_field(2, name)
    for tensor in initializers:
        out += wire.bytes_field(5, tensor)
    for info in inputs:
        out += wire.bytes_field(11, info)
    for info in outputs:
        out += wire.bytes_field(12, info)
    return bytes(out)


def model_proto(graph: bytes, *, opset_version: int = OPSET_VERSION) -> bytes:
    opset = wire.varint_field(2, opset_version)  # default domain "" is omitted
    return (
        wire.varint_field(1, IR_VERSION)
        + wire.string_field(2, PRODUCER_NAME)
        + wire.string_field(3, PRODUCER_VERSION)
        + wire.bytes_field(7, graph)
        + wire.bytes_field(8, opset)
    )


@dataclass(frozen=True)
class DetectorArrays:
    """Everything the graph builder needs, as plain numpy arrays."""

    weights: Mapping[str, np.ndarray]
    input_size: int
    fused: bool
    epsilon: float


def _conv_attrs(kernel: int, stride: int, pad: int) -> list[bytes]:
    attrs = [attr_ints("kernel_shape", [kernel, kernel])]
    if pad:
        attrs.append(attr_ints("pads", [pad, pad, pad, pad]))
    if stride != 1:
        attrs.append(attr_ints("strides", [stride, stride]))
    return attrs


def build_detector_model(arrays: DetectorArrays) -> bytes:
    """Assemble the full ModelProto for the tiny detector.

    Topology: two stride-2 conv(+BN) SiLU stages, then two 1x1 heads.
    Box decode is pure elementwise arithmetic against constant grids,
    so the whole graph needs only Conv, BatchNormalization, Sigmoid,
    Mul, Add, Transpose, Reshape, ReduceMax and ArgMax.
    """
    weights = dict(arrays.weights)
    size = arrays.input_size
    cells = (size // 4) * (size // 4)

    nodes: list[bytes] = []
    initializers: list[bytes] = []

    def init(name: str, array: np.ndarray) -> str:
        initializers.append(tensor_proto(name, array))
        return name

    def stage(tag: str, src: str, kernel: int, stride: int, pad: int) -> str:
        """Conv (+BatchNormalization when unfused) followed by SiLU."""
        conv_in = [
            src,
            init(f"{tag}.weight", weights[f"{tag}.weight"]),
            init(f"{tag}.bias", weights[f"{tag}.bias"]),
        ]
        raw = f"{tag}_raw"
        nodes.append(
            node_proto(
                "Conv", conv_in, [raw], name=f"{tag}_conv",
                attributes=_conv_attrs(kernel, stride, pad),
            )
        )
        bn_tag = "bn" + tag[-1]
        if not arrays.fused:
            bn_in = [raw] + [
                init(f"{bn_tag}.{field}", weights[f"{bn_tag}.{field}"])
                for field in ("weight", "bias", "running_mean", "running_var")
            ]
            normed = f"{tag}_norm"
            nodes.append(
                node_proto(
                    "BatchNormalization", bn_in, [normed], name=f"{bn_tag}_norm",
                    attributes=[attr_float("epsilon", arrays.epsilon)],
                )
            )
            raw = normed
        gate = f"{tag}_gate"
        nodes.append(node_proto("Sigmoid", [raw], [gate], name=f"{tag}_sigmoid"))
        act = f"{tag}_act"
        nodes.append(node_proto("Mul", [raw, gate], [act], name=f"{tag}_silu"))
        return act

    act = stage("stem1", "image", kernel=3, stride=2, pad=1)
    act = stage("stem2", act, kernel=3, stride=2, pad=1)

    for head in ("head_box", "head_cls"):
        nodes.append(
            node_proto(
                "Conv",
                [act, init(f"{head}.weight", weights[f"{head}.weight"]),
                 init(f"{head}.bias", weights[f"{head}.bias"])],
                [f"{head}_raw"],
                name=f"{head}_conv",
                attributes=_conv_attrs(1, 1, 0),
            )
        )

    boxes_shape = init("boxes_shape", np.array([cells, 4], dtype=np.int64))
    flat_shape = init("flat_shape", np.array([cells], dtype=np.int64))

    nodes += [
        node_proto("Sigmoid", ["head_box_raw"], ["box_unit"], name="box_sigmoid"),
        node_proto(
            "Mul", ["box_unit", init("extent", weights["extent"])],
            ["box_span"], name="box_scale",
        ),
        node_proto(
            "Add", [init("centers", weights["centers"]), "box_span"],
            ["box_grid"], name="box_shift",
        ),
        node_proto(
            "Transpose", ["box_grid"], ["box_nhwc"], name="box_layout",
            attributes=[attr_ints("perm", [0, 2, 3, 1])],
        ),
        node_proto("Reshape", ["box_nhwc", boxes_shape], ["boxes"], name="box_flatten"),
        node_proto("Sigmoid", ["head_cls_raw"], ["cls_prob"], name="cls_sigmoid"),
        node_proto(
            "ReduceMax", ["cls_prob"], ["score_grid"], name="score_reduce",
            attributes=[attr_ints("axes", [1]), attr_int("keepdims", 0)],
        ),
        node_proto("Reshape", ["score_grid", flat_shape], ["scores"], name="score_flatten"),
        node_proto(
            "ArgMax", ["cls_prob"], ["class_grid"], name="class_select",
            attributes=[attr_int("axis", 1), attr_int("keepdims", 0)],
        ),
        node_proto("Reshape", ["class_grid", flat_shape], ["classes"], name="class_flatten"),
    ]

    graph = graph_proto(
        name="tiny_detector",
        nodes=nodes,
        initializers=initializers,
        inputs=[value_info("image", ELEM_FLOAT, [1, 3, size, size])],
        outputs=[
            value_info("boxes", ELEM_FLOAT, [cells, 4]),
            value_info("scores", ELEM_FLOAT, [cells]),
            value_info("classes", ELEM_INT64, [cells]),
        ],
    )
    return model_proto(graph)


def export_detector(model, out_path: str | Path) -> Path:
    """Serialize a TinyDetector to `out_path` and return the path."""
    from model_export.detector import export_arrays

    out = Path(out_path)
    out.write_bytes(build_detector_model(export_arrays(model)))
    return out
