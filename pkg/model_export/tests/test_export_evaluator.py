"""Reference-executor checks: each operator against an independent
oracle (torch or direct numpy arithmetic), then the whole graph against
the network that produced it."""

import numpy as np
import pytest
import torch

from model_export.detector import fuse_detector, random_detector
from model_export.evaluator import EvalNode, _OPS, load_model, run_model
from model_export.onnx_model import export_detector


def _node(op, n_in=1, **attrs):
    names = tuple(f"in{i}" for i in range(n_in))
    return EvalNode(op_type=op, inputs=names, outputs=("out",), name="t", attrs=attrs)


def _apply(op, values, **attrs):
    return _OPS[op](_node(op, n_in=len(values), **attrs), values)


class TestConv:
    @pytest.mark.parametrize("stride,pad,kernel", [(1, 0, 1), (1, 1, 3), (2, 1, 3), (2, 0, 2)])
    def test_against_torch(self, stride, pad, kernel):
        rng = np.random.default_rng(kernel * 10 + stride)
        x = rng.standard_normal((1, 5, 9, 9))
        w = rng.standard_normal((7, 5, kernel, kernel))
        b = rng.standard_normal(7)
        got = _apply(
            "Conv", [x, w, b],
            kernel_shape=[kernel, kernel],
            pads=[pad, pad, pad, pad],
            strides=[stride, stride],
        )
        want = torch.nn.functional.conv2d(
            torch.from_numpy(x), torch.from_numpy(w), torch.from_numpy(b),
            stride=stride, padding=pad,
        ).numpy()
        assert got.shape == want.shape
        assert np.allclose(got, want, atol=1e-10)

    def test_defaults_mean_unit_stride_no_pad(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((1, 2, 4, 4))
        w = rng.standard_normal((3, 2, 3, 3))
        got = _apply("Conv", [x, w], kernel_shape=[3, 3])
        want = torch.nn.functional.conv2d(torch.from_numpy(x), torch.from_numpy(w)).numpy()
        assert np.allclose(got, want, atol=1e-10)

    def test_grouped_conv_rejected(self):
        x = np.zeros((1, 2, 4, 4))
        w = np.zeros((2, 1, 1, 1))
        with pytest.raises(ValueError, match="grouped"):
            _apply("Conv", [x, w], kernel_shape=[1, 1], group=2)


class TestElementwise:
    def test_batch_norm_formula(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((1, 3, 4, 4))
        scale, bias = rng.standard_normal(3), rng.standard_normal(3)
        mean, var = rng.standard_normal(3), rng.uniform(0.5, 2.0, 3)
        got = _apply("BatchNormalization", [x, scale, bias, mean, var], epsilon=1e-5)
        want = torch.nn.functional.batch_norm(
            torch.from_numpy(x), torch.from_numpy(mean), torch.from_numpy(var),
            torch.from_numpy(scale), torch.from_numpy(bias), eps=1e-5,
        ).numpy()
        assert np.allclose(got, want, atol=1e-12)

    def test_sigmoid_stable_at_extremes(self):
        x = np.array([-1000.0, -20.0, 0.0, 20.0, 1000.0])
        with np.errstate(over="raise", invalid="raise"):
            got = _apply("Sigmoid", [x])
        want = [0.0, 1.0 / (1.0 + np.exp(20.0)), 0.5, 1.0 / (1.0 + np.exp(-20.0)), 1.0]
        assert np.allclose(got, want, atol=1e-15)

    def test_broadcast_mul_add(self):
        a = np.arange(24, dtype=float).reshape(1, 4, 2, 3)
        b = np.array([1.0, -1.0, 2.0, 0.5]).reshape(1, 4, 1, 1)
        assert np.array_equal(_apply("Mul", [a, b]), a * b)
        assert np.array_equal(_apply("Add", [a, b]), a + b)


class TestShapeOps:
    def test_transpose(self):
        x = np.arange(24).reshape(1, 4, 2, 3)
        got = _apply("Transpose", [x], perm=[0, 2, 3, 1])
        assert got.shape == (1, 2, 3, 4)
        assert got[0, 1, 2, 3] == x[0, 3, 1, 2]

    def test_reshape_with_explicit_dims(self):
        x = np.arange(12.0).reshape(1, 3, 4)
        got = _apply("Reshape", [x, np.array([12], dtype=np.int64)])
        assert got.shape == (12,)
        assert np.array_equal(got, x.reshape(-1))

    def test_reshape_zero_keeps_source_dim(self):
        x = np.zeros((2, 3, 4))
        got = _apply("Reshape", [x, np.array([0, 12], dtype=np.int64)])
        assert got.shape == (2, 12)

    def test_reduce_max_and_argmax(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((1, 4, 5, 5))
        reduced = _apply("ReduceMax", [x], axes=[1], keepdims=0)
        assert reduced.shape == (1, 5, 5)
        assert np.array_equal(reduced, x.max(axis=1))
        picked = _apply("ArgMax", [x], axis=1, keepdims=0)
        assert picked.dtype == np.int64
        assert np.array_equal(picked, x.argmax(axis=1))
        kept = _apply("ArgMax", [x], axis=1, keepdims=1)
        assert kept.shape == (1, 1, 5, 5)


@pytest.fixture(scope="module")
def pair(tmp_path_factory):
    model = random_detector(77, 64)
    path = export_detector(model, tmp_path_factory.mktemp("eval") / "m.onnx")
    return model, load_model(path)


class TestWholeGraph:
    def test_matches_torch_forward(self, pair):
        model, loaded = pair
        rng = np.random.default_rng(6)
        x = rng.random((1, 3, 64, 64), dtype=np.float32)
        boxes, scores, classes = run_model(loaded, {"image": x})
        with torch.no_grad():
            tb, ts, tc = model(torch.from_numpy(x))
        assert np.abs(boxes - tb.numpy()).max() <= 1e-3
        assert np.abs(scores - ts.numpy()).max() <= 1e-5
        assert np.array_equal(classes, tc.numpy())

    def test_fused_export_matches_torch(self, pair, tmp_path):
        model, _ = pair
        fused = fuse_detector(model)
        loaded = load_model(export_detector(fused, tmp_path / "f.onnx"))
        assert not any(n.op_type == "BatchNormalization" for n in loaded.nodes)
        x = np.random.default_rng(7).random((1, 3, 64, 64), dtype=np.float32)
        boxes, scores, classes = run_model(loaded, {"image": x})
        with torch.no_grad():
            tb, ts, tc = fused(torch.from_numpy(x))
        assert np.abs(boxes - tb.numpy()).max() <= 1e-3
        assert np.array_equal(classes, tc.numpy())

    def test_declared_shapes_are_static_and_honoured(self, pair):
        _, loaded = pair
        assert [tuple(i.dims) for i in loaded.inputs] == [(1, 3, 64, 64)]
        declared = {o.name: tuple(o.dims) for o in loaded.outputs}
        assert declared == {"boxes": (256, 4), "scores": (256,), "classes": (256,)}
        assert all(
            isinstance(d, int) for info in loaded.inputs + loaded.outputs for d in info.dims
        )
        outs = run_model(loaded, {"image": np.zeros((1, 3, 64, 64), dtype=np.float32)})
        for info, array in zip(loaded.outputs, outs):
            assert array.shape == tuple(info.dims)

    def test_missing_feed(self, pair):
        _, loaded = pair
        with pytest.raises(ValueError, match="missing feed"):
            run_model(loaded, {})

    def test_unsupported_op(self, pair):
        from dataclasses import replace

        _, loaded = pair
        bogus = EvalNode(op_type="Gemm", inputs=("image",), outputs=("y",), name="g", attrs={})
        broken = replace(loaded, nodes=(bogus,))
        with pytest.raises(ValueError, match="Gemm"):
            run_model(broken, {"image": np.zeros((1, 3, 64, 64), dtype=np.float32)})

    def test_malformed_file(self, tmp_path):
        bad = tmp_path / "junk.onnx"
        bad.write_bytes(b"\xff\xff\xff\xff\xff")
        with pytest.raises(ValueError):
            load_model(bad)

    def test_file_without_graph(self, tmp_path):
        from model_export import protowire as wire

        empty = tmp_path / "hollow.onnx"
        empty.write_bytes(wire.varint_field(1, 8))
        with pytest.raises(ValueError, match="no graph"):
            load_model(empty)
