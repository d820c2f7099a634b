"""Detector, checkpoint round trip, and batch-norm folding."""

import numpy as np
import pytest
import torch

from model_export.detector import (
    TinyDetector,
    fuse_detector,
    grid_constants,
    load_checkpoint,
    random_detector,
    save_checkpoint,
)


class TestGridConstants:
    def test_centers_layout(self):
        centers, extent = grid_constants(16)
        assert centers.shape == (1, 4, 4, 4)
        # channel 0/2 vary along x (columns), channel 1/3 along y (rows)
        assert centers[0, 0, 0].tolist() == [2.0, 6.0, 10.0, 14.0]
        assert centers[0, 1, :, 0].tolist() == [2.0, 6.0, 10.0, 14.0]
        assert np.array_equal(centers[0, 0], centers[0, 2])
        assert np.array_equal(centers[0, 1], centers[0, 3])
        assert extent.reshape(-1).tolist() == [-8.0, -8.0, 8.0, 8.0]

    def test_cell_centres_cover_the_image(self):
        centers, _ = grid_constants(64)
        assert centers[0, 0].min() == 2.0
        assert centers[0, 0].max() == 62.0


class TestTinyDetector:
    def test_output_shapes_and_dtypes(self):
        model = random_detector(3, 32)
        with torch.no_grad():
            boxes, scores, classes = model(torch.zeros(1, 3, 32, 32))
        assert boxes.shape == (64, 4)
        assert scores.shape == (64,)
        assert classes.shape == (64,)
        assert classes.dtype == torch.int64
        assert model.num_cells == 64

    def test_boxes_are_ordered_corners(self):
        model = random_detector(5, 64)
        with torch.no_grad():
            boxes, scores, _ = model(torch.rand(1, 3, 64, 64))
        assert (boxes[:, 0] < boxes[:, 2]).all()
        assert (boxes[:, 1] < boxes[:, 3]).all()
        assert (scores > 0).all() and (scores < 1).all()

    @pytest.mark.parametrize("size", [0, 4, 7, 30, -16])
    def test_bad_input_size(self, size):
        with pytest.raises(ValueError, match="multiple of 4"):
            TinyDetector(size)

    def test_seeded_init_is_reproducible(self):
        a, b = random_detector(9, 32), random_detector(9, 32)
        for pa, pb in zip(a.state_dict().values(), b.state_dict().values()):
            assert torch.equal(pa, pb)
        c = random_detector(10, 32)
        assert not torch.equal(a.stem1.weight, c.stem1.weight)

    def test_randomized_bn_stats_are_not_identity(self):
        model = random_detector(11, 32)
        assert not torch.allclose(model.bn1.running_mean, torch.zeros(8))
        assert not torch.allclose(model.bn1.running_var, torch.ones(8))


class TestFusion:
    def test_fused_forward_matches_unfused(self):
        model = random_detector(21, 64)
        fused = fuse_detector(model)
        assert fused.fused and isinstance(fused.bn1, torch.nn.Identity)
        x = torch.rand(1, 3, 64, 64, generator=torch.Generator().manual_seed(0))
        with torch.no_grad():
            boxes, scores, classes = model(x)
            fboxes, fscores, fclasses = fused(x)
        assert torch.max(torch.abs(boxes - fboxes)).item() <= 1e-4
        assert torch.max(torch.abs(scores - fscores)).item() <= 1e-4
        assert torch.equal(classes, fclasses)

    def test_folding_arithmetic_single_channel(self):
        """Hand-check w' and b' with constant batch-norm parameters."""
        model = TinyDetector(8)
        conv, bn = model.stem1, model.bn1
        with torch.no_grad():
            bn.weight.fill_(2.0)
            bn.bias.fill_(-1.0)
            bn.running_mean.fill_(0.5)
            bn.running_var.fill_(3.0)
        fused = fuse_detector(model.eval())
        scale = 2.0 / np.sqrt(3.0 + bn.eps)
        want_w = conv.weight.detach().numpy() * scale
        want_b = -1.0 + (conv.bias.detach().numpy() - 0.5) * scale
        assert np.allclose(fused.stem1.weight.detach().numpy(), want_w, atol=1e-6)
        assert np.allclose(fused.stem1.bias.detach().numpy(), want_b, atol=1e-6)

    def test_double_fuse_rejected(self):
        fused = fuse_detector(random_detector(1, 32))
        with pytest.raises(ValueError, match="already fused"):
            fuse_detector(fused)


class TestCheckpoints:
    def test_round_trip(self, tmp_path):
        model = random_detector(31, 64)
        path = save_checkpoint(model, tmp_path / "det.pt")
        loaded = load_checkpoint(path)
        assert loaded.input_size == 64 and not loaded.fused
        for original, restored in zip(
            model.state_dict().values(), loaded.state_dict().values()
        ):
            assert torch.equal(original, restored)

    def test_fused_round_trip(self, tmp_path):
        fused = fuse_detector(random_detector(33, 32))
        path = save_checkpoint(fused, tmp_path / "det.pt")
        loaded = load_checkpoint(path)
        assert loaded.fused and isinstance(loaded.bn1, torch.nn.Identity)

    def test_input_size_override(self, tmp_path):
        path = save_checkpoint(random_detector(35, 64), tmp_path / "det.pt")
        loaded = load_checkpoint(path, input_size=32)
        assert loaded.input_size == 32
        assert loaded.centers.shape == (1, 4, 8, 8)
        with torch.no_grad():
            boxes, _, _ = loaded(torch.zeros(1, 3, 32, 32))
        assert boxes.shape == (64, 4)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ValueError, match="cannot load checkpoint"):
            load_checkpoint(tmp_path / "absent.pt")

    def test_garbage_file(self, tmp_path):
        path = tmp_path / "junk.pt"
        path.write_bytes(b"not a checkpoint at all")
        with pytest.raises(ValueError, match="cannot load checkpoint"):
            load_checkpoint(path)

    def test_wrong_payload(self, tmp_path):
        path = tmp_path / "other.pt"
        torch.save({"weights": [1, 2, 3]}, path)
        with pytest.raises(ValueError, match="tiny-detector-v1"):
            load_checkpoint(path)

    def test_mismatched_state_dict(self, tmp_path):
        model = random_detector(37, 32)
        payload = {
            "format": "tiny-detector-v1",
            "input_size": 32,
            "fused": True,  # claims fused but carries batch-norm tensors
            "state_dict": model.state_dict(),
        }
        path = tmp_path / "bad.pt"
        torch.save(payload, path)
        with pytest.raises(ValueError, match="does not fit"):
            load_checkpoint(path)
