import numpy as np
import pytest
import torch

from crossvad.inference.features import (VGG16_LAYERS, FeatureError, FeatureExtractor, FeatureExtractorSpec,
                                         _vgg16_trunk, canonical_layer)
from crossvad.inference.scoring import heatmap_from_frame_pair


def test_layer_names():
    for alias in ("3-3", "conv3-3", "conv3_3", "(3-3)"):
        assert canonical_layer(alias) == "conv3_3"
    assert len(VGG16_LAYERS) == 13
    with pytest.raises(FeatureError):
        canonical_layer("conv6_1")
    with pytest.raises(FeatureError):
        FeatureExtractorSpec(tap_layer="1-3")


def test_conv3_3_shape_and_determinism(rng):
    img = rng.random((256, 256, 3)).astype(np.float32)
    a = FeatureExtractor(FeatureExtractorSpec(seed=5))(img)
    assert a.shape == (256, 64, 64)
    assert (a >= 0).all()  # post-ReLU tap
    b = FeatureExtractor(FeatureExtractorSpec(seed=5))(img)
    assert np.array_equal(a, b)


@pytest.mark.parametrize("layer,channels,down", [("conv1_1", 64, 1), ("conv2_2", 128, 2),
                                                 ("conv4_1", 512, 8), ("conv5_3", 512, 16)])
def test_layer_geometry(layer, channels, down):
    spec = FeatureExtractorSpec(tap_layer=layer)
    assert spec.channels == channels and spec.downsampling == down
    out = FeatureExtractor(spec)(np.zeros((2, 32, 32, 3), np.float32))
    assert out.shape == (2, channels, 32 // down, 32 // down)


def test_frame_heatmap(rng):
    f = rng.random((64, 64, 3)).astype(np.float32)
    g = rng.random((64, 64, 3)).astype(np.float32)
    spec = FeatureExtractorSpec()
    assert not heatmap_from_frame_pair(f, f, spec).values.any()
    hm = heatmap_from_frame_pair(f, g, spec)
    assert hm.shape == (16, 16) and hm.domain == "frame"
    ext = FeatureExtractor(spec)
    fa, fb = ext(np.stack([f, g])).astype(np.float64)
    oracle = np.zeros((16, 16))
    for c in range(fa.shape[0]):
        for i in range(16):
            for j in range(16):
                oracle[i, j] += (fa[c, i, j] - fb[c, i, j]) ** 2
    assert np.allclose(hm.values, oracle, rtol=0, atol=1e-6)


def test_weights_file(tmp_path, rng):
    torch.manual_seed(9)
    state = {f"features.{k}": v for k, v in _vgg16_trunk().state_dict().items()}
    torch.save(state, tmp_path / "vgg.pth")
    spec = FeatureExtractorSpec(tap_layer="conv2_1", weights=str(tmp_path / "vgg.pth"))
    out = FeatureExtractor(spec)(rng.random((16, 16, 3)).astype(np.float32))
    assert out.shape == (128, 8, 8)

    (tmp_path / "bad.pth").write_bytes(b"garbage")
    with pytest.raises(FeatureError):
        FeatureExtractor(FeatureExtractorSpec(weights=str(tmp_path / "bad.pth")))
    torch.save({"features.0.weight": torch.zeros(1)}, tmp_path / "wrong.pth")
    with pytest.raises(FeatureError):
        FeatureExtractor(FeatureExtractorSpec(weights=str(tmp_path / "wrong.pth")))
