"""Smoke tests for the python bindings."""

import os

import numpy as np
import pytest

import vip

DATA_DIR = os.environ.get("VIP_TEST_DATA_DIR", os.path.join(os.path.dirname(__file__), "..", "data"))


@pytest.fixture(scope="module")
def toy_model():
    cfg = vip.ViTConfig()
    cfg.resolution = 64
    cfg.patch_dim = 16
    cfg.embed_dim = 64
    cfg.num_heads = 4
    cfg.num_layers = 4
    cfg.mlp_hidden_dim = 128
    return vip.init_random(cfg, 7)


@pytest.fixture(scope="module")
def fixture_image():
    return vip.read_ppm(os.path.join(DATA_DIR, "fixture_64.ppm"))


def test_config_and_roi(toy_model):
    cfg = toy_model.config
    assert cfg.seq_len == 17
    roi = vip.extract_roi_token_idx([vip.BoundingBox(0, 0, 32, 32)], cfg)
    assert roi.indices == [1, 2, 5, 6]
    assert not roi.contains(0)


def test_forward_traces_attention(toy_model, fixture_image):
    out = vip.forward(toy_model, fixture_image, 4)
    assert out.tokens.shape == (17, 64)
    attn = out.trace.attention(0, 0)
    assert attn.shape == (17, 17)
    np.testing.assert_allclose(attn.sum(axis=1), 1.0, atol=1e-5)

    rollout = vip.attention_rollout(out.trace, 4)
    np.testing.assert_allclose(rollout.sum(axis=1), 1.0, atol=1e-4)


def test_ppm_round_trip(tmp_path, fixture_image):
    path = str(tmp_path / "copy.ppm")
    vip.write_ppm(fixture_image, path)
    again = vip.read_ppm(path)
    np.testing.assert_array_equal(fixture_image, again)


def test_ssim_and_cosine(fixture_image):
    assert vip.ssim(fixture_image, fixture_image) == pytest.approx(1.0)
    assert vip.cosine_similarity([1.0, 0.0], [0.0, 2.0]) == pytest.approx(0.0)


def test_resize_and_box_scaling(fixture_image):
    small = vip.resize_bilinear(fixture_image, 32)
    assert small.shape == (3, 32, 32)
    box = vip.scale_box(vip.BoundingBox(0, 0, 32, 32), 64, 64, 224, 224)
    assert (box.x0, box.y0, box.x1, box.y1) == (0, 0, 112, 112)


def test_short_attack_reduces_loss(toy_model, fixture_image):
    cfg = toy_model.config
    roi = vip.extract_roi_token_idx([vip.BoundingBox(0, 0, 32, 32)], cfg)
    attack = vip.AttackConfig()
    attack.mode = "A+V"
    attack.l_max = 2
    attack.max_iters = 40
    result = vip.run_attack(toy_model, fixture_image, roi, attack)

    assert result.iterations == 40
    assert result.stop_reason == "max_iters"
    losses = [total for total, _, _ in result.loss_history]
    assert losses[-1] < losses[0]
    assert result.adversarial_image.min() >= 0.0
    assert result.adversarial_image.max() <= 255.0
    assert 0.0 <= result.metrics["ssim"] <= 1.0


def test_erroring_calls_raise(toy_model):
    with pytest.raises(Exception):
        vip.extract_roi_token_idx([], toy_model.config)
    bad = vip.ViTConfig()
    bad.embed_dim = 65
    with pytest.raises(Exception):
        bad.validate()
