import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tsfc.autodiff import NumericError
from tsfc.explain import (CamMap, bilinear_resize, cam_from_activations, export_cam, gradcam, half_masses,
                          overlay_pixels, read_ppm)
from tsfc.model import ATTENTION, CONCAT, cpx_arch, init_params, wafer_arch


def imgs(k, s, seed=0):
    return np.random.default_rng(seed).uniform(-1, 1, (k, s, s))


def test_uniform_activation_gives_uniform_cam():
    a = np.ones((1, 4, 4))
    g = np.full((1, 4, 4), 1 / 16)  # d(mean)/dA
    np.testing.assert_array_equal(cam_from_activations(a, g, 8), np.ones((8, 8)))


def test_zero_activation_gives_zero_cam():
    cam = cam_from_activations(np.zeros((3, 4, 4)), np.ones((3, 4, 4)), 8)
    np.testing.assert_array_equal(cam, np.zeros((8, 8)))


@pytest.mark.parametrize("arch,s", [(cpx_arch(conv1=(4, 3), conv2=(5, 3)), 12), (wafer_arch(), 16)])
@pytest.mark.parametrize("mode", [ATTENTION, CONCAT])
def test_gradcam_range_and_shape(arch, s, mode):
    p = init_params(arch, mode, 2, 2, seed=1, image_size=s)
    for ch in range(2):
        for cls in range(2):
            cam = gradcam(p, imgs(2, s), cls, ch)
            assert cam.data.shape == (s, s)
            assert cam.data.min() >= 0 and cam.data.max() <= 1
            assert cam.data.max() == 1.0 or not cam.data.any()


def test_gradcam_ignores_other_class_bias():
    p = init_params(cpx_arch(conv1=(4, 3), conv2=(5, 3)), ATTENTION, 2, 2, seed=2, image_size=10)
    x = imgs(2, 10, seed=3)
    before = gradcam(p, x, 1, 0).data
    p["classifier.bias"].data[0] += 5.0
    after = gradcam(p, x, 1, 0).data
    np.testing.assert_array_equal(before, after)


def test_gradcam_leaves_param_grads_clean():
    p = init_params(cpx_arch(conv1=(4, 3), conv2=(5, 3)), ATTENTION, 2, 2, seed=2, image_size=10)
    gradcam(p, imgs(2, 10), 0, 1)
    assert all(t.grad is None for t in p.parameters())


def test_gradcam_rejects_nan_params():
    p = init_params(cpx_arch(conv1=(4, 3), conv2=(5, 3)), ATTENTION, 2, 2, seed=2, image_size=10)
    p["conv1.weight"].data[0, 0, 0, 0] = np.nan
    with pytest.raises(NumericError):
        gradcam(p, imgs(2, 10), 0, 0)


@given(st.integers(2, 8), st.integers(2, 4), st.integers(0, 10_000))
@settings(max_examples=50)
def test_bilinear_keeps_peak_near_source(coarse, factor, seed):
    g = np.random.default_rng(seed)
    img = g.uniform(0, 0.5, (coarse, coarse))
    r, c = g.integers(0, coarse, 2)
    img[r, c] = 1.0
    up = bilinear_resize(img, coarse * factor)
    ur, uc = np.unravel_index(np.argmax(up), up.shape)
    assert abs(ur // factor - r) <= 1 and abs(uc // factor - c) <= 1


def test_bilinear_identity_and_constant():
    x = np.arange(9.0).reshape(3, 3)
    np.testing.assert_array_equal(bilinear_resize(x, 3), x)
    np.testing.assert_allclose(bilinear_resize(np.full((2, 2), 4.0), 7), np.full((7, 7), 4.0))


def test_overlay_zero_cam_is_grayscale():
    under = np.linspace(-1, 1, 16).reshape(4, 4)
    rgb = overlay_pixels(np.zeros((4, 4)), under)
    assert (rgb[..., 0] == rgb[..., 1]).all() and (rgb[..., 1] == rgb[..., 2]).all()
    assert rgb[..., 0].min() == 0 and rgb[..., 0].max() == 255


def test_overlay_full_cam_is_green():
    rgb = overlay_pixels(np.ones((4, 4)), np.random.default_rng(0).standard_normal((4, 4)))
    assert (rgb[..., 0] == 0).all() and (rgb[..., 1] == 255).all() and (rgb[..., 2] == 0).all()


def test_export_cam_ppm(tmp_path):
    cam = CamMap(0, np.random.default_rng(1).uniform(0, 1, (6, 6)), 1)
    path = export_cam(cam, np.random.default_rng(2).standard_normal((6, 6)), tmp_path / "c.ppm")
    assert path.read_text().startswith("P3\n6 6\n255\n")
    assert read_ppm(path).shape == (6, 6, 3)
    with pytest.raises(ValueError):
        export_cam(cam, np.zeros((5, 5)), tmp_path / "bad.ppm")
    with pytest.raises(OSError):
        export_cam(cam, np.zeros((6, 6)), tmp_path / "missing" / "dir" / "c.ppm")


def test_half_masses():
    cam = np.zeros((4, 4))
    cam[2:, 2:] = 1
    assert half_masses(cam) == (0.0, 4.0)
