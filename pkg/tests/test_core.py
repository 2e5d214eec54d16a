import numpy as np
import pytest
import torch
import torch.nn.functional as F
from hypothesis import given, settings
from hypothesis import strategies as st

from bsnet import core


def test_sobel_constant_map_is_zero():
    g = core.sobel_gradients(np.full((5, 5), 2.0))
    assert np.all(g.gx == 0.0)
    assert np.all(g.gy == 0.0)


def test_sobel_horizontal_ramp():
    m = np.fromfunction(lambda r, c: c, (6, 8))
    g = core.sobel_gradients(m)
    assert np.allclose(g.gx[1:-1, 1:-1], 8.0)
    assert np.allclose(g.gy, 0.0)


def test_sobel_vertical_ramp_transpose_symmetry():
    m = np.fromfunction(lambda r, c: r, (8, 6))
    g = core.sobel_gradients(m)
    assert np.allclose(g.gy[1:-1, 1:-1], 8.0)
    assert np.allclose(g.gx, 0.0)


def test_sobel_output_shape_matches_input():
    g = core.sobel_gradients(np.zeros((4, 9)))
    assert g.gx.shape == (4, 9)
    assert g.gy.shape == (4, 9)


@pytest.mark.parametrize("shape", [(2, 5), (5, 2), (1, 1)])
def test_sobel_rejects_small_maps(shape):
    with pytest.raises(ValueError):
        core.sobel_gradients(np.zeros(shape))


@given(st.integers(0, 2**32 - 1), st.floats(-3, 3), st.floats(-3, 3))
@settings(max_examples=50, deadline=None)
def test_sobel_linearity(seed, a, b):
    r = np.random.default_rng(seed)
    m1 = r.random((8, 8))
    m2 = r.random((8, 8))
    lhs = core.sobel_gradients(a * m1 + b * m2)
    g1 = core.sobel_gradients(m1)
    g2 = core.sobel_gradients(m2)
    assert np.allclose(lhs.gx, a * g1.gx + b * g2.gx, atol=1e-9)
    assert np.allclose(lhs.gy, a * g1.gy + b * g2.gy, atol=1e-9)


def test_resize_constant_stays_constant():
    out = core.resize_bilinear(np.full((4, 4), 3.25), 2, 2)
    assert out.shape == (2, 2)
    assert np.allclose(out, 3.25)


def test_resize_identity_is_exact(rng):
    m = rng.random((7, 11))
    assert np.abs(core.resize_bilinear(m, 7, 11) - m).max() < 1e-6


def test_resize_1x2_upsample_hand_values():
    # Half-pixel source positions for 2 -> 4 are {-0.25, 0.25, 0.75, 1.25};
    # clamped linear interpolation of [0, 1] gives these values.
    out = core.resize_bilinear(np.array([[0.0, 1.0]]), 1, 4)
    assert np.allclose(out, [[0.0, 0.25, 0.75, 1.0]])


@given(st.integers(0, 2**32 - 1), st.integers(1, 24), st.integers(1, 24))
@settings(max_examples=40, deadline=None)
def test_resize_matches_torch_and_preserves_bounds(seed, out_h, out_w):
    r = np.random.default_rng(seed)
    m = r.random((5, 9))
    mine = core.resize_bilinear(m, out_h, out_w)
    ref = F.interpolate(torch.from_numpy(m)[None, None], size=(out_h, out_w),
                        mode="bilinear", align_corners=False).numpy()[0, 0]
    assert np.abs(mine - ref).max() < 1e-9
    assert mine.min() >= m.min() - 1e-12
    assert mine.max() <= m.max() + 1e-12


def test_resize_multichannel():
    m = np.stack([np.zeros((4, 4)), np.ones((4, 4))])
    out = core.resize_bilinear(m, 8, 8)
    assert out.shape == (2, 8, 8)
    assert np.allclose(out[0], 0.0) and np.allclose(out[1], 1.0)


def test_resize_rejects_bad_targets():
    with pytest.raises(ValueError):
        core.resize_bilinear(np.zeros((4, 4)), 0, 4)
    with pytest.raises(ValueError):
        core.resize_bilinear(np.zeros((4, 4)), 4, -1)


def test_center_crop_standard_protocol_offsets():
    m = np.fromfunction(lambda r, c: r * 1000 + c, (240, 320))
    out = core.center_crop(m, 228, 304)
    assert core.crop_offsets(240, 320, 228, 304) == (6, 8)
    assert out[0, 0] == 6 * 1000 + 8
    assert out.shape == (228, 304)


def test_center_crop_identity(rng):
    m = rng.random((9, 13))
    assert np.array_equal(core.center_crop(m, 9, 13), m)


def test_center_crop_odd_difference_drops_bottom_right():
    m = np.fromfunction(lambda r, c: r * 10 + c, (5, 5))
    out = core.center_crop(m, 3, 3)
    assert core.crop_offsets(5, 5, 3, 3) == (1, 1)
    assert np.array_equal(out, m[1:4, 1:4])


@given(st.integers(0, 2**32 - 1), st.integers(1, 8), st.integers(1, 8))
@settings(max_examples=40, deadline=None)
def test_center_crop_equals_direct_slice(seed, out_h, out_w):
    r = np.random.default_rng(seed)
    m = r.random((8, 8))
    out = core.center_crop(m, out_h, out_w)
    r0, c0 = core.crop_offsets(8, 8, out_h, out_w)
    assert np.array_equal(out, m[r0 : r0 + out_h, c0 : c0 + out_w])


def test_center_crop_rejects_oversized_window():
    with pytest.raises(ValueError):
        core.center_crop(np.zeros((4, 4)), 5, 3)


def test_depth_map_invariants():
    with pytest.raises(ValueError):
        core.DepthMap(values=np.full((2, 2), 1.0))
    with pytest.raises(ValueError):
        core.DepthMap(values=-np.ones((4, 4)))
    # negative values are fine where the mask is false
    d = core.DepthMap(values=-np.ones((4, 4)), valid_mask=np.zeros((4, 4), dtype=bool))
    assert d.shape == (4, 4)


def test_rgb_image_invariants():
    with pytest.raises(ValueError):
        core.RgbImage(values=np.full((3, 4, 4), 1.5))
    with pytest.raises(ValueError):
        core.RgbImage(values=np.zeros((1, 4, 4)))


def test_feature_map_invariants():
    t = torch.zeros(1, 4, 8, 8)
    fm = core.FeatureMap(values=t, stride=8)
    assert fm.spatial == (8, 8)
    with pytest.raises(ValueError):
        core.FeatureMap(values=t, stride=3)
    with pytest.raises(ValueError):
        core.FeatureMap(values=torch.zeros(2, 2), stride=2)


def test_depth_png_roundtrip(tmp_path):
    values = np.array([[2.5, 0.0, 1.0], [0.004, 65.0, 0.3], [1.0, 2.0, 3.0]])
    d = core.DepthMap(values=values, valid_mask=values > 0)
    path = tmp_path / "d.png"
    core.write_depth_png(path, d)
    back = core.read_depth_png(path)
    # millimeter quantization, zero = invalid
    assert back.values[0, 0] == 2.5
    assert not back.valid_mask[0, 1]
    assert np.abs(back.values[back.valid_mask] - values[back.valid_mask]).max() <= 5e-4


def test_depth_raw_roundtrip_bitwise(tmp_path, rng):
    values = (rng.random((6, 7)) + 0.5).astype(np.float32).astype(np.float64)
    d = core.DepthMap(values=values)
    path = tmp_path / "d.raw"
    core.write_depth_raw(path, d)
    back = core.read_depth_raw(path)
    assert np.array_equal(back.values, values)
    assert back.valid_mask.all()


def test_depth_raw_bad_magic(tmp_path):
    path = tmp_path / "bad.raw"
    path.write_bytes(b"NOPE" + b"\x00" * 20)
    with pytest.raises(core.DataError):
        core.read_depth_raw(path)


def test_depth_raw_truncated(tmp_path):
    path = tmp_path / "short.raw"
    path.write_bytes(core.RAW_DEPTH_MAGIC + np.asarray([4, 4], "<u4").tobytes() + b"\x00" * 8)
    with pytest.raises(core.DataError):
        core.read_depth_raw(path)


def test_read_depth_file_dispatches_on_magic(tmp_path):
    d = core.DepthMap(values=np.full((4, 4), 2.0))
    core.write_depth_raw(tmp_path / "a.bin", d)
    core.write_depth_png(tmp_path / "a.png", d)
    assert np.allclose(core.read_depth_file(tmp_path / "a.bin").values, 2.0)
    assert np.allclose(core.read_depth_file(tmp_path / "a.png").values, 2.0)


def test_rgb_png_roundtrip(tmp_path, rng):
    img = core.RgbImage(values=np.round(rng.random((3, 5, 6)) * 255) / 255)
    core.write_rgb_png(tmp_path / "i.png", img)
    back = core.read_rgb_png(tmp_path / "i.png")
    assert np.abs(back.values - img.values).max() < 1e-9


def test_missing_files_raise_data_error(tmp_path):
    with pytest.raises(core.DataError):
        core.read_depth_file(tmp_path / "missing.raw")
    with pytest.raises(core.DataError):
        core.read_rgb_png(tmp_path / "missing.png")
