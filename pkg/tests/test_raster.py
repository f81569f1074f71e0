import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from xbdpatch.errors import DecodeError
from xbdpatch.raster import CropWindow, EmptyIndex, RgbaRaster, crop, empty_count, empty_ratio, load_image

from oracles import naive_empty_ratio


def solid(h, w, rgba):
    return RgbaRaster(np.broadcast_to(np.array(rgba, dtype=np.uint8), (h, w, 4)).copy())


def test_load_forces_opaque_alpha(tmp_path):
    p = tmp_path / "tile.png"
    rgba = np.random.default_rng(0).integers(0, 256, (64, 48, 4), dtype=np.uint8)
    rgba[..., 3] = 0
    Image.fromarray(rgba).save(p)
    r = load_image(p)
    assert (r.width, r.height) == (48, 64)
    assert (r.pixels[..., 3] == 255).all()
    assert np.array_equal(r.pixels[..., :3], rgba[..., :3])


def test_load_large_tile(tmp_path):
    p = tmp_path / "big.png"
    Image.fromarray(np.full((1024, 1024, 3), 90, dtype=np.uint8)).save(p)
    r = load_image(p)
    assert r.dims == (1024, 1024)
    assert (r.pixels[..., 3] == 255).all()


def test_load_single_black_pixel(tmp_path):
    p = tmp_path / "one.png"
    Image.fromarray(np.zeros((1, 1, 3), dtype=np.uint8)).save(p)
    assert load_image(p).pixels.tolist() == [[[0, 0, 0, 255]]]


def test_load_corrupt(tmp_path):
    p = tmp_path / "bad.png"
    p.write_bytes(b"\x89PNG\r\n\x1a\nthis is not really a png")
    with pytest.raises(DecodeError):
        load_image(p)


def test_load_rejects_16_bit(tmp_path):
    p = tmp_path / "deep.png"
    Image.fromarray(np.full((4, 4), 40000, dtype=np.uint16)).save(p)
    with pytest.raises(DecodeError):
        load_image(p)


def test_load_missing_is_os_error(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_image(tmp_path / "nope.png")


def test_raster_is_read_only():
    r = solid(2, 2, (1, 2, 3, 255))
    with pytest.raises(ValueError):
        r.pixels[0, 0, 0] = 9


def test_crop_interior_exact():
    px = np.random.default_rng(1).integers(0, 256, (50, 60, 4), dtype=np.uint8)
    r = RgbaRaster(px)
    patch = crop(r, CropWindow(7, 11, 20))
    assert np.array_equal(patch.pixels, px[11:31, 7:27])


def test_crop_small_raster_pads_transparent_black():
    r = solid(100, 100, (200, 200, 200, 255))
    patch = crop(r, CropWindow(-62, -62, 224))
    assert patch.pixels.shape == (224, 224, 4)
    src = np.all(patch.pixels == (200, 200, 200, 255), axis=-1).sum()
    fill = np.all(patch.pixels == 0, axis=-1).sum()
    assert (src, fill) == (10000, 40176)
    assert empty_ratio(patch) == 40176 / 224 ** 2


def test_crop_idempotent():
    px = np.random.default_rng(2).integers(0, 256, (40, 40, 4), dtype=np.uint8)
    first = crop(RgbaRaster(px), CropWindow(-5, 30, 16))
    again = crop(first, CropWindow(0, 0, 16))
    assert np.array_equal(first.pixels, again.pixels)


@given(st.integers(-80, 80), st.integers(-80, 80), st.integers(1, 64))
def test_crop_never_out_of_bounds(x1, y1, size):
    r = solid(30, 20, (50, 60, 70, 255))
    patch = crop(r, CropWindow(x1, y1, size))
    assert patch.pixels.shape == (size, size, 4)


def test_empty_ratio_examples():
    assert empty_ratio(solid(8, 8, (128, 128, 128, 255))) == 0.0
    px = np.zeros((8, 8, 4), dtype=np.uint8)
    px[..., 3] = 255
    px[:, 4:, :3] = 200
    assert empty_ratio(RgbaRaster(px)) == 0.5


def test_black_boundary_is_inclusive():
    assert empty_ratio(solid(1, 1, (10, 10, 10, 255))) == 1.0
    assert empty_ratio(solid(1, 1, (11, 0, 0, 255))) == 0.0
    assert empty_ratio(solid(1, 1, (200, 200, 200, 0))) == 1.0


def test_empty_ratio_matches_naive_loop(rng):
    for _ in range(50):
        s = int(rng.integers(1, 20))
        px = rng.integers(0, 16, (s, s, 4), dtype=np.uint8)
        px[..., 3] = rng.choice([0, 255, 7], size=(s, s))
        assert empty_ratio(RgbaRaster(px)) == naive_empty_ratio(px)


@settings(max_examples=50)
@given(st.integers(0, 2 ** 32 - 1))
def test_empty_ratio_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    px = rng.integers(0, 20, (12, 12, 4), dtype=np.uint8)
    flat = px.reshape(-1, 4)[rng.permutation(144)].reshape(12, 12, 4)
    assert empty_ratio(RgbaRaster(px)) == empty_ratio(RgbaRaster(flat))


def test_adding_bright_pixels_lowers_ratio_by_k():
    px = np.zeros((10, 10, 4), dtype=np.uint8)
    assert empty_ratio(RgbaRaster(px)) == 1.0
    px[0, :7] = (250, 250, 250, 255)
    assert empty_ratio(RgbaRaster(px)) == (100 - 7) / 100


def test_empty_index_matches_crop(rng):
    px = rng.integers(0, 30, (40, 50, 4), dtype=np.uint8)
    px[..., 3] = rng.choice([0, 255], size=(40, 50), p=[0.2, 0.8])
    r = RgbaRaster(px)
    index = EmptyIndex(r)
    for _ in range(200):
        w = CropWindow(int(rng.integers(-30, 60)), int(rng.integers(-30, 50)), int(rng.integers(1, 45)))
        assert index.empty_count(w) == empty_count(crop(r, w))
