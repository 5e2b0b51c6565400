import io
import zlib

import numpy as np
import pytest

from sparseinr import imageio

PIL = pytest.importorskip("PIL.Image")


def pil_png(array, mode=None, **save_kw):
    buf = io.BytesIO()
    PIL.fromarray(array, mode=mode).save(buf, format="PNG", **save_kw)
    return buf.getvalue()


@pytest.mark.parametrize("shape", [(5, 7), (5, 7, 3), (5, 7, 4), (1, 1, 3), (33, 2, 3)])
def test_png_decode_matches_pillow(rng, shape):
    img = rng.integers(0, 256, shape, dtype=np.uint8)
    out = imageio.decode_png(pil_png(img))
    want = img if img.ndim == 3 else img[:, :, None]
    assert np.array_equal(out, want)


def test_png_palette_and_16_bit(rng):
    img = rng.integers(0, 256, (6, 9, 3), dtype=np.uint8)
    pal = PIL.fromarray(img).convert("P", palette=PIL.Palette.ADAPTIVE, colors=16)
    buf = io.BytesIO()
    pal.save(buf, format="PNG")
    assert np.array_equal(imageio.decode_png(buf.getvalue()), np.asarray(pal.convert("RGB")))
    deep = rng.integers(0, 65536, (4, 5), dtype=np.uint16)
    buf = io.BytesIO()
    PIL.fromarray(deep).save(buf, format="PNG")
    out = imageio.decode_png(buf.getvalue())
    assert out.dtype == np.uint16 and np.array_equal(out[:, :, 0], deep)


def test_png_all_filter_types_via_optimize(rng):
    # smooth gradients make the encoder pick sub/up/average/paeth filters
    y, x = np.mgrid[0:40, 0:40]
    img = np.stack([x * 6, y * 6, (x + y) * 3], axis=2).astype(np.uint8)
    assert np.array_equal(imageio.decode_png(pil_png(img, optimize=True)), img)


def test_png_crc_error_detected(rng):
    data = bytearray(pil_png(rng.integers(0, 256, (4, 4, 3), dtype=np.uint8)))
    data[40] ^= 0xFF
    with pytest.raises(imageio.ImageFormatError):
        imageio.decode_png(bytes(data))


def test_png_and_ppm_round_trip(tmp_path, rng):
    img = rng.integers(0, 256, (6, 4, 3), dtype=np.uint8)
    for name in ("a.png", "a.ppm"):
        imageio.write_image(tmp_path / name, img)
        assert np.array_equal(imageio.read_image(tmp_path / name), img)
    assert np.array_equal(np.asarray(PIL.open(tmp_path / "a.png")), img)
    assert np.array_equal(np.asarray(PIL.open(tmp_path / "a.ppm")), img)


def test_pnm_with_comments_and_grayscale():
    data = b"P5\n# a comment\n3 2\n255\n" + bytes([0, 10, 20, 30, 40, 255])
    out = imageio.decode_pnm(data)
    assert out.shape == (2, 3, 1) and out[1, 2, 0] == 255


def test_unknown_format_rejected(tmp_path):
    (tmp_path / "x.png").write_bytes(b"GIF89a....")
    with pytest.raises(imageio.ImageFormatError):
        imageio.read_image(tmp_path / "x.png")


def test_unit_float_conversions():
    rgba = np.full((1, 1, 4), 255, dtype=np.uint8)
    assert imageio.to_unit_float(rgba).shape == (1, 1, 3)
    assert imageio.to_uint8(np.array([-0.2, 0.5, 1.7])).tolist() == [0, 128, 255]
