import io

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from PIL import Image

from mrag import jpeg
from tests.conftest import ref_encode, run_ref


def pil_bytes(rgb, **kw):
    buf = io.BytesIO()
    Image.fromarray(rgb).save(buf, "JPEG", **kw)
    return buf.getvalue()


@pytest.fixture(scope="module")
def rgb():
    return np.random.default_rng(0).integers(0, 256, size=(32, 40, 3), dtype=np.uint8)


def test_quality_scaling_matches_ijg():
    luma, chroma = jpeg.quant_tables_for_quality(50)
    assert np.array_equal(luma.values, jpeg.LUMA_BASE)
    luma, _ = jpeg.quant_tables_for_quality(100)
    assert np.all(luma.values == 1)
    luma, _ = jpeg.quant_tables_for_quality(75)
    assert luma.values[0, 0] == 8  # (16 * 50 + 50) // 100
    for q in (1, 20, 75, 99):
        pil = Image.open(io.BytesIO(pil_bytes(np.zeros((8, 8, 3), np.uint8), quality=q, subsampling=0)))
        assert list(pil.quantization[0]) == jpeg.quant_tables_for_quality(q)[0].values.reshape(64).tolist()


def test_coefficient_dump_matches_reference(reference_files, jpeg_ref):
    for path in reference_files:
        assert jpeg.dump(jpeg.read(path)) == run_ref(jpeg_ref, "coef", path).decode(), path.name


def test_sample_decode_within_one_of_reference(reference_files, jpeg_ref):
    for path in reference_files:
        img = jpeg.read(path)
        ref = np.frombuffer(run_ref(jpeg_ref, "ycc", path), np.uint8).reshape(img.height, img.width, 3)
        assert np.abs(ref.astype(int) - jpeg.decode_samples(img)).max() <= 1, path.name


def test_rgb_decode_close_to_reference(reference_files, jpeg_ref):
    # libjpeg converts color in fixed point from its own samples; the
    # two rounding stages compound to at most 2 levels
    for path in reference_files:
        img = jpeg.read(path)
        ref = np.frombuffer(run_ref(jpeg_ref, "pixels", path), np.uint8).reshape(img.height, img.width, 3)
        assert np.abs(ref.astype(int) - jpeg.decode_pixels(img)).max() <= 2


def test_restart_interval_is_read(reference_files):
    assert jpeg.read(reference_files[-1]).restart_interval == 3


def test_reencode_is_coefficient_exact(reference_files):
    for path in reference_files:
        img = jpeg.read(path)
        assert np.array_equal(jpeg.parse(jpeg.encode(img)).coef, img.coef)


def test_reference_decodes_our_encoder(tmp_path, rgb, jpeg_ref):
    img = jpeg.from_pixels(rgb, 75)
    path = tmp_path / "ours.jpg"
    jpeg.write(path, img)
    assert run_ref(jpeg_ref, "coef", path).decode() == jpeg.dump(img)


def test_from_pixels_agrees_with_libjpeg(rgb, jpeg_ref):
    ours = jpeg.from_pixels(rgb, 75)
    theirs = jpeg.parse(ref_encode(jpeg_ref, rgb, 75))
    assert np.array_equal(ours.quant_stack(), theirs.quant_stack())
    # libjpeg's integer DCT and color conversion can nudge a coefficient by one step
    assert np.abs(ours.coef - theirs.coef).max() <= 1
    assert np.mean(ours.coef != theirs.coef) < 0.05


@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 100), st.integers(0, 2**32 - 1))
def test_roundtrip_property(hb, wb, quality, seed):
    gen = np.random.default_rng(seed)
    img = jpeg.from_pixels(gen.integers(0, 256, size=(8 * hb, 8 * wb, 3), dtype=np.uint8), quality)
    back = jpeg.parse(jpeg.encode(img))
    assert np.array_equal(back.coef, img.coef)
    assert back.same_content(img)


@given(st.integers(0, 2**32 - 1))
def test_extreme_coefficients_roundtrip(seed):
    gen = np.random.default_rng(seed)
    base = jpeg.from_pixels(np.zeros((16, 16, 3), np.uint8), 90)
    coef = gen.integers(-jpeg.AC_LIMIT, jpeg.AC_LIMIT + 1, size=base.coef.shape)
    coef[..., 0, 0] = gen.integers(*jpeg.DC_RANGE, size=coef[..., 0, 0].shape)
    img = base.with_coefficients(coef)
    assert np.array_equal(jpeg.parse(jpeg.encode(img)).coef, img.coef)


def test_subsampled_input_rejected(rgb):
    with pytest.raises(jpeg.UnsupportedSubsamplingError):
        jpeg.parse(pil_bytes(rgb, quality=75, subsampling=2))


def test_progressive_rejected(rgb):
    with pytest.raises(jpeg.UnsupportedProgressiveError):
        jpeg.parse(pil_bytes(rgb, quality=75, subsampling=0, progressive=True))


def test_grayscale_rejected():
    buf = io.BytesIO()
    Image.fromarray(np.zeros((8, 8), np.uint8)).save(buf, "JPEG")
    with pytest.raises(jpeg.JpegError):
        jpeg.parse(buf.getvalue())


def test_truncated_stream(rgb):
    data = jpeg.encode(jpeg.from_pixels(rgb))
    with pytest.raises(jpeg.TruncatedStreamError):
        jpeg.parse(data[: len(data) // 2])


def test_missing_soi():
    with pytest.raises(jpeg.CorruptStreamError):
        jpeg.parse(b"\x00\x00garbage")


def test_out_of_range_coefficients_rejected_on_encode(rgb):
    img = jpeg.from_pixels(rgb)
    coef = img.coef.copy()
    coef[0, 0, 0, 0, 1] = 1500
    with pytest.raises(jpeg.CoefficientRangeError):
        jpeg.encode(img.with_coefficients(coef))
    with pytest.raises(jpeg.CoefficientRangeError):
        jpeg.JpegImage(np.full((3, 1, 1, 8, 8), 4000), img.quant_tables)


def test_dump_layout(rgb):
    lines = jpeg.dump(jpeg.from_pixels(rgb[:8, :16])).splitlines()
    assert lines[0] == "jpeg 16 8"
    assert [l.split()[:2] for l in lines[1:4]] == [["qtable", "0"], ["qtable", "1"], ["qtable", "2"]]
    assert len(lines) == 4 + 3 * 2 and all(len(l.split()) == 4 + 64 for l in lines[4:])
