import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image

from altmap.raster_io import (
    ClassMap,
    FormatError,
    RasterStack,
    SampleTable,
    default_palette,
    read_class_map,
    read_polygons,
    read_samples,
    read_stack,
    render_class_map,
    write_class_map,
    write_polygons,
    write_samples,
    write_stack,
)


def test_roundtrip_2x2_single_band(tmp_path):
    s = RasterStack(np.arange(4, dtype=np.float32).reshape(1, 2, 2), (10.0, 1.0, 0.0, 20.0, 0.0, -1.0), "EPSG:4326")
    write_stack(s, tmp_path / "a.hdr")
    back = read_stack(tmp_path / "a.hdr")
    assert back == s
    assert back.data.tolist() == [[[0.0, 1.0], [2.0, 3.0]]]


def test_header_fields(tmp_path, small_stack):
    write_stack(small_stack, tmp_path / "s.hdr")
    text = (tmp_path / "s.hdr").read_text().splitlines()
    assert text[:6] == ["width: 4", "height: 5", "bands: 3", "dtype: float32", "interleave: bsq", "byteorder: little"]
    assert text[6] == "transform: 500000.0,30.0,0.0,6500000.0,0.0,-30.0"
    assert text[7] == "crs: EPSG:32754"
    assert (tmp_path / "s.bin").stat().st_size == 3 * 5 * 4 * 4


def test_payload_size_mismatch(tmp_path):
    (tmp_path / "m.hdr").write_text("width: 2\nheight: 2\nbands: 2\ndtype: float32\ntransform: 0,1,0,0,0,-1\ncrs: x\n")
    (tmp_path / "m.bin").write_bytes(b"\0" * 12)
    with pytest.raises(FormatError, match="12 bytes"):
        read_stack(tmp_path / "m.hdr")


def test_landsat_sized_payload_arithmetic(tmp_path):
    # header alone fixes the payload size: 1587 * 1854 * 7 * 4 = 82,384,344 bytes
    (tmp_path / "l.hdr").write_text(
        "width: 1587\nheight: 1854\nbands: 7\ndtype: float32\ntransform: 0,30,0,0,0,-30\ncrs: x\n"
    )
    with open(tmp_path / "l.bin", "wb") as fh:
        fh.truncate(82_384_344 - 4)
    with pytest.raises(FormatError, match="82384344"):
        read_stack(tmp_path / "l.hdr")
    with open(tmp_path / "l.bin", "ab") as fh:
        fh.write(b"\0" * 4)
    assert read_stack(tmp_path / "l.hdr").data.shape == (7, 1854, 1587)


def test_missing_files(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_stack(tmp_path / "nope.hdr")


def test_unsupported_dtype(tmp_path, small_stack):
    write_stack(small_stack, tmp_path / "s.hdr")
    hdr = tmp_path / "s.hdr"
    hdr.write_text(hdr.read_text().replace("dtype: float32", "dtype: int16"))
    with pytest.raises(FormatError, match="dtype"):
        read_stack(hdr)


def test_nan_without_nodata_rejected():
    data = np.zeros((1, 2, 2), np.float32)
    data[0, 0, 0] = np.nan
    with pytest.raises(ValueError, match="non-finite"):
        RasterStack(data)
    s = RasterStack(data, nodata=float("nan"))
    assert s.valid_mask().tolist() == [[False, True], [True, True]]


def test_nodata_roundtrip(tmp_path):
    data = np.ones((2, 2, 2), np.float32)
    data[1, 1, 0] = -9999
    s = RasterStack(data, nodata=-9999)
    write_stack(s, tmp_path / "n.hdr")
    back = read_stack(tmp_path / "n.hdr")
    assert back == s
    assert back.valid_mask().tolist() == [[True, True], [False, True]]


def test_two_writes_byte_identical(tmp_path, small_stack):
    write_stack(small_stack, tmp_path / "a.hdr")
    write_stack(small_stack, tmp_path / "b.hdr")
    for ext in ("hdr", "bin"):
        assert (tmp_path / f"a.{ext}").read_bytes() == (tmp_path / f"b.{ext}").read_bytes()


def test_invalid_transform():
    with pytest.raises(ValueError):
        RasterStack(np.zeros((1, 1, 1)), (0, 0, 0, 0, 0, -1))
    with pytest.raises(ValueError):
        RasterStack(np.zeros((1, 1, 1)), (0, 1, 0, 0, 0, 0))


def test_stack_is_immutable(small_stack):
    with pytest.raises(ValueError):
        small_stack.data[0, 0, 0] = 1.0


def test_pixel_centers(small_stack):
    x, y = small_stack.pixel_centers()
    assert x[0, 0] == 500015.0 and y[0, 0] == 6499985.0
    assert x[0, 3] == 500000.0 + 3.5 * 30 and y[4, 0] == 6500000.0 - 4.5 * 30


@settings(max_examples=50, deadline=None)
@given(arrays(np.float32, st.tuples(st.integers(1, 3), st.integers(1, 4), st.integers(1, 4)),
              elements=st.floats(-1e6, 1e6, width=32)))
def test_roundtrip_property(tmp_path_factory, data):
    d = tmp_path_factory.mktemp("rt")
    s = RasterStack(data, (1.5, 0.25, 0.0, -3.0, 0.0, -0.25), "EPSG:32754")
    write_stack(s, d / "p.hdr")
    assert read_stack(d / "p.hdr") == s


# -- polygons ---------------------------------------------------------------


def _write(path, doc):
    path.write_text(json.dumps(doc))
    return path


def test_triangle_closed_on_load(tmp_path):
    p = _write(tmp_path / "p.json", {"polygons": [{"class": 1, "ring": [[0, 0], [1, 0], [0, 1]]}]})
    ps = read_polygons(p)
    assert len(ps) == 1
    ring = ps.polygons[0].rings[0]
    assert len(ring) == 4 and ring[0].tolist() == ring[-1].tolist()


def test_polygon_class_zero_rejected(tmp_path):
    p = _write(tmp_path / "p.json", {"polygons": [{"class": 0, "ring": [[0, 0], [1, 0], [0, 1]]}]})
    with pytest.raises(FormatError, match="invalid class 0"):
        read_polygons(p)


def test_polygon_class_beyond_range(tmp_path):
    p = _write(tmp_path / "p.json", {"polygons": [{"class": 3, "ring": [[0, 0], [1, 0], [0, 1]]}]})
    with pytest.raises(FormatError):
        read_polygons(p, n_classes=3)


def test_polygon_degenerate_ring(tmp_path):
    p = _write(tmp_path / "p.json", {"polygons": [{"class": 1, "ring": [[0, 0], [1, 0], [0, 0]]}]})
    with pytest.raises(FormatError, match="3 distinct"):
        read_polygons(p)


def test_polygon_malformed(tmp_path):
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(FormatError):
        read_polygons(tmp_path / "bad.json")
    with pytest.raises(FormatError):
        read_polygons(_write(tmp_path / "b2.json", {"shapes": []}))


def test_polygon_roundtrip(tmp_path):
    p = _write(tmp_path / "p.json", {"polygons": [
        {"class": 2, "ring": [[0, 0], [4, 0], [4, 4], [0, 4]]},
        {"class": 1, "rings": [[[0, 0], [9, 0], [9, 9]], [[1, 1], [2, 1], [2, 2]]]},
    ]})
    ps = read_polygons(p)
    write_polygons(ps, tmp_path / "q.json")
    qs = read_polygons(tmp_path / "q.json")
    assert [q.label for q in qs] == [2, 1]
    for a, b in zip(ps, qs):
        assert all(np.array_equal(r, s) for r, s in zip(a.rings, b.rings))
    assert ps.labels() == [2, 1]


# -- class maps and rendering ----------------------------------------------


def test_render_single_black_pixel(tmp_path):
    render_class_map(ClassMap(np.zeros((1, 1))), tmp_path / "a.png", {0: (0, 0, 0)})
    img = Image.open(tmp_path / "a.png")
    assert img.mode == "P" and img.size == (1, 1)
    assert img.convert("RGB").getpixel((0, 0)) == (0, 0, 0)


def test_render_missing_palette_entry(tmp_path):
    with pytest.raises(KeyError):
        render_class_map(ClassMap(np.array([[0, 3]])), tmp_path / "a.png", default_palette())


def test_render_checkerboard_decodes_to_palette(tmp_path):
    labels = (np.indices((6, 5)).sum(axis=0) % 2).astype(np.uint8) + 1
    pal = default_palette()
    render_class_map(ClassMap(labels), tmp_path / "c.png", pal)
    rgb = np.asarray(Image.open(tmp_path / "c.png").convert("RGB"))
    assert rgb.shape == (6, 5, 3)
    for lab in (1, 2):
        assert (rgb[labels == lab] == pal[lab]).all()


def test_aster_palette_has_propylitic():
    assert default_palette("aster")[2] == (42, 157, 143)
    assert default_palette("landsat8")[2] == (255, 183, 3)


def test_class_map_roundtrip(tmp_path):
    cm = ClassMap(np.array([[0, 1], [2, 2]]), (1, 2, 0, 3, 0, -2), "EPSG:1")
    write_class_map(cm, tmp_path / "cm.hdr")
    assert read_class_map(tmp_path / "cm.hdr") == cm


# -- sample tables ------------------------------------------------------------


def test_single_row_roundtrip(tmp_path):
    t = SampleTable([0], [0], [1], [[0.5]])
    write_samples(t, tmp_path / "s.csv")
    assert (tmp_path / "s.csv").read_text() == "col,row,class,b1\n0,0,1,0.5\n"
    assert read_samples(tmp_path / "s.csv") == t


def test_float32_roundtrip_exact(tmp_path, rng):
    feats = rng.normal(size=(200, 7)).astype(np.float32) * np.float32(1e-3)
    t = SampleTable(np.arange(200), np.arange(200), rng.integers(0, 3, 200), feats)
    write_samples(t, tmp_path / "s.csv")
    assert read_samples(tmp_path / "s.csv") == t


def test_ragged_rows(tmp_path):
    (tmp_path / "r.csv").write_text(
        "col,row,class,b1,b2,b3,b4,b5,b6,b7\n0,0,1,1,2,3,4,5,6,7\n1,0,1,1,2,3,4,5,6,7,8,9\n"
    )
    with pytest.raises(FormatError, match="ragged"):
        read_samples(tmp_path / "r.csv")


def test_non_numeric_cell(tmp_path):
    (tmp_path / "n.csv").write_text("col,row,class,b1\n0,0,1,abc\n")
    with pytest.raises(FormatError):
        read_samples(tmp_path / "n.csv")


def test_8000_rows(tmp_path, rng):
    t = SampleTable(rng.integers(0, 100, 8000), rng.integers(0, 100, 8000), np.ones(8000),
                    rng.random((8000, 7)))
    write_samples(t, tmp_path / "big.csv")
    assert len(read_samples(tmp_path / "big.csv")) == 8000


def test_check_bounds():
    t = SampleTable([0, 4], [0, 1], [1, 1], [[0.0], [0.0]])
    t.check_bounds(5, 2)
    with pytest.raises(ValueError):
        t.check_bounds(4, 2)
