import numpy as np
import pytest
from PIL import Image

from convtrace.errors import FormatError, ParseError, ValidationError
from convtrace.imageio import (
    DatasetManifest,
    ManifestEntry,
    Plane,
    RgbImage,
    load_image,
    read_manifest,
    save_image,
    write_manifest,
)


def test_plane_validates_range():
    with pytest.raises(ValidationError):
        Plane(np.array([[0.0, 1.5]]))
    with pytest.raises(ValidationError):
        Plane(np.array([[-0.1, 0.5]]))
    with pytest.raises(ValidationError):
        Plane(np.array([[np.nan, 0.5]]))


def test_rgb_image_requires_matching_planes():
    a = Plane(np.zeros((4, 4)))
    b = Plane(np.zeros((4, 5)))
    with pytest.raises(ValidationError):
        RgbImage(a, a, b)


def test_load_scales_8bit_linearly(tmp_path):
    arr = np.zeros((1, 1, 3), dtype=np.uint8)
    arr[0, 0] = (255, 128, 0)
    path = tmp_path / "px.png"
    Image.fromarray(arr, "RGB").save(path)
    img = load_image(path)
    assert img.r.data[0, 0] == 1.0
    assert img.g.data[0, 0] == 128 / 255
    assert img.b.data[0, 0] == 0.0


def test_load_replicates_grayscale_with_warning(tmp_path):
    path = tmp_path / "gray.png"
    Image.fromarray(np.full((1, 1), 51, dtype=np.uint8), "L").save(path)
    with pytest.warns(UserWarning, match="grayscale"):
        img = load_image(path)
    for plane in img.planes:
        assert plane.data[0, 0] == pytest.approx(0.2)
    assert np.array_equal(img.r.data, img.g.data)


def test_load_truncated_file_is_io_error(tmp_path):
    arr = np.random.default_rng(0).integers(0, 256, (64, 64, 3), dtype=np.uint8)
    path = tmp_path / "full.png"
    Image.fromarray(arr.astype(np.uint8), "RGB").save(path)
    data = path.read_bytes()
    broken = tmp_path / "broken.png"
    broken.write_bytes(data[: len(data) // 2])
    with pytest.raises(OSError):
        load_image(broken)


def test_load_rejects_unsupported_bit_depth(tmp_path):
    path = tmp_path / "deep.png"
    Image.fromarray(np.zeros((4, 4), dtype=np.uint16)).save(path)
    with pytest.raises(FormatError):
        load_image(path)


def test_load_is_deterministic(tmp_path):
    arr = np.random.default_rng(1).integers(0, 256, (16, 16, 3), dtype=np.uint8)
    path = tmp_path / "img.png"
    Image.fromarray(arr.astype(np.uint8), "RGB").save(path)
    one = load_image(path)
    two = load_image(path)
    assert np.array_equal(one.to_array(), two.to_array())


def test_png_save_load_roundtrip_is_exact(tmp_path):
    rng = np.random.default_rng(2)
    quantized = rng.integers(0, 256, (3, 9, 7)).astype(np.float64) / 255.0
    img = RgbImage.from_array(quantized)
    path = tmp_path / "rt.png"
    save_image(img, path)
    back = load_image(path)
    assert np.array_equal(back.to_array(), quantized)


def test_manifest_roundtrip(tmp_path):
    manifest = DatasetManifest((
        ManifestEntry("a.png", 0, "noise"),
        ManifestEntry("b.png", 1, "transpose_conv"),
    ))
    path = tmp_path / "manifest.csv"
    write_manifest(manifest, path)
    back = read_manifest(path)
    assert back.entries == manifest.entries


def test_manifest_preserves_order_and_parses_labels(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("path,label,source\nx.png,0,real\ny.png,1,fake\n")
    m = read_manifest(path)
    assert [e.path for e in m] == ["x.png", "y.png"]
    assert [e.label for e in m] == [0, 1]


def test_header_only_manifest_is_empty(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("path,label,source\n")
    assert len(read_manifest(path)) == 0


def test_duplicate_path_is_validation_error(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("path,label,source\nx.png,0,real\nx.png,1,fake\n")
    with pytest.raises(ValidationError):
        read_manifest(path)


def test_unknown_label_token_is_parse_error(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("path,label,source\nx.png,real,real\n")
    with pytest.raises(ParseError):
        read_manifest(path)
    path.write_text("path,label,source\nx.png,7,real\n")
    with pytest.raises(ParseError):
        read_manifest(path)


def test_manifest_attack_column_roundtrip(tmp_path):
    manifest = DatasetManifest((
        ManifestEntry("a.png", 0, "noise", attack="blur:3"),
    ))
    path = tmp_path / "m.csv"
    write_manifest(manifest, path)
    assert path.read_text().splitlines()[0] == "path,label,source,attack"
    assert read_manifest(path).entries[0].attack == "blur:3"


def test_manifest_rejects_commas_in_fields(tmp_path):
    manifest = DatasetManifest((ManifestEntry("a,b.png", 0, "noise"),))
    with pytest.raises(ValidationError):
        write_manifest(manifest, tmp_path / "m.csv")
