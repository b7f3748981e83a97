import numpy as np
import pytest

from convtrace.errors import ParseError, ValidationError
from convtrace.features import FAILED_MARKER, FeatureRow, read_features_csv, write_features_csv


def _row(path, label, features, flag=""):
    return FeatureRow(path, label, "src", 1, flag, features)


def test_roundtrip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    rows = [_row(f"img{i}.png", i % 2, rng.standard_normal(24) * 0.3) for i in range(5)]
    path = tmp_path / "f.csv"
    write_features_csv(rows, 1, path)
    back = read_features_csv(path)
    assert len(back) == 5
    for a, b in zip(rows, back):
        assert a.path == b.path and a.label == b.label
        assert np.array_equal(a.features, b.features)  # 17 sig digits round-trip


def test_failed_rows_keep_metadata(tmp_path):
    rows = [
        _row("ok.png", 0, np.zeros(24)),
        FeatureRow("bad.png", 1, "src", 1, FAILED_MARKER, None),
    ]
    path = tmp_path / "f.csv"
    write_features_csv(rows, 1, path)
    back = read_features_csv(path)
    assert not back[0].failed
    assert back[1].failed and back[1].path == "bad.png"


def test_header_carries_feature_count(tmp_path):
    path = tmp_path / "f.csv"
    write_features_csv([_row("a.png", 0, np.zeros(24))], 1, path)
    header = path.read_text().splitlines()[0].split(",")
    assert header[:5] == ["path", "label", "source", "alpha", "degenerate_channels"]
    assert header[5:] == [f"f_{i}" for i in range(24)]


def test_wrong_dimension_rejected(tmp_path):
    with pytest.raises(ValidationError):
        write_features_csv([_row("a.png", 0, np.zeros(23))], 1, tmp_path / "f.csv")


def test_ragged_row_is_parse_error(tmp_path):
    path = tmp_path / "f.csv"
    write_features_csv([_row("a.png", 0, np.zeros(24))], 1, path)
    text = path.read_text().splitlines()
    text.append("x.png,0,src,1,")  # too few fields
    path.write_text("\n".join(text) + "\n")
    with pytest.raises(ParseError):
        read_features_csv(path)
