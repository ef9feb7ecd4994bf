import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cbmpomdp import FEATURE_NAMES, extract_features, windows_to_features
from cbmpomdp.features import (CsvFormatError, EmptyWindow, read_features_csv,
                               read_samples_csv, segment_stream,
                               write_features_csv)

SQRT2 = math.sqrt(2.0)


def test_names_order():
    assert FEATURE_NAMES == ("rms", "mean", "std", "skewness", "kurtosis",
                             "pp", "crest", "shape", "impulse", "margin", "energy")


def test_hand_window_two_zero():
    f = extract_features([2.0, 0.0])
    assert f.rms == pytest.approx(SQRT2, abs=1e-15)
    assert f.mean == 1.0
    assert f.std == 1.0
    assert f.skewness == pytest.approx(0.0, abs=1e-15)
    assert f.kurtosis == pytest.approx(0.5, abs=1e-15)
    assert f.pp == 2.0
    assert f.crest == pytest.approx(SQRT2, abs=1e-15)
    assert f.shape == pytest.approx(SQRT2, abs=1e-15)
    assert f.impulse == 2.0
    assert f.margin == 2.0
    assert f.energy == 4.0
    assert not f.degenerate


def test_hand_window_constant_ones():
    f = extract_features([1.0, 1.0, 1.0, 1.0])
    assert (f.rms, f.mean, f.std, f.pp) == (1.0, 1.0, 0.0, 0.0)
    assert (f.skewness, f.kurtosis) == (0.0, 0.0)
    assert (f.crest, f.shape, f.impulse, f.margin) == (1.0, 1.0, 1.0, 1.0)
    assert f.energy == 4.0


def test_hand_window_square_wave():
    f = extract_features([1.0, -1.0, 1.0, -1.0])
    assert (f.rms, f.mean, f.std) == (1.0, 0.0, 1.0)
    assert f.kurtosis == pytest.approx(4.0, abs=1e-15)
    assert f.skewness == pytest.approx(0.0, abs=1e-15)
    assert (f.pp, f.crest, f.shape, f.impulse, f.margin) == (2.0, 1.0, 1.0, 1.0, 1.0)
    assert f.energy == 4.0


def test_zero_window_degenerate():
    f = extract_features([0.0, 0.0, 0.0])
    assert f.degenerate
    assert f.rms == 0.0 and f.energy == 0.0 and f.std == 0.0
    for name in ("skewness", "kurtosis", "crest", "shape", "impulse", "margin"):
        assert math.isnan(getattr(f, name))


def test_too_short_window():
    with pytest.raises(EmptyWindow):
        extract_features([1.0])
    with pytest.raises(EmptyWindow):
        extract_features([])


def test_as_array_matches_fields():
    f = extract_features([3.0, 1.0, -2.0])
    arr = f.as_array()
    assert arr.shape == (11,)
    for i, name in enumerate(FEATURE_NAMES):
        assert arr[i] == getattr(f, name)


@given(st.lists(st.floats(min_value=-1e3, max_value=1e3), min_size=2, max_size=64),
       st.floats(min_value=0.1, max_value=10.0))
@settings(max_examples=60, deadline=None)
def test_scaling_laws(samples, c):
    x = np.asarray(samples)
    base = extract_features(x)
    if base.degenerate or base.rms < 1e-9:
        return
    scaled = extract_features(c * x)
    assert scaled.rms == pytest.approx(c * base.rms, rel=1e-9)
    assert scaled.std == pytest.approx(c * base.std, rel=1e-9, abs=1e-9)
    assert scaled.pp == pytest.approx(c * base.pp, rel=1e-9, abs=1e-9)
    assert scaled.energy == pytest.approx(c * c * base.energy, rel=1e-9)
    # dimensionless ratios are scale-free, margin scales as 1/c
    assert scaled.crest == pytest.approx(base.crest, rel=1e-9)
    assert scaled.shape == pytest.approx(base.shape, rel=1e-9)
    assert scaled.impulse == pytest.approx(base.impulse, rel=1e-9)
    assert scaled.kurtosis == pytest.approx(base.kurtosis, rel=1e-9, abs=1e-12)
    assert scaled.margin == pytest.approx(base.margin / c, rel=1e-9)


@given(st.lists(st.floats(min_value=-1e3, max_value=1e3), min_size=2, max_size=32),
       st.randoms())
@settings(max_examples=60, deadline=None)
def test_permutation_invariance(samples, rnd):
    shuffled = list(samples)
    rnd.shuffle(shuffled)
    a = extract_features(samples).as_array()
    b = extract_features(shuffled).as_array()
    np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-12, equal_nan=True)


def test_windows_to_features_stacks():
    out = windows_to_features([[2.0, 0.0], [1.0, 1.0, 1.0, 1.0]])
    assert out.shape == (2, 11)
    assert out[0, 0] == pytest.approx(SQRT2)
    assert out[1, 0] == 1.0
    with pytest.raises(EmptyWindow):
        windows_to_features([])


def test_segment_stream_non_overlapping():
    win = segment_stream(np.arange(10.0), window=4)
    assert win.shape == (2, 4)
    np.testing.assert_array_equal(win[0], [0, 1, 2, 3])
    np.testing.assert_array_equal(win[1], [4, 5, 6, 7])


def test_segment_stream_hop():
    win = segment_stream(np.arange(6.0), window=4, hop=1)
    assert win.shape == (3, 4)
    np.testing.assert_array_equal(win[2], [2, 3, 4, 5])
    with pytest.raises(EmptyWindow):
        segment_stream(np.arange(3.0), window=4)


def test_samples_csv_roundtrip(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("sample\n1.5\n-2.25\n0.125\n")
    np.testing.assert_array_equal(read_samples_csv(p), [1.5, -2.25, 0.125])
    bad = tmp_path / "bad.csv"
    bad.write_text("value\n1\n")
    with pytest.raises(CsvFormatError):
        read_samples_csv(bad)


def test_features_csv_roundtrip(tmp_path):
    p = tmp_path / "f.csv"
    feats = windows_to_features([[2.0, 0.0], [1.0, -1.0, 1.0, -1.0]])
    write_features_csv(p, feats, extra={"unit": ["u1", "u1"], "action": ["a", "b"]})
    table = read_features_csv(p, extra_columns=("unit", "action"))
    np.testing.assert_array_equal(table["features"], feats)
    assert table["unit"] == ["u1", "u1"]
    assert table["action"] == ["a", "b"]


def test_features_csv_missing_column(tmp_path):
    p = tmp_path / "f.csv"
    p.write_text("rms,mean\n1,2\n")
    with pytest.raises(CsvFormatError):
        read_features_csv(p)
