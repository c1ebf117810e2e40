import numpy as np
import pytest

from mtnam.errors import FormatError
from mtnam.features import extract_features
from mtnam.signal_io import (
    Recording,
    SynthConfig,
    load_annotations,
    read_csv_recording,
    read_edf,
    synth_recording,
    validate_intervals,
    write_annotations,
    write_csv_recording,
)


# ---------------------------------------------------------------------------
# EDF


def test_edf_identity_range_round_trip(write_edf):
    digital = np.array([-3, 0, 7, 12], dtype=np.int16)
    path = write_edf(signals=[digital], fs_per_record=4, phys=(-32768, 32767), dig=(-32768, 32767))
    rec = read_edf(path)
    assert rec.fs == 4
    assert rec.channels == ["ch0"]
    np.testing.assert_array_equal(rec.samples[0], digital.astype(float))


def test_edf_linear_map_midpoint(write_edf):
    path = write_edf(signals=[np.zeros(4, dtype=np.int16)], fs_per_record=4)
    rec = read_edf(path)
    # (0 + 32768) * 200 / 65535 - 100
    assert rec.samples[0, 0] == pytest.approx(0.0015259021896696422, abs=1e-12)
    assert rec.samples[0, 0] == pytest.approx(0.0015, abs=1e-4)


def test_edf_physical_formula_exact(write_edf):
    d = np.array([-32768, -1, 1, 32767, 1234, -4321], dtype=np.int16)
    path = write_edf(signals=[d], fs_per_record=6, phys=(-500.0, 250.0), dig=(-32768, 32767))
    got = read_edf(path).samples[0]
    want = [(float(v) - -32768.0) * (250.0 - -500.0) / (32767.0 - -32768.0) + -500.0 for v in d]
    assert got.tolist() == want


def test_edf_multichannel_records_interleaved(write_edf):
    a = np.arange(8, dtype=np.int16)
    b = -np.arange(8, dtype=np.int16)
    path = write_edf(signals=[a, b], fs_per_record=4, phys=(-32768, 32767), labels=["Fp1", "Fp2"])
    rec = read_edf(path)
    assert rec.channels == ["Fp1", "Fp2"]
    np.testing.assert_array_equal(rec.samples, np.stack([a, b]).astype(float))
    sub = read_edf(path, channels=["Fp2"])
    np.testing.assert_array_equal(sub.samples[0], b.astype(float))


def test_edf_truncated_records(write_edf, tmp_path):
    path = write_edf(signals=[np.zeros(8, dtype=np.int16)], fs_per_record=4, n_records=5)
    with pytest.raises(FormatError, match="truncated"):
        read_edf(path)


def test_edf_mixed_rates(write_edf):
    path = write_edf(signals=[np.zeros(4, dtype=np.int16), np.zeros(2, dtype=np.int16)],
                     fs_per_record=[4, 2])
    with pytest.raises(FormatError, match="mixed sampling"):
        read_edf(path)


def test_edf_malformed_header(tmp_path):
    p = tmp_path / "bad.edf"
    p.write_bytes(b"0" * 100)
    with pytest.raises(FormatError):
        read_edf(p)
    p.write_bytes(b" " * 256)
    with pytest.raises(FormatError):
        read_edf(p)


# ---------------------------------------------------------------------------
# CSV and annotations


def test_csv_two_channels(tmp_path):
    p = tmp_path / "r.csv"
    p.write_text("a,b\n1,2\n3,4\n5,6\n")
    rec = read_csv_recording(p, fs=256)
    assert rec.samples.shape == (2, 3)
    assert rec.channels == ["a", "b"]
    assert rec.seizures == []


@pytest.mark.parametrize("text, match", [
    ("a,b\n", "empty recording"),
    ("", "empty file"),
    ("a,b\n1,2\n3\n", "ragged"),
    ("a,b\n1,x\n", "non-numeric"),
])
def test_csv_errors(tmp_path, text, match):
    p = tmp_path / "r.csv"
    p.write_text(text)
    with pytest.raises(FormatError, match=match):
        read_csv_recording(p, fs=10)


def test_csv_round_trip_full_precision(tmp_path):
    rng = np.random.default_rng(1)
    rec = Recording(["x", "y", "z"], 8, rng.standard_normal((3, 40)) * 1e3)
    p = tmp_path / "r.csv"
    write_csv_recording(rec, p, "comment")
    back = read_csv_recording(p, 8)
    np.testing.assert_array_equal(back.samples, rec.samples)
    write_csv_recording(back, tmp_path / "r2.csv", "comment")
    assert (tmp_path / "r2.csv").read_text() == p.read_text()


def test_annotations_basic(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("10,20\n30,31\n")
    assert load_annotations(p) == [(10.0, 20.0), (30.0, 31.0)]


def test_annotations_header_and_sorting(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("start_s,end_s\n30,31\n10,20\n")
    assert load_annotations(p) == [(10.0, 20.0), (30.0, 31.0)]


@pytest.mark.parametrize("text", ["20,10\n", "10,20\n15,25\n", "-1,5\n", "5,5\n"])
def test_annotation_errors(tmp_path, text):
    p = tmp_path / "a.csv"
    p.write_text(text)
    with pytest.raises(FormatError):
        load_annotations(p)


def test_annotations_round_trip(tmp_path):
    iv = [(0.5, 1.25), (3.0, 7.125)]
    write_annotations(iv, tmp_path / "a.csv", "c")
    assert load_annotations(tmp_path / "a.csv") == iv


def test_recording_invariants():
    with pytest.raises(FormatError):
        Recording(["a"], 0, np.zeros((1, 4)))
    with pytest.raises(FormatError):
        Recording(["a", "b"], 4, np.zeros((1, 4)))
    with pytest.raises(FormatError, match="exceeds"):
        Recording(["a"], 4, np.zeros((1, 4)), [(0.0, 2.0)])
    assert validate_intervals([(3, 4), (1, 2)]) == [(1.0, 2.0), (3.0, 4.0)]


# ---------------------------------------------------------------------------
# Synthetic generator


def test_synth_deterministic():
    cfg = SynthConfig(n_channels=2, duration_s=30, seizures=((10, 15),), seed=7)
    a, b = synth_recording(cfg), synth_recording(cfg)
    np.testing.assert_array_equal(a.samples, b.samples)
    assert a.seizures == [(10.0, 15.0)]
    c = synth_recording(SynthConfig(n_channels=2, duration_s=30, seizures=((10, 15),), seed=8))
    assert not np.array_equal(a.samples, c.samples)


def test_synth_zero_effect_same_distribution():
    cfg = SynthConfig(n_channels=4, duration_s=600, seizures=((100, 200), (300, 400)),
                      band_boost=(0,) * 7, ll_boost=0.0, seed=11)
    fm = extract_features(synth_recording(cfg))
    var_cols = fm.rows[:, 8::9]
    ratio = var_cols[fm.labels == 1].mean() / var_cols[fm.labels == 0].mean()
    # 200 ictal windows x 4 channels of an AR(1) process; 10% covers the MC noise.
    assert ratio == pytest.approx(1.0, abs=0.1)


def test_synth_strong_effect_line_length():
    fm = extract_features(synth_recording(SynthConfig(duration_s=600, seizures=((100, 140), (300, 340)))))
    ll = fm.rows[:, 7::9]
    assert ll[fm.labels == 1].mean() > 2 * ll[fm.labels == 0].mean()


def test_synth_config_validation():
    with pytest.raises(FormatError):
        synth_recording(SynthConfig(duration_s=10, seizures=((5, 20),)))
    with pytest.raises(FormatError):
        synth_recording(SynthConfig(band_boost=(1.0,)))
    with pytest.raises(FormatError):
        synth_recording(SynthConfig(ll_boost=-1.0))
