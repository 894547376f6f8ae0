import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from phasecut.raster import (LabelField, RasterFormatError, SampleDomainError, ScalarField,
                             bilinear, load_field, mask_path, read_pfm, sample_bilinear,
                             save_field, write_pfm, write_pgm)


def test_pfm_2x2_roundtrip(tmp_path):
    p = tmp_path / "a.pfm"
    write_pfm(p, np.array([[0, 1], [2, 3]], np.float32))
    f = load_field(p)
    assert f.values.tolist() == [[0, 1], [2, 3]]
    assert f.mask.all()


def test_pgm_normalization(tmp_path):
    p = tmp_path / "a.pgm"
    write_pgm(p, np.array([[0, 255], [128, 255]]))
    f = load_field(p)
    assert f.values[0, 1] == 1.0 and f.values[0, 0] == 0.0
    assert f.units == "intensity"


def test_pgm16(tmp_path):
    p = tmp_path / "a.pgm"
    write_pgm(p, np.array([[0, 65535], [300, 7]]), 65535)
    assert load_field(p).values[1, 0] == pytest.approx(300 / 65535)


def test_constant_payload(tmp_path):
    p = tmp_path / "c.pfm"
    save_field(ScalarField(np.full((3, 5), 0.5)), p)
    raw = p.read_bytes()
    payload = raw[raw.index(b"-1.0\n") + 5:]
    assert len(payload) == 15 * 4
    assert np.all(np.frombuffer(payload, "<f4") == 0.5)
    assert not mask_path(p).exists()


def test_mask_sidecar_one_false_bit(tmp_path):
    m = np.ones((4, 6), bool)
    m[2, 3] = False
    p = tmp_path / "m.pfm"
    save_field(ScalarField(np.zeros((4, 6)), m), p)
    bits = np.unpackbits(np.frombuffer(mask_path(p).read_bytes(), np.uint8))[:24]
    assert (bits == 0).sum() == 1
    assert np.array_equal(load_field(p).mask, m)


@settings(max_examples=1000, deadline=None)
@given(arrays(np.float32, st.tuples(st.integers(2, 9), st.integers(2, 9)),
              elements=st.floats(-1e6, 1e6, width=32)))
def test_save_load_bit_exact(tmp_path_factory, data):
    p = tmp_path_factory.mktemp("rt") / "f.pfm"
    save_field(ScalarField(data), p)
    back = load_field(p).values
    assert np.array_equal(back.astype(np.float32), data)


def test_multichannel_pfm(tmp_path, rng):
    for ch in (2, 3, 5):
        d = rng.normal(size=(4, 3, ch)).astype(np.float32)
        write_pfm(tmp_path / "x.pfm", d)
        assert np.array_equal(read_pfm(tmp_path / "x.pfm"), d)


def test_big_endian_pfm(tmp_path):
    d = np.array([[1.5, -2.0], [3.25, 4.0]], np.float32)
    p = tmp_path / "be.pfm"
    p.write_bytes(b"Pf\n2 2\n1.0\n" + d[::-1].astype(">f4").tobytes())
    assert np.array_equal(read_pfm(p), d)


@pytest.mark.parametrize("blob", [b"P6\n2 2\n255\n", b"Pf\n2 x\n-1\n", b"Pf\n2 2\n-1.0\n\x00\x00"])
def test_corrupt_files(tmp_path, blob):
    p = tmp_path / "bad.pfm"
    p.write_bytes(blob)
    with pytest.raises(RasterFormatError):
        load_field(p)


def test_field_invariants():
    with pytest.raises(ValueError):
        ScalarField(np.zeros((1, 5)))
    with pytest.raises(ValueError):
        ScalarField(np.zeros((3, 3)), np.zeros((3, 3), bool))
    with pytest.raises(ValueError):
        ScalarField(np.array([[np.nan, 0], [0, 0]]))
    ScalarField(np.array([[np.nan, 0], [0, 0]]), np.array([[0, 1], [1, 1]], bool))
    with pytest.raises(ValueError):
        ScalarField(np.zeros((3, 3)), units="furlongs")
    f = ScalarField(np.zeros((3, 3)))
    with pytest.raises(ValueError):
        f.values[0, 0] = 1
    with pytest.raises(ValueError):
        LabelField(np.full((2, 2), 5), k_max=3)


def test_sampling():
    f = ScalarField(np.array([[0.0, 1.0], [2.0, 3.0]]))
    assert sample_bilinear(f, 1, 0) == 1.0
    assert sample_bilinear(f, 0.5, 0) == 0.5
    assert sample_bilinear(f, 0.5, 0.5) == pytest.approx(1.5)
    with pytest.raises(SampleDomainError):
        sample_bilinear(f, 1.5, 0)


def test_sampling_renormalized():
    m = np.array([[1, 1], [1, 0]], bool)
    f = ScalarField(np.array([[1.0, 1.0], [1.0, 99.0]]), m)
    assert sample_bilinear(f, 0.5, 0.5) == pytest.approx(1.0)
    dead = ScalarField(np.ones((2, 3)), np.array([[1, 0, 0], [1, 0, 0]], bool))
    assert sample_bilinear(dead, 2, 1) is None


def test_bilinear_channels(rng):
    v = rng.normal(size=(5, 6, 2))
    out, ok = bilinear(v, np.ones((5, 6), bool), np.array([2.0, 7.0]), np.array([3.0, 1.0]))
    assert np.allclose(out[0], v[3, 2]) and ok.tolist() == [True, False]
