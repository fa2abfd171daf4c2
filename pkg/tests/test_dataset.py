"""Corpus assembly, quantization, splitting, and the dataset file format."""

import struct

import numpy as np
import pytest

from spiralfield import fileio
from spiralfield.dataset import (
    DATASET_MAGIC,
    DatasetManifest,
    TokenQuantizer,
    build_dataset,
    encode_corpus,
    generate_corpus,
    harmonic_indices,
    normalize_field,
    read_dataset,
    split_corpus,
    split_indices,
    token_matrix,
    write_dataset,
)
from spiralfield.fields import HamiltonianField, evaluate_on_spiral
from spiralfield.geometry import HarmonicIndex, SpiralCurve

SMALL = DatasetManifest(max_degree=3, num_points=20)


# ---------------------------------------------------------------- manifest


def test_manifest_defaults():
    m = DatasetManifest()
    assert m.num_fields == 1024
    assert m.vocab_size() == 256
    assert m.curve() == SpiralCurve(c=32.0, num_points=100, t_margin=1e-2)


def test_manifest_derives_num_fields():
    assert DatasetManifest(max_degree=5).num_fields == 25
    assert DatasetManifest(max_degree=5, num_fields=25).num_fields == 25


@pytest.mark.parametrize(
    "kwargs",
    [
        {"max_degree": 0},
        {"max_degree": 33},
        {"max_degree": 4, "num_fields": 15},
        {"num_points": 1},
        {"bins": 1},
        {"bins": 257},
        {"split_fraction": 0.0},
        {"split_fraction": 1.0},
        {"format_version": 2},
    ],
)
def test_manifest_rejects(kwargs):
    with pytest.raises(ValueError):
        DatasetManifest(**kwargs)


def test_manifest_dict_round_trip():
    m = DatasetManifest(max_degree=4, num_points=10, bins=8, seed=7, split_fraction=0.75)
    assert DatasetManifest.from_dict(m.to_dict()) == m


# ---------------------------------------------------------------- indices


def test_harmonic_indices_order_and_count():
    idx = harmonic_indices(3)
    assert idx == [
        HarmonicIndex(0, 0),
        HarmonicIndex(1, -1),
        HarmonicIndex(1, 0),
        HarmonicIndex(1, 1),
        HarmonicIndex(2, -2),
        HarmonicIndex(2, -1),
        HarmonicIndex(2, 0),
        HarmonicIndex(2, 1),
        HarmonicIndex(2, 2),
    ]
    assert len(harmonic_indices(32)) == 1024


# ---------------------------------------------------------------- normalize


def test_normalize_peak_is_one():
    seq = evaluate_on_spiral(HamiltonianField(HarmonicIndex(2, 1)), SMALL.curve())
    normed = normalize_field(seq)
    comps = np.array(normed.components())
    assert np.max(np.abs(comps)) == pytest.approx(1.0, abs=1e-12)
    # direction preserved: normalization is a single positive scale
    raw = np.array(seq.components())
    scale = np.max(np.abs(raw))
    assert np.allclose(comps * scale, raw, atol=1e-12)


def test_normalize_zero_field_passthrough():
    seq = evaluate_on_spiral(HamiltonianField(HarmonicIndex(0, 0)), SMALL.curve())
    assert np.all(np.array(seq.components()) == 0.0)
    normed = normalize_field(seq)
    assert np.all(np.array(normed.components()) == 0.0)


# ---------------------------------------------------------------- quantizer


def test_quantizer_frozen_tokens():
    q = TokenQuantizer()
    assert q.vocab_size == 256
    assert q.encode(0.0, 0.0) == 136
    assert q.encode(-1.0, -1.0) == 0
    assert q.encode(1.0, 1.0) == 255
    assert q.encode(-1.0, 1.0) == 15
    assert q.encode(1.0, -1.0) == 240


def test_quantizer_frozen_centers():
    q = TokenQuantizer()
    assert q.decode(136) == (0.0625, 0.0625)
    assert q.decode(0) == (-0.9375, -0.9375)
    assert q.decode(255) == (0.9375, 0.9375)


def test_quantizer_clamps():
    q = TokenQuantizer()
    assert q.encode(5.0, -3.0) == q.encode(1.0, -1.0)
    assert q.encode(-99.0, 99.0) == q.encode(-1.0, 1.0)


def test_quantizer_bin_edges():
    q = TokenQuantizer()
    # lower-closed: a value on an interior edge lands in the upper bin
    assert q.encode(-0.875, -0.875) == 1 * 16 + 1
    # top edge closed: +v_max stays in the last bin
    assert q.encode(0.875, 0.875) == 15 * 16 + 15


def test_quantizer_token_round_trip():
    q = TokenQuantizer()
    tokens = np.arange(256)
    comps = q.inverse_transform(tokens)
    assert np.array_equal(q.transform(comps), tokens)


def test_quantizer_value_round_trip_error_bound():
    q = TokenQuantizer()
    rng = np.random.default_rng(0)
    X = rng.uniform(-1, 1, size=(500, 2))
    back = q.inverse_transform(q.transform(X))
    assert np.max(np.abs(back - X)) <= 0.0625 + 1e-12  # half a bin width


def test_quantizer_validation():
    with pytest.raises(ValueError):
        TokenQuantizer(bins_per_component=1).fit()
    with pytest.raises(ValueError):
        TokenQuantizer(bins_per_component=257).fit()
    with pytest.raises(ValueError):
        TokenQuantizer(v_max=0.0).fit()
    q = TokenQuantizer()
    with pytest.raises(ValueError):
        q.transform(np.zeros((3, 3)))
    with pytest.raises(ValueError):
        q.transform(np.array([[np.nan, 0.0]]))
    with pytest.raises(ValueError):
        q.inverse_transform(np.array([256]))
    with pytest.raises(ValueError):
        q.inverse_transform(np.array([-1]))


def test_quantizer_sklearn_params():
    q = TokenQuantizer(bins_per_component=8, v_max=2.0)
    assert q.get_params() == {"bins_per_component": 8, "v_max": 2.0}
    q2 = TokenQuantizer().set_params(bins_per_component=8, v_max=2.0)
    assert q2.get_params() == q.get_params()


# ---------------------------------------------------------------- splitting


def test_split_default_sizes():
    train, val = split_indices(1024, 0.9, 42)
    assert len(train) == 921 and len(val) == 103
    combined = np.sort(np.concatenate([train, val]))
    assert np.array_equal(combined, np.arange(1024))


def test_split_deterministic():
    a = split_indices(1024, 0.9, 42)
    b = split_indices(1024, 0.9, 42)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    c = split_indices(1024, 0.9, 43)
    assert not np.array_equal(a[0], c[0])


def test_split_min_one_per_side():
    train, val = split_indices(2, 0.99, 0)
    assert len(train) == 1 and len(val) == 1
    train, val = split_indices(2, 0.01, 0)
    assert len(train) == 1 and len(val) == 1
    train, val = split_indices(10, 0.999, 0)
    assert len(train) == 9 and len(val) == 1


def test_split_rejects():
    with pytest.raises(ValueError):
        split_indices(1, 0.5, 0)
    with pytest.raises(ValueError):
        split_indices(10, 0.0, 0)
    with pytest.raises(ValueError):
        split_indices(10, 1.0, 0)


def test_split_corpus_disjoint():
    items = list(range(9))
    train, val = split_corpus(items, 0.9, 42)
    assert len(train) + len(val) == 9
    assert set(train).isdisjoint(val)
    assert set(train) | set(val) == set(items)


# ---------------------------------------------------------------- pipeline


def test_build_dataset_shapes_and_determinism():
    fields = build_dataset(SMALL)
    assert len(fields) == 9
    for f in fields:
        assert f.components.shape == (20, 2)
        assert f.tokens.shape == (20,)
        assert f.tokens.dtype == np.uint16
        assert f.tokens.max() < 256
        assert np.max(np.abs(f.components)) <= 1.0 + 1e-12
    again = build_dataset(SMALL)
    for a, b in zip(fields, again):
        assert a.idx == b.idx
        assert np.array_equal(a.components, b.components)
        assert np.array_equal(a.tokens, b.tokens)


def test_encode_corpus_matches_quantizer():
    corpus = generate_corpus(SMALL)
    fields = encode_corpus(corpus, TokenQuantizer())
    q = TokenQuantizer()
    for f in fields:
        assert np.array_equal(f.tokens, q.transform(f.components).astype(np.uint16))


def test_token_matrix():
    fields = build_dataset(SMALL)
    X = token_matrix(fields)
    assert X.shape == (9, 20)
    assert X.dtype == np.int64
    assert np.array_equal(X[3], fields[3].tokens.astype(np.int64))


# ---------------------------------------------------------------- file io


def test_dataset_file_round_trip(tmp_path):
    fields = build_dataset(SMALL)
    path = tmp_path / "small.sfd"
    write_dataset(path, SMALL, fields)
    manifest, back = read_dataset(path)
    assert manifest == SMALL
    assert len(back) == len(fields)
    for a, b in zip(fields, back):
        assert a.idx == b.idx
        assert np.array_equal(a.components, b.components)
        assert a.components.dtype == b.components.dtype == np.float64
        assert np.array_equal(a.tokens, b.tokens)
        assert a.tokens.dtype == b.tokens.dtype == np.uint16


def test_dataset_rewrite_is_byte_identical(tmp_path):
    fields = build_dataset(SMALL)
    p1, p2 = tmp_path / "a.sfd", tmp_path / "b.sfd"
    write_dataset(p1, SMALL, fields)
    write_dataset(p2, SMALL, fields)
    assert p1.read_bytes() == p2.read_bytes()


def test_write_dataset_rejects_wrong_count(tmp_path):
    fields = build_dataset(SMALL)
    with pytest.raises(ValueError):
        write_dataset(tmp_path / "x.sfd", SMALL, fields[:-1])


def test_read_dataset_flipped_byte(tmp_path):
    path = tmp_path / "x.sfd"
    write_dataset(path, SMALL, build_dataset(SMALL))
    raw = bytearray(path.read_bytes())
    raw[-5] ^= 0x01
    path.write_bytes(bytes(raw))
    with pytest.raises(fileio.ChecksumError):
        read_dataset(path)


def test_read_dataset_truncated(tmp_path):
    path = tmp_path / "x.sfd"
    write_dataset(path, SMALL, build_dataset(SMALL))
    path.write_bytes(path.read_bytes()[:-30])
    with pytest.raises(fileio.TruncatedFileError):
        read_dataset(path)


def _forge(path, header, payload):
    fileio.write_framed(path, DATASET_MAGIC, 1, header, payload)


def test_read_dataset_bad_manifest(tmp_path):
    path = tmp_path / "x.sfd"
    _forge(path, {"max_degree": 1, "bogus_key": 1}, b"")
    with pytest.raises(fileio.FileFormatError, match="bad manifest"):
        read_dataset(path)


def test_read_dataset_wrong_payload_size(tmp_path):
    path = tmp_path / "x.sfd"
    _forge(path, DatasetManifest(max_degree=1, num_points=2).to_dict(), b"\x00" * 10)
    with pytest.raises(fileio.FileFormatError, match="payload"):
        read_dataset(path)


def _record(l, m, npts, token_value=0):
    comps = np.zeros((npts, 2), dtype=np.float64)
    tokens = np.full(npts, token_value, dtype=np.uint16)
    return struct.pack("<hh", l, m) + comps.tobytes() + tokens.tobytes()


def test_read_dataset_token_out_of_range(tmp_path):
    path = tmp_path / "x.sfd"
    manifest = DatasetManifest(max_degree=1, num_points=2)
    _forge(path, manifest.to_dict(), _record(0, 0, 2, token_value=300))
    with pytest.raises(fileio.FileFormatError, match="out of range"):
        read_dataset(path)


def test_read_dataset_bad_harmonic_index(tmp_path):
    path = tmp_path / "x.sfd"
    manifest = DatasetManifest(max_degree=1, num_points=2)
    _forge(path, manifest.to_dict(), _record(1, 2, 2))  # |m| > l
    with pytest.raises(fileio.FileFormatError, match="harmonic index"):
        read_dataset(path)
