import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from triplet_forge import store
from triplet_forge.errors import (
    ArtifactError,
    ChecksumError,
    MissingArtifactError,
    TruncatedArtifactError,
    UnknownFormatError,
)


def _fnv_reference(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for b in data:
        h ^= b
        h = (h * 0x100000001B3) % (1 << 64)
    return h


def test_fnv_known_vectors():
    # published FNV-1a 64 test vectors
    assert store.fnv1a64(b"") == 0xCBF29CE484222325
    assert store.fnv1a64(b"a") == 0xAF63DC4C8601EC8C
    assert store.fnv1a64(b"foobar") == 0x85944171F73967E8


@given(st.binary(max_size=300))
def test_fnv_matches_reference(data):
    assert store.fnv1a64(data) == _fnv_reference(data)


def test_header_layout():
    blob = store.pack_artifact(b"TFEMB1", b"xyz")
    assert blob[:7] == b"TFEMB1\0"
    assert int.from_bytes(blob[7:11], "little") == 1
    assert int.from_bytes(blob[11:19], "little") == 3
    assert int.from_bytes(blob[19:27], "little") == store.fnv1a64(b"xyz")
    assert blob[27:] == b"xyz"


def test_spectrogram_round_trip(tmp_path):
    cells = np.random.default_rng(0).random((64, 137)).astype(np.float32)
    store.write_spectrogram(tmp_path / "s.bin", cells, 0.01)
    back, hop = store.read_spectrogram(tmp_path / "s.bin")
    assert hop == 0.01
    assert back.tobytes() == cells.tobytes()


@settings(max_examples=30, deadline=None)
@given(arrays(np.float32, st.tuples(st.integers(1, 8), st.integers(0, 20)),
              elements=st.floats(-1e6, 1e6, width=32)))
def test_spectrogram_round_trip_property(cells):
    back, _ = store.decode_spectrogram(store.encode_spectrogram(cells, 0.01))
    assert back.shape == cells.shape and back.tobytes() == cells.tobytes()


def test_triplet_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    rec = np.zeros(50, dtype=store.TRIPLET_RECORD)
    rec["source"] = rng.integers(0, 5, 50)
    rec["transform_seed"] = rng.integers(0, 2**63, 50, dtype=np.uint64)
    for k in ("anchor", "positive", "negative"):
        rec[k] = rng.integers(0, 2**32, (50, 2), dtype=np.uint32)
    rec["params"] = rng.standard_normal((50, 4)).astype(np.float32)
    store.write_triplet_records(tmp_path / "t.bin", rec)
    assert store.read_triplet_records(tmp_path / "t.bin").tobytes() == rec.tobytes()


def test_checkpoint_round_trip():
    rng = np.random.default_rng(2)
    params = [("0.W", rng.standard_normal((3, 3, 1, 4)).astype(np.float32)),
              ("0.b", rng.standard_normal(4).astype(np.float32)),
              ("s", np.array(1.5, dtype=np.float32))]
    opt = dict(step=7, learning_rate=1e-4, beta1=0.9, beta2=0.999, eps=1e-8,
               m=[rng.standard_normal(p.shape).astype(np.float32) for _, p in params],
               v=[rng.random(p.shape).astype(np.float32) for _, p in params])
    spec = {"layers": [["conv2d", 4, 3]], "seed": 3}
    blob = store.encode_checkpoint(spec, params, opt)
    spec2, params2, opt2 = store.decode_checkpoint(blob)
    assert spec2 == spec
    for (n1, a), (n2, b) in zip(params, params2):
        assert n1 == n2 and a.tobytes() == b.tobytes() and a.shape == b.shape
    assert opt2["step"] == 7 and opt2["learning_rate"] == 1e-4
    for key in ("m", "v"):
        assert all(a.tobytes() == b.tobytes() for a, b in zip(opt[key], opt2[key]))
    assert store.decode_checkpoint(blob, load_optimizer=False)[2] is None
    assert store.encode_checkpoint(spec2, params2, opt2) == blob


def test_embedding_round_trip_and_empty(tmp_path):
    ids = np.array([5, 2**40, 0], dtype=np.uint64)
    vecs = np.random.default_rng(3).standard_normal((3, 16)).astype(np.float32)
    store.write_embeddings(tmp_path / "e.bin", ids, vecs)
    i2, v2 = store.read_embeddings(tmp_path / "e.bin")
    assert i2.tobytes() == ids.tobytes() and v2.tobytes() == vecs.tobytes()
    i3, v3 = store.decode_embeddings(store.encode_embeddings([], np.zeros((0, 16))))
    assert len(i3) == 0 and v3.shape == (0, 16)


def test_jsonl_round_trip(tmp_path):
    recs = [{"id": "r0", "events": [[0.5, 1.0, 3]]}, {"id": "r1", "split": "eval"}]
    store.write_jsonl(tmp_path / "m.jsonl", recs)
    assert store.read_jsonl(tmp_path / "m.jsonl") == recs
    store.write_jsonl(tmp_path / "empty.jsonl", [])
    assert store.read_jsonl(tmp_path / "empty.jsonl") == []


def _blob():
    return store.encode_embeddings(np.arange(4), np.ones((4, 8)))


def test_every_corrupted_payload_byte_is_detected():
    blob = _blob()
    for pos in range(27, len(blob)):
        bad = bytearray(blob)
        bad[pos] ^= 0x10
        with pytest.raises(ChecksumError):
            store.decode_embeddings(bytes(bad))


def test_truncation_detected():
    blob = _blob()
    with pytest.raises(TruncatedArtifactError):
        store.decode_embeddings(blob[:-1])
    with pytest.raises(TruncatedArtifactError):
        store.decode_embeddings(blob[:10])


def test_trailing_bytes_rejected():
    with pytest.raises(ArtifactError):
        store.decode_embeddings(_blob() + b"\0")


def test_unknown_magic_and_version():
    blob = _blob()
    with pytest.raises(UnknownFormatError):
        store.decode_spectrogram(blob)
    bumped = bytearray(blob)
    bumped[7] = 2
    with pytest.raises(UnknownFormatError, match="version"):
        store.decode_embeddings(bytes(bumped))


def test_missing_artifact_names_producer(tmp_path):
    with pytest.raises(MissingArtifactError, match="embed"):
        store.read_embeddings(tmp_path / "nope.bin")
    with pytest.raises(MissingArtifactError, match="train"):
        store.read_checkpoint(tmp_path / "nope.ckpt")


def test_error_kinds_are_distinct():
    kinds = {ChecksumError, TruncatedArtifactError, UnknownFormatError, MissingArtifactError}
    assert len(kinds) == 4
    assert all(issubclass(k, ArtifactError) for k in kinds)
