import hashlib
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from geoxfer.codec import (
    Chunk,
    EmptyState,
    ManifestMismatch,
    MissingChunk,
    StateManifest,
    combine,
    deserialize,
    digest_chunks,
    serialize,
    split,
    split_lengths,
    state_digest,
    verify_chunk,
)
from geoxfer.core import MIB, LogEntry, StateImage

states = st.builds(
    lambda cp, payloads, start: StateImage(
        cp, tuple(LogEntry(start + i, p) for i, p in enumerate(payloads))
    ),
    st.binary(min_size=1, max_size=2000),
    st.lists(st.binary(max_size=64), max_size=12),
    st.integers(-50, 10**6),
)


def test_empty_log_stream():
    stream, m = serialize(StateImage(bytes(10)))
    assert len(stream) == 10
    assert (m.checkpoint_length, m.log_entry_count, m.total_length) == (10, 0, 10)


def test_framing_of_one_entry():
    stream, m = serialize(StateImage(b"abcd", (LogEntry(7, b"xyz"),)))
    assert stream == b"abcd" + (3).to_bytes(8, "big") + b"xyz"
    assert m.total_length == 15


def test_empty_checkpoint_rejected():
    with pytest.raises(EmptyState):
        serialize(StateImage(b""))


@pytest.mark.parametrize("total, n, want", [(10, 4, [3, 3, 3, 1]), (8, 4, [2, 2, 2, 2]), (3, 5, [1, 1, 1, 0, 0])])
def test_split_lengths(total, n, want):
    assert [len(c.payload) for c in split(bytes(total), n)] == want
    assert split_lengths(total, n) == want


def test_split_lengths_thousand_mib():
    lengths = split_lengths(1000 * MIB, 256)
    assert lengths == [4096000] * 256


def test_missing_chunk():
    stream, m = serialize(StateImage(bytes(range(40))), 4)
    chunks = [c for c in split(stream, 4) if c.index != 3]
    with pytest.raises(MissingChunk):
        combine(chunks, m)


def test_inconsistent_manifest():
    stream, m = serialize(StateImage(b"abcdef", (LogEntry(1, b"xy"),)), 2)
    bad = StateManifest(m.checkpoint_length, (3,), m.entry_sequence_numbers, m.total_length, 2)
    with pytest.raises(ManifestMismatch):
        combine(split(stream, 2), bad)


def test_one_byte_round_trip():
    s = StateImage(b"\x01")
    stream, m = serialize(s, 1)
    assert combine(split(stream, 1), m) == s


def test_ten_mib_round_trip():
    rng = random.Random(3)
    s = StateImage(rng.randbytes(10 * MIB), tuple(LogEntry(i, rng.randbytes(rng.randrange(200))) for i in range(50)))
    stream, m = serialize(s, 256)
    assert combine(split(stream, 256), m) == s


@given(states, st.integers(1, 300))
def test_round_trip_property(s, n):
    stream, m = serialize(s, n)
    chunks = split(stream, n)
    assert b"".join(c.payload for c in chunks) == stream
    sizes = [len(c.payload) for c in chunks]
    assert max(sizes) - min(sizes) <= -(-len(stream) // n)
    assert combine(reversed(chunks), m) == s


@given(states, states)
def test_serialize_injective(a, b):
    if a != b:
        assert serialize(a) != serialize(b)


@given(st.binary(max_size=200))
def test_manifest_encoding_round_trip(blob):
    s = StateImage(b"x" + blob, (LogEntry(-3, blob), LogEntry(9, b"")))
    _, m = serialize(s, 7)
    assert StateManifest.decode(m.encode()) == m


def test_empty_payload_digest_is_sha512_of_empty():
    assert digest_chunks([Chunk(0, b"")])[0] == hashlib.sha512(b"").digest()
    assert hashlib.sha512(b"").hexdigest().startswith("cf83e1357eefb8bd")


def test_digest_depends_only_on_payload():
    a, b = digest_chunks([Chunk(0, b"same"), Chunk(5, b"same")])
    assert a == b and len(a) == 64


def test_verify_rejects_zero_digest_and_wrong_length():
    c = Chunk(0, b"payload")
    (d,) = digest_chunks([c])
    assert verify_chunk(c, d)
    assert not verify_chunk(c, bytes(64))
    assert not verify_chunk(c, d[:32])


@given(st.binary(min_size=1, max_size=512), st.data())
def test_any_single_byte_corruption_rejected(payload, data):
    (d,) = digest_chunks([Chunk(0, payload)])
    pos = data.draw(st.integers(0, len(payload) - 1))
    delta = data.draw(st.integers(1, 255))
    bad = bytearray(payload)
    bad[pos] ^= delta
    assert not verify_chunk(Chunk(0, bytes(bad)), d)


def test_state_digest_covers_layout():
    s1 = StateImage(b"abcd", (LogEntry(1, b"ef"),))
    s2 = StateImage(b"abcd" + (2).to_bytes(8, "big") + b"ef")
    st1, m1 = serialize(s1)
    st2, m2 = serialize(s2)
    assert st1 == st2
    assert state_digest(st1, m1) != state_digest(st2, m2)


def test_deserialize_rejects_short_stream():
    stream, m = serialize(StateImage(b"abc"))
    with pytest.raises(ManifestMismatch):
        deserialize(stream[:-1], m)
