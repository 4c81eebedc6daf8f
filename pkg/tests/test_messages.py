import pytest
from hypothesis import given
from hypothesis import strategies as st

from geoxfer.codec import Chunk, StateManifest
from geoxfer.messages import (
    HEADER_BYTES,
    ChunkData,
    ChunkRequest,
    HashRequest,
    HashResponse,
    PbftDigestRequest,
    PbftDigestResponse,
    PbftStateRequest,
    PbftStateResponse,
    decode_message,
    encode_message,
)

MANIFEST = StateManifest(3, (2,), (9,), 13, 4)


def test_golden_hash_request():
    assert encode_message(HashRequest(2)).hex() == "0100000002"


def test_golden_chunk_request():
    raw = encode_message(ChunkRequest(1, 3, (4, 5)))
    assert raw.hex() == "03" "00000001" "0000000000000003" "0000000000000002" "00000004" "00000005"


def test_golden_chunk_data():
    raw = encode_message(ChunkData(7, Chunk(2, b"\xaa\xbb"), None, None))
    assert raw.hex() == (
        "04" "00000007" "0000000000000002" "0000000000000002" "aabb" "0000000000000000" "ffffffffffffffff"
    )


def test_sizes_include_header():
    assert HashRequest(0).size_bytes == HEADER_BYTES
    assert ChunkData(0, Chunk(0, b"abc")).size_bytes == HEADER_BYTES + 3
    assert ChunkData(0, Chunk(0, b"abc"), nominal_bytes=4096000).size_bytes == HEADER_BYTES + 4096000
    assert PbftDigestResponse(0, bytes(64)).size_bytes == HEADER_BYTES + 64
    assert HashResponse(0, (bytes(64),) * 3, MANIFEST).payload_bytes == 192 + len(MANIFEST.encode())


digests = st.lists(st.binary(min_size=64, max_size=64), max_size=5).map(tuple)
manifests = st.one_of(st.none(), st.just(MANIFEST))
messages = st.one_of(
    st.builds(HashRequest, st.integers(0, 99)),
    st.builds(HashResponse, st.integers(0, 99), digests, manifests),
    st.builds(ChunkRequest, st.integers(0, 99), st.integers(0, 10**6), st.lists(st.integers(0, 2**31), max_size=20).map(tuple)),
    st.builds(
        ChunkData,
        st.integers(0, 99),
        st.builds(Chunk, st.integers(0, 1024), st.binary(max_size=100)),
        manifests,
        st.one_of(st.none(), st.integers(0, 2**40)),
    ),
    st.builds(PbftStateRequest, st.integers(0, 99)),
    st.builds(PbftStateResponse, st.integers(0, 99), st.binary(max_size=100), manifests, st.one_of(st.none(), st.integers(0, 2**40))),
    st.builds(PbftDigestRequest, st.integers(0, 99)),
    st.builds(PbftDigestResponse, st.integers(0, 99), st.binary(min_size=64, max_size=64)),
)


@given(messages)
def test_encode_decode_round_trip(msg):
    raw = encode_message(msg)
    assert decode_message(raw) == msg
    assert msg.size_bytes >= msg.payload_bytes


def test_decode_rejects_garbage():
    with pytest.raises(ValueError):
        decode_message(b"\x63\x00\x00\x00\x00")
    with pytest.raises(ValueError):
        decode_message(encode_message(HashRequest(1)) + b"\x00")
