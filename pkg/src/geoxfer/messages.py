"""Wire messages exchanged between recovery and transfer replicas.

Simulated size is the declared payload plus a fixed 64-byte header. The
declared payload can be larger than the bytes actually carried, which lets
the simulator move a nominal 1000 MiB state while only materializing a small
one.

Canonical byte encoding (golden files): tag byte, sender id as 4-byte
big-endian, then type-specific fields with 8-byte big-endian lengths.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional

from geoxfer.codec import DIGEST_SIZE, Chunk, StateManifest

HEADER_BYTES = 64


@dataclass(frozen=True)
class Message:
    sender: int

    TAG = 0

    @property
    def payload_bytes(self) -> int:
        return 0

    @property
    def size_bytes(self) -> int:
        return HEADER_BYTES + self.payload_bytes


@dataclass(frozen=True)
class HashRequest(Message):
    TAG = 1


@dataclass(frozen=True)
class HashResponse(Message):
    digests: tuple[bytes, ...] = ()
    manifest: Optional[StateManifest] = None

    TAG = 2

    @property
    def payload_bytes(self) -> int:
        m = len(self.manifest.encode()) if self.manifest else 0
        return DIGEST_SIZE * len(self.digests) + m


@dataclass(frozen=True)
class ChunkRequest(Message):
    round: int = 0
    indices: tuple[int, ...] = ()

    TAG = 3

    @property
    def payload_bytes(self) -> int:
        return 4 * len(self.indices)


@dataclass(frozen=True)
class ChunkData(Message):
    chunk: Chunk = Chunk(0, b"")
    manifest: Optional[StateManifest] = None
    nominal_bytes: Optional[int] = None

    TAG = 4

    @property
    def payload_bytes(self) -> int:
        if self.nominal_bytes is not None:
            return self.nominal_bytes
        return len(self.chunk.payload)


@dataclass(frozen=True)
class PbftStateRequest(Message):
    TAG = 5


@dataclass(frozen=True)
class PbftStateResponse(Message):
    stream: bytes = b""
    manifest: Optional[StateManifest] = None
    nominal_bytes: Optional[int] = None

    TAG = 6

    @property
    def payload_bytes(self) -> int:
        if self.nominal_bytes is not None:
            return self.nominal_bytes
        return len(self.stream)


@dataclass(frozen=True)
class PbftDigestRequest(Message):
    TAG = 7


@dataclass(frozen=True)
class PbftDigestResponse(Message):
    digest: bytes = b""

    TAG = 8

    @property
    def payload_bytes(self) -> int:
        return DIGEST_SIZE


_BY_TAG = {
    cls.TAG: cls
    for cls in (
        HashRequest,
        HashResponse,
        ChunkRequest,
        ChunkData,
        PbftStateRequest,
        PbftStateResponse,
        PbftDigestRequest,
        PbftDigestResponse,
    )
}


def _blob(data: bytes) -> bytes:
    return struct.pack(">Q", len(data)) + data


def _opt_manifest(m: Optional[StateManifest]) -> bytes:
    return _blob(m.encode() if m is not None else b"")


def _opt_int(v: Optional[int]) -> bytes:
    return struct.pack(">q", -1 if v is None else v)


def encode_message(msg: Message) -> bytes:
    out = [struct.pack(">BI", msg.TAG, msg.sender)]
    if isinstance(msg, HashResponse):
        out.append(struct.pack(">Q", len(msg.digests)))
        out.extend(msg.digests)
        out.append(_opt_manifest(msg.manifest))
    elif isinstance(msg, ChunkRequest):
        out.append(struct.pack(">QQ", msg.round, len(msg.indices)))
        out.extend(struct.pack(">I", i) for i in msg.indices)
    elif isinstance(msg, ChunkData):
        out.append(struct.pack(">Q", msg.chunk.index))
        out.append(_blob(msg.chunk.payload))
        out.append(_opt_manifest(msg.manifest))
        out.append(_opt_int(msg.nominal_bytes))
    elif isinstance(msg, PbftStateResponse):
        out.append(_blob(msg.stream))
        out.append(_opt_manifest(msg.manifest))
        out.append(_opt_int(msg.nominal_bytes))
    elif isinstance(msg, PbftDigestResponse):
        out.append(_blob(msg.digest))
    return b"".join(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def unpack(self, fmt: str):
        vals = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += struct.calcsize(fmt)
        return vals

    def raw(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ValueError("truncated message")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def blob(self) -> bytes:
        (n,) = self.unpack(">Q")
        return self.raw(n)

    def manifest(self) -> Optional[StateManifest]:
        raw = self.blob()
        return StateManifest.decode(raw) if raw else None

    def opt_int(self) -> Optional[int]:
        (v,) = self.unpack(">q")
        return None if v < 0 else v


def decode_message(data: bytes) -> Message:
    rd = _Reader(data)
    tag, sender = rd.unpack(">BI")
    cls = _BY_TAG.get(tag)
    if cls is None:
        raise ValueError(f"unknown message tag {tag}")
    if cls is HashResponse:
        (n,) = rd.unpack(">Q")
        digests = tuple(rd.raw(DIGEST_SIZE) for _ in range(n))
        msg = HashResponse(sender, digests, rd.manifest())
    elif cls is ChunkRequest:
        rnd, n = rd.unpack(">QQ")
        msg = ChunkRequest(sender, rnd, tuple(rd.unpack(">I")[0] for _ in range(n)))
    elif cls is ChunkData:
        (index,) = rd.unpack(">Q")
        payload = rd.blob()
        msg = ChunkData(sender, Chunk(index, payload), rd.manifest(), rd.opt_int())
    elif cls is PbftStateResponse:
        stream = rd.blob()
        msg = PbftStateResponse(sender, stream, rd.manifest(), rd.opt_int())
    elif cls is PbftDigestResponse:
        msg = PbftDigestResponse(sender, rd.blob())
    else:
        msg = cls(sender)
    if rd.pos != len(data):
        raise ValueError("trailing bytes after message")
    return msg
