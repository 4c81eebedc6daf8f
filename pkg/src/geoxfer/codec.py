"""State serialization, chunking and per-chunk SHA-512 digests.

Stream layout: the checkpoint bytes, then each log entry as an 8-byte
big-endian length followed by its payload. The manifest carries everything
needed to invert the layout (lengths and sequence numbers).
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from typing import Iterable, Sequence

from geoxfer.core import LogEntry, StateImage

DIGEST_SIZE = 64
LENGTH_PREFIX = 8

Digest = bytes
DigestList = tuple  # tuple[Digest, ...], one per chunk
ChunkSet = frozenset  # frozenset[int]


class CodecError(ValueError):
    pass


class EmptyState(CodecError):
    pass


class MissingChunk(CodecError):
    pass


class ManifestMismatch(CodecError):
    pass


@dataclass(frozen=True)
class Chunk:
    index: int
    payload: bytes


@dataclass(frozen=True)
class StateManifest:
    checkpoint_length: int
    entry_lengths: tuple[int, ...]
    entry_sequence_numbers: tuple[int, ...]
    total_length: int
    n_chunks: int = 1

    @property
    def log_entry_count(self) -> int:
        return len(self.entry_lengths)

    def with_chunks(self, n_chunks: int) -> "StateManifest":
        return StateManifest(
            self.checkpoint_length,
            self.entry_lengths,
            self.entry_sequence_numbers,
            self.total_length,
            n_chunks,
        )

    def encode(self) -> bytes:
        head = struct.pack(
            ">QQQQ",
            self.checkpoint_length,
            self.total_length,
            self.n_chunks,
            len(self.entry_lengths),
        )
        body = b"".join(
            struct.pack(">qQ", seq, ln)
            for seq, ln in zip(self.entry_sequence_numbers, self.entry_lengths)
        )
        return head + body

    @classmethod
    def decode(cls, data: bytes) -> "StateManifest":
        if len(data) < 32:
            raise ManifestMismatch("manifest too short")
        cp, total, n_chunks, count = struct.unpack_from(">QQQQ", data, 0)
        if len(data) != 32 + 16 * count:
            raise ManifestMismatch("manifest length does not match entry count")
        seqs, lens = [], []
        for k in range(count):
            seq, ln = struct.unpack_from(">qQ", data, 32 + 16 * k)
            seqs.append(seq)
            lens.append(ln)
        return cls(cp, tuple(lens), tuple(seqs), total, n_chunks)


def serialize(state: StateImage, n_chunks: int = 1) -> tuple[bytes, StateManifest]:
    """Flatten ``state``; ``n_chunks`` is recorded in the manifest for ``combine``."""
    if not state.checkpoint:
        raise EmptyState("checkpoint must be non-empty")
    parts = [state.checkpoint]
    for entry in state.log:
        parts.append(struct.pack(">Q", len(entry.payload)))
        parts.append(entry.payload)
    stream = b"".join(parts)
    manifest = StateManifest(
        checkpoint_length=len(state.checkpoint),
        entry_lengths=tuple(len(e.payload) for e in state.log),
        entry_sequence_numbers=tuple(e.sequence_number for e in state.log),
        total_length=len(stream),
        n_chunks=n_chunks,
    )
    return stream, manifest


def deserialize(stream: bytes, manifest: StateManifest) -> StateImage:
    expected = manifest.checkpoint_length + sum(
        LENGTH_PREFIX + n for n in manifest.entry_lengths
    )
    if len(stream) != manifest.total_length or expected != manifest.total_length:
        raise ManifestMismatch(
            f"stream is {len(stream)} bytes, manifest says {manifest.total_length}"
        )
    pos = manifest.checkpoint_length
    checkpoint = stream[:pos]
    log = []
    for seq, ln in zip(manifest.entry_sequence_numbers, manifest.entry_lengths):
        (framed,) = struct.unpack_from(">Q", stream, pos)
        if framed != ln:
            raise ManifestMismatch(f"entry {seq}: framed length {framed} != {ln}")
        pos += LENGTH_PREFIX
        log.append(LogEntry(seq, stream[pos : pos + ln]))
        pos += ln
    try:
        return StateImage(checkpoint, tuple(log))
    except ValueError as exc:
        raise ManifestMismatch(str(exc)) from None


def chunk_size(total: int, n_chunks: int) -> int:
    return -(-total // n_chunks)


def split_lengths(total: int, n_chunks: int) -> list[int]:
    """Payload lengths ``split`` would produce for a ``total``-byte stream."""
    if n_chunks < 1:
        raise ValueError("n_chunks must be >= 1")
    size = chunk_size(total, n_chunks)
    return [max(0, min(size, total - i * size)) for i in range(n_chunks)]


def split(stream: bytes, n_chunks: int) -> list[Chunk]:
    if not stream:
        raise EmptyState("cannot split an empty stream")
    if n_chunks < 1:
        raise ValueError("n_chunks must be >= 1")
    size = chunk_size(len(stream), n_chunks)
    return [Chunk(i, stream[i * size : (i + 1) * size]) for i in range(n_chunks)]


def combine(chunks: Iterable[Chunk], manifest: StateManifest) -> StateImage:
    by_index = {}
    for c in chunks:
        if not 0 <= c.index < manifest.n_chunks:
            raise ManifestMismatch(f"chunk index {c.index} outside [0, {manifest.n_chunks})")
        by_index[c.index] = c.payload
    missing = [i for i in range(manifest.n_chunks) if i not in by_index]
    if missing:
        raise MissingChunk(f"missing chunks {missing[:8]}{'...' if len(missing) > 8 else ''}")
    stream = b"".join(by_index[i] for i in range(manifest.n_chunks))
    return deserialize(stream, manifest)


def digest(data: bytes) -> Digest:
    return hashlib.sha512(data).digest()


def digest_chunks(chunks: Sequence[Chunk]) -> DigestList:
    return tuple(digest(c.payload) for c in chunks)


def verify_chunk(chunk: Chunk, expected: Digest) -> bool:
    return len(expected) == DIGEST_SIZE and digest(chunk.payload) == expected


def state_digest(stream: bytes, manifest: StateManifest) -> Digest:
    """Whole-state digest used by PBFT transfer; covers the layout too."""
    h = hashlib.sha512(manifest.with_chunks(1).encode())
    h.update(stream)
    return h.digest()
