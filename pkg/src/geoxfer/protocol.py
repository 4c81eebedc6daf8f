"""Recovery-side and transfer-side state machines for chunked state transfer.

The recovery replica runs two logical tasks over one ``RecoverySession``: a
periodic requester (``on_tick``) that re-plans chunk assignments every
interval from passive bandwidth estimates, and a receiver (``on_message``)
that verifies chunks against digests endorsed by f+1 transfer replicas.
Both return the messages to send as ``(destination, message)`` pairs; the
session never blocks, so any single-threaded driver (the simulator, a test)
can serialize calls.
"""

from __future__ import annotations

import enum
import random
from collections import Counter, defaultdict, deque
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

from geoxfer import alloc
from geoxfer.codec import (
    Chunk,
    StateManifest,
    combine,
    digest_chunks,
    serialize,
    split,
    split_lengths,
    state_digest,
    verify_chunk,
)
from geoxfer.core import LogEntry, Mode, StateImage, TransferConfig
from geoxfer.messages import (
    ChunkData,
    ChunkRequest,
    HashRequest,
    HashResponse,
    Message,
    PbftDigestRequest,
    PbftDigestResponse,
    PbftStateRequest,
    PbftStateResponse,
)

Outbound = tuple[int, Message]

DEFAULT_STALL_TIMEOUT_S = 10.0


class ProtocolError(Exception):
    pass


class UnknownReplica(ProtocolError):
    pass


class ChunkIndexOutOfRange(ProtocolError):
    pass


class Phase(enum.IntEnum):
    COLLECTING_HASHES = 0
    TRANSFERRING = 1
    FALLBACK_PBFT = 2
    FINALIZING = 3
    DONE = 4


class Policy(str, enum.Enum):
    DYNAMIC = "dynamic"  # re-estimate every interval (the proposed method)
    STATIC = "static"  # fixed premeasured estimates, still re-planned each interval
    FIXED = "fixed"  # one part per replica, planned once (CST)


class HashTally:
    """Digest lists reported by transfer replicas, one list per replica.

    Agreement is reached on a whole (digest list, manifest) pair once f+1
    replicas report it identically; that fixes every chunk digest at once.
    """

    def __init__(self, transfer: Iterable[int], f: int):
        self.transfer = frozenset(transfer)
        self.f = f
        self.by_replica: dict[int, tuple] = {}
        self.counts: Counter = Counter()

    def add(self, replica: int, digests: Sequence[bytes], manifest: Optional[StateManifest]) -> bool:
        """Record ``replica``'s list; False if it already reported one."""
        if replica not in self.transfer:
            raise UnknownReplica(replica)
        if replica in self.by_replica:
            return False
        key = (tuple(digests), manifest)
        self.by_replica[replica] = key
        self.counts[key] += 1
        return True

    def received(self, replica: int) -> bool:
        return replica in self.by_replica

    def agreed(self):
        for key, count in sorted(self.counts.items(), key=lambda kv: -kv[1]):
            if count >= self.f + 1:
                return key
        return None

    def should_fall_back(self) -> bool:
        return len(self.by_replica) >= len(self.transfer) - self.f and self.agreed() is None

    def endorsers(self, index: int, digest: bytes) -> frozenset[int]:
        return frozenset(
            r for r, (ds, _) in self.by_replica.items() if index < len(ds) and ds[index] == digest
        )


def replay_log(snapshot_log: Iterable[LogEntry], buffered: Iterable[LogEntry]) -> tuple[LogEntry, ...]:
    """Merge the transferred log with entries buffered during transfer.

    Entries are applied oldest to newest, once per sequence number; the
    transferred copy wins on a duplicate.
    """
    merged: dict[int, LogEntry] = {}
    for entry in snapshot_log:
        merged.setdefault(entry.sequence_number, entry)
    for entry in buffered:
        merged.setdefault(entry.sequence_number, entry)
    return tuple(merged[s] for s in sorted(merged))


class RecoverySession:
    """State of one recovery replica fetching the current state.

    ``policy`` selects between the adaptive method, the premeasured-estimate
    baseline and CST's one-part-per-replica layout; all three share the
    verification, redirect and fallback machinery.
    """

    def __init__(
        self,
        config: TransferConfig,
        recovery: int,
        transfer: Sequence[int],
        *,
        policy: Policy | str = Policy.DYNAMIC,
        static_estimates: Optional[Mapping[int, float]] = None,
        stall_timeout_s: float = DEFAULT_STALL_TIMEOUT_S,
        start_s: float = 0.0,
    ):
        self.config = config
        self.recovery = recovery
        self.transfer = tuple(sorted(transfer))
        if recovery in self.transfer:
            raise ValueError("recovery replica cannot also be a transfer replica")
        self.policy = Policy(policy)
        self.n_chunks = config.n_chunks
        if self.policy is Policy.FIXED and self.n_chunks != len(self.transfer):
            raise ValueError("fixed (CST) layout needs one chunk per transfer replica")
        if self.policy is Policy.STATIC:
            if not static_estimates or any(static_estimates.get(t, 0) <= 0 for t in self.transfer):
                raise ValueError("static estimates must be positive for every transfer replica")
        self.static_estimates = dict(static_estimates or {})
        self.stall_timeout_s = stall_timeout_s

        self.phase = Phase.COLLECTING_HASHES
        self.round = 0
        self.start_s = start_s
        self.last_round_s = start_s
        self.ledger = alloc.ReceiptLedger(self.transfer, config.interval_ms, start_s)
        self.tally = HashTally(self.transfer, config.f_max)
        self.agreed_digests: Optional[tuple[bytes, ...]] = None
        self.manifest: Optional[StateManifest] = None

        self.verified: dict[int, bytes] = {}
        self.pending: dict[int, list[tuple[int, bytes]]] = defaultdict(list)
        self.excluded: dict[int, set[int]] = defaultdict(set)
        self.last_sender: dict[int, int] = {}
        self.owner: dict[int, int] = {}
        self.assigned_at: dict[int, float] = {}
        self.current: dict[int, tuple[int, ...]] = {t: () for t in self.transfer}
        self.buffered_log: list[LogEntry] = []
        self.finish_times: dict[int, float] = {}
        self.failures: list[tuple[float, int, int]] = []
        self.estimates: list[tuple[float, int, dict[int, float]]] = []
        self.events: list[tuple[float, str, dict]] = []
        self.pbft = None
        self.result: Optional[StateImage] = None
        self.done_s: Optional[float] = None

    # -- helpers ---------------------------------------------------------

    @property
    def bft(self) -> bool:
        return self.config.mode is Mode.BFT

    @property
    def done(self) -> bool:
        return self.phase is Phase.DONE

    @property
    def fallback_taken(self) -> bool:
        return self.pbft is not None

    def remaining(self) -> list[int]:
        return [i for i in range(self.n_chunks) if i not in self.verified]

    def _emit(self, now: float, kind: str, **detail) -> None:
        self.events.append((now, kind, detail))

    def _set_phase(self, phase: Phase, now: float) -> None:
        if phase is not self.phase:
            self.phase = phase
            self._emit(now, "phase", phase=phase.name)

    def _check_sender(self, sender: int) -> None:
        if sender not in self.transfer:
            raise UnknownReplica(sender)

    def record_receipt(self, sender: int, nbytes: float, now: float) -> None:
        self._check_sender(sender)
        self.ledger.record(sender, nbytes, now)

    def buffer_log_entry(self, entry: LogEntry) -> None:
        """Keep an entry ordered while the transfer runs; replayed at finalize."""
        self.buffered_log.append(entry)

    def _stalled(self, replica: int, now: float) -> bool:
        since = max(
            self.ledger.last_progress_s[replica], self.start_s, self.assigned_at.get(replica, self.start_s)
        )
        return now - since >= self.stall_timeout_s

    def current_estimates(self, now: float) -> dict[int, float]:
        if self.policy is Policy.DYNAMIC:
            return {t: alloc.estimate(self.ledger, t, self.round) for t in self.transfer}
        if self.policy is Policy.STATIC:
            return {
                t: alloc.MIN_ESTIMATE_MBPS if self._stalled(t, now) else self.static_estimates[t]
                for t in self.transfer
            }
        return {t: 1.0 for t in self.transfer}

    # -- T1: requester ---------------------------------------------------

    def start(self, now: float) -> list[Outbound]:
        if self.phase is not Phase.COLLECTING_HASHES:
            raise ProtocolError("session already started")
        self.start_s = now
        self.last_round_s = now
        out: list[Outbound] = []
        if self.bft:
            out += [(t, HashRequest(self.recovery)) for t in self.transfer]
        self._set_phase(Phase.TRANSFERRING, now)
        if self.policy is Policy.FIXED:
            for part, t in enumerate(self.transfer):
                self.owner[part] = t
            return out + self._fixed_requests(now, self.transfer)
        return out + self._plan_round(now)

    def on_tick(self, now: float) -> list[Outbound]:
        if self.phase is Phase.FALLBACK_PBFT:
            return self.pbft.on_tick(now)
        if self.phase is not Phase.TRANSFERRING:
            return []
        if now - self.last_round_s < self.ledger.interval_s - 1e-9:
            return []
        if not self.remaining():
            self._set_phase(Phase.FINALIZING, now)
            return []
        self.round += 1
        self.last_round_s = now
        if self.policy is Policy.FIXED:
            return self._fixed_stall_check(now)
        return self._plan_round(now)

    def _plan_round(self, now: float) -> list[Outbound]:
        estimates = self.current_estimates(now)
        self.estimates.append((now, self.round, dict(estimates)))
        remaining = self.remaining()
        plan = alloc.assign(remaining, estimates, self.n_chunks, self.verified.keys(), self.round)
        sets = {t: list(plan.sets[t]) for t in self.transfer}
        self._apply_exclusions(sets, estimates)
        self.current = {t: tuple(sorted(set(sets[t]))) for t in self.transfer}
        self._emit(
            now,
            "round",
            round=self.round,
            estimates={str(t): round(estimates[t], 6) for t in self.transfer},
            sizes={str(t): len(self.current[t]) for t in self.transfer},
            remaining=len(remaining),
        )
        return [(t, ChunkRequest(self.recovery, self.round, self.current[t])) for t in self.transfer]

    def _apply_exclusions(self, sets: dict[int, list[int]], estimates: Mapping[int, float]) -> None:
        """Move chunks away from senders that already failed verification on them."""
        order = alloc.dealing_order(estimates)
        for t in order:
            keep = []
            for c in sets[t]:
                if t not in self.excluded.get(c, ()):
                    keep.append(c)
                    continue
                alt = [a for a in order if a not in self.excluded[c]]
                if not alt:
                    self.excluded[c].clear()
                    keep.append(c)
                    continue
                if c not in sets[alt[0]]:
                    sets[alt[0]].append(c)
            sets[t] = keep
        for t in order:
            if sets[t]:
                continue
            donors = sorted((a for a in order if sets[a]), key=lambda a: -len(sets[a]))
            for d in donors:
                cand = [c for c in sorted(sets[d]) if t not in self.excluded.get(c, ())]
                if cand:
                    sets[t] = [cand[0]]
                    break

    def _fixed_requests(self, now: float, replicas: Iterable[int]) -> list[Outbound]:
        out = []
        for t in replicas:
            parts = tuple(sorted(p for p, o in self.owner.items() if o == t and p not in self.verified))
            self.current[t] = parts
            self.assigned_at[t] = now
            out.append((t, ChunkRequest(self.recovery, self.round, parts)))
        self._emit(now, "round", round=self.round, owner={str(p): o for p, o in sorted(self.owner.items())})
        return out

    def _reassign_part(self, part: int, avoid: int) -> Optional[int]:
        alt = [t for t in self.transfer if t != avoid and t not in self.excluded[part]]
        if not alt:
            return None
        # spread redirected parts over the least-loaded replicas
        load = Counter(o for p, o in self.owner.items() if p not in self.verified)
        target = min(alt, key=lambda t: (load[t], t))
        self.owner[part] = target
        return target

    def _fixed_stall_check(self, now: float) -> list[Outbound]:
        touched = set()
        for part in self.remaining():
            t = self.owner[part]
            if self._stalled(t, now):
                self.excluded[part].add(t)
                target = self._reassign_part(part, t)
                if target is not None:
                    touched.add(target)
        return self._fixed_requests(now, sorted(touched)) if touched else []

    # -- T2: receiver ----------------------------------------------------

    def on_message(self, msg: Message, now: float, credit: bool = True) -> list[Outbound]:
        self._check_sender(msg.sender)
        if credit:
            self.record_receipt(msg.sender, msg.size_bytes, now)
        if self.phase is Phase.FALLBACK_PBFT:
            out = self.pbft.on_message(msg, now, credit=False)
            if self.pbft.done:
                self._finish_from_pbft(now)
            return out
        if isinstance(msg, HashResponse):
            return self.on_hash_response(msg.sender, msg.digests, msg.manifest, now)
        if isinstance(msg, ChunkData):
            return self.on_chunk(msg.sender, msg.chunk, now, manifest=msg.manifest)
        return []

    def on_hash_response(
        self, sender: int, digests: Sequence[bytes], manifest: Optional[StateManifest], now: float
    ) -> list[Outbound]:
        self._check_sender(sender)
        if not self.bft or self.phase is not Phase.TRANSFERRING or self.agreed_digests is not None:
            return []
        if not self.tally.add(sender, digests, manifest):
            return []
        key = self.tally.agreed()
        if key is not None and len(key[0]) == self.n_chunks and key[1] is not None:
            self.agreed_digests, self.manifest = key
            self._emit(now, "agreed", endorsers=sorted(r for r, k in self.tally.by_replica.items() if k == key))
            return self._drain_pending(now)
        if self.tally.should_fall_back() or key is not None:
            return self.fall_back(now)
        return []

    def _drain_pending(self, now: float) -> list[Outbound]:
        failed = {}
        for index in sorted(self.pending):
            for sender, payload in self.pending[index]:
                if index in self.verified:
                    break
                if not self._verify(index, sender, payload, now):
                    failed[index] = sender
        self.pending.clear()
        out = []
        if self.policy is Policy.FIXED:
            targets = set()
            for index, sender in failed.items():
                if index not in self.verified:
                    t = self._reassign_part(index, sender)
                    if t is not None:
                        targets.add(t)
            out = self._fixed_requests(now, sorted(targets)) if targets else []
        return out + self._maybe_finish(now)

    def _verify(self, index: int, sender: int, payload: bytes, now: float) -> bool:
        if verify_chunk(Chunk(index, payload), self.agreed_digests[index]):
            self._accept(index, sender, payload, now)
            return True
        self.excluded[index].add(sender)
        self.failures.append((now, index, sender))
        self._emit(now, "verify_fail", chunk=index, sender=sender)
        return False

    def _accept(self, index: int, sender: int, payload: bytes, now: float) -> None:
        self.verified[index] = payload
        self.last_sender[index] = sender
        self.finish_times[sender] = now

    def on_chunk(
        self, sender: int, chunk: Chunk, now: float, manifest: Optional[StateManifest] = None
    ) -> list[Outbound]:
        self._check_sender(sender)
        if not 0 <= chunk.index < self.n_chunks:
            raise ChunkIndexOutOfRange(chunk.index)
        if self.phase is not Phase.TRANSFERRING or chunk.index in self.verified:
            return []
        if not self.bft:
            if self.manifest is None:
                self.manifest = manifest
            self._accept(chunk.index, sender, chunk.payload, now)
            return self._maybe_finish(now)
        if self.agreed_digests is None:
            self.pending[chunk.index].append((sender, chunk.payload))
            return []
        ok = self._verify(chunk.index, sender, chunk.payload, now)
        if not ok and self.policy is Policy.FIXED:
            target = self._reassign_part(chunk.index, sender)
            return self._fixed_requests(now, [target]) if target is not None else []
        return self._maybe_finish(now)

    def _maybe_finish(self, now: float) -> list[Outbound]:
        if len(self.verified) == self.n_chunks and self.phase is Phase.TRANSFERRING:
            self._set_phase(Phase.FINALIZING, now)
            self.finalize(now)
        return []

    # -- fallback and completion ------------------------------------------

    def fall_back(self, now: float) -> list[Outbound]:
        from geoxfer.baselines import PbftSession

        self._set_phase(Phase.FALLBACK_PBFT, now)
        estimates = self.current_estimates(now)
        order = alloc.dealing_order(estimates)
        self._emit(now, "fallback", order=order)
        self.pbft = PbftSession(
            self.config,
            self.recovery,
            self.transfer,
            order=order,
            ledger=self.ledger,
            stall_timeout_s=self.stall_timeout_s,
        )
        self.pbft.events = self.events
        cancel = [(t, ChunkRequest(self.recovery, self.round + 1, ())) for t in self.transfer]
        return cancel + self.pbft.start(now)

    def _finish_from_pbft(self, now: float) -> None:
        self.finish_times = dict(self.pbft.finish_times)
        self._set_phase(Phase.FINALIZING, now)
        self.finalize(now)

    def finalize(self, now: Optional[float] = None) -> StateImage:
        if self.phase is Phase.DONE:
            return self.result
        if self.phase is not Phase.FINALIZING:
            raise ProtocolError(f"cannot finalize in phase {self.phase.name}")
        if self.pbft is not None:
            image = self.pbft.image
        else:
            manifest = self.manifest.with_chunks(self.n_chunks)
            image = combine((Chunk(i, p) for i, p in self.verified.items()), manifest)
        self.result = StateImage(image.checkpoint, replay_log(image.log, self.buffered_log))
        self.done_s = now
        self._set_phase(Phase.DONE, now if now is not None else 0.0)
        return self.result


class Behavior(str, enum.Enum):
    CORRECT = "correct"
    CORRUPT_CHUNKS = "byz_corrupt_chunks"
    WRONG_HASH = "byz_wrong_hash"
    SILENT = "byz_silent"


def _flip(data: bytes, rng: random.Random) -> bytes:
    if not data:
        return b"\x00"
    pos = rng.randrange(len(data))
    return data[:pos] + bytes([data[pos] ^ (1 + rng.randrange(255))]) + data[pos + 1 :]


class TransferSession:
    """A transfer replica serving one recovery replica from a fixed snapshot.

    Requests only reshape the outbound queue; the driver pulls messages one at
    a time with ``next_outbound`` whenever the link is free, which is what
    lets a newer ``ChunkRequest`` drop chunks that were requested earlier but
    not yet sent. A chunk is sent at most once per session: channels are
    reliable and FIFO, so a resend could only duplicate data already in flight.
    """

    def __init__(
        self,
        replica: int,
        snapshot: StateImage,
        config: TransferConfig,
        *,
        nominal_bytes: Optional[int] = None,
        hash_delay_s: float = 0.0,
        behavior: Behavior | str = Behavior.CORRECT,
        corrupt_probability: float = 0.3,
        rng: Optional[random.Random] = None,
    ):
        self.replica = replica
        self.snapshot = snapshot
        self.config = config
        self.nominal_bytes = nominal_bytes
        self.hash_delay_s = hash_delay_s
        self.behavior = Behavior(behavior)
        self.corrupt_probability = corrupt_probability
        self.rng = rng or random.Random(replica)

        self.ready_at: Optional[float] = None
        self.control: deque[Message] = deque()
        self.queue: deque[int] = deque()
        self.sent: set[int] = set()
        self._prepared = False

    def _prepare(self) -> None:
        if self._prepared:
            return
        n = self.config.n_chunks
        self.stream, manifest = serialize(self.snapshot, n)
        self.manifest = manifest
        self.chunks = split(self.stream, n)
        self.digests = digest_chunks(self.chunks)
        self.nominal_lengths = (
            split_lengths(self.nominal_bytes, n) if self.nominal_bytes is not None else None
        )
        self._prepared = True

    def _fake_digest(self) -> bytes:
        return bytes(self.rng.randrange(256) for _ in range(64))

    def on_request(self, msg: Message, now: float) -> None:
        if self.behavior is Behavior.SILENT:
            return
        self._prepare()
        if self.ready_at is None:
            self.ready_at = now + self.hash_delay_s
        if isinstance(msg, HashRequest):
            digests = self.digests
            if self.behavior is Behavior.WRONG_HASH:
                digests = tuple(self._fake_digest() for _ in digests)
            self.control.append(HashResponse(self.replica, digests, self.manifest))
        elif isinstance(msg, ChunkRequest):
            self.queue = deque(i for i in sorted(set(msg.indices)) if i not in self.sent)
        elif isinstance(msg, PbftStateRequest):
            stream = self.stream
            if self.behavior is Behavior.CORRUPT_CHUNKS and self.rng.random() < self.corrupt_probability:
                stream = _flip(stream, self.rng)
            self.control.append(
                PbftStateResponse(self.replica, stream, self.manifest, self.nominal_bytes)
            )
        elif isinstance(msg, PbftDigestRequest):
            d = state_digest(self.stream, self.manifest)
            if self.behavior is Behavior.WRONG_HASH:
                d = self._fake_digest()
            self.control.append(PbftDigestResponse(self.replica, d))

    def has_outbound(self) -> bool:
        return bool(self.control or self.queue)

    def next_outbound(self, now: float) -> Optional[Message]:
        if self.ready_at is None or now < self.ready_at - 1e-12:
            return None
        if self.control:
            return self.control.popleft()
        if not self.queue:
            return None
        index = self.queue.popleft()
        self.sent.add(index)
        chunk = self.chunks[index]
        if self.behavior is Behavior.CORRUPT_CHUNKS and self.rng.random() < self.corrupt_probability:
            chunk = Chunk(index, _flip(chunk.payload, self.rng))
        nominal = self.nominal_lengths[index] if self.nominal_lengths else None
        return ChunkData(self.replica, chunk, self.manifest, nominal)

    def crash(self) -> None:
        self.control.clear()
        self.queue.clear()
