"""Comparison methods: PBFT whole-state transfer, CST equal split, and the
adaptive method with fixed premeasured estimates."""

from __future__ import annotations

import enum
from typing import Mapping, Optional, Sequence

from geoxfer import alloc
from geoxfer.codec import ManifestMismatch, deserialize, state_digest
from geoxfer.core import LogEntry, Mode, StateImage, TransferConfig
from geoxfer.messages import (
    Message,
    PbftDigestRequest,
    PbftDigestResponse,
    PbftStateRequest,
    PbftStateResponse,
)
from geoxfer.protocol import (
    DEFAULT_STALL_TIMEOUT_S,
    Outbound,
    Phase,
    Policy,
    ProtocolError,
    RecoverySession,
    UnknownReplica,
    replay_log,
)


class BaselineKind(str, enum.Enum):
    PBFT = "pbft"
    CST = "cst"
    PREMEASURED = "premeasured"


class ExhaustedReplicas(ProtocolError):
    """Every candidate sender failed; only possible with more than f faults."""


class PbftSession:
    """One sender ships the whole state; f+1 matching whole-state digests accept it.

    The sender counts as one endorser of the digest of what it sent, so an
    honest sender plus one honest digest suffice at f=1. Candidates are tried
    in ``order``; a sender is abandoned when its state fails verification or
    when it makes no progress for ``stall_timeout_s``.
    """

    def __init__(
        self,
        config: TransferConfig,
        recovery: int,
        transfer: Sequence[int],
        *,
        order: Sequence[int],
        ledger: Optional[alloc.ReceiptLedger] = None,
        stall_timeout_s: float = DEFAULT_STALL_TIMEOUT_S,
    ):
        self.config = config
        self.recovery = recovery
        self.transfer = tuple(sorted(transfer))
        if set(order) != set(self.transfer):
            raise ValueError("candidate order must list every transfer replica")
        self.order = list(order)
        self.ledger = ledger or alloc.ReceiptLedger(self.transfer, config.interval_ms)
        self.stall_timeout_s = stall_timeout_s

        self.phase = Phase.COLLECTING_HASHES
        self.chosen: Optional[int] = None
        self.tried: list[int] = []
        self.digests: dict[int, bytes] = {}
        self.requested_digest: set[int] = set()
        self.received: Optional[tuple[bytes, object, float]] = None
        self.requested_at = 0.0
        self.image: Optional[StateImage] = None
        self.result: Optional[StateImage] = None
        self.buffered_log: list[LogEntry] = []
        self.finish_times: dict[int, float] = {}
        self.events: list[tuple[float, str, dict]] = []
        self.done_s: Optional[float] = None

    @property
    def bft(self) -> bool:
        return self.config.mode is Mode.BFT

    @property
    def done(self) -> bool:
        return self.image is not None

    fallback_taken = False

    def record_receipt(self, sender: int, nbytes: float, now: float) -> None:
        if sender not in self.transfer:
            raise UnknownReplica(sender)
        self.ledger.record(sender, nbytes, now)

    def buffer_log_entry(self, entry: LogEntry) -> None:
        self.buffered_log.append(entry)

    def start(self, now: float) -> list[Outbound]:
        self.phase = Phase.TRANSFERRING
        return self._request_next(now)

    def _request_next(self, now: float) -> list[Outbound]:
        left = [t for t in self.order if t not in self.tried]
        if not left:
            raise ExhaustedReplicas("every transfer replica failed to deliver a verifiable state")
        self.chosen = left[0]
        self.tried.append(self.chosen)
        self.received = None
        self.requested_at = now
        self.events.append((now, "pbft_request", {"chosen": self.chosen, "attempt": len(self.tried)}))
        out: list[Outbound] = [(self.chosen, PbftStateRequest(self.recovery))]
        if self.bft:
            for t in self.transfer:
                if t != self.chosen and t not in self.digests and t not in self.requested_digest:
                    self.requested_digest.add(t)
                    out.append((t, PbftDigestRequest(self.recovery)))
        return out

    def _fail(self, now: float, reason: str) -> list[Outbound]:
        self.events.append((now, "pbft_retry", {"failed": self.chosen, "reason": reason}))
        return self._request_next(now)

    def on_message(self, msg: Message, now: float, credit: bool = True) -> list[Outbound]:
        if msg.sender not in self.transfer:
            raise UnknownReplica(msg.sender)
        if credit:
            self.record_receipt(msg.sender, msg.size_bytes, now)
        if self.done:
            return []
        if isinstance(msg, PbftDigestResponse):
            self.digests.setdefault(msg.sender, msg.digest)
        elif isinstance(msg, PbftStateResponse) and msg.sender == self.chosen:
            self.received = (msg.stream, msg.manifest, now)
        else:
            return []
        return self._check(now)

    def _check(self, now: float) -> list[Outbound]:
        if self.received is None:
            return []
        stream, manifest, at = self.received
        if manifest is None:
            return self._fail(now, "no manifest")
        if self.bft:
            local = state_digest(stream, manifest)
            endorsers = 1 + sum(
                1 for t, d in self.digests.items() if t != self.chosen and d == local
            )
            if endorsers < self.config.f_max + 1:
                outstanding = sum(
                    1 for t in self.transfer if t != self.chosen and t not in self.digests
                )
                if endorsers + outstanding < self.config.f_max + 1:
                    return self._fail(now, "digest mismatch")
                return []
        try:
            image = deserialize(stream, manifest)
        except ManifestMismatch:
            return self._fail(now, "malformed state")
        self.image = image
        self.finish_times = {self.chosen: at}
        self.phase = Phase.FINALIZING
        self.finalize(now)
        return []

    def on_tick(self, now: float) -> list[Outbound]:
        if self.done or self.chosen is None:
            return []
        if self.received is not None:
            if now - self.received[2] >= self.stall_timeout_s:
                return self._fail(now, "digests unavailable")
            return []
        since = max(self.requested_at, self.ledger.last_progress_s[self.chosen])
        if now - since >= self.stall_timeout_s:
            return self._fail(now, "silent")
        return []

    def finalize(self, now: Optional[float] = None) -> StateImage:
        if self.image is None:
            raise ProtocolError("no verified state yet")
        if self.result is None:
            self.result = StateImage(self.image.checkpoint, replay_log(self.image.log, self.buffered_log))
            self.done_s = now
            self.phase = Phase.DONE
        return self.result


def pbft_order(estimates: Mapping[int, float]) -> list[int]:
    """Widest bandwidth first, ties to the lower id."""
    return alloc.dealing_order(estimates)


def pbft_session(
    config: TransferConfig,
    recovery: int,
    transfer: Sequence[int],
    premeasured: Mapping[int, float],
    chosen: Optional[int] = None,
    **kw,
) -> PbftSession:
    order = pbft_order(premeasured)
    if chosen is not None:
        if chosen not in transfer:
            raise ValueError(f"chosen replica {chosen} is not a transfer replica")
        order.remove(chosen)
        order.insert(0, chosen)
    return PbftSession(config, recovery, transfer, order=order, **kw)


def cst_config(config: TransferConfig) -> TransferConfig:
    """CST sends one equal part per transfer replica."""
    return TransferConfig(
        n_replicas=config.n_replicas,
        f_max=config.f_max,
        n_chunks=config.n_replicas - 1,
        interval_ms=config.interval_ms,
        mode=config.mode,
    )


def cst_session(config: TransferConfig, recovery: int, transfer: Sequence[int], **kw) -> RecoverySession:
    if len(transfer) < 2:
        raise ValueError("CST needs at least two transfer replicas")
    return RecoverySession(cst_config(config), recovery, transfer, policy=Policy.FIXED, **kw)


def premeasured_session(
    config: TransferConfig,
    recovery: int,
    transfer: Sequence[int],
    static_estimates: Mapping[int, float],
    **kw,
) -> RecoverySession:
    return RecoverySession(
        config, recovery, transfer, policy=Policy.STATIC, static_estimates=static_estimates, **kw
    )


# -- end-to-end runners over the simulator -------------------------------


def _run(setup, **changes) -> StateImage:
    from dataclasses import replace

    from geoxfer.harness.experiments import simulate

    return simulate(replace(setup, **changes)).result


def pbft_transfer(setup, chosen: int) -> StateImage:
    """Simulate a PBFT transfer that asks ``chosen`` first."""
    if chosen not in setup.transfer:
        raise ValueError(f"chosen replica {chosen} is not a transfer replica")
    return _run(setup, method=BaselineKind.PBFT.value, pbft_chosen=chosen)


def cst_transfer(setup) -> StateImage:
    return _run(setup, method=BaselineKind.CST.value)


def premeasured_transfer(setup, static_estimates: Mapping[int, float]) -> StateImage:
    if any(static_estimates.get(t, 0) <= 0 for t in setup.transfer):
        raise ValueError("static estimates must be positive for every transfer replica")
    return _run(setup, method=BaselineKind.PREMEASURED.value, static_estimates=dict(static_estimates))
