"""Shared domain types and configuration validation."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

MIB = 1 << 20
DIGEST_ALGORITHM = "sha512"


class ConfigError(ValueError):
    """Raised for an invalid configuration. ``field`` names the offending key."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class QuorumViolation(ConfigError):
    pass


class ZeroInterval(ConfigError):
    pass


class TooFewChunks(ConfigError):
    pass


class Mode(str, enum.Enum):
    BFT = "BFT"
    CFT = "CFT"

    @classmethod
    def parse(cls, value: "str | Mode") -> "Mode":
        if isinstance(value, Mode):
            return value
        try:
            return cls(value.upper())
        except ValueError:
            raise ConfigError(f"unknown mode {value!r}", field="mode") from None


@dataclass(frozen=True, order=True)
class ReplicaId:
    id: int
    label: str = field(compare=False)

    def __post_init__(self):
        if self.id < 0:
            raise ValueError("replica id must be non-negative")
        if not self.label:
            raise ValueError("replica label must be non-empty")

    def __str__(self) -> str:
        return self.label


@dataclass(frozen=True)
class LogEntry:
    sequence_number: int
    payload: bytes


@dataclass(frozen=True)
class StateImage:
    """Checkpoint bytes plus the ordered log executed after it."""

    checkpoint: bytes
    log: tuple[LogEntry, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "log", tuple(self.log))
        seqs = [e.sequence_number for e in self.log]
        if any(b <= a for a, b in zip(seqs, seqs[1:])):
            raise ValueError("log sequence numbers must be strictly increasing")

    @property
    def size(self) -> int:
        """Payload bytes held by the state (checkpoint plus log payloads)."""
        return len(self.checkpoint) + sum(len(e.payload) for e in self.log)


@dataclass(frozen=True)
class TransferConfig:
    n_replicas: int = 4
    f_max: int = 1
    n_chunks: int = 256
    interval_ms: int = 1000
    mode: Mode = Mode.BFT
    digest_algorithm: str = DIGEST_ALGORITHM

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode.parse(self.mode))

    @property
    def n_transfer(self) -> int:
        return self.n_replicas - 1


def validate_config(cfg: TransferConfig) -> None:
    """Raise a ``ConfigError`` subclass unless every invariant holds."""
    if cfg.f_max < 0:
        raise QuorumViolation("f_max must be non-negative", field="f_max")
    need = 3 * cfg.f_max + 1 if cfg.mode is Mode.BFT else 2 * cfg.f_max + 1
    if cfg.n_replicas < need:
        raise QuorumViolation(
            f"{cfg.mode.value} with f={cfg.f_max} needs n >= {need}, got {cfg.n_replicas}",
            field="n_replicas",
        )
    if cfg.interval_ms <= 0:
        raise ZeroInterval("interval_ms must be positive", field="interval_ms")
    if cfg.n_chunks < cfg.n_replicas - 1:
        raise TooFewChunks(
            f"n_chunks={cfg.n_chunks} is below the {cfg.n_replicas - 1} transfer replicas",
            field="n_chunks",
        )
    if cfg.digest_algorithm != DIGEST_ALGORITHM:
        raise ConfigError("only sha512 digests are supported", field="digest_algorithm")
