"""Bandwidth-adaptive chunked state transfer for geo-replicated SMR, with a
virtual-time network simulator and PBFT / CST baselines."""

from geoxfer.core import (
    ConfigError,
    LogEntry,
    Mode,
    ReplicaId,
    StateImage,
    TransferConfig,
    validate_config,
)

__all__ = [
    "ConfigError",
    "LogEntry",
    "Mode",
    "ReplicaId",
    "StateImage",
    "TransferConfig",
    "validate_config",
]

__version__ = "0.1.0"
