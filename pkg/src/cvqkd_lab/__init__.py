"""Pulse-level simulator and key-rate calculator for true-local-oscillator CV-QKD."""

from .link import Link, LinkConfig, PacketOutcome
from .security import (
    FiniteSizeInput,
    KeyRateResult,
    SecurityInput,
    asymptotic_rate,
    finite_size_rate,
    holevo_bound,
    key_rate,
    mutual_information,
    optimize_va,
)
from .units import DetectorConstants, QuadSample, Units

__version__ = "0.1.0"

__all__ = [
    "DetectorConstants",
    "FiniteSizeInput",
    "KeyRateResult",
    "Link",
    "LinkConfig",
    "PacketOutcome",
    "QuadSample",
    "SecurityInput",
    "Units",
    "asymptotic_rate",
    "finite_size_rate",
    "holevo_bound",
    "key_rate",
    "mutual_information",
    "optimize_va",
]
