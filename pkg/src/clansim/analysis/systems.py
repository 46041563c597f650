"""Back-of-envelope system metrics: scaling efficiency and compression rates."""

from __future__ import annotations

from ..compressors import CompressorKind
from ..errors import NonPositiveTime

_BASELINE_BYTES = {"FP32": 4, "FP16": 2}


def ideal_scaling_efficiency(t_fp: float, t_bp: float, t_comm: float) -> float:
    """``(T_FP + T_BP) / (T_FP + max(T_BP, T_COMM))`` with perfect compute/comm overlap."""
    for name, v in (("t_fp", t_fp), ("t_bp", t_bp), ("t_comm", t_comm)):
        if not v > 0:
            raise NonPositiveTime(f"{name} must be positive, got {v}")
    return (t_fp + t_bp) / (t_fp + max(t_bp, t_comm))


def comm_time(d: int, bandwidth_bytes_per_s: float, bytes_per_element: int = 4) -> float:
    """Parameter-server transfer time: push plus pull of ``d`` elements."""
    if not bandwidth_bytes_per_s > 0:
        raise NonPositiveTime("bandwidth must be positive")
    return 2 * d * bytes_per_element / bandwidth_bytes_per_s


def compression_rate(kind: CompressorKind, d: int, baseline: str = "FP32") -> float:
    """Dense baseline bytes over encoded payload bytes (frame header excluded)."""
    try:
        per_elem = _BASELINE_BYTES[baseline.upper()]
    except KeyError:
        raise ValueError(f"baseline must be FP32 or FP16, got {baseline!r}") from None
    return per_elem * d / kind.payload_size(d)


def dropped_fraction(kind: CompressorKind, d: int) -> float:
    """Share of coordinates a sparse compressor does not transmit."""
    if not kind.is_sparse:
        return 0.0
    return 1 - kind.resolve_k(d) / d

