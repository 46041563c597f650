from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from enum import Enum

from ..compressors import CompressorKind, Tag
from ..errors import ConfigError

DEFAULT_SIZE_THRESHOLD = 1 << 20


class Mode(str, Enum):
    FULL_PRECISION = "full_precision"
    COMPRESSED = "compressed"
    COMPRESSED_EF = "compressed_ef"


class BiasedKindWithoutEF(UserWarning):
    """A biased compressor is aggregated without error feedback."""


class UnbiasedKindWithEF(UserWarning):
    """An unbiased compressor is paired with error feedback."""


@dataclass(frozen=True)
class AggregationConfig:
    """How gradients travel between workers and server shards.

    Tensors whose raw float32 size ``4 * d`` is below ``size_threshold_bytes``
    skip compression and take the full-precision path.
    """

    mode: Mode = Mode.FULL_PRECISION
    compressor: CompressorKind = field(default_factory=CompressorKind.none)
    size_threshold_bytes: int = DEFAULT_SIZE_THRESHOLD
    shard_count: int = 1
    n_workers: int = 1
    shard_policy: str = "modulo"
    local_devices: int = 1

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.size_threshold_bytes < 0:
            raise ConfigError("size_threshold_bytes must be >= 0")
        if self.shard_count < 1:
            raise ConfigError("shard_count must be >= 1")
        if self.n_workers < 1:
            raise ConfigError("n_workers must be >= 1")
        if self.local_devices < 1:
            raise ConfigError("local_devices must be >= 1")
        if self.shard_policy not in ("modulo", "weighted"):
            raise ConfigError(f"unknown shard_policy {self.shard_policy!r}")

    def bypasses(self, d: int) -> bool:
        return self.mode == Mode.FULL_PRECISION or 4 * d < self.size_threshold_bytes

    def mode_for(self, d: int) -> Mode:
        return Mode.FULL_PRECISION if self.bypasses(d) else self.mode

    def kind_for(self, d: int) -> CompressorKind:
        return CompressorKind.none() if self.bypasses(d) else self.compressor

    def check_pairing(self) -> None:
        """Warn about compressor/EF pairings the convergence theory does not cover."""
        tag = self.compressor.tag
        if tag == Tag.NONE:
            return
        if self.mode == Mode.COMPRESSED and not self.compressor.is_unbiased:
            warnings.warn(f"{self.compressor.spec()} is biased; aggregating without error feedback",
                          BiasedKindWithoutEF, stacklevel=2)
        if self.mode == Mode.COMPRESSED_EF and self.compressor.is_unbiased:
            warnings.warn(f"{self.compressor.spec()} is unbiased; error feedback is not required",
                          UnbiasedKindWithEF, stacklevel=2)
