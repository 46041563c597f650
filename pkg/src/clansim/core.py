"""Numeric foundations: gradient vectors, block partitions, norms and keyed RNG streams."""

from __future__ import annotations

import zlib
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyBlock, NonFiniteError, SizeMismatch

__all__ = [
    "BlockPartition",
    "DeterministicRng",
    "gradient_vector",
    "l1_norm",
    "l2_norm",
    "linf_norm",
    "make_partition",
]

GRAD_DTYPE = np.float32


def gradient_vector(values) -> np.ndarray:
    """Validate ``values`` and return them as a read-only 1-D float32 array.

    Rejects empty input and any NaN/Inf, including finite float64 values
    that overflow the float32 range.
    """
    arr = np.asarray(values)
    if arr.ndim != 1:
        arr = arr.reshape(-1)
    if arr.size == 0:
        raise SizeMismatch("gradient vector must have length d > 0")
    with np.errstate(over="ignore", invalid="ignore"):
        out = arr.astype(GRAD_DTYPE, copy=True)
    if not np.all(np.isfinite(out)):
        raise NonFiniteError("gradient vector contains non-finite entries")
    out.flags.writeable = False
    return out


def l1_norm(x) -> float:
    return float(np.sum(np.abs(np.asarray(x, dtype=np.float64))))


def l2_norm(x) -> float:
    x64 = np.asarray(x, dtype=np.float64)
    return float(np.sqrt(np.dot(x64, x64)))


def linf_norm(x) -> float:
    x = np.asarray(x)
    return float(np.max(np.abs(x))) if x.size else 0.0


@dataclass(frozen=True)
class BlockPartition:
    """Contiguous, ordered index ranges ``[start, stop)`` covering ``[0, d)``."""

    boundaries: tuple[tuple[int, int], ...]

    @property
    def d(self) -> int:
        return self.boundaries[-1][1]

    @property
    def block_count(self) -> int:
        return len(self.boundaries)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(stop - start for start, stop in self.boundaries)

    def slices(self) -> list[slice]:
        return [slice(a, b) for a, b in self.boundaries]

    def split(self, x) -> list[np.ndarray]:
        x = np.asarray(x)
        if x.shape[-1] != self.d:
            raise SizeMismatch(f"vector of length {x.shape[-1]} does not match partition d={self.d}")
        return [x[..., a:b] for a, b in self.boundaries]

    def join(self, blocks: Sequence[np.ndarray]) -> np.ndarray:
        if len(blocks) != self.block_count:
            raise SizeMismatch(f"expected {self.block_count} blocks, got {len(blocks)}")
        for blk, size in zip(blocks, self.sizes):
            if np.shape(blk)[-1] != size:
                raise SizeMismatch("block length does not match partition")
        return np.concatenate(blocks, axis=-1)


def make_partition(d: int, block_sizes: Iterable[int]) -> BlockPartition:
    sizes = [int(s) for s in block_sizes]
    if d <= 0:
        raise SizeMismatch("d must be positive")
    if any(s <= 0 for s in sizes):
        raise EmptyBlock(f"block sizes must be >= 1, got {sizes}")
    if sum(sizes) != d:
        raise SizeMismatch(f"block sizes sum to {sum(sizes)}, expected {d}")
    bounds, start = [], 0
    for s in sizes:
        bounds.append((start, start + s))
        start += s
    return BlockPartition(tuple(bounds))


def _stage_code(stage) -> int:
    if isinstance(stage, int):
        return stage
    return zlib.crc32(str(stage).encode())


@dataclass(frozen=True)
class DeterministicRng:
    """Counter-based random stream keyed by ``(seed, worker, iteration, tensor, stage)``.

    Each distinct coordinate tuple maps through :class:`numpy.random.SeedSequence`
    to an independent Philox key, so draws never depend on thread scheduling
    or on how many other streams were consumed first.
    """

    seed: int
    worker: int = 0
    iteration: int = 0
    tensor: int = 0
    stage: str | int = "root"

    def at(self, **coords) -> "DeterministicRng":
        return replace(self, **coords)

    def generator(self) -> np.random.Generator:
        key = (self.worker, self.iteration, self.tensor, _stage_code(self.stage))
        ss = np.random.SeedSequence(self.seed & 0xFFFFFFFFFFFFFFFF, spawn_key=key)
        return np.random.Generator(np.random.Philox(ss))

    def random_bytes(self, n: int) -> bytes:
        return self.generator().bytes(n)
