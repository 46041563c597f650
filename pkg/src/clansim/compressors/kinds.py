from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import IntEnum
from fractions import Fraction

from ..errors import ConfigError, KTooLarge


class Tag(IntEnum):
    """Compressor identifiers; the integer value is the wire id."""

    NONE = 0
    FP16 = 1
    SCALED_SIGN = 2
    TOP_K = 3
    RANDOM_K = 4
    LINEAR_DITHER = 5
    NATURAL_DITHER = 6


class Precision(IntEnum):
    F32 = 0
    F16 = 1


SPARSE_TAGS = frozenset({Tag.TOP_K, Tag.RANDOM_K})
DITHER_TAGS = frozenset({Tag.LINEAR_DITHER, Tag.NATURAL_DITHER})
UNBIASED_TAGS = frozenset({Tag.NONE, Tag.RANDOM_K, Tag.LINEAR_DITHER, Tag.NATURAL_DITHER})
STOCHASTIC_TAGS = frozenset({Tag.RANDOM_K, Tag.LINEAR_DITHER, Tag.NATURAL_DITHER})

HEADER_BYTES = 24


@dataclass(frozen=True)
class CompressorKind:
    """A compressor and its parameters.

    ``k`` is either an absolute count (``int``) or a fraction of the tensor
    length (``float`` in ``(0, 1]``), resolved per tensor as
    ``max(1, floor(fraction * d))``.
    """

    tag: Tag
    k: int | float | None = None
    bits: int | None = None
    value_precision: Precision = Precision.F32

    def __post_init__(self):
        object.__setattr__(self, "tag", Tag(self.tag))
        object.__setattr__(self, "value_precision", Precision(self.value_precision))
        if self.tag in SPARSE_TAGS:
            if self.k is None:
                raise ConfigError(f"{self.tag.name} requires k")
            if isinstance(self.k, bool):
                raise ConfigError("k must be a number")
            if isinstance(self.k, int):
                if self.k < 1:
                    raise ConfigError(f"k must be >= 1, got {self.k}")
            elif not 0.0 < float(self.k) <= 1.0:
                raise ConfigError(f"fractional k must lie in (0, 1], got {self.k}")
        elif self.k is not None:
            raise ConfigError(f"{self.tag.name} takes no k")
        if self.tag in DITHER_TAGS:
            if self.bits is None or not 2 <= int(self.bits) <= 8:
                raise ConfigError(f"{self.tag.name} requires bits in [2, 8], got {self.bits}")
            object.__setattr__(self, "bits", int(self.bits))
        elif self.bits is not None:
            raise ConfigError(f"{self.tag.name} takes no bits")
        if self.value_precision == Precision.F16 and self.tag not in SPARSE_TAGS:
            raise ConfigError("value_precision only applies to sparse kinds")

    # constructors
    @classmethod
    def none(cls):
        return cls(Tag.NONE)

    @classmethod
    def fp16(cls):
        return cls(Tag.FP16)

    @classmethod
    def scaled_sign(cls):
        return cls(Tag.SCALED_SIGN)

    @classmethod
    def top_k(cls, k, precision=Precision.F32):
        return cls(Tag.TOP_K, k=k, value_precision=precision)

    @classmethod
    def random_k(cls, k, precision=Precision.F32):
        return cls(Tag.RANDOM_K, k=k, value_precision=precision)

    @classmethod
    def linear_dither(cls, bits):
        return cls(Tag.LINEAR_DITHER, bits=bits)

    @classmethod
    def natural_dither(cls, bits):
        return cls(Tag.NATURAL_DITHER, bits=bits)

    @classmethod
    def parse(cls, text: str) -> "CompressorKind":
        """Parse ``name[:param[:f16]]``, e.g. ``top_k:0.001:f16`` or ``linear_dither:5``."""
        parts = text.strip().lower().split(":")
        try:
            tag = Tag[parts[0].upper()]
        except KeyError:
            raise ConfigError(f"unknown compressor {parts[0]!r}") from None
        args = parts[1:]
        precision = Precision.F32
        if args and args[-1] in ("f16", "f32"):
            precision = Precision[args.pop().upper()]
        if tag in SPARSE_TAGS:
            if len(args) != 1:
                raise ConfigError(f"{tag.name} expects exactly one k parameter")
            raw = args[0]
            try:
                if "/" in raw:
                    k = float(Fraction(raw))
                elif any(ch in raw for ch in ".e%"):
                    k = float(raw.rstrip("%")) / (100.0 if raw.endswith("%") else 1.0)
                else:
                    k = int(raw)
            except (ValueError, ZeroDivisionError):
                raise ConfigError(f"bad k {raw!r} for {tag.name}") from None
            return cls(tag, k=k, value_precision=precision)
        if tag in DITHER_TAGS:
            if len(args) != 1 or not args[0].isdigit():
                raise ConfigError(f"{tag.name} expects an integer bits parameter")
            return cls(tag, bits=int(args[0]), value_precision=precision)
        if args:
            raise ConfigError(f"{tag.name} takes no parameters")
        return cls(tag, value_precision=precision)

    def spec(self) -> str:
        """Inverse of :meth:`parse`."""
        name = self.tag.name.lower()
        if self.tag in SPARSE_TAGS:
            suffix = ":f16" if self.value_precision == Precision.F16 else ""
            return f"{name}:{self.k}{suffix}"
        if self.tag in DITHER_TAGS:
            return f"{name}:{self.bits}"
        return name

    @property
    def is_sparse(self) -> bool:
        return self.tag in SPARSE_TAGS

    @property
    def is_dither(self) -> bool:
        return self.tag in DITHER_TAGS

    @property
    def is_unbiased(self) -> bool:
        return self.tag in UNBIASED_TAGS

    @property
    def is_stochastic(self) -> bool:
        return self.tag in STOCHASTIC_TAGS

    def resolve_k(self, d: int) -> int:
        if not self.is_sparse:
            raise ConfigError(f"{self.tag.name} has no k")
        if isinstance(self.k, int):
            k = self.k
        else:
            # decimal reading of the fraction so that 0.001 * 10**6 == 1000 exactly
            k = max(1, math.floor(Fraction(repr(float(self.k))) * d))
        if k > d:
            raise KTooLarge(f"k={k} exceeds tensor length d={d}")
        return k

    def resolved(self, d: int) -> "CompressorKind":
        if self.is_sparse:
            return replace(self, k=self.resolve_k(d))
        return self

    def value_bytes(self) -> int:
        return 2 if self.value_precision == Precision.F16 else 4

    def payload_size(self, d: int) -> int:
        """Exact payload byte count for a tensor of ``d`` elements."""
        tag = self.tag
        if tag == Tag.NONE:
            return 4 * d
        if tag == Tag.FP16:
            return 2 * d
        if tag == Tag.SCALED_SIGN:
            return 4 + (d + 7) // 8
        if tag in SPARSE_TAGS:
            k = self.resolve_k(d)
            return 8 + 4 * k + self.value_bytes() * k
        return 4 + (d * self.bits + 7) // 8

    def frame_size(self, d: int) -> int:
        return HEADER_BYTES + self.payload_size(d)
