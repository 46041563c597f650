"""Compression operators and their byte-exact payload encodings.

Every ``compress`` path is a pure function of ``(kind, x, rng stream)``.
Payload layouts (little-endian throughout):

* NONE           d x float32
* FP16           d x float16 (round-to-nearest-even)
* SCALED_SIGN    float32 scale, ceil(d/8) sign bytes, LSB-first, 1 = nonnegative
* TOP_K/RANDOM_K uint64 k, k x uint32 strictly increasing indices, k values
* *_DITHER       float32 l2 norm, d codes of ``bits`` bits packed LSB-first;
                 code bit 0 is the sign (1 = nonnegative), the rest the level
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from ..core import DeterministicRng, gradient_vector
from ..errors import KTooLarge, MalformedPayload, ValueOutOfRange
from .kinds import CompressorKind, Precision, Tag

__all__ = [
    "CompressedMessage",
    "compress",
    "decompress",
    "fp16_cast",
    "linear_dither",
    "natural_dither",
    "random_k",
    "scaled_sign",
    "top_k",
    "top_k_indices",
]

_F32 = np.dtype("<f4")
_F16 = np.dtype("<f2")
_U32 = np.dtype("<u4")


@dataclass(frozen=True)
class CompressedMessage:
    kind: CompressorKind
    original_len: int
    payload: bytes

    def __post_init__(self):
        if self.original_len < 1:
            raise MalformedPayload("original_len must be >= 1")

    @property
    def nbytes(self) -> int:
        return len(self.payload)

    @property
    def k(self) -> int | None:
        if not self.kind.is_sparse:
            return None
        return struct.unpack_from("<Q", self.payload, 0)[0]


def _rng_generator(rng):
    if rng is None:
        return None
    if isinstance(rng, DeterministicRng):
        return rng.generator()
    return rng


def _to_f16(values: np.ndarray) -> np.ndarray:
    out = np.asarray(values).astype(_F16)
    if not np.all(np.isfinite(out)):
        raise ValueOutOfRange("value exceeds the float16 range")
    return out


def _to_f32(values: np.ndarray) -> np.ndarray:
    out = np.asarray(values, dtype=np.float64).astype(_F32)
    if not np.all(np.isfinite(out)):
        raise ValueOutOfRange("value exceeds the float32 range")
    return out


def _f32_at_least(value: float) -> np.float32:
    """Smallest float32 that is >= ``value`` (value is finite and >= 0)."""
    v = np.float32(value)
    if float(v) < value:
        v = np.nextafter(v, np.float32(np.inf))
    if not np.isfinite(v):
        raise ValueOutOfRange("norm exceeds the float32 range")
    return v


def pack_codes(codes: np.ndarray, bits: int) -> bytes:
    codes = np.asarray(codes, dtype=np.uint16)
    bitmat = (codes[:, None] >> np.arange(bits, dtype=np.uint16)) & 1
    return np.packbits(bitmat.astype(np.uint8).ravel(), bitorder="little").tobytes()


def unpack_codes(buf: bytes, d: int, bits: int) -> np.ndarray:
    raw = np.frombuffer(buf, dtype=np.uint8)
    flat = np.unpackbits(raw, bitorder="little")[: d * bits].reshape(d, bits).astype(np.uint16)
    return (flat << np.arange(bits, dtype=np.uint16)).sum(axis=1).astype(np.uint16)


# ---------------------------------------------------------------- operators

def none(x) -> CompressedMessage:
    x = gradient_vector(x)
    return CompressedMessage(CompressorKind.none(), x.size, x.astype(_F32).tobytes())


def fp16_cast(x) -> CompressedMessage:
    x = gradient_vector(x)
    return CompressedMessage(CompressorKind.fp16(), x.size, _to_f16(x).tobytes())


def scaled_sign(x) -> CompressedMessage:
    """``C(v) = ||v||_1 / d * sign(v)`` with sign(0) encoded as +."""
    x = gradient_vector(x)
    d = x.size
    scale = np.float32(np.sum(np.abs(x, dtype=np.float64)) / d)
    signs = np.packbits((x >= 0).astype(np.uint8), bitorder="little")
    payload = struct.pack("<f", scale) + signs.tobytes()
    return CompressedMessage(CompressorKind.scaled_sign(), d, payload)


def top_k_indices(x, k: int) -> np.ndarray:
    """Indices of the ``k`` largest magnitudes, ties broken by lower index, sorted."""
    a = np.abs(np.asarray(x))
    d = a.size
    if not 1 <= k <= d:
        raise KTooLarge(f"k={k} must lie in [1, {d}]")
    if k == d:
        return np.arange(d, dtype=np.int64)
    thr = np.partition(a, d - k)[d - k]
    above = np.flatnonzero(a > thr)
    ties = np.flatnonzero(a == thr)[: k - above.size]
    return np.sort(np.concatenate([above, ties]))


def _sparse_message(kind, d, idx, values) -> CompressedMessage:
    k = idx.size
    vals = _to_f16(values) if kind.value_precision == Precision.F16 else _to_f32(values)
    payload = struct.pack("<Q", k) + idx.astype(_U32).tobytes() + vals.tobytes()
    return CompressedMessage(kind.resolved(d), d, payload)


def top_k(x, k, precision=Precision.F32, *, indices=None) -> CompressedMessage:
    x = gradient_vector(x)
    kind = CompressorKind.top_k(k, precision)
    kk = kind.resolve_k(x.size)
    idx = top_k_indices(x, kk) if indices is None else np.asarray(indices)
    return _sparse_message(kind, x.size, idx, x[idx])


def random_k_indices(gen: np.random.Generator, d: int, k: int) -> np.ndarray:
    if k == d:
        return np.arange(d)
    return np.sort(gen.choice(d, size=k, replace=False))


def random_k(x, k, rng, precision=Precision.F32) -> CompressedMessage:
    """Uniform random subset of ``k`` coordinates, rescaled by ``d/k`` (unbiased)."""
    x = gradient_vector(x)
    d = x.size
    kind = CompressorKind.random_k(k, precision)
    kk = kind.resolve_k(d)
    idx = random_k_indices(_rng_generator(rng), d, kk)
    return _sparse_message(kind, d, idx, x[idx].astype(np.float64) * (d / kk))


def _normalize(x: np.ndarray):
    norm = np.sqrt(np.dot(x.astype(np.float64), x.astype(np.float64)))
    norm32 = _f32_at_least(norm)
    if norm32 == 0:
        return norm32, np.zeros(x.size)
    return norm32, np.abs(x.astype(np.float64)) / float(norm32)


def linear_levels(r: np.ndarray, bits: int):
    """Bracketing grid levels on ``{0, 1/s, ..., 1}`` and the round-up probability."""
    s = (1 << (bits - 1)) - 1
    scaled = r * s
    lo = np.minimum(np.floor(scaled), s)
    p_up = scaled - lo
    return lo.astype(np.int64), p_up


def natural_levels(r: np.ndarray, bits: int):
    """Bracketing codes on ``{0} U {2^-i}`` and the round-up probability.

    Code 0 is zero; code ``c >= 1`` is ``2^(c - L)`` with ``L = 2^(bits-1) - 1``
    so the top code is exactly 1.
    """
    top = (1 << (bits - 1)) - 1
    smallest = 2.0 ** (1 - top)
    lo = np.zeros(r.shape, dtype=np.int64)
    p_up = np.where(r > 0, r / smallest, 0.0)
    big = r >= smallest
    if np.any(big):
        _, ex = np.frexp(r[big])  # r = m * 2**ex, m in [0.5, 1)
        c = np.minimum(top + (ex - 1), top)
        lo_val = np.ldexp(1.0, c - top)
        lo[big] = c
        p_up[big] = np.where(c == top, 0.0, r[big] / lo_val - 1.0)
    return lo, p_up


def natural_magnitude(codes: np.ndarray, bits: int) -> np.ndarray:
    top = (1 << (bits - 1)) - 1
    codes = codes.astype(np.int64)
    return np.where(codes == 0, 0.0, np.ldexp(1.0, codes - top))


def _dither(kind, x, rng) -> CompressedMessage:
    x = gradient_vector(x)
    norm32, r = _normalize(x)
    if kind.tag == Tag.LINEAR_DITHER:
        lo, p_up = linear_levels(r, kind.bits)
    else:
        lo, p_up = natural_levels(r, kind.bits)
    if norm32 == 0:
        level = np.zeros(x.size, dtype=np.int64)
    else:
        level = lo + (_rng_generator(rng).random(x.size) < p_up)
    codes = (x >= 0).astype(np.int64) | (level << 1)
    payload = struct.pack("<f", norm32) + pack_codes(codes, kind.bits)
    return CompressedMessage(kind, x.size, payload)


def linear_dither(x, bits: int, rng) -> CompressedMessage:
    return _dither(CompressorKind.linear_dither(bits), x, rng)


def natural_dither(x, bits: int, rng) -> CompressedMessage:
    return _dither(CompressorKind.natural_dither(bits), x, rng)


def compress(kind: CompressorKind, x, rng=None) -> CompressedMessage:
    """Compress ``x`` with ``kind``; stochastic kinds draw from ``rng``.

    ``rng`` may be a :class:`DeterministicRng` or a numpy ``Generator``.
    """
    tag = kind.tag
    if kind.is_stochastic and rng is None:
        raise ValueError(f"{tag.name} needs an rng stream")
    if tag == Tag.NONE:
        return none(x)
    if tag == Tag.FP16:
        return fp16_cast(x)
    if tag == Tag.SCALED_SIGN:
        return scaled_sign(x)
    if tag == Tag.TOP_K:
        return top_k(x, kind.k, kind.value_precision)
    if tag == Tag.RANDOM_K:
        return random_k(x, kind.k, rng, kind.value_precision)
    return _dither(kind, x, rng)


# ---------------------------------------------------------------- decoding

def check_payload(msg: CompressedMessage) -> None:
    """Raise :class:`MalformedPayload` unless ``msg`` is well-formed."""
    d, kind, payload = msg.original_len, msg.kind, msg.payload
    if kind.is_sparse:
        if len(payload) < 8:
            raise MalformedPayload("sparse payload shorter than its k field", offset=len(payload))
        k = struct.unpack_from("<Q", payload, 0)[0]
        if not 1 <= k <= d:
            raise MalformedPayload(f"k={k} outside [1, {d}]", offset=0)
        if kind.k != k:
            raise MalformedPayload(f"message kind says k={kind.k}, payload says k={k}", offset=0)
    expected = kind.payload_size(d)
    if len(payload) != expected:
        raise MalformedPayload(f"payload is {len(payload)} bytes, expected {expected}",
                               offset=min(len(payload), expected))
    if kind.tag in (Tag.SCALED_SIGN, Tag.LINEAR_DITHER, Tag.NATURAL_DITHER):
        scale = struct.unpack_from("<f", payload, 0)[0]
        if not np.isfinite(scale) or scale < 0:
            raise MalformedPayload(f"scale/norm field {scale} is not finite and nonnegative", offset=0)
    if kind.is_sparse:
        k = kind.k
        idx = np.frombuffer(payload, dtype=_U32, count=k, offset=8)
        bad = np.flatnonzero(idx >= d)
        if bad.size:
            raise MalformedPayload(f"index {int(idx[bad[0]])} out of range for d={d}",
                                   offset=8 + 4 * int(bad[0]))
        steps = np.flatnonzero(np.diff(idx.astype(np.int64)) <= 0)
        if steps.size:
            raise MalformedPayload("sparse indices are not strictly increasing",
                                   offset=8 + 4 * int(steps[0] + 1))
        vdt = _F16 if kind.value_precision == Precision.F16 else _F32
        vals = np.frombuffer(payload, dtype=vdt, count=k, offset=8 + 4 * k)
        if not np.all(np.isfinite(vals)):
            raise MalformedPayload("non-finite sparse value", offset=8 + 4 * k)
    if kind.tag in (Tag.NONE, Tag.FP16):
        vals = np.frombuffer(payload, dtype=_F32 if kind.tag == Tag.NONE else _F16)
        if not np.all(np.isfinite(vals)):
            raise MalformedPayload("non-finite dense value")
    if kind.tag == Tag.LINEAR_DITHER:
        codes = unpack_codes(payload[4:], d, kind.bits)
        if np.any((codes >> 1) > (1 << (kind.bits - 1)) - 1):
            raise MalformedPayload("dither level outside the grid", offset=4)


def sparse_parts(msg: CompressedMessage) -> tuple[np.ndarray, np.ndarray]:
    """``(indices, values)`` of a sparse message, without validation."""
    k = msg.kind.k
    idx = np.frombuffer(msg.payload, dtype=_U32, count=k, offset=8).astype(np.int64)
    vdt = _F16 if msg.kind.value_precision == Precision.F16 else _F32
    vals = np.frombuffer(msg.payload, dtype=vdt, count=k, offset=8 + 4 * k).astype(np.float32)
    return idx, vals


def decompress(msg: CompressedMessage) -> np.ndarray:
    """Decode ``msg`` into a length-``d`` float32 vector."""
    check_payload(msg)
    d, kind, payload = msg.original_len, msg.kind, msg.payload
    tag = kind.tag
    if tag == Tag.NONE:
        out = np.frombuffer(payload, dtype=_F32).astype(np.float32)
    elif tag == Tag.FP16:
        out = np.frombuffer(payload, dtype=_F16).astype(np.float32)
    elif tag == Tag.SCALED_SIGN:
        scale = np.float32(struct.unpack_from("<f", payload, 0)[0])
        bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8, offset=4), bitorder="little")[:d]
        out = np.where(bits == 1, scale, -scale).astype(np.float32)
        out[out == 0] = 0.0  # scale 0 must not decode to -0.0
    elif kind.is_sparse:
        idx, vals = sparse_parts(msg)
        out = np.zeros(d, dtype=np.float32)
        out[idx] = vals
    else:
        norm = float(struct.unpack_from("<f", payload, 0)[0])
        out = dither_values(kind, norm, unpack_codes(payload[4:], d, kind.bits))
    return out


def dither_values(kind: CompressorKind, norm: float, codes: np.ndarray) -> np.ndarray:
    """Decoded float32 values for dither codes (works on any array shape)."""
    sign = np.where(codes & 1, 1.0, -1.0)
    level = (codes >> 1).astype(np.int64)
    if kind.tag == Tag.LINEAR_DITHER:
        mag = level / ((1 << (kind.bits - 1)) - 1)
    else:
        mag = natural_magnitude(level, kind.bits)
    out = (sign * norm * mag).astype(np.float32)
    out[out == 0] = 0.0
    return out
