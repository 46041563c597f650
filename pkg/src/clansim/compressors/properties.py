"""Compressor characterisation: delta/omega constants, Monte Carlo and exact outcome laws,
and the fused residual update for sparse messages."""

from __future__ import annotations

import itertools
import math
import struct
from dataclasses import dataclass

import numpy as np

from ..core import DeterministicRng, gradient_vector, l1_norm, l2_norm
from ..errors import UnsupportedKind, ZeroVector
from .codecs import (
    CompressedMessage,
    _normalize,
    _sparse_message,
    _to_f16,
    _to_f32,
    dither_values,
    random_k_indices,
    compress,
    decompress,
    linear_levels,
    natural_levels,
    pack_codes,
    sparse_parts,
)
from .kinds import CompressorKind, Precision, Tag


def fused_error_update(q, msg: CompressedMessage) -> np.ndarray:
    """Residual ``q - decompress(msg)`` for a top-k style message in O(k) extra work.

    Copies ``q`` and zero-fills the selected indices. Only valid when the
    message stores the selected entries of ``q`` verbatim (float32 values,
    no rescaling); anything else raises :class:`UnsupportedKind` and callers
    fall back to the decompress-and-subtract path.
    """
    kind = msg.kind
    if not kind.is_sparse:
        raise UnsupportedKind(f"fused update needs a sparse message, got {kind.tag.name}")
    if kind.value_precision != Precision.F32:
        raise UnsupportedKind("fused update needs float32 values")
    if kind.tag == Tag.RANDOM_K and kind.k != msg.original_len:
        raise UnsupportedKind("random-k values are rescaled by d/k; fused update does not apply")
    q = np.asarray(q, dtype=np.float32)
    if q.size != msg.original_len:
        raise ValueError(f"q has length {q.size}, message has d={msg.original_len}")
    idx, vals = sparse_parts(msg)
    if not np.array_equal(q[idx], vals):
        raise ValueError("message was not produced from q")
    e = q.copy()
    e[idx] = 0.0
    return e


def supports_fused(kind: CompressorKind, d: int) -> bool:
    if not kind.is_sparse or kind.value_precision != Precision.F32:
        return False
    return kind.tag == Tag.TOP_K or kind.resolve_k(d) == d


def delta_lower_bound(kind: CompressorKind, x) -> float:
    """Certified delta with ``||C(x) - x||^2 <= (1 - delta) ||x||^2`` for this ``x``."""
    x = gradient_vector(x)
    d = x.size
    l2 = l2_norm(x)
    if l2 == 0:
        raise ZeroVector("delta is undefined for the zero vector")
    if kind.tag == Tag.SCALED_SIGN:
        return min(1.0, l1_norm(x) ** 2 / (d * l2 * l2))
    if kind.tag == Tag.TOP_K and kind.value_precision == Precision.F32:
        return kind.resolve_k(d) / d
    raise UnsupportedKind(f"no delta certificate for {kind.spec()}")


def uniform_delta(kind: CompressorKind, d: int) -> float:
    """Delta that holds for every nonzero length-``d`` input.

    Scaled sign uses ``||x||_1^2 >= ||x||_2^2``, giving ``1/d``.
    """
    if kind.tag == Tag.SCALED_SIGN:
        return 1.0 / d
    if kind.tag == Tag.TOP_K and kind.value_precision == Precision.F32:
        return kind.resolve_k(d) / d
    raise UnsupportedKind(f"no delta certificate for {kind.spec()}")


def omega_bound(kind: CompressorKind, d: int, form: str = "expected") -> float:
    """Variance constant of an unbiased compressor on length-``d`` inputs.

    ``form="expected"`` bounds ``E||C(x) - x||^2 / ||x||^2``; ``"deterministic"``
    bounds the same ratio for every outcome.
    """
    if form not in ("expected", "deterministic"):
        raise ValueError(f"unknown form {form!r}")
    tag = kind.tag
    if tag == Tag.NONE:
        return 0.0
    if tag == Tag.RANDOM_K:
        k = kind.resolve_k(d)
        if k == d:
            return 0.0
        return d / k - 1.0 if form == "expected" else max((d / k - 1.0) ** 2, 1.0)
    if tag == Tag.LINEAR_DITHER:
        s = (1 << (kind.bits - 1)) - 1
        if form == "expected":
            return min(d / s**2, math.sqrt(d) / s)
        return d / s**2
    if tag == Tag.NATURAL_DITHER:
        top = (1 << (kind.bits - 1)) - 1
        smallest = 2.0 ** (1 - top)
        if form == "expected":
            return 0.125 + d * smallest**2 / 4.0
        return 1.0 + d * smallest**2
    raise UnsupportedKind(f"{kind.spec()} is not an unbiased compressor")


@dataclass
class MonteCarloStats:
    mean: np.ndarray
    sem: np.ndarray
    mean_bias: float
    variance_ratio: float
    trials: int


def sample_outputs(kind: CompressorKind, x, rng: DeterministicRng, start: int, stop: int,
                   stage: str = "omega") -> np.ndarray:
    """Decoded outputs for streams ``rng.at(iteration=i, stage=stage)``, ``start <= i < stop``.

    Row ``i`` equals ``decompress(compress(kind, x, stream_i))`` exactly: the
    draws come from the same per-stream generators and the codec's own
    level and decode helpers, without building the byte payloads.
    """
    x = gradient_vector(x)
    d = x.size
    rows = stop - start
    streams = (rng.at(iteration=i, stage=stage).generator() for i in range(start, stop))
    if kind.tag == Tag.RANDOM_K:
        k = kind.resolve_k(d)
        vals = x.astype(np.float64) * (d / k)
        vals = _to_f16(vals) if kind.value_precision == Precision.F16 else _to_f32(vals)
        out = np.zeros((rows, d), dtype=np.float32)
        for r, gen in enumerate(streams):
            idx = random_k_indices(gen, d, k)
            out[r, idx] = vals[idx]
        return out
    if not kind.is_dither:
        raise UnsupportedKind(f"{kind.spec()} is deterministic")
    norm32, ratio = _normalize(x)
    levels = linear_levels if kind.tag == Tag.LINEAR_DITHER else natural_levels
    lo, p_up = levels(ratio, kind.bits)
    if norm32 == 0:
        return np.zeros((rows, d), dtype=np.float32)
    u = np.stack([gen.random(d) for gen in streams]) if rows else np.zeros((0, d))
    codes = (x >= 0).astype(np.int64) | ((lo + (u < p_up)) << 1)
    return dither_values(kind, float(norm32), codes)


def monte_carlo(kind: CompressorKind, x, trials: int, rng: DeterministicRng,
                stage: str = "omega", chunk: int = 8192) -> MonteCarloStats:
    """Sample statistics of ``C(x)`` over ``trials`` independent streams."""
    x = gradient_vector(x)
    x64 = x.astype(np.float64)
    total = np.zeros(x.size)
    total_sq = np.zeros(x.size)
    err_sq = 0.0
    for start in range(0, trials, chunk):
        y = sample_outputs(kind, x, rng, start, min(trials, start + chunk), stage).astype(np.float64)
        total += y.sum(axis=0)
        total_sq += (y * y).sum(axis=0)
        err_sq += float(((y - x64) ** 2).sum())
    mean = total / trials
    var = np.maximum(total_sq / trials - mean * mean, 0.0) * trials / max(trials - 1, 1)
    x_sq = float(np.dot(x64, x64))
    return MonteCarloStats(mean=mean, sem=np.sqrt(var / trials),
                           mean_bias=float(np.linalg.norm(mean - x64)),
                           variance_ratio=err_sq / trials / x_sq if x_sq else 0.0,
                           trials=trials)


def empirical_omega(kind: CompressorKind, x, trials: int, rng: DeterministicRng) -> tuple[float, float]:
    """``(||mean C(x) - x||, mean ||C(x) - x||^2 / ||x||^2)`` over ``trials`` streams."""
    if not kind.is_stochastic:
        raise UnsupportedKind(f"{kind.spec()} is deterministic; omega is not estimated")
    x = gradient_vector(x)
    if l2_norm(x) == 0:
        raise ZeroVector("omega ratio is undefined for the zero vector")
    stats = monte_carlo(kind, x, trials, rng)
    return stats.mean_bias, stats.variance_ratio


def outcome_distribution(kind: CompressorKind, x, max_outcomes: int = 4096) -> list[tuple[float, np.ndarray]]:
    """Exact support and probabilities of ``decompress(compress(kind, x, .))``.

    Built from the compressor's own rounding probabilities and encoded
    through the real codec, so the expectation can be checked exactly for
    small inputs.
    """
    x = gradient_vector(x)
    d = x.size
    if kind.tag == Tag.RANDOM_K:
        k = kind.resolve_k(d)
        if math.comb(d, k) > max_outcomes:
            raise ValueError("too many outcomes to enumerate")
        p = 1.0 / math.comb(d, k)
        out = []
        for subset in itertools.combinations(range(d), k):
            idx = np.array(subset)
            msg = _sparse_message(kind, d, idx, x[idx].astype(np.float64) * (d / k))
            out.append((p, decompress(msg).astype(np.float64)))
        return out
    if not kind.is_dither:
        return [(1.0, decompress(compress(kind, x)).astype(np.float64))]
    norm32, r = _normalize(x)
    levels = linear_levels if kind.tag == Tag.LINEAR_DITHER else natural_levels
    lo, p_up = levels(r, kind.bits)
    random_coords = np.flatnonzero(p_up > 0)
    if 2 ** random_coords.size > max_outcomes:
        raise ValueError("too many outcomes to enumerate")
    out = []
    for ups in itertools.product((0, 1), repeat=random_coords.size):
        level = lo.copy()
        prob = 1.0
        for j, up in zip(random_coords, ups):
            level[j] += up
            prob *= p_up[j] if up else 1.0 - p_up[j]
        codes = (x >= 0).astype(np.int64) | (level << 1)
        payload = struct.pack("<f", norm32) + pack_codes(codes, kind.bits)
        out.append((prob, decompress(CompressedMessage(kind, d, payload)).astype(np.float64)))
    return out
