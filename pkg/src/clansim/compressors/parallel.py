"""Chunked multi-threaded compression.

Chunks are fixed index ranges, so output never depends on the thread count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from ..core import gradient_vector
from .codecs import CompressedMessage, compress, decompress, top_k, top_k_indices
from .kinds import CompressorKind, Tag


def chunk_bounds(d: int, chunks: int) -> list[tuple[int, int]]:
    chunks = max(1, min(chunks, d))
    edges = np.linspace(0, d, chunks + 1).astype(np.int64)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]


def parallel_top_k_indices(x, k: int, threads: int) -> np.ndarray:
    """Same result as :func:`top_k_indices` computed chunk-wise.

    Any global winner is also a winner of its own chunk under the
    (magnitude desc, index asc) order, so merging per-chunk top-k
    candidates and selecting again is exact.
    """
    x = np.asarray(x)
    d = x.size
    if threads <= 1 or d < 2 * threads:
        return top_k_indices(x, k)
    bounds = chunk_bounds(d, threads)

    def local(b):
        lo, hi = b
        kk = min(k, hi - lo)
        return top_k_indices(x[lo:hi], kk) + lo

    with ThreadPoolExecutor(max_workers=threads) as pool:
        cands = np.concatenate(list(pool.map(local, bounds)))
    return cands[top_k_indices(x[cands], k)]


def parallel_compress(kind: CompressorKind, x, rng=None, threads: int = 1) -> CompressedMessage:
    """Compress one tensor using ``threads`` workers where the kind allows it.

    Only top-k has an intra-tensor parallel path; other kinds run serially
    (they are single memory passes).
    """
    x = gradient_vector(x)
    if kind.tag == Tag.TOP_K and threads > 1:
        kk = kind.resolve_k(x.size)
        return top_k(x, kk, kind.value_precision, indices=parallel_top_k_indices(x, kk, threads))
    return compress(kind, x, rng)


def compress_many(kind: CompressorKind, tensors, rngs=None, threads: int = 1) -> list[CompressedMessage]:
    """Inter-task parallelism: one job per tensor, results in input order."""
    rngs = rngs if rngs is not None else [None] * len(tensors)
    if threads <= 1:
        return [compress(kind, t, r) for t, r in zip(tensors, rngs)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda tr: compress(kind, tr[0], tr[1]), zip(tensors, rngs)))


def decompress_many(msgs, threads: int = 1) -> list[np.ndarray]:
    if threads <= 1:
        return [decompress(m) for m in msgs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(decompress, msgs))
