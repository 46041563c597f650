from __future__ import annotations

from collections.abc import Mapping


def assign_shard(tensor_id: int, shard_count: int) -> int:
    """Default placement: ``tensor_id mod S``."""
    if shard_count < 1:
        raise ValueError("shard_count must be >= 1")
    return tensor_id % shard_count


def weighted_assignment(sizes: Mapping[int, int], shard_count: int) -> dict[int, int]:
    """Greedy largest-first bin packing of tensors onto shards.

    Tensors are taken by decreasing size (lower id first on ties) and each
    goes to the currently lightest shard (lower shard id on ties). The
    result depends only on ``sizes``, so every process computes the same map.
    """
    if shard_count < 1:
        raise ValueError("shard_count must be >= 1")
    load = [0] * shard_count
    out = {}
    for tid in sorted(sizes, key=lambda t: (-sizes[t], t)):
        shard = min(range(shard_count), key=lambda s: (load[s], s))
        out[tid] = shard
        load[shard] += sizes[tid]
    return out
