"""Worker and server halves of the three aggregation protocols.

The transports move encoded frames between :func:`worker_push` and
:func:`shard_reduce`; the ``*push_pull`` functions below chain them in
process for a single tensor.
"""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from ..compressors import (
    CompressedMessage,
    compress,
    decompress,
    fused_error_update,
    supports_fused,
)
from ..compressors.codecs import none as encode_raw
from ..core import DeterministicRng, gradient_vector
from ..errors import LengthMismatch, ProtocolError, ValueOutOfRange, WorkerCountMismatch
from .config import AggregationConfig, Mode
from .state import ServerShardState, WorkerState


def _check_gradients(gradients: Sequence, n_workers: int | None = None) -> list[np.ndarray]:
    if n_workers is not None and len(gradients) != n_workers:
        raise WorkerCountMismatch(f"expected {n_workers} gradients, got {len(gradients)}")
    if not gradients:
        raise WorkerCountMismatch("no gradients supplied")
    gs = [gradient_vector(g) for g in gradients]
    d = gs[0].size
    for i, g in enumerate(gs):
        if g.size != d:
            raise LengthMismatch(f"worker {i} sent length {g.size}, worker 0 sent {d}")
    return gs


def mean_f32(vectors: Sequence[np.ndarray]) -> np.ndarray:
    """Mean in float64, in list order, rounded to float32 (``-0.0`` becomes ``+0.0``)."""
    acc = np.sum(np.stack([np.asarray(v, dtype=np.float64) for v in vectors]), axis=0)
    return (acc / len(vectors) + 0.0).astype(np.float32)


def push_pull(gradients: Sequence, tensor_id: int = 0, n_workers: int | None = None) -> np.ndarray:
    """Full-precision average of the workers' gradients."""
    return mean_f32(_check_gradients(gradients, n_workers))


def intra_node_reduce(device_grads) -> np.ndarray:
    """Average one node's device gradients after an FP32 -> FP16 -> FP32 round trip."""
    arr = np.atleast_2d(np.asarray(device_grads, dtype=np.float32))
    with np.errstate(over="ignore"):
        half = arr.astype(np.float16)
    if not np.all(np.isfinite(half)):
        raise ValueOutOfRange("device gradient overflows float16")
    return mean_f32(list(half.astype(np.float32)))


def worker_push(cfg: AggregationConfig, state: WorkerState, tensor_id: int, g,
                rng: DeterministicRng) -> CompressedMessage:
    """Encode one worker's gradient for ``tensor_id``; updates ``e`` under EF."""
    g = gradient_vector(g)
    d = g.size
    mode = cfg.mode_for(d)
    if mode == Mode.FULL_PRECISION:
        return encode_raw(g)
    kind = cfg.kind_for(d)
    stream = rng.at(worker=state.worker_id, tensor=tensor_id, stage="push")
    if mode == Mode.COMPRESSED:
        return compress(kind, g, stream)
    e = state.residual(tensor_id, d)
    q = g + e
    msg = compress(kind, q, stream)
    if supports_fused(kind, d):
        state.residuals[tensor_id] = fused_error_update(q, msg)
    else:
        state.residuals[tensor_id] = q - decompress(msg)
    return msg


def shard_reduce(cfg: AggregationConfig, shard: ServerShardState, tensor_id: int,
                 messages: Sequence[CompressedMessage], rng: DeterministicRng) -> CompressedMessage:
    """Aggregate exactly ``n_workers`` decoded messages and encode the pull message.

    ``messages`` must be ordered by worker id; the result never depends on
    arrival order.
    """
    if len(messages) != cfg.n_workers:
        raise WorkerCountMismatch(f"shard {shard.shard_id} got {len(messages)} messages "
                                  f"for tensor {tensor_id}, expected {cfg.n_workers}")
    d = messages[0].original_len
    if any(m.original_len != d for m in messages):
        raise LengthMismatch(f"workers disagree on the length of tensor {tensor_id}")
    mode = cfg.mode_for(d)
    expected = cfg.kind_for(d).resolved(d)
    for m in messages:
        if m.kind.resolved(d) != expected:
            raise ProtocolError(f"tensor {tensor_id}: worker sent {m.kind.spec()}, expected {expected.spec()}")
    decoded = [decompress(m) for m in messages]
    if mode != Mode.COMPRESSED_EF:
        delta = mean_f32(decoded)
    else:
        acc = np.sum(np.stack([v.astype(np.float64) for v in decoded]), axis=0) / len(decoded)
        delta = (acc + shard.residual(tensor_id, d).astype(np.float64) + 0.0).astype(np.float32)
    shard.aggregates[tensor_id] = delta
    if mode == Mode.FULL_PRECISION:
        return encode_raw(delta)
    stream = rng.at(worker=shard.shard_id, tensor=tensor_id, stage="pull")
    pull = compress(cfg.kind_for(d), delta, stream)
    if mode == Mode.COMPRESSED_EF:
        shard.residuals[tensor_id] = delta - decompress(pull)
    return pull


def _chain(cfg, worker_states, shard, gradients, rng, tensor_id, mode):
    gs = _check_gradients(gradients, cfg.n_workers)
    if len(worker_states) != len(gs):
        raise WorkerCountMismatch(f"{len(worker_states)} worker states for {len(gs)} gradients")
    if cfg.mode_for(gs[0].size) not in (mode, Mode.FULL_PRECISION):
        raise ProtocolError(f"configuration mode {cfg.mode.value} does not match {mode.value}")
    msgs = [worker_push(cfg, ws, tensor_id, g, rng) for ws, g in zip(worker_states, gs)]
    return decompress(shard_reduce(cfg, shard, tensor_id, msgs, rng))


def compress_push_pull(cfg: AggregationConfig, worker_states: Sequence[WorkerState],
                       shard: ServerShardState, gradients: Sequence, rng: DeterministicRng,
                       tensor_id: int = 0) -> np.ndarray:
    """Two-way compression without residuals: workers send ``C(g)``, the shard returns ``C(mean)``."""
    return _chain(cfg, worker_states, shard, gradients, rng, tensor_id, Mode.COMPRESSED)


def compress_ef_push_pull(cfg: AggregationConfig, worker_states: Sequence[WorkerState],
                          shard: ServerShardState, gradients: Sequence, rng: DeterministicRng,
                          tensor_id: int = 0) -> np.ndarray:
    """Two-way compression with worker and server error feedback."""
    return _chain(cfg, worker_states, shard, gradients, rng, tensor_id, Mode.COMPRESSED_EF)

