from __future__ import annotations

from collections.abc import Mapping, Sequence

import numpy as np

from ..core import DeterministicRng
from .config import AggregationConfig
from .state import ServerShardState, WorkerState
from .transport import InProcessTransport, TcpTransport, _prepare


def run_round(cfg: AggregationConfig, gradients: Sequence[Mapping[int, object]],
              workers: Sequence[WorkerState], shards: Sequence[ServerShardState],
              rng: DeterministicRng, iteration: int = 0, transport=None) -> dict[int, np.ndarray]:
    """One bulk-synchronous round over every tensor.

    ``gradients[i]`` maps tensor id to worker ``i``'s gradient (or to an
    ``(m, d)`` stack of device gradients when ``cfg.local_devices > 1``).
    Returns the pulled vector per tensor, identical for all workers.
    """
    grads = _prepare(cfg, gradients)
    if transport is None:
        transport = InProcessTransport(cfg, shards, rng)
    return transport.round(workers, grads, iteration)


class Cluster:
    """Worker and shard state plus a transport, advanced one round at a time."""

    def __init__(self, cfg: AggregationConfig, rng: DeterministicRng, sizes: Mapping[int, int] | None = None,
                 transport: str = "inprocess", host: str = "127.0.0.1", port: int = 0,
                 timeout: float = 30.0):
        self.cfg = cfg
        self.rng = rng
        self.workers = [WorkerState(i) for i in range(cfg.n_workers)]
        self.shards = [ServerShardState(s) for s in range(cfg.shard_count)]
        if transport == "inprocess":
            self.transport = InProcessTransport(cfg, self.shards, rng)
        elif transport == "tcp":
            if sizes is None:
                raise ValueError("the TCP transport needs the tensor layout up front")
            self.transport = TcpTransport(cfg, self.shards, rng, sizes, host=host, port=port, timeout=timeout)
        else:
            raise ValueError(f"unknown transport {transport!r}")

    def round(self, gradients: Sequence[Mapping[int, object]], iteration: int) -> dict[int, np.ndarray]:
        return run_round(self.cfg, gradients, self.workers, self.shards, self.rng, iteration, self.transport)

    def max_worker_residual(self) -> float:
        return max(w.residual_norm() for w in self.workers)

    def server_residual(self) -> float:
        return float(np.sqrt(sum(s.residual_norm() ** 2 for s in self.shards)))

    def close(self):
        self.transport.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
