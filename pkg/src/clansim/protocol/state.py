from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class WorkerState:
    """Per-worker residuals ``e`` (zeros until first use) and byte counters."""

    worker_id: int
    residuals: dict[int, np.ndarray] = field(default_factory=dict)
    bytes_pushed: int = 0
    bytes_pulled: int = 0

    def residual(self, tensor_id: int, d: int) -> np.ndarray:
        e = self.residuals.get(tensor_id)
        if e is None:
            e = np.zeros(d, dtype=np.float32)
            self.residuals[tensor_id] = e
        return e

    def residual_norm(self) -> float:
        return float(np.sqrt(sum(float(np.dot(e.astype(np.float64), e)) for e in self.residuals.values())))


@dataclass
class ServerShardState:
    """Per-shard residuals ``e~`` and the last finalized aggregate per tensor."""

    shard_id: int
    residuals: dict[int, np.ndarray] = field(default_factory=dict)
    aggregates: dict[int, np.ndarray] = field(default_factory=dict)

    def residual(self, tensor_id: int, d: int) -> np.ndarray:
        e = self.residuals.get(tensor_id)
        if e is None:
            e = np.zeros(d, dtype=np.float32)
            self.residuals[tensor_id] = e
        return e

    def residual_norm(self) -> float:
        return float(np.sqrt(sum(float(np.dot(e.astype(np.float64), e)) for e in self.residuals.values())))
