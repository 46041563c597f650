from __future__ import annotations

import numpy as np

from ..core import DeterministicRng
from ..errors import ConfigError


class BatchSampler:
    """Disjoint per-step batches drawn from a seeded per-epoch permutation.

    Step ``t`` (0-based) takes ``n * s`` consecutive positions of its epoch's
    permutation; worker ``i`` gets the ``i``-th chunk of ``s``. A single
    worker with batch ``n * s`` therefore sees exactly the union.
    """

    def __init__(self, n_samples: int | None, n_workers: int, batch: int, seed: int):
        self.n_samples = n_samples
        self.n_workers = n_workers
        self.batch = batch
        self.rng = DeterministicRng(seed, stage="data")
        if n_samples is not None:
            if n_workers * batch > n_samples:
                raise ConfigError(f"n*s = {n_workers * batch} exceeds the {n_samples} available samples")
            self.steps_per_epoch = n_samples // (n_workers * batch)
        self._epoch = None
        self._perm = None

    def _permutation(self, epoch: int) -> np.ndarray:
        if self._epoch != epoch:
            self._perm = self.rng.at(iteration=epoch).generator().permutation(self.n_samples)
            self._epoch = epoch
        return self._perm

    def step(self, t: int) -> list[np.ndarray]:
        if self.n_samples is None:
            return [np.zeros(0, dtype=np.int64) for _ in range(self.n_workers)]
        epoch, pos = divmod(t, self.steps_per_epoch)
        total = self.n_workers * self.batch
        chosen = self._permutation(epoch)[pos * total:(pos + 1) * total]
        return [chosen[i * self.batch:(i + 1) * self.batch] for i in range(self.n_workers)]
