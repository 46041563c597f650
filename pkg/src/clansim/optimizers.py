"""Layer-wise adaptive optimizer (LANS), its compressed variant (CLAN) and a NAG baseline.

Parameters and moments are kept in float64; aggregated gradients arrive as
float32 from the protocol layer.
"""

from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

import numpy as np

from .core import BlockPartition, make_partition
from .errors import ConfigError, LengthMismatch, NonFiniteUpdate, ProtocolError

Schedule = float | Sequence[float] | Callable[[int], float]


def clamp_phi(z: float, alpha_l: float, alpha_u: float) -> float:
    return min(max(z, alpha_l), alpha_u)


def lr_at(schedule: Schedule, t: int) -> float:
    """Learning rate for 1-based step ``t``."""
    if callable(schedule):
        eta = float(schedule(t))
    elif isinstance(schedule, (int, float)):
        eta = float(schedule)
    else:
        eta = float(schedule[min(t, len(schedule)) - 1])
    if not eta > 0:
        raise ConfigError(f"learning rate at step {t} is {eta}; must be positive")
    return eta


@dataclass
class LansConfig:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-6
    weight_decay: float = 0.0
    lr: Schedule = 1e-3
    alpha_l: float = 0.01
    alpha_u: float = 10.0
    partition: BlockPartition | None = None

    def __post_init__(self):
        if not 0 < self.beta1 < 1 or not 0 < self.beta2 < 1:
            raise ConfigError("beta1 and beta2 must lie in (0, 1)")
        if not self.eps > 0:
            raise ConfigError("eps must be positive")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if not 0 < self.alpha_l <= self.alpha_u:
            raise ConfigError("need 0 < alpha_l <= alpha_u")

    def blocks(self, d: int) -> BlockPartition:
        if self.partition is None:
            return make_partition(d, [d])
        if self.partition.d != d:
            raise LengthMismatch(f"partition covers {self.partition.d} entries, vector has {d}")
        return self.partition


@dataclass
class LansState:
    """Moments ``m``, ``v`` and the next step number ``t`` (starts at 1)."""

    m: np.ndarray
    v: np.ndarray
    t: int = 1
    m_hat: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def zeros(cls, d: int) -> "LansState":
        return cls(np.zeros(d), np.zeros(d))


def _unit(u: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(u)
    return u / n if n > 0 else np.zeros_like(u)


def lans_step(cfg: LansConfig, state: LansState, x, g) -> np.ndarray:
    """One LANS update; returns new parameters and advances ``state``."""
    x = np.asarray(x, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if not (x.shape == g.shape == state.m.shape == state.v.shape) or x.ndim != 1:
        raise LengthMismatch(f"x {x.shape}, g {g.shape}, m {state.m.shape} and v {state.v.shape} must match")
    b1, b2, eps, lam = cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay
    t = state.t
    eta = lr_at(cfg.lr, t)
    # non-finite inputs are reported below as NonFiniteUpdate, not as warnings
    with np.errstate(over="ignore", invalid="ignore"):
        m = b1 * state.m + (1 - b1) * g
        v = b2 * state.v + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        denom = np.sqrt(v / (1 - b2**t)) + eps
        r = m_hat / denom
        c = g / denom
        out = x.copy()
        for blk in cfg.blocks(x.size).slices():
            xb = x[blk]
            phi = clamp_phi(float(np.linalg.norm(xb)), cfg.alpha_l, cfg.alpha_u)
            step = phi * (b1 * _unit(r[blk] + lam * xb) + (1 - b1) * _unit(c[blk] + lam * xb))
            out[blk] = xb - eta * step
    if not (np.all(np.isfinite(out)) and np.all(np.isfinite(m)) and np.all(np.isfinite(v))):
        raise NonFiniteUpdate(f"non-finite value in LANS step {t}")
    state.m, state.v, state.m_hat = m, v, m_hat
    state.t = t + 1
    return out


def clan_iteration(cfg: LansConfig, states: Sequence[LansState], cluster, params: Sequence[np.ndarray],
                   gradients: Sequence[np.ndarray], iteration: int) -> tuple[list[np.ndarray], np.ndarray]:
    """Aggregate worker gradients through ``cluster`` and step every replica.

    Tensors are the blocks of ``cfg``'s partition (tensor id = block index).
    Returns the new per-worker parameters and the shared aggregated gradient.
    """
    d = np.asarray(params[0]).size
    part = cfg.blocks(d)
    per_worker = [{b: blk for b, blk in enumerate(part.split(np.asarray(g, dtype=np.float32)))}
                  for g in gradients]
    pulled = cluster.round(per_worker, iteration)
    g_tilde = part.join([pulled[b] for b in range(part.block_count)])
    new = [lans_step(cfg, st, x, g_tilde) for st, x in zip(states, params)]
    ref = new[0].tobytes()
    if any(x.tobytes() != ref for x in new[1:]):
        raise ProtocolError("worker replicas diverged")
    return new, g_tilde


@dataclass
class NagConfig:
    momentum: float = 0.9
    lr: Schedule = 0.01

    def __post_init__(self):
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must lie in [0, 1)")


@dataclass
class NagState:
    velocity: np.ndarray
    t: int = 1

    @classmethod
    def zeros(cls, d: int) -> "NagState":
        return cls(np.zeros(d))


def nag_ef_step(cfg: NagConfig, state: NagState, x, g) -> np.ndarray:
    """Nesterov momentum on an aggregated gradient: ``v = mu v + g; x -= eta (g + mu v)``."""
    x = np.asarray(x, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if x.shape != g.shape or x.shape != state.velocity.shape:
        raise LengthMismatch(f"x {x.shape}, g {g.shape} and velocity {state.velocity.shape} must match")
    eta = lr_at(cfg.lr, state.t)
    v = cfg.momentum * state.velocity + g
    out = x - eta * (g + cfg.momentum * v)
    if not np.all(np.isfinite(out)):
        raise NonFiniteUpdate(f"non-finite value in NAG step {state.t}")
    state.velocity = v
    state.t += 1
    return out
