"""Experiment orchestration: one barrier-synchronised loop over steps."""

from __future__ import annotations

import csv
import math
import time
import warnings
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from ..analysis.monitors import Snapshot
from ..core import DeterministicRng, make_partition
from ..errors import ConfigError
from ..optimizers import LansConfig, LansState, NagConfig, NagState, clan_iteration, lr_at, nag_ef_step
from ..protocol import AggregationConfig, Cluster, Mode
from .data import BatchSampler
from .problems import PROBLEMS, Problem, make_problem

OPTIMIZERS = ("lans", "clan", "nag", "nag_ef")
SCHEDULES = ("constant", "linear_decay", "cosine", "inv_sqrt")
TRANSPORTS = ("inprocess", "tcp")

METRICS_HEADER = ["step", "loss", "grad_sq_norm", "bytes_push", "bytes_pull", "max_worker_residual",
                  "server_residual", "phase_ms_compute", "phase_ms_comm"]


@dataclass
class RunConfig:
    problem: str = "quadratic"
    problem_params: dict = field(default_factory=dict)
    optimizer: str = "lans"
    aggregation: AggregationConfig = field(default_factory=AggregationConfig)
    n_workers: int = 1
    batch_size: int = 32
    steps: int = 100
    seed: int = 0
    lr: float = 0.01
    schedule: str = "constant"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-6
    weight_decay: float = 0.0
    alpha_l: float = 0.01
    alpha_u: float = 10.0
    momentum: float = 0.9
    transport: str = "inprocess"
    host: str = "127.0.0.1"
    port: int = 0
    timing: bool = False
    record_trajectory: bool = False

    def __post_init__(self):
        if self.problem not in PROBLEMS:
            raise ConfigError(f"problem must be one of {tuple(PROBLEMS)}, got {self.problem!r}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.schedule not in SCHEDULES:
            raise ConfigError(f"schedule must be one of {SCHEDULES}, got {self.schedule!r}")
        if self.transport not in TRANSPORTS:
            raise ConfigError(f"transport must be one of {TRANSPORTS}, got {self.transport!r}")
        if self.n_workers < 1 or self.batch_size < 1 or self.steps < 0:
            raise ConfigError("need n_workers >= 1, batch_size >= 1 and steps >= 0")
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        if self.aggregation.n_workers != self.n_workers:
            self.aggregation = replace(self.aggregation, n_workers=self.n_workers)
        if self.optimizer in ("lans", "nag") and self.aggregation.mode != Mode.FULL_PRECISION:
            raise ConfigError(f"optimizer {self.optimizer!r} is uncompressed; use 'clan' or 'nag_ef' "
                              "for compressed aggregation")
        if self.batch_size % self.aggregation.local_devices:
            raise ConfigError("batch_size must be divisible by local_devices")

    def lr_schedule(self):
        lr, T = self.lr, max(self.steps, 1)
        if self.schedule == "constant":
            return lr
        if self.schedule == "linear_decay":
            return lambda t: lr * (1 - (t - 1) / T)
        if self.schedule == "cosine":
            return lambda t: lr * 0.5 * (1 + math.cos(math.pi * (t - 1) / T))
        return lambda t: lr / math.sqrt(t)


@dataclass
class MetricsRecord:
    step: int
    loss: float
    grad_sq_norm: float
    bytes_push: int
    bytes_pull: int
    max_worker_residual: float
    server_residual: float
    phase_ms_compute: float
    phase_ms_comm: float

    def row(self) -> list[str]:
        return [_fmt(getattr(self, f.name)) for f in fields(self)]


@dataclass
class RunResult:
    config: RunConfig
    records: list[MetricsRecord]
    summary: dict
    params: np.ndarray
    problem: Problem
    trajectory: list[Snapshot] = field(default_factory=list)
    max_abs_grad: list[float] = field(default_factory=list)
    worker_residuals: list[list[float]] = field(default_factory=list)
    server_residuals: list[float] = field(default_factory=list)
    combined_residuals: list[float] = field(default_factory=list)


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _combined_residual(cluster: Cluster, tensor_ids) -> float:
    total = 0.0
    for tid in tensor_ids:
        server = next((s.residuals[tid] for s in cluster.shards if tid in s.residuals), None)
        worker = [w.residuals[tid] for w in cluster.workers if tid in w.residuals]
        if server is None and not worker:
            continue
        acc = np.zeros_like(worker[0] if worker else server, dtype=np.float64)
        if worker:
            acc += np.mean([w.astype(np.float64) for w in worker], axis=0)
        if server is not None:
            acc += server
        total += float(acc @ acc)
    return math.sqrt(total)


def run_experiment(cfg: RunConfig, problem: Problem | None = None) -> RunResult:
    """Run ``cfg.steps`` synchronous steps; one record per step, state before the update."""
    problem = problem or make_problem(cfg.problem, **{"seed": cfg.seed, **cfg.problem_params})
    agg = cfg.aggregation
    with warnings.catch_warnings():
        warnings.simplefilter("always")
        agg.check_pairing()
    n, d = cfg.n_workers, problem.d
    part = make_partition(d, problem.tensor_sizes)
    sizes = dict(enumerate(part.sizes))
    x = problem.initial_point()
    params = [x.copy() for _ in range(n)]
    sampler = BatchSampler(problem.n_samples, n, cfg.batch_size, cfg.seed)
    m = agg.local_devices
    lans_cfg = LansConfig(beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps, weight_decay=cfg.weight_decay,
                          lr=cfg.lr_schedule(), alpha_l=cfg.alpha_l, alpha_u=cfg.alpha_u, partition=part)
    nag_cfg = NagConfig(momentum=cfg.momentum, lr=cfg.lr_schedule())
    use_lans = cfg.optimizer in ("lans", "clan")
    lans_states = [LansState.zeros(d) for _ in range(n)]
    nag_states = [NagState.zeros(d) for _ in range(n)]
    result = RunResult(cfg, [], {}, x, problem)
    ef = agg.mode == Mode.COMPRESSED_EF
    clock = time.perf_counter if cfg.timing else (lambda: 0.0)

    with Cluster(agg, DeterministicRng(cfg.seed, stage="comm"), sizes, transport=cfg.transport,
                 host=cfg.host, port=cfg.port) as cluster:
        for t in range(cfg.steps):
            batches = sampler.step(t)
            t0 = clock()
            grads = []
            for i in range(n):
                if m > 1:
                    chunks = np.array_split(batches[i], m)
                    grads.append(np.stack([problem.batch_gradient(params[i], c) for c in chunks]))
                else:
                    grads.append(problem.batch_gradient(params[i], batches[i]))
            x_t = params[0]
            true_grad = problem.gradient(x_t)
            loss = problem.loss(x_t)
            t1 = clock()
            pushed = sum(w.bytes_pushed for w in cluster.workers)
            pulled = sum(w.bytes_pulled for w in cluster.workers)
            if use_lans:
                params, g_tilde = clan_iteration(lans_cfg, lans_states, cluster, params, grads, t)
                m_hat = lans_states[0].m_hat
            else:
                blocks = [dict(enumerate(part.split(np.asarray(g, dtype=np.float32)))) for g in grads]
                out = cluster.round(blocks, t)
                g_tilde = part.join([out[b] for b in range(part.block_count)])
                params = [nag_ef_step(nag_cfg, st, p, g_tilde) for st, p in zip(nag_states, params)]
                m_hat = None
            t2 = clock()
            worker_res = [w.residual_norm() for w in cluster.workers]
            server_res = cluster.server_residual()
            result.records.append(MetricsRecord(
                step=t + 1, loss=loss, grad_sq_norm=float(true_grad @ true_grad),
                bytes_push=sum(w.bytes_pushed for w in cluster.workers) - pushed,
                bytes_pull=sum(w.bytes_pulled for w in cluster.workers) - pulled,
                max_worker_residual=max(worker_res), server_residual=server_res,
                phase_ms_compute=(t1 - t0) * 1e3, phase_ms_comm=(t2 - t1) * 1e3))
            result.max_abs_grad.append(float(max(np.max(np.abs(np.asarray(g, dtype=np.float32))) for g in grads)))
            result.worker_residuals.append(worker_res)
            result.server_residuals.append(server_res)
            if ef:
                result.combined_residuals.append(_combined_residual(cluster, sizes))
            if cfg.record_trajectory:
                schedule = lans_cfg.lr if use_lans else nag_cfg.lr
                result.trajectory.append(Snapshot(m_hat=m_hat, p=g_tilde, grad=true_grad,
                                                  eta=lr_at(schedule, t + 1)))
    result.params = params[0]
    result.summary = summarize(result)
    return result


def summarize(result: RunResult) -> dict:
    recs = result.records
    final_grad = result.problem.gradient(result.params)
    return {
        "steps": len(recs),
        "final_loss": result.problem.loss(result.params),
        "final_grad_sq_norm": float(final_grad @ final_grad),
        "avg_grad_sq_norm": float(np.mean([r.grad_sq_norm for r in recs])) if recs else 0.0,
        "total_bytes_push": sum(r.bytes_push for r in recs),
        "total_bytes_pull": sum(r.bytes_pull for r in recs),
        "max_worker_residual": max((r.max_worker_residual for r in recs), default=0.0),
        "max_server_residual": max((r.server_residual for r in recs), default=0.0),
    }


def write_metrics_csv(path, records) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRICS_HEADER)
        for r in records:
            w.writerow(r.row())
    return path


def write_summary_csv(path, summary: dict) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(summary))
        w.writerow([_fmt(v) for v in summary.values()])
    return path


def expected_bytes_per_step(cfg: RunConfig, problem: Problem) -> tuple[int, int]:
    """Push and pull bytes per step implied by the codec size formulas."""
    agg = cfg.aggregation
    per_worker = sum(agg.kind_for(d).frame_size(d) for d in problem.tensor_sizes)
    return per_worker * cfg.n_workers, per_worker * cfg.n_workers

