"""Invariant suites run by ``clansim verify``.

Each check returns a :class:`Check` with a worst-case margin: the smallest
value of ``bound - observed`` (scaled where noted) over everything it
examined. A check passes iff it found zero violations.
"""

from __future__ import annotations

import math
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np

from .analysis import (
    BoundInputs,
    check_ef_residuals,
    compression_rate,
    corollary_biased,
    corollary_full_precision,
    corollary_unbiased,
    dropped_fraction,
    lemma_moment_gap_monitor,
    report_for,
)
from .compressors import (
    CompressorKind,
    compress,
    decode_frame,
    decompress,
    encode_frame,
    fused_error_update,
    omega_bound,
    outcome_distribution,
    top_k,
    uniform_delta,
)
from .core import DeterministicRng
from .errors import ClansimError
from .harness import RunConfig, expected_bytes_per_step, run_experiment
from .protocol import (
    AggregationConfig,
    Mode,
    ServerShardState,
    WorkerState,
    compress_ef_push_pull,
    compress_push_pull,
    push_pull,
)

SUITES = ("compressors", "protocol", "bounds")


@dataclass
class Check:
    suite: str
    name: str
    passed: bool
    margin: float
    detail: str = ""

    def __post_init__(self):
        self.passed = bool(self.passed)
        self.margin = float(self.margin) + 0.0


def _agg(mode: str, spec: str, n: int = 1) -> AggregationConfig:
    return AggregationConfig(mode=Mode(mode), compressor=CompressorKind.parse(spec), size_threshold_bytes=0,
                             n_workers=n)


# ------------------------------------------------------------- compressors

def _delta_property(seed: int) -> list[Check]:
    gen = DeterministicRng(seed, stage="verify").generator()
    out = []
    for spec in ("scaled_sign", "top_k:0.1", "top_k:1"):
        worst, bad = math.inf, 0
        for d in (1, 7, 100, 1000):
            kind = CompressorKind.parse(spec)
            for _ in range(200):
                x = gen.standard_normal(d).astype(np.float32) * gen.uniform(0.1, 10.0)
                x64 = x.astype(np.float64)
                sq = float(x64 @ x64)
                if spec == "scaled_sign":
                    delta = float(np.abs(x64).sum()) ** 2 / (d * sq)
                else:
                    delta = kind.resolve_k(d) / d
                r = decompress(compress(kind, x)).astype(np.float64) - x64
                margin = ((1 - delta) * sq - float(r @ r)) / sq
                bad += margin < -1e-6
                worst = min(worst, margin)
        out.append(Check("compressors", f"delta_approx[{spec}]", bad == 0, worst))
    return out


def _unbiased_exact() -> list[Check]:
    out = []
    cases = [("random_k:1", [2.0, 0.0]), ("random_k:2", [1.0, -3.0, 0.5]),
             ("linear_dither:2", [3.0, 4.0]), ("linear_dither:3", [1.0, -2.0, 0.25]),
             ("natural_dither:3", [1.0, -2.0, 0.25])]
    for spec, x in cases:
        kind = CompressorKind.parse(spec)
        x = np.asarray(x, dtype=np.float32)
        dist = outcome_distribution(kind, x)
        mean = sum(p * v.astype(np.float64) for p, v in dist)
        err = float(np.max(np.abs(mean - x)))
        scale = float(np.max(np.abs(x)))
        # decoded values are float32, so allow float32 rounding of the scale
        ok = err <= 4 * np.finfo(np.float32).eps * scale
        out.append(Check("compressors", f"unbiased_exact[{spec}]", ok, -err))
        dev = sum(p * float(np.sum((v.astype(np.float64) - x) ** 2)) for p, v in dist)
        w = omega_bound(kind, x.size, "expected")
        margin = w * float(x.astype(np.float64) @ x) - dev
        out.append(Check("compressors", f"omega_bound[{spec}]", margin >= -1e-9, margin))
    return out


def _frame_roundtrip(seed: int) -> Check:
    gen = DeterministicRng(seed, stage="verify").at(tensor=1).generator()
    rng = DeterministicRng(seed, stage="verify")
    specs = ("none", "fp16", "scaled_sign", "top_k:0.1", "top_k:0.1:f16", "random_k:0.25",
             "linear_dither:4", "natural_dither:3")
    bad = 0
    for spec in specs:
        kind = CompressorKind.parse(spec)
        for d in (1, 9, 257):
            x = gen.standard_normal(d).astype(np.float32)
            msg = compress(kind, x, rng.at(tensor=d))
            frame = encode_frame(msg, d)
            tid, back = decode_frame(frame)
            size_ok = len(frame) == kind.frame_size(d)
            bad += not (tid == d and back == msg and size_ok
                        and np.array_equal(decompress(back), decompress(msg)))
    return Check("compressors", "frame_roundtrip_and_size", bad == 0, -float(bad))


def _fused(seed: int) -> Check:
    gen = DeterministicRng(seed, stage="verify").at(tensor=2).generator()
    bad = 0
    for _ in range(500):
        d = int(gen.integers(1, 300))
        q = gen.standard_normal(d).astype(np.float32)
        msg = top_k(q, int(gen.integers(1, d + 1)))
        naive = q - decompress(msg)
        bad += not np.array_equal(fused_error_update(q, msg).view(np.uint32), naive.view(np.uint32))
    return Check("compressors", "fused_error_update", bad == 0, -float(bad))


def _rates() -> Check:
    r1 = compression_rate(CompressorKind.parse("top_k:0.001:f16"), 10**6, "FP16")
    r2 = compression_rate(CompressorKind.parse("scaled_sign"), 10**6, "FP32")
    drop = dropped_fraction(CompressorKind.parse("random_k:0.03125"), 1024)
    margin = min(r1 - 330, 336 - r1, r2 - 31.9, 32.0 - r2, -abs(drop - 0.96875))
    return Check("compressors", "compression_rates", margin >= 0, margin,
                 f"top_k={r1:.3f} sign={r2:.5f} drop={drop}")


def compressor_suite(seed: int = 0, **_) -> list[Check]:
    return [*_delta_property(seed), *_unbiased_exact(), _frame_roundtrip(seed), _fused(seed), _rates()]


# ---------------------------------------------------------------- protocol

def _identity(seed: int) -> Check:
    gen = DeterministicRng(seed, stage="verify").at(tensor=3).generator()
    rng = DeterministicRng(seed, stage="verify")
    bad = 0
    for t in range(100):
        n = int(gen.choice([1, 2, 4, 8]))
        d = int(gen.integers(1, 64))
        gs = [gen.standard_normal(d).astype(np.float32) for _ in range(n)]
        ref = push_pull(gs)
        for mode in ("compressed", "compressed_ef"):
            fn = compress_ef_push_pull if mode == "compressed_ef" else compress_push_pull
            workers = [WorkerState(i) for i in range(n)]
            shard = ServerShardState(0)
            out = fn(_agg(mode, "none", n), workers, shard, gs, rng.at(iteration=t))
            bad += not np.array_equal(out.view(np.uint32), ref.view(np.uint32))
            bad += any(np.any(w.residual(0, d)) for w in workers) or bool(np.any(shard.residual(0, d)))
    return Check("protocol", "identity_recovery_none", bad == 0, -float(bad))


def _residual_bounds(seed: int, delta_offset: float) -> list[Check]:
    out = []
    for spec in ("top_k:0.1", "scaled_sign"):
        cfg = RunConfig(problem="logistic", problem_params={"n_samples": 2000}, optimizer="clan",
                        aggregation=_agg("compressed_ef", spec), n_workers=4, batch_size=32,
                        steps=150, lr=0.03, seed=seed)
        r = run_experiment(cfg)
        d = r.problem.d
        delta = uniform_delta(cfg.aggregation.compressor, d) - delta_offset
        name = f"ef_residual_bound[{spec}]"
        try:
            rep = check_ef_residuals(r.worker_residuals, r.server_residuals, delta, d, max(r.max_abs_grad),
                                     r.combined_residuals)
        except ClansimError as exc:
            out.append(Check("protocol", name, False, math.nan, str(exc)))
            continue
        out.append(Check("protocol", name, rep.violations == 0, 1 - rep.worst_ratio,
                         f"{rep.checks} checks, worst observed/bound {rep.worst_ratio:.3g}"))
    return out


def _byte_accounting(seed: int) -> Check:
    bad = 0
    for spec in ("scaled_sign", "top_k:0.1", "linear_dither:4"):
        for n in (1, 3):
            cfg = RunConfig(problem="mlp", problem_params={"n_samples": 200}, optimizer="clan",
                            aggregation=_agg("compressed_ef" if spec != "linear_dither:4" else "compressed", spec),
                            n_workers=n, batch_size=8, steps=3, lr=0.01, seed=seed)
            r = run_experiment(cfg)
            push, pull = expected_bytes_per_step(cfg, r.problem)
            bad += any(rec.bytes_push != push or rec.bytes_pull != pull for rec in r.records)
    return Check("protocol", "byte_accounting", bad == 0, -float(bad))


def _transport_equivalence(seed: int) -> Check:
    results = {}
    for transport in ("inprocess", "tcp"):
        cfg = RunConfig(problem="mlp", problem_params={"n_samples": 200}, optimizer="clan",
                        aggregation=_agg("compressed_ef", "top_k:0.25", 3), n_workers=3, batch_size=8,
                        steps=5, lr=0.01, seed=seed, transport=transport)
        results[transport] = run_experiment(cfg).params
    same = np.array_equal(results["inprocess"], results["tcp"])
    return Check("protocol", "tcp_matches_inprocess", same, 0.0 if same else -1.0)


def protocol_suite(seed: int = 0, delta_offset: float = 0.0, **_) -> list[Check]:
    return [_identity(seed), *_residual_bounds(seed, delta_offset), _byte_accounting(seed),
            _transport_equivalence(seed)]


# ------------------------------------------------------------------ bounds

def _moment_gap(seed: int) -> list[Check]:
    out = []
    for mode, spec in (("full_precision", "none"), ("compressed_ef", "scaled_sign")):
        cfg = RunConfig(problem="quadratic", optimizer="lans" if spec == "none" else "clan",
                        aggregation=_agg(mode, spec), n_workers=2, steps=100, lr=0.01, seed=seed,
                        record_trajectory=True)
        r = run_experiment(cfg)
        rep = lemma_moment_gap_monitor(r.trajectory, r.problem.coordinate_lipschitz(), cfg.beta1, cfg.alpha_u)
        out.append(Check("bounds", f"moment_gap[{spec}]", rep.violations == 0, rep.worst_margin,
                         f"{rep.checks} checks"))
    return out


def bound_inputs(result, T: int, eta: float) -> BoundInputs:
    cfg, p = result.config, result.problem
    return BoundInputs(lipschitz=p.coordinate_lipschitz(), sigma=p.noise_sigma(), G=max(result.max_abs_grad),
                       s=cfg.batch_size, n=cfg.n_workers, T=T, eta=eta, beta1=cfg.beta1, beta2=cfg.beta2,
                       eps=cfg.eps, alpha_l=cfg.alpha_l, alpha_u=cfg.alpha_u,
                       gap=p.loss(p.initial_point()) - p.optimal_loss())


THEOREM_CONFIGS = {
    "full_precision": ("lans", "full_precision", "none"),
    "unbiased": ("clan", "compressed", "random_k:0.5"),
    "biased_ef": ("clan", "compressed_ef", "scaled_sign"),
}


def theorem_soundness(T: int, which: str, seed: int = 0, n: int = 2, s: int = 4):
    """Run one corollary configuration on the quadratic; returns ``(observed, rhs)``."""
    opt, mode, spec = THEOREM_CONFIGS[which]
    eta = 1 / math.sqrt(T)
    cfg = RunConfig(problem="quadratic", optimizer=opt, aggregation=_agg(mode, spec, n), n_workers=n,
                    batch_size=s, steps=T, lr=eta, seed=seed)
    r = run_experiment(cfg)
    inp = bound_inputs(r, T, eta)
    kind, d = cfg.aggregation.compressor, r.problem.d
    if which == "full_precision":
        c = corollary_full_precision(inp)
    elif which == "unbiased":
        c = corollary_unbiased(inp, omega_bound(kind, d, "expected"))
    else:
        c = corollary_biased(inp, uniform_delta(kind, d))
    return r.summary["avg_grad_sq_norm"], report_for(inp, c).rhs


def _soundness(seed: int) -> list[Check]:
    out = []
    for which in THEOREM_CONFIGS:
        worst = math.inf
        for T in (10, 100):
            obs, rhs = theorem_soundness(T, which, seed)
            worst = min(worst, (rhs - obs) / rhs)
        out.append(Check("bounds", f"error_bound_soundness[{which}]", worst >= 0, worst))
    return out


def bounds_suite(seed: int = 0, **_) -> list[Check]:
    return [*_moment_gap(seed), *_soundness(seed)]


SUITE_FUNCS: dict[str, Callable[..., list[Check]]] = {
    "compressors": compressor_suite,
    "protocol": protocol_suite,
    "bounds": bounds_suite,
}


def run_suites(name: str, seed: int = 0, delta_offset: float = 0.0) -> list[Check]:
    names = SUITES if name == "all" else (name,)
    checks = []
    for n in names:
        checks.extend(SUITE_FUNCS[n](seed=seed, delta_offset=delta_offset))
    return checks
