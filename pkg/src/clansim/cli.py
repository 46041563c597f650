"""Command-line entry point: ``train``, ``verify``, ``bench`` and ``inspect``.

Exit codes: 0 on success, 1 on a runtime error or failed verification,
2 on a configuration or usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import struct
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .compressors import (
    CompressorKind,
    Tag,
    decode_frame,
    decompress,
    decompress_many,
    parallel_compress,
)
from .core import DeterministicRng
from .errors import ClansimError, ConfigError, MalformedPayload
from .harness import run_experiment, write_metrics_csv, write_summary_csv
from .harness.config import run_config_from_dict, run_config_to_dict
from .protocol import DEFAULT_SIZE_THRESHOLD
from .verify import SUITES, run_suites

log = logging.getLogger("clansim")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2
MANIFEST_VERSION = 1


def parse_transport(text: str) -> dict:
    """``inprocess``, ``tcp`` or ``tcp:HOST:PORT`` (port 0 picks a free one)."""
    if text == "inprocess":
        return {"transport": "inprocess"}
    if text == "tcp":
        return {"transport": "tcp"}
    if text.startswith("tcp:"):
        host, _, port = text[4:].rpartition(":")
        if host and port.isdigit():
            return {"transport": "tcp", "host": host, "port": int(port)}
    raise argparse.ArgumentTypeError(f"transport must be inprocess, tcp or tcp:HOST:PORT, got {text!r}")


# ------------------------------------------------------------------- train

def _read_json(path: Path) -> dict:
    try:
        return json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None


def load_train_config(path: Path, args):
    """A plain run config, or a manifest written by an earlier ``train``."""
    data = _read_json(path)
    if isinstance(data, dict) and "manifest_version" in data:
        if data["manifest_version"] != MANIFEST_VERSION:
            raise ConfigError(f"unsupported manifest version {data['manifest_version']}")
        data = data.get("config")
    cfg = run_config_from_dict(data)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.transport is not None:
        overrides.update(args.transport)
    return replace(cfg, **overrides) if overrides else cfg


def cmd_train(args) -> int:
    cfg = load_train_config(Path(args.config), args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log.info("training %s/%s for %d steps (seed %d)", cfg.problem, cfg.optimizer, cfg.steps, cfg.seed)
    result = run_experiment(cfg)
    metrics = write_metrics_csv(out / "metrics.csv", result.records)
    summary = write_summary_csv(out / "summary.csv", result.summary)
    manifest = {
        "manifest_version": MANIFEST_VERSION,
        "clansim_version": __version__,
        "seed": cfg.seed,
        "config": run_config_to_dict(cfg),
        "outputs": {"metrics": metrics.name, "summary": summary.name},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    s = result.summary
    print(f"steps={s['steps']} final_loss={s['final_loss']:.6g} "
          f"final_grad_sq_norm={s['final_grad_sq_norm']:.6g} out={out}")
    return EXIT_OK


# ------------------------------------------------------------------ verify

def cmd_verify(args) -> int:
    checks = run_suites(args.suite, seed=args.seed or 0, delta_offset=args.delta_offset)
    width = max(len(c.name) for c in checks)
    for c in checks:
        status = "PASS" if c.passed else "FAIL"
        extra = f"  {c.detail}" if c.detail else ""
        print(f"{status}  {c.suite:<11} {c.name:<{width}}  margin={c.margin:.6g}{extra}")
    failed = sum(not c.passed for c in checks)
    print(f"{len(checks) - failed}/{len(checks)} checks passed")
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with (out / "verify_report.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["suite", "check", "passed", "margin", "detail"])
            for c in checks:
                w.writerow([c.suite, c.name, int(c.passed), repr(c.margin), c.detail])
    return EXIT_OK if failed == 0 else EXIT_RUNTIME


# ------------------------------------------------------------------- bench

def _throughput(fn, nbytes: int, min_seconds: float):
    """Repeat ``fn`` for at least ``min_seconds``; returns (MB/s, last output)."""
    reps, start = 0, time.perf_counter()
    while True:
        result = fn()
        reps += 1
        elapsed = time.perf_counter() - start
        if elapsed >= min_seconds:
            return nbytes * reps / elapsed / 1e6, result


def bench_rows(kind: CompressorKind, d: int, threads: int, min_seconds: float, seed: int):
    x = DeterministicRng(seed, stage="bench").generator().standard_normal(d).astype(np.float32)
    rng = DeterministicRng(seed, stage="bench").at(tensor=1)
    rows, outputs = [], {}
    for t in sorted({1, threads}):
        c_rate, msg = _throughput(lambda: parallel_compress(kind, x, rng, threads=t), 4 * d, min_seconds)
        d_rate, _ = _throughput(lambda: decompress_many([msg], threads=t)[0], 4 * d, min_seconds)
        outputs[t] = msg.payload
        rows.append({"kind": kind.spec(), "threads": t, "compress_MBps": c_rate, "decompress_MBps": d_rate,
                     "payload_bytes": msg.nbytes})
    identical = len(set(outputs.values())) == 1
    none = CompressorKind.none()
    c_rate, msg = _throughput(lambda: parallel_compress(none, x), 4 * d, min_seconds)
    d_rate, _ = _throughput(lambda: decompress(msg), 4 * d, min_seconds)
    rows.append({"kind": "none (copy baseline)", "threads": 1, "compress_MBps": c_rate,
                 "decompress_MBps": d_rate, "payload_bytes": msg.nbytes})
    return rows, identical


def cmd_bench(args) -> int:
    try:
        kind = CompressorKind.parse(args.kind)
    except (ClansimError, ValueError) as exc:
        raise ConfigError(f"bad compressor: {exc}") from None
    if args.d < 1 or args.threads < 1 or not args.min_seconds > 0:
        raise ConfigError("need d >= 1, threads >= 1 and min-seconds > 0")
    if 4 * args.d < args.size_threshold:
        print(f"note: a {4 * args.d}-byte tensor is below the {args.size_threshold}-byte size threshold; "
              "the protocol would send it uncompressed")
    rows, identical = bench_rows(kind, args.d, args.threads, args.min_seconds, args.seed or 0)
    print(f"{'kind':<22} {'threads':>7} {'compress MB/s':>14} {'decompress MB/s':>16} {'payload B':>11}")
    for r in rows:
        print(f"{r['kind']:<22} {r['threads']:>7} {r['compress_MBps']:>14.1f} "
              f"{r['decompress_MBps']:>16.1f} {r['payload_bytes']:>11}")
    if args.threads > 1:
        speedup = rows[1]["compress_MBps"] / rows[0]["compress_MBps"]
        print(f"outputs identical across thread counts: {'yes' if identical else 'NO'}; "
              f"compress speedup {speedup:.2f}x ({os.cpu_count()} CPUs visible)")
    return EXIT_OK if identical else EXIT_RUNTIME


# ----------------------------------------------------------------- inspect

def describe_frame(buf: bytes) -> list[str]:
    tensor_id, msg = decode_frame(buf)
    kind, d = msg.kind, msg.original_len
    lines = [f"kind        {kind.spec()}", f"tensor_id   {tensor_id}", f"d           {d}",
             f"payload     {msg.nbytes} bytes (frame {len(buf)} bytes)"]
    values = decompress(msg)
    if kind.is_sparse:
        lines.append(f"k           {msg.k}")
    if kind.is_dither:
        lines.append(f"bits        {kind.bits}")
    if kind.tag in (Tag.SCALED_SIGN, Tag.LINEAR_DITHER, Tag.NATURAL_DITHER):
        label = "scale" if kind.tag == Tag.SCALED_SIGN else "norm"
        lines.append(f"{label:<11} {struct.unpack_from('<f', msg.payload, 0)[0]!r}")
    if kind.tag == Tag.SCALED_SIGN:
        bits = np.unpackbits(np.frombuffer(msg.payload, dtype=np.uint8, offset=4), bitorder="little")[:d]
        lines.append(f"sign bits   {int(bits.sum())} positive, {int(d - bits.sum())} negative")
    head = ", ".join(f"{v:.6g}" for v in values[:8])
    lines.append(f"first {min(8, d)}     [{head}{', ...' if d > 8 else ''}]")
    return lines


def cmd_inspect(args) -> int:
    try:
        buf = Path(args.frame).read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read {args.frame}: {exc.strerror}") from None
    try:
        lines = describe_frame(buf)
    except MalformedPayload as exc:
        print(f"malformed frame: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print("\n".join(lines))
    return EXIT_OK


# -------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="clansim", description="Compressed large-batch training simulator.")
    p.add_argument("--seed", type=int, default=None, help="override the run seed")
    p.add_argument("--out-dir", default=None, help="directory for CSV artifacts and manifests")
    p.add_argument("--transport", type=parse_transport, default=None,
                   help="inprocess, tcp or tcp:HOST:PORT (overrides the config)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run an experiment from a JSON config or manifest")
    t.add_argument("config")
    t.set_defaults(func=cmd_train, default_out="runs")

    v = sub.add_parser("verify", help="run invariant suites")
    v.add_argument("suite", nargs="?", default="all", choices=(*SUITES, "all"))
    v.add_argument("--delta-offset", type=float, default=0.0,
                   help="subtract this from the certified delta (sabotage check)")
    v.set_defaults(func=cmd_verify, default_out=None)

    b = sub.add_parser("bench", help="compressor throughput")
    b.add_argument("--kind", default="top_k:0.01")
    b.add_argument("--d", type=int, default=1_000_000)
    b.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    b.add_argument("--min-seconds", type=float, default=1.0)
    b.add_argument("--size-threshold", type=int, default=DEFAULT_SIZE_THRESHOLD)
    b.set_defaults(func=cmd_bench, default_out=None)

    i = sub.add_parser("inspect", help="decode a wire frame file")
    i.add_argument("frame")
    i.set_defaults(func=cmd_inspect, default_out=None)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.out_dir is None:
        args.out_dir = args.default_out
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr, force=True)
    logging.captureWarnings(True)
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except (ClansimError, OSError, ValueError) as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_RUNTIME
    finally:
        logging.captureWarnings(False)


if __name__ == "__main__":
    sys.exit(main())
