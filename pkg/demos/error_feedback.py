"""Why error feedback matters: scaled-sign CLAN on logistic regression with and without residuals.

The runs without residuals log a warning on purpose; that pairing is the point of comparison.
"""

from clansim.compressors import CompressorKind
from clansim.harness import RunConfig, run_experiment
from clansim.protocol import AggregationConfig, Mode


def run(mode, spec, optimizer="clan"):
    agg = AggregationConfig(mode=mode, compressor=CompressorKind.parse(spec), size_threshold_bytes=0)
    cfg = RunConfig(problem="logistic", problem_params={"n_samples": 4000}, optimizer=optimizer,
                    aggregation=agg, n_workers=4, batch_size=32, steps=500, lr=0.03, schedule="linear_decay")
    return run_experiment(cfg)


def main():
    rows = [
        ("full precision", run(Mode.FULL_PRECISION, "none", "lans")),
        ("sign + EF", run(Mode.COMPRESSED_EF, "scaled_sign")),
        ("sign, no EF", run(Mode.COMPRESSED, "scaled_sign")),
        ("top-1% + EF", run(Mode.COMPRESSED_EF, "top_k:0.01")),
        ("top-1%, no EF", run(Mode.COMPRESSED, "top_k:0.01")),
    ]
    print(f"{'setup':<16} {'final loss':>11} {'push B/step':>12} {'max |e|':>9}")
    for name, r in rows:
        s = r.summary
        print(f"{name:<16} {s['final_loss']:>11.5f} {s['total_bytes_push'] // s['steps']:>12} "
              f"{s['max_worker_residual']:>9.3f}")


if __name__ == "__main__":
    main()
