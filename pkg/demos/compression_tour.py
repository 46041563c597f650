"""Compress one gradient with every compressor and compare size, error and constants."""

import numpy as np

from clansim.analysis import compression_rate
from clansim.compressors import (
    CompressorKind,
    compress,
    decompress,
    delta_lower_bound,
    encode_frame,
    omega_bound,
)
from clansim.core import DeterministicRng

SPECS = ["none", "fp16", "scaled_sign", "top_k:0.01", "top_k:0.01:f16", "random_k:1/32",
         "linear_dither:4", "natural_dither:3"]


def main():
    rng = DeterministicRng(0, stage="demo")
    x = rng.generator().standard_normal(100_000).astype(np.float32)
    x64 = x.astype(np.float64)
    print(f"{'kind':<18} {'frame B':>9} {'rate':>8} {'rel err':>9}  constant")
    for spec in SPECS:
        kind = CompressorKind.parse(spec)
        msg = compress(kind, x, rng.at(tensor=1))
        err = np.linalg.norm(decompress(msg).astype(np.float64) - x64) / np.linalg.norm(x64)
        if kind.is_unbiased and spec not in ("none", "fp16"):
            const = f"omega={omega_bound(kind, x.size):.4g}"
        elif spec in ("scaled_sign", "top_k:0.01"):
            const = f"delta={delta_lower_bound(kind, x):.4g}"
        else:
            const = ""
        frame = encode_frame(msg, tensor_id=1)
        print(f"{spec:<18} {len(frame):>9} {compression_rate(kind, x.size):>8.2f} {err:>9.4f}  {const}")


if __name__ == "__main__":
    main()
