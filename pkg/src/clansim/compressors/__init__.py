"""Gradient compressors, their wire encodings and their delta/omega characterisation."""

from .codecs import (
    CompressedMessage,
    compress,
    decompress,
    fp16_cast,
    linear_dither,
    natural_dither,
    random_k,
    scaled_sign,
    top_k,
    top_k_indices,
)
from .frame import decode_frame, encode_frame
from .kinds import HEADER_BYTES, CompressorKind, Precision, Tag
from .parallel import compress_many, decompress_many, parallel_compress
from .properties import (
    delta_lower_bound,
    empirical_omega,
    fused_error_update,
    monte_carlo,
    omega_bound,
    outcome_distribution,
    supports_fused,
    uniform_delta,
)

__all__ = [
    "HEADER_BYTES",
    "CompressedMessage",
    "CompressorKind",
    "Precision",
    "Tag",
    "compress",
    "compress_many",
    "decode_frame",
    "decompress",
    "decompress_many",
    "delta_lower_bound",
    "empirical_omega",
    "encode_frame",
    "fp16_cast",
    "fused_error_update",
    "linear_dither",
    "monte_carlo",
    "natural_dither",
    "omega_bound",
    "outcome_distribution",
    "parallel_compress",
    "random_k",
    "scaled_sign",
    "supports_fused",
    "top_k",
    "top_k_indices",
    "uniform_delta",
]
