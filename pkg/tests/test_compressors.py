import math
import struct

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from clansim.compressors import (
    HEADER_BYTES,
    CompressedMessage,
    CompressorKind,
    Precision,
    Tag,
    compress,
    compress_many,
    decode_frame,
    decompress,
    decompress_many,
    delta_lower_bound,
    empirical_omega,
    encode_frame,
    fused_error_update,
    monte_carlo,
    omega_bound,
    outcome_distribution,
    parallel_compress,
    supports_fused,
    top_k_indices,
    uniform_delta,
)
from clansim.compressors.codecs import pack_codes, unpack_codes
from clansim.compressors.parallel import parallel_top_k_indices
from clansim.compressors.properties import sample_outputs
from clansim.core import DeterministicRng
from clansim.errors import (
    ConfigError,
    KTooLarge,
    MalformedPayload,
    UnknownCompressorId,
    UnknownVersion,
    UnsupportedKind,
    ZeroVector,
)

from conftest import f32_vectors, nonzero

ALL_SPECS = ["none", "fp16", "scaled_sign", "top_k:1", "top_k:0.25", "top_k:0.5:f16", "random_k:1",
             "random_k:0.5", "random_k:0.5:f16", "linear_dither:2", "linear_dither:5", "natural_dither:3",
             "natural_dither:8"]
RNG = DeterministicRng(99, stage="test")


def kinds():
    return st.sampled_from(ALL_SPECS).map(CompressorKind.parse)


def brute_top_k(x, k):
    order = sorted(range(len(x)), key=lambda j: (-abs(float(x[j])), j))
    return sorted(order[:k])


class TestKind:
    @pytest.mark.parametrize("spec", ALL_SPECS)
    def test_spec_round_trip(self, spec):
        kind = CompressorKind.parse(spec)
        assert CompressorKind.parse(kind.spec()) == kind

    @pytest.mark.parametrize("spec", ["top_k", "top_k:0", "top_k:1.5", "linear_dither:1", "linear_dither:9",
                                      "scaled_sign:3", "bogus", "fp16:f16", "top_k:abc",
                                      "random_k:1/0", "natural_dither:x"])
    def test_rejects_bad_specs(self, spec):
        with pytest.raises(ConfigError):
            CompressorKind.parse(spec)

    def test_fraction_resolution(self):
        assert CompressorKind.parse("top_k:0.001").resolve_k(10**6) == 1000
        assert CompressorKind.parse("random_k:1/32").resolve_k(1024) == 32
        assert CompressorKind.parse("top_k:0.1").resolve_k(5) == 1

    def test_k_too_large(self):
        with pytest.raises(KTooLarge):
            compress(CompressorKind.top_k(5), np.ones(4, dtype=np.float32))


class TestExamples:
    def test_none_is_raw_float32(self):
        msg = compress(CompressorKind.none(), [1.5, -2.25])
        assert msg.payload == struct.pack("<2f", 1.5, -2.25)
        assert decompress(msg).tolist() == [1.5, -2.25]

    def test_scaled_sign(self):
        x = np.array([1, -2, 3], dtype=np.float32)
        msg = compress(CompressorKind.scaled_sign(), x)
        scale = np.abs(x).sum() / x.size  # oracle: l1 / d times sign
        assert struct.unpack_from("<f", msg.payload)[0] == scale == 2.0
        assert msg.payload[4] == 0b101  # LSB-first, 1 = nonnegative
        assert decompress(msg).tolist() == (scale * np.sign(x)).tolist() == [2, -2, 2]

    def test_top_k(self):
        x = np.array([0.1, -5, 0.2, 3], dtype=np.float32)
        msg = compress(CompressorKind.top_k(2), x)
        assert brute_top_k(x, 2) == [1, 3]
        k, = struct.unpack_from("<Q", msg.payload)
        assert k == 2
        assert struct.unpack_from("<2I2f", msg.payload, 8) == (1, 3, -5.0, 3.0)
        assert decompress(msg).tolist() == [0, -5, 0, 3]

    def test_zero_scale_sign_decodes_to_zero(self):
        msg = CompressedMessage(CompressorKind.scaled_sign(), 3, struct.pack("<f", 0.0) + b"\x02")
        out = decompress(msg)
        assert out.tolist() == [0, 0, 0]
        assert not np.any(np.signbit(out))

    def test_direct_placement(self):
        msg = CompressedMessage(CompressorKind.top_k(1), 2, struct.pack("<QIf", 1, 0, 7.0))
        assert decompress(msg).tolist() == [7, 0]

    def test_random_k_full_selection(self):
        x = np.array([1, -2, 3.5], dtype=np.float32)
        assert np.array_equal(decompress(compress(CompressorKind.random_k(3), x, RNG)), x)

    def test_random_k_two_outcomes(self):
        # hand enumeration: keep coordinate 0 -> [4, 0]; keep 1 -> [0, 0]; each w.p. 1/2
        dist = outcome_distribution(CompressorKind.random_k(1), [2.0, 0.0])
        got = sorted((p, tuple(v)) for p, v in dist)
        assert got == [(0.5, (0.0, 0.0)), (0.5, (4.0, 0.0))]
        assert sum(p * v for p, v in dist).tolist() == [2.0, 0.0]

    @pytest.mark.parametrize("spec", ["random_k:0.5", "linear_dither:3", "natural_dither:3"])
    def test_zero_vector_decodes_to_zero(self, spec):
        out = decompress(compress(CompressorKind.parse(spec), np.zeros(6, dtype=np.float32), RNG))
        assert out.tolist() == [0.0] * 6

    @pytest.mark.parametrize("spec", ["linear_dither:2", "linear_dither:5", "natural_dither:2", "natural_dither:4"])
    @pytest.mark.parametrize("c", [3.25, -0.7, 1e-3])
    def test_dither_scalar_exact(self, spec, c):
        out = decompress(compress(CompressorKind.parse(spec), [c], RNG))
        assert out.tolist() == [np.float32(c)]

    def test_linear_dither_bits2_enumeration(self):
        # norm 5; 3/5 rounds up to 1 w.p. 0.6, 4/5 w.p. 0.8 (grid {0, 1})
        hand = {(5.0, 5.0): 0.6 * 0.8, (5.0, 0.0): 0.6 * 0.2, (0.0, 5.0): 0.4 * 0.8, (0.0, 0.0): 0.4 * 0.2}
        dist = outcome_distribution(CompressorKind.linear_dither(2), [3.0, 4.0])
        got = {tuple(v): p for p, v in dist}
        assert got.keys() == hand.keys()
        for key, p in hand.items():
            assert got[key] == pytest.approx(p, abs=1e-7)
        mean = sum(p * v for p, v in dist)
        assert mean == pytest.approx([3.0, 4.0], rel=1e-6)

    def test_natural_dither_three_quarters(self):
        # normalized 0.75 sits between 0.5 and 1.0; up-probability 0.5
        x = np.array([0.75, math.sqrt(1 - 0.75**2)], dtype=np.float32)
        dist = outcome_distribution(CompressorKind.natural_dither(3), x)
        norm = float(np.linalg.norm(x.astype(np.float64)))
        first = {}
        for p, v in dist:
            level = round(v[0] / norm, 6)
            first[level] = first.get(level, 0.0) + p
        assert first == pytest.approx({0.5: 0.5, 1.0: 0.5}, abs=1e-6)

    def test_fused_example(self):
        q = np.array([0.1, -5, 0.2, 3], dtype=np.float32)
        e = fused_error_update(q, compress(CompressorKind.top_k(2), q))
        assert e.tolist() == pytest.approx([0.1, 0, 0.2, 0])
        assert np.array_equal(e, q - decompress(compress(CompressorKind.top_k(2), q)))

    def test_fused_k_equals_d(self):
        q = np.array([1, 2, -3], dtype=np.float32)
        assert not np.any(fused_error_update(q, compress(CompressorKind.top_k(3), q)))

    @pytest.mark.parametrize("spec", ["scaled_sign", "top_k:1:f16", "random_k:1"])
    def test_fused_unsupported(self, spec):
        q = np.array([1, 2, -3], dtype=np.float32)
        with pytest.raises(UnsupportedKind):
            fused_error_update(q, compress(CompressorKind.parse(spec), q, RNG))

    def test_fused_rejects_foreign_message(self):
        q = np.array([1, 2, -3], dtype=np.float32)
        with pytest.raises(ValueError):
            fused_error_update(q + 1, compress(CompressorKind.top_k(1), q))

    def test_delta_examples(self):
        assert delta_lower_bound(CompressorKind.scaled_sign(), [2, -2, 2, 2]) == 1.0
        assert delta_lower_bound(CompressorKind.top_k(4), [1, 2, 3, 4]) == 1.0
        x = np.array([1, 0, 0, 0], dtype=np.float32)
        delta = delta_lower_bound(CompressorKind.scaled_sign(), x)
        assert delta == 0.25
        r = decompress(compress(CompressorKind.scaled_sign(), x)) - x
        # 3 * (1/4)^2 + (3/4)^2 = 0.75
        assert float(r @ r) == 0.75 == (1 - delta) * float(x @ x)

    def test_delta_errors(self):
        with pytest.raises(ZeroVector):
            delta_lower_bound(CompressorKind.scaled_sign(), [0, 0])
        with pytest.raises(UnsupportedKind):
            delta_lower_bound(CompressorKind.random_k(1), [1, 2])

    def test_uniform_delta(self):
        assert uniform_delta(CompressorKind.scaled_sign(), 8) == 1 / 8
        assert uniform_delta(CompressorKind.top_k(0.25), 8) == 0.25

    def test_empirical_omega_examples(self):
        assert empirical_omega(CompressorKind.random_k(2), [1.0, -3.0], 100, RNG) == (0.0, 0.0)
        _, ratio = empirical_omega(CompressorKind.random_k(1), [1.0, 1.0], 200, RNG)
        assert ratio == pytest.approx(1.0, rel=1e-6)  # every outcome has error 1 + 1 = ||x||^2
        # normalized entries (1, 0, 0) are grid points for every bit width
        bias, ratio = empirical_omega(CompressorKind.linear_dither(2), [-4.0, 0.0, 0.0], 300, RNG)
        assert (bias, ratio) == (0.0, 0.0)

    def test_empirical_omega_errors(self):
        with pytest.raises(UnsupportedKind):
            empirical_omega(CompressorKind.top_k(1), [1.0, 2.0], 10, RNG)
        with pytest.raises(ZeroVector):
            empirical_omega(CompressorKind.random_k(1), [0.0, 0.0], 10, RNG)


class TestFrame:
    def test_header_layout(self):
        msg = compress(CompressorKind.parse("top_k:2:f16"), [0.1, -5, 0.2, 3])
        frame = encode_frame(msg, 0xDEADBEEF)
        assert struct.unpack_from("<BBBBIQQ", frame) == (1, 3, 1, 0, 0xDEADBEEF, 4, len(msg.payload))
        dith = encode_frame(compress(CompressorKind.linear_dither(5), [1.0, 2.0], RNG), 0)
        assert dith[1] == 5 and dith[2] == 5 << 1

    @given(kinds(), f32_vectors(1, 40), st.integers(0, 2**32 - 1))
    def test_round_trip(self, kind, x, tid):
        assume(not kind.is_sparse or kind.resolve_k(x.size) <= x.size)
        msg = compress(kind, x, RNG)
        frame = encode_frame(msg, tid)
        assert len(frame) == HEADER_BYTES + kind.payload_size(x.size) == kind.frame_size(x.size)
        got_tid, back = decode_frame(frame)
        assert got_tid == tid and back == msg

    def test_truncated(self):
        frame = encode_frame(compress(CompressorKind.none(), [1.0, 2.0]), 1)
        for cut in (0, 5, HEADER_BYTES, len(frame) - 1):
            with pytest.raises(MalformedPayload) as info:
                decode_frame(frame[:cut])
            assert info.value.offset is not None

    def test_bad_version_and_id(self):
        frame = bytearray(encode_frame(compress(CompressorKind.none(), [1.0]), 1))
        frame[0] = 2
        with pytest.raises(UnknownVersion):
            decode_frame(bytes(frame))
        frame[0], frame[1] = 1, 9
        with pytest.raises(UnknownCompressorId):
            decode_frame(bytes(frame))

    def test_trailing_bytes(self):
        frame = encode_frame(compress(CompressorKind.none(), [1.0]), 1)
        with pytest.raises(MalformedPayload):
            decode_frame(frame + b"\x00")

    @pytest.mark.parametrize("payload, d", [
        (struct.pack("<QIf", 1, 5, 1.0), 4),                 # index out of range
        (struct.pack("<Q2I2f", 2, 2, 1, 1.0, 2.0), 4),       # not increasing
        (struct.pack("<Q2I2f", 2, 1, 1, 1.0, 2.0), 4),       # duplicate
        (struct.pack("<QI", 1, 0), 4),                       # short
        (struct.pack("<QIf", 1, 0, float("nan")), 4),        # non-finite value
    ])
    def test_malformed_sparse(self, payload, d):
        k = struct.unpack_from("<Q", payload)[0]
        with pytest.raises(MalformedPayload):
            decompress(CompressedMessage(CompressorKind.top_k(k), d, payload))

    def test_non_finite_scale(self):
        with pytest.raises(MalformedPayload):
            decompress(CompressedMessage(CompressorKind.scaled_sign(), 3, struct.pack("<f", float("inf")) + b"\x00"))
        with pytest.raises(MalformedPayload):
            decompress(CompressedMessage(CompressorKind.scaled_sign(), 3, struct.pack("<f", -1.0) + b"\x00"))


class TestProperties:
    @given(st.sampled_from(["scaled_sign", "top_k:1", "top_k:0.3", "top_k:0.9"]), f32_vectors(1, 80))
    def test_delta_approximation(self, spec, x):
        assume(nonzero(x))
        kind = CompressorKind.parse(spec)
        delta = delta_lower_bound(kind, x)
        assert 0 < delta <= 1
        x64 = x.astype(np.float64)
        r = decompress(compress(kind, x)).astype(np.float64) - x64
        sq = float(x64 @ x64)
        assert float(r @ r) <= (1 - delta) * sq * (1 + 1e-6)

    @given(f32_vectors(1, 80), st.data())
    def test_top_k_matches_brute_force(self, x, data):
        k = data.draw(st.integers(1, x.size))
        assert top_k_indices(x, k).tolist() == brute_top_k(x, k)

    @given(f32_vectors(1, 120), st.data())
    def test_parallel_top_k_exact(self, x, data):
        k = data.draw(st.integers(1, x.size))
        threads = data.draw(st.integers(1, 9))
        assert parallel_top_k_indices(x, k, threads).tolist() == top_k_indices(x, k).tolist()

    @given(f32_vectors(1, 60), st.data())
    def test_fused_bit_identical(self, q, data):
        k = data.draw(st.integers(1, q.size))
        msg = compress(CompressorKind.top_k(k), q)
        assert np.array_equal(fused_error_update(q, msg).view(np.uint32), (q - decompress(msg)).view(np.uint32))

    @given(kinds(), f32_vectors(1, 40))
    def test_deterministic_given_stream(self, kind, x):
        a = compress(kind, x, RNG.at(tensor=3))
        b = compress(kind, x, RNG.at(tensor=3))
        assert a == b

    @given(st.sampled_from(["none", "fp16", "scaled_sign", "top_k:0.3"]), f32_vectors(1, 40))
    def test_deterministic_kinds_are_projections(self, spec, x):
        kind = CompressorKind.parse(spec)
        y = decompress(compress(kind, x))
        assert np.array_equal(decompress(compress(kind, y)), y)

    @given(st.integers(2, 8), st.data())
    def test_code_packing_round_trip(self, bits, data):
        codes = np.array(data.draw(st.lists(st.integers(0, (1 << bits) - 1), min_size=1, max_size=50)))
        packed = pack_codes(codes, bits)
        assert len(packed) == (codes.size * bits + 7) // 8
        assert unpack_codes(packed, codes.size, bits).tolist() == codes.tolist()

    def test_code_packing_lsb_first(self):
        # codes 0b01, 0b11 with 2 bits -> bit stream 1,0,1,1 -> byte 0b1101
        assert pack_codes(np.array([1, 3]), 2) == bytes([0b1101])

    @pytest.mark.parametrize("spec", ["random_k:1", "random_k:0.5:f16", "linear_dither:3", "natural_dither:3"])
    def test_sample_outputs_match_codec(self, spec):
        kind = CompressorKind.parse(spec)
        x = np.array([0.3, -1.2, 2.5, 0.0, -0.01], dtype=np.float32)
        rows = sample_outputs(kind, x, RNG, 0, 25)
        for i in range(25):
            want = decompress(compress(kind, x, RNG.at(iteration=i, stage="omega")))
            assert np.array_equal(rows[i], want)

    @pytest.mark.parametrize("spec", ["random_k:2", "linear_dither:3", "natural_dither:3"])
    def test_monte_carlo_unbiased_small(self, spec):
        x = np.array([0.3, -1.2, 2.5, 0.05], dtype=np.float32)
        stats = monte_carlo(CompressorKind.parse(spec), x, 20000, RNG)
        assert np.all(np.abs(stats.mean - x) <= 4 * stats.sem + 1e-12)

    @pytest.mark.parametrize("spec", ["random_k:1", "random_k:3", "linear_dither:2", "linear_dither:4",
                                      "natural_dither:2", "natural_dither:3"])
    def test_exact_variance_within_omega(self, spec):
        kind = CompressorKind.parse(spec)
        x = np.array([0.3, -1.2, 2.5, 0.05], dtype=np.float32)
        dist = outcome_distribution(kind, x)
        assert sum(p for p, _ in dist) == pytest.approx(1.0)
        x64 = x.astype(np.float64)
        var = sum(p * float(((v - x64) ** 2).sum()) for p, v in dist)
        assert var <= omega_bound(kind, x.size) * float(x64 @ x64) * (1 + 1e-9)
        worst = max(float(((v - x64) ** 2).sum()) for _, v in dist)
        assert worst <= omega_bound(kind, x.size, "deterministic") * float(x64 @ x64) * (1 + 1e-9)

    def test_omega_bound_rejects_biased(self):
        with pytest.raises(UnsupportedKind):
            omega_bound(CompressorKind.scaled_sign(), 4)

    def test_supports_fused(self):
        assert supports_fused(CompressorKind.top_k(2), 4)
        assert supports_fused(CompressorKind.random_k(4), 4)
        assert not supports_fused(CompressorKind.random_k(2), 4)
        assert not supports_fused(CompressorKind.top_k(2, Precision.F16), 4)
        assert not supports_fused(CompressorKind.scaled_sign(), 4)


class TestParallel:
    def test_thread_count_invariant(self):
        x = np.random.default_rng(0).standard_normal(10_000).astype(np.float32)
        kind = CompressorKind.top_k(0.01)
        one = parallel_compress(kind, x, threads=1)
        assert all(parallel_compress(kind, x, threads=t) == one for t in (2, 3, 8))

    def test_many_preserves_order(self):
        gen = np.random.default_rng(1)
        tensors = [gen.standard_normal(n).astype(np.float32) for n in (5, 50, 500)]
        rngs = [RNG.at(tensor=i) for i in range(3)]
        kind = CompressorKind.linear_dither(4)
        serial = compress_many(kind, tensors, rngs, threads=1)
        threaded = compress_many(kind, tensors, rngs, threads=3)
        assert serial == threaded
        for a, b in zip(decompress_many(serial, 1), decompress_many(threaded, 3)):
            assert np.array_equal(a, b)

    def test_tag_ids_match_wire_table(self):
        assert [t.value for t in Tag] == list(range(7))
