import math
import random
from dataclasses import dataclass

import pytest

from deaddrop.coder import (
    CoderParams,
    EncodeResult,
    PathEncoder,
    alternate_encoding,
    decode,
    encode,
    reconstruction_candidates,
    rng_pad_source,
)
from deaddrop.errors import ConfigError, DegenerateChain, TokenNotInSupport
from deaddrop.model import ModelFormat, SamplingConfig


@dataclass(frozen=True)
class PairProvider:
    """Two tokens, 3:1 odds, every seed (the miniature instance)."""

    def logits(self, seed, tokens):
        return (math.log(3.0), 0.0)


@dataclass(frozen=True)
class HashProvider:
    """Seed-sensitive weights for small custom tables."""

    salt: str = ""

    def logits(self, seed, tokens):
        import hashlib

        out = []
        for tok in tokens:
            digest = hashlib.sha256((self.salt + seed + "|" + tok).encode()).digest()
            out.append(math.log(1 + digest[0] % 13))
        return tuple(out)


@dataclass(frozen=True)
class RichThenForcedProvider:
    """Uneven at the initial seed, then one dominant token forever."""

    def logits(self, seed, tokens):
        if seed == "":
            return (math.log(3.0),) + tuple(0.0 for _ in tokens[1:])
        return (50.0,) + tuple(0.0 for _ in tokens[1:])


MINI_FMT = ModelFormat(tokens=("A", "B"), context_len=4, provider=PairProvider())
MINI_CFG = SamplingConfig(top_k=2, quant_denominator=4)
MINI_PARAMS = CoderParams(symbol_bits=2, window_symbols=2)


def oracle_encode_mini(tokens):
    """Standalone re-derivation of the miniature instance, no coder code.

    Tracks the interval with plain integers straight from the narrowing
    rule, then reads the retired symbols off the final interval bounds.
    """
    cums = {"A": (0, 3), "B": (3, 1)}
    low, span, retired = 0, 16, 0
    for tok in tokens:
        cum, freq = cums[tok]
        lo = cum * span // 4
        hi = (cum + freq) * span // 4
        low += lo
        span = hi - lo
        while span <= 4:
            low <<= 2
            span <<= 2
            retired += 1
    p_low = low >> 4
    p_high = (low + span - 1) >> 4
    digits = [(p_low >> (2 * (retired - 1 - i))) & 3 for i in range(retired)]
    window = 0
    if p_high != p_low:
        window = 1
        value = p_low
        while value and (value & 3) == 3:
            window += 1
            value >>= 2
    return digits, window


def test_miniature_golden_vector():
    # frozen from the brute-force oracle: encode(A, A, B) -> digits [1], w=1,
    # with {1, 2} being exactly the two readings seen over all 3-digit streams
    result = encode(["A", "A", "B"], MINI_FMT, MINI_CFG, MINI_PARAMS)
    assert list(result.digits) == [1]
    assert result.carry_window == 1
    assert list(alternate_encoding(result, symbol_bits=2)) == [2]
    assert (list(result.digits), result.carry_window) == oracle_encode_mini("AAB")


def test_miniature_enumeration_matches_oracle():
    rng = random.Random(4)
    for _ in range(200):
        tokens = [rng.choice("AB") for _ in range(rng.randint(1, 10))]
        result = encode(tokens, MINI_FMT, MINI_CFG, MINI_PARAMS)
        digits, window = oracle_encode_mini(tokens)
        assert list(result.digits) == digits
        assert result.carry_window == window


def test_params_validation():
    with pytest.raises(ConfigError):
        CoderParams(symbol_bits=0)
    with pytest.raises(ConfigError):
        CoderParams(symbol_bits=9)
    with pytest.raises(ConfigError):
        CoderParams(window_symbols=1)
    with pytest.raises(ConfigError):
        CoderParams(symbol_bits=8, window_symbols=8)  # 64 bits > 62


def test_forced_chain_shifts_symbols_through(fmt, params):
    cfg = SamplingConfig(top_k=1)
    rng = random.Random(1)
    data = bytes(rng.getrandbits(8) for _ in range(8))
    result = decode(data, fmt, cfg, params, pad_source=rng_pad_source(rng))
    assert result.emitted[: len(data)] == data
    assert len(result.tokens) == len(data)


def test_golden_zero_byte_decode(fmt, sampling, params):
    # regression pin: frozen after the build passed the round-trip and
    # miniature-oracle suites; any change to quantization, token order or
    # interval arithmetic shows up here first
    result = decode(bytes(8), fmt, sampling, params,
                    pad_source=rng_pad_source(random.Random(0)))
    assert result.tokens == (
        "o", "v", "ck", "k", "t", "i", "th", "j", "v", "l", "o", "b", "e", "jw", "d",
    )


def test_decode_rejects_bad_symbols(fmt, sampling):
    with pytest.raises(ConfigError):
        decode(b"\x05", fmt, sampling, CoderParams(symbol_bits=2))
    with pytest.raises(ConfigError):
        decode(b"", fmt, sampling)


def test_round_trip_default_params(fmt, sampling, params):
    rng = random.Random(2024)
    for _ in range(300):
        data = bytes(rng.getrandbits(8) for _ in range(rng.randint(8, 64)))
        decoded = decode(data, fmt, sampling, params, pad_source=rng_pad_source(rng))
        assert decoded.emitted[: len(data)] == data
        result = encode(decoded.tokens, fmt, sampling, params)
        assert data in reconstruction_candidates(result, params)


def test_round_trip_one_byte(fmt, sampling, params):
    rng = random.Random(77)
    for _ in range(50):
        data = bytes([rng.getrandbits(8)])
        decoded = decode(data, fmt, sampling, params, pad_source=rng_pad_source(rng))
        result = encode(decoded.tokens, fmt, sampling, params)
        assert data in reconstruction_candidates(result, params)


@pytest.mark.parametrize("window_symbols", [2, 3])
def test_round_trip_tiny_parameters(window_symbols):
    tiny = CoderParams(symbol_bits=2, window_symbols=window_symbols)
    fmt = ModelFormat(tokens=("a", "b", "c", "d"), context_len=3, provider=HashProvider())
    cfg = SamplingConfig(top_k=4, quant_denominator=4)
    rng = random.Random(11)
    for _ in range(1500):
        data = bytes(rng.getrandbits(2) for _ in range(rng.randint(2, 12)))
        decoded = decode(data, fmt, cfg, tiny, pad_source=rng_pad_source(rng))
        assert decoded.emitted[: len(data)] == data
        result = encode(decoded.tokens, fmt, cfg, tiny)
        assert data in reconstruction_candidates(result, tiny)


def test_encoder_decoder_symbol_agreement(fmt, sampling, params):
    rng = random.Random(31)
    for _ in range(100):
        data = bytes(rng.getrandbits(8) for _ in range(rng.randint(8, 48)))
        decoded = decode(data, fmt, sampling, params, pad_source=rng_pad_source(rng))
        result = encode(decoded.tokens, fmt, sampling, params)
        n = len(result.digits)
        assert len(decoded.emitted) == n
        keep = n - result.carry_window
        assert result.digits[:keep] == decoded.emitted[:keep]


def test_carry_window_stays_small(fmt, sampling, params):
    rng = random.Random(8)
    for _ in range(300):
        data = bytes(rng.getrandbits(8) for _ in range(rng.randint(8, 64)))
        decoded = decode(data, fmt, sampling, params, pad_source=rng_pad_source(rng))
        result = encode(decoded.tokens, fmt, sampling, params)
        assert result.carry_window < params.window_symbols


def test_span_invariant_after_every_step(fmt, sampling, params):
    rng = random.Random(12)
    data = bytes(rng.getrandbits(8) for _ in range(32))
    decoded = decode(data, fmt, sampling, params, pad_source=rng_pad_source(rng))
    enc = PathEncoder(fmt, sampling, params)
    for token in decoded.tokens:
        enc.feed(token)
        assert params.emit_threshold < enc.span <= params.full_range


def test_padding_consumption_reported(fmt, sampling, params):
    rng = random.Random(21)
    data = bytes(rng.getrandbits(8) for _ in range(8))
    decoded = decode(data, fmt, sampling, params, pad_source=rng_pad_source(rng))
    assert decoded.consumed_padding_bits > 0
    assert decoded.consumed_padding_bits % params.symbol_bits == 0


def test_alternate_encoding_examples():
    res1 = EncodeResult(digits=bytes([0x01, 0x02, 0x03]), carry_window=1)
    assert alternate_encoding(res1) == bytes([0x01, 0x02, 0x04])
    res2 = EncodeResult(digits=bytes([0x01, 0x02, 0x03]), carry_window=2)
    assert alternate_encoding(res2) == bytes([0x01, 0x03, 0xFC])
    res0 = EncodeResult(digits=bytes([0x01, 0x02, 0x03]), carry_window=0)
    with pytest.raises(ValueError):
        alternate_encoding(res0)


def test_token_out_of_support_raises(fmt, params):
    cfg = SamplingConfig(top_k=1)
    rng = random.Random(6)
    full = SamplingConfig()
    data = bytes(rng.getrandbits(8) for _ in range(8))
    tokens = decode(data, fmt, full, params, pad_source=rng_pad_source(rng)).tokens
    with pytest.raises(TokenNotInSupport):
        encode(tokens, fmt, cfg, params)
    with pytest.raises(TokenNotInSupport):
        encode(["not-a-token"], fmt, full, params)


def test_reconstruction_candidate_order(params):
    res = EncodeResult(digits=bytes([9, 8, 7, 6, 5]), carry_window=2)
    cands = list(reconstruction_candidates(res, params))
    assert cands[0] == bytes([9, 8, 7, 6, 5])  # direct first
    assert cands[1] == alternate_encoding(res)  # then the carry reading
    assert cands[2] == bytes([9, 8, 7, 6])  # then truncation
    assert bytes([9, 8, 7]) in cands


def test_degenerate_after_narrowing_raises():
    fmt = ModelFormat(tokens=("a", "b", "c", "d"), context_len=3, provider=RichThenForcedProvider())
    cfg = SamplingConfig(top_k=4, top_p=0.9, quant_denominator=1 << 6)
    tiny = CoderParams(symbol_bits=2, window_symbols=4)
    rng = random.Random(5)
    with pytest.raises(DegenerateChain):
        decode(bytes([1, 2, 3, 0, 1, 2]), fmt, cfg, tiny, pad_source=rng_pad_source(rng))
