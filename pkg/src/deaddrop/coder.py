"""Fixed-precision range coder driven by token distributions.

The decoder runs "backwards" as a sampler: ciphertext symbols select tokens
from successive quantized distributions, narrowing an integer interval; the
encoder replays a token sequence through the same narrowing and returns the
symbols the interval determines.  Both sides track the interval as
(low, range) where low is an arbitrary-precision integer holding every symbol
retired so far -- carries propagate through it for free, so no explicit
carry/cache machinery is needed.

At the end of an encode the final interval may still straddle one symbol
boundary, so the last few symbols have exactly two readings: as emitted, or
with one carry applied (+1 at the straddle position, which turns the trailing
run of maximal symbols into zeros).  `alternate_encoding` materializes the
second reading and trial decryption picks the right one.
"""

from __future__ import annotations

import math
import secrets
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

from .errors import ConfigError, DegenerateChain, TokenNotInSupport
from .model import ModelFormat, SamplingConfig, next_distribution

# consecutive zero-information steps tolerated before concluding the chain
# cannot carry payload
_STALL_LIMIT = 1024


@dataclass(frozen=True)
class CoderParams:
    """Symbol width in bits and interval precision in symbols."""

    symbol_bits: int = 8
    window_symbols: int = 4

    def __post_init__(self):
        if not 1 <= self.symbol_bits <= 8:
            raise ConfigError("symbol_bits must be in [1, 8] (symbols are stored as bytes)")
        if self.window_symbols < 2:
            raise ConfigError("window_symbols must be >= 2")
        if self.symbol_bits * self.window_symbols > 62:
            raise ConfigError("state exceeds 62 bits")

    @property
    def symbol_base(self) -> int:
        return 1 << self.symbol_bits

    @property
    def full_range(self) -> int:
        return 1 << (self.symbol_bits * self.window_symbols)

    @property
    def emit_threshold(self) -> int:
        # one top-symbol bucket; the interval is kept strictly wider than this
        return 1 << (self.symbol_bits * (self.window_symbols - 1))


@dataclass(frozen=True)
class DecodeResult:
    tokens: tuple[str, ...]
    consumed_padding_bits: int
    # diagnostic: the symbols actually retired (prefix of input ++ padding)
    emitted: bytes


@dataclass(frozen=True)
class EncodeResult:
    digits: bytes
    carry_window: int

    def __post_init__(self):
        if self.carry_window < 0:
            raise ConfigError("carry window cannot be negative")


def default_pad_source() -> Callable[[], int]:
    """CSPRNG padding symbols for production decodes."""
    return lambda bits=8: secrets.randbits(bits)


def rng_pad_source(rng) -> Callable[[int], int]:
    """Deterministic padding symbols for tests and reproducible runs."""
    return rng.getrandbits


def _digits_to_bytes(value: int, count: int, symbol_bits: int) -> bytes:
    if symbol_bits == 8:
        return value.to_bytes(count, "big")
    out = bytearray(count)
    mask = (1 << symbol_bits) - 1
    for i in range(count - 1, -1, -1):
        out[i] = value & mask
        value >>= symbol_bits
    return bytes(out)


class PathEncoder:
    """Incremental encoder: feed tokens, read back determined symbols.

    Cheap to copy, so the receiver's beam search can branch one per parse
    path.  Also accumulates the joint log-probability of the fed tokens
    (log of quantized step probabilities), which is the path score used for
    beam pruning and covertext candidate selection.
    """

    __slots__ = ("fmt", "config", "params", "seed", "low", "span", "emitted", "steps", "logprob")

    def __init__(self, fmt: ModelFormat, config: SamplingConfig, params: CoderParams):
        if config.quant_denominator > params.emit_threshold:
            raise ConfigError(
                "quant_denominator must not exceed the coder's emit threshold"
            )
        self.fmt = fmt
        self.config = config
        self.params = params
        self.seed = fmt.initial_seed[-fmt.context_len :]
        self.low = 0
        self.span = params.full_range
        self.emitted = 0
        self.steps = 0
        self.logprob = 0.0

    def copy(self) -> "PathEncoder":
        dup = object.__new__(PathEncoder)
        for name in self.__slots__:
            setattr(dup, name, getattr(self, name))
        return dup

    def feed(self, token: str):
        idx = self.fmt.token_index.get(token)
        if idx is None:
            raise TokenNotInSupport(token, self.steps)
        dist = next_distribution(self.fmt, self.config, self.seed)
        freq = dist.freq_of(idx)
        if freq == 0:
            raise TokenNotInSupport(token, self.steps)
        dq = dist.denominator
        self.logprob += math.log(freq / dq)
        if freq != dq:
            cum, freq = dist.cum_and_freq(idx)
            span = self.span
            lo_off = cum * span // dq
            self.low += lo_off
            self.span = (cum + freq) * span // dq - lo_off
            threshold = self.params.emit_threshold
            bits = self.params.symbol_bits
            while self.span <= threshold:
                self.low <<= bits
                self.span <<= bits
                self.emitted += 1
        # a full-denominator token moves no interval (zero information)
        self.seed = (self.seed + token)[-self.fmt.context_len :]
        self.steps += 1

    def _prefixes(self) -> tuple[int, int]:
        shift = self.params.symbol_bits * self.params.window_symbols
        return self.low >> shift, (self.low + self.span - 1) >> shift

    def result(self) -> EncodeResult:
        p_low, p_high = self._prefixes()
        digits = _digits_to_bytes(p_low, self.emitted, self.params.symbol_bits)
        if p_high == p_low:
            carry = 0
        else:
            # the interval admits exactly one carry into the retired symbols
            carry = 1
            top = self.params.symbol_base - 1
            value = p_low
            while value and (value & top) == top:
                carry += 1
                value >>= self.params.symbol_bits
        return EncodeResult(digits=digits, carry_window=carry)

    def determined_symbols(self) -> bytes:
        """Retired symbols that no future carry can change."""
        res = self.result()
        if res.carry_window == 0:
            return res.digits
        return res.digits[: len(res.digits) - res.carry_window]

    def prefix_candidates(self, count: int) -> set[bytes]:
        """Possible values of the first `count` retired symbols (<= 2)."""
        if self.emitted < count:
            return set()
        p_low, p_high = self._prefixes()
        drop = self.params.symbol_bits * (self.emitted - count)
        return {
            _digits_to_bytes(p_low >> drop, count, self.params.symbol_bits),
            _digits_to_bytes(p_high >> drop, count, self.params.symbol_bits),
        }


def encode(
    tokens: Sequence[str],
    fmt: ModelFormat,
    config: SamplingConfig,
    params: CoderParams = CoderParams(),
) -> EncodeResult:
    """Replay a token sequence and return the symbols it determines.

    Raises TokenNotInSupport if any token has zero probability at its step
    under the restricted sampling config; this is what makes parse paths
    falsifiable.
    """
    enc = PathEncoder(fmt, config, params)
    for token in tokens:
        enc.feed(token)
    return enc.result()


def decode(
    data: bytes,
    fmt: ModelFormat,
    config: SamplingConfig,
    params: CoderParams = CoderParams(),
    pad_source: Callable[[int], int] | None = None,
) -> DecodeResult:
    """Transform ciphertext symbols into a token sequence.

    Each input byte holds one symbol and must be < 2**symbol_bits.  Tokens
    are drawn until every input symbol has been retired; once the input is
    exhausted the interval window is fed from `pad_source` so sampling stays
    uniform to the end.
    """
    if not data:
        raise ConfigError("cannot decode an empty symbol string")
    base = params.symbol_base
    if any(b >= base for b in data):
        raise ConfigError("symbol value out of range for symbol_bits")
    if config.quant_denominator > params.emit_threshold:
        raise ConfigError("quant_denominator must not exceed the coder's emit threshold")
    if pad_source is None:
        pad_source = default_pad_source()

    bits = params.symbol_bits
    window = params.window_symbols
    full = params.full_range
    threshold = params.emit_threshold

    pads_used = 0
    position = 0
    stream_val = 0
    stream_digits: list[int] = []

    def refill():
        nonlocal pads_used, position, stream_val
        if position < len(data):
            value = data[position]
            position += 1
        else:
            pads_used += 1
            value = pad_source(bits)
        stream_digits.append(value)
        stream_val = (stream_val << bits) | value

    for _ in range(window):
        refill()

    low = 0
    span = full
    retired = 0
    seed = fmt.initial_seed[-fmt.context_len :]
    tokens: list[str] = []

    stall = 0
    while True:
        dist = next_distribution(fmt, config, seed)
        if len(dist.entries) == 1 and dist.entries[0][1] == dist.denominator:
            idx = dist.entries[0][0]
            if low % full == 0 and span == full:
                # zero-information window: pass one symbol through verbatim
                refill()
                retired += 1
                low = (stream_val >> (bits * window)) << (bits * window)
                stall = 0
            else:
                stall += 1
                if stall > _STALL_LIMIT:
                    raise DegenerateChain(
                        "distribution chain stopped carrying information"
                    )
        else:
            stall = 0
            dq = dist.denominator
            offset = stream_val - low
            value = ((offset + 1) * dq - 1) // span
            idx, cum, freq = dist.locate(value)
            lo_off = cum * span // dq
            low += lo_off
            span = (cum + freq) * span // dq - lo_off
            while span <= threshold:
                low <<= bits
                span <<= bits
                retired += 1
                refill()
        token = fmt.tokens[idx]
        tokens.append(token)
        seed = (seed + token)[-fmt.context_len :]
        if retired >= len(data):
            break

    emitted_bytes = bytes(stream_digits[:retired])
    return DecodeResult(
        tokens=tuple(tokens),
        consumed_padding_bits=pads_used * bits,
        emitted=emitted_bytes,
    )


def alternate_encoding(result: EncodeResult, symbol_bits: int = 8) -> bytes:
    """Second reading of an encode: apply the pending carry.

    Adds one to the symbol at the start of the carry window and inverts the
    bits of every symbol after it (a carry turns a trailing run of maximal
    symbols into zeros, which bitwise inversion expresses for any symbols).
    """
    window = result.carry_window
    if window <= 0:
        raise ValueError("no alternate exists when the carry window is empty")
    digits = bytearray(result.digits)
    if window > len(digits):
        raise ValueError("carry window longer than the symbol string")
    mask = (1 << symbol_bits) - 1
    digits[-window] = (digits[-window] + 1) & mask
    for i in range(len(digits) - window + 1, len(digits)):
        digits[i] ^= mask
    return bytes(digits)


def reconstruction_candidates(
    result: EncodeResult,
    params: CoderParams = CoderParams(),
    max_truncate: int | None = None,
) -> Iterator[bytes]:
    """Trial-decryption candidates in search order.

    Direct reading first, then the carry alternate, then the same pair after
    truncating one trailing symbol at a time (the carry window shrinking with
    each truncation), up to window_symbols - 1 truncations.
    """
    if max_truncate is None:
        max_truncate = params.window_symbols - 1
    for cut in range(0, max_truncate + 1):
        if cut > len(result.digits):
            return
        trimmed = EncodeResult(
            digits=result.digits[: len(result.digits) - cut] if cut else result.digits,
            carry_window=max(result.carry_window - cut, 0),
        )
        if not trimmed.digits:
            return
        yield trimmed.digits
        if trimmed.carry_window > 0 and trimmed.carry_window <= len(trimmed.digits):
            yield alternate_encoding(trimmed, params.symbol_bits)
