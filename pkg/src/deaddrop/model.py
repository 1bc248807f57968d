"""Seed-indexed token distributions and their integer quantization.

A format is a token set plus a deterministic rule mapping a seed string to a
distribution over the tokens.  Everything downstream (the range coder, the
parser, the adversary harness) consumes only the quantized integer form, so
both endpoints of a conversation derive bit-identical tables from the same
inputs.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
import subprocess
import threading
from bisect import bisect_right
from dataclasses import dataclass, field
from functools import lru_cache, cached_property
from typing import Sequence

from .errors import ConfigError, ProviderError

# 40-token table over lowercase ASCII plus space.  Deliberately not
# prefix-free: the "t"/"th"/"the"/"these" family forces ambiguous parses,
# which is the case the receiver-side beam search exists for.  The remaining
# multi-character tokens are chosen not to chain with each other (no token
# starts where another ends), keeping the parse lattice bounded.
DEFAULT_TOKENS: tuple[str, ...] = tuple("abcdefghijklmnopqrstuvwxyz") + (
    " ",
    "th",
    "the",
    "these",
    "qu",
    "iz",
    "ox",
    "by",
    "ck",
    "mp",
    "lf",
    "dg",
    "jw",
    "nv",
)

_WEIGHT_MOD = 255


def toy_logits(seed: str, tokens: Sequence[str]) -> tuple[float, ...]:
    """Deterministic stand-in for a language model.

    logit = ln(1 + (first-4-bytes-BE of SHA-256(seed || 0x00 || token) mod 255)).
    A pure function of (seed, token); the softmax of logit/t is then
    proportional to weight**(1/t), which gives usefully uneven distributions
    at every temperature.
    """
    out = []
    prefix = seed.encode("utf-8") + b"\x00"
    for tok in tokens:
        digest = hashlib.sha256(prefix + tok.encode("utf-8")).digest()
        weight = 1 + (int.from_bytes(digest[:4], "big") % _WEIGHT_MOD)
        out.append(math.log(weight))
    return tuple(out)


@dataclass(frozen=True)
class ToyHashProvider:
    """Hash-weight logits; fully reproducible and key-free."""

    def logits(self, seed: str, tokens: tuple[str, ...]) -> tuple[float, ...]:
        return toy_logits(seed, tokens)


@dataclass(frozen=True)
class FixedContextProvider:
    """Ignores the seed; every step presents the same distribution.

    Used for sampling-fidelity measurements where a stationary distribution
    is required.
    """

    context: str = ""

    def logits(self, seed: str, tokens: tuple[str, ...]) -> tuple[float, ...]:
        return toy_logits(self.context, tokens)


class AdapterProvider:
    """Client for an external model server speaking JSON lines over stdio.

    The adapter sends logits as integer micro-nats so that all floating point
    introduced by the model stays on the adapter side of the boundary; this
    side only divides by 10**6 and proceeds exactly as for the built-in
    provider.  Requests are serialized over the single pipe; open one adapter
    per thread if parallelism is needed.
    """

    PROTOCOL_VERSION = 1

    def __init__(self, command: Sequence[str]):
        self._proc = subprocess.Popen(
            list(command),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )
        self._lock = threading.Lock()
        hello = self._request({"op": "hello", "protocol_version": self.PROTOCOL_VERSION})
        self.tokens: tuple[str, ...] = tuple(hello["tokens"])
        self.fingerprint: str = hello["fingerprint"]
        if not self.tokens:
            raise ProviderError("adapter announced an empty token set")

    def _request(self, payload: dict) -> dict:
        with self._lock:
            if self._proc.poll() is not None:
                raise ProviderError("adapter process exited")
            self._proc.stdin.write(json.dumps(payload) + "\n")
            self._proc.stdin.flush()
            line = self._proc.stdout.readline()
        if not line:
            raise ProviderError("adapter closed its stdout")
        try:
            resp = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProviderError(f"adapter sent invalid JSON: {line!r}") from exc
        if not resp.get("ok", False):
            raise ProviderError(f"adapter error: {resp.get('error', 'unknown')}")
        return resp

    def logits(self, seed: str, tokens: tuple[str, ...]) -> tuple[float, ...]:
        resp = self._request({"op": "logits", "seed": seed})
        micro = resp["logits_micro_nats"]
        if len(micro) != len(tokens):
            raise ProviderError(
                f"adapter returned {len(micro)} logits for {len(tokens)} tokens"
            )
        return tuple(v / 1e6 for v in micro)

    def native_tokenize(self, text: str) -> list[str]:
        return list(self._request({"op": "tokens", "text": text})["tokens"])

    def close(self):
        if self._proc.poll() is None:
            self._proc.stdin.close()
            self._proc.wait(timeout=10)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


@dataclass(frozen=True)
class ModelFormat:
    """Token set, seed transition, and distribution source.

    Any concatenation of tokens must be re-tokenizable, which is guaranteed
    by requiring every character of every multi-character token to also be a
    token on its own.
    """

    tokens: tuple[str, ...] = DEFAULT_TOKENS
    context_len: int = 8
    initial_seed: str = ""
    provider: object = field(default_factory=ToyHashProvider)

    def __post_init__(self):
        if not self.tokens:
            raise ConfigError("token set is empty")
        if len(set(self.tokens)) != len(self.tokens):
            raise ConfigError("token set contains duplicates")
        if any(tok == "" for tok in self.tokens):
            raise ConfigError("token set contains an empty token")
        if self.context_len < 1:
            raise ConfigError("context_len must be positive")
        singles = {tok for tok in self.tokens if len(tok) == 1}
        for tok in self.tokens:
            missing = set(tok) - singles
            if missing:
                raise ConfigError(
                    f"characters {sorted(missing)} of token {tok!r} have no "
                    "single-character token"
                )

    @cached_property
    def token_index(self) -> dict[str, int]:
        return {tok: i for i, tok in enumerate(self.tokens)}

    @cached_property
    def alphabet(self) -> frozenset[str]:
        return frozenset(c for tok in self.tokens for c in tok)

    @cached_property
    def max_token_len(self) -> int:
        return max(len(tok) for tok in self.tokens)


@dataclass(frozen=True)
class SamplingConfig:
    """Temperature / top-k / top-p restriction plus the quantization grain."""

    temperature: float = 1.0
    top_k: int = len(DEFAULT_TOKENS)
    top_p: float = 1.0
    quant_denominator: int = 1 << 16

    def __post_init__(self):
        if not self.temperature > 0:
            raise ConfigError("temperature must be > 0")
        if self.top_k < 1:
            raise ConfigError("top_k must be >= 1")
        if not 0 < self.top_p <= 1:
            raise ConfigError("top_p must be in (0, 1]")
        dq = self.quant_denominator
        if dq < 1 or dq & (dq - 1):
            raise ConfigError("quant_denominator must be a power of two")

    def restricted(self, **changes) -> "SamplingConfig":
        merged = {
            "temperature": self.temperature,
            "top_k": self.top_k,
            "top_p": self.top_p,
            "quant_denominator": self.quant_denominator,
        }
        merged.update(changes)
        return SamplingConfig(**merged)


@dataclass(frozen=True)
class QuantizedDistribution:
    """Integer token frequencies summing exactly to the denominator.

    Entries are held in canonical order (frequency descending, token index
    ascending); `cumulative[i]` is the sum of frequencies before entry i.
    The coder's symbol lookup and the parser's ranking both rely on this
    order being fixed.
    """

    entries: tuple[tuple[int, int], ...]
    denominator: int
    cumulative: tuple[int, ...]

    def __post_init__(self):
        if sum(f for _, f in self.entries) != self.denominator:
            raise ConfigError("frequencies do not sum to the denominator")
        if any(f < 1 for _, f in self.entries):
            raise ConfigError("zero frequency in quantized distribution")
        running = 0
        for (_, f), c in zip(self.entries, self.cumulative):
            if c != running:
                raise ConfigError("cumulative table inconsistent")
            running += f

    @classmethod
    def from_frequencies(cls, freqs: Sequence[tuple[int, int]], denominator: int):
        entries = tuple(sorted(freqs, key=lambda e: (-e[1], e[0])))
        cumulative = []
        running = 0
        for _, f in entries:
            cumulative.append(running)
            running += f
        return cls(entries=entries, denominator=denominator, cumulative=tuple(cumulative))

    @cached_property
    def _position(self) -> dict[int, int]:
        return {idx: pos for pos, (idx, _) in enumerate(self.entries)}

    @property
    def support(self) -> frozenset[int]:
        return frozenset(self._position)

    def freq_of(self, token_index: int) -> int:
        pos = self._position.get(token_index)
        return 0 if pos is None else self.entries[pos][1]

    def cum_and_freq(self, token_index: int) -> tuple[int, int]:
        pos = self._position[token_index]
        return self.cumulative[pos], self.entries[pos][1]

    def rank_of(self, token_index: int) -> int:
        """1-based position in canonical order."""
        return self._position[token_index] + 1

    def locate(self, value: int) -> tuple[int, int, int]:
        """Return (token_index, cum, freq) of the entry whose cumulative
        interval [cum, cum+freq) contains `value`."""
        pos = bisect_right(self.cumulative, value) - 1
        idx, f = self.entries[pos]
        return idx, self.cumulative[pos], f

    def serialize(self) -> bytes:
        head = struct.pack(">QI", self.denominator, len(self.entries))
        body = b"".join(struct.pack(">II", idx, f) for idx, f in self.entries)
        return head + body


def softmax(logits: Sequence[float], temperature: float) -> list[float]:
    peak = max(logits)
    exps = [math.exp((z - peak) / temperature) for z in logits]
    total = math.fsum(exps)
    return [e / total for e in exps]


def _largest_remainder(probs: list[tuple[int, float]], dq: int) -> list[tuple[int, int]]:
    # probs: (token_index, probability) with probabilities summing to ~1.
    raw = [(idx, p * dq) for idx, p in probs]
    freqs = {idx: int(r) for idx, r in raw}
    shortfall = dq - sum(freqs.values())
    if shortfall > 0:
        by_remainder = sorted(raw, key=lambda t: (-(t[1] - int(t[1])), t[0]))
        for idx, _ in by_remainder[:shortfall]:
            freqs[idx] += 1
        shortfall = 0
    # every survivor keeps at least one slot; make up the difference from the
    # largest entries so the total stays exact
    deficit = -shortfall
    for idx in freqs:
        if freqs[idx] == 0:
            freqs[idx] = 1
            deficit += 1
    if deficit:
        for idx, _ in sorted(freqs.items(), key=lambda kv: (-kv[1], kv[0])):
            while deficit and freqs[idx] > 1:
                freqs[idx] -= 1
                deficit -= 1
            if not deficit:
                break
    return list(freqs.items())


def next_distribution(
    fmt: ModelFormat, config: SamplingConfig, seed: str
) -> QuantizedDistribution:
    """Quantized next-token distribution for a seed.

    Pipeline: raw logits -> temperature softmax -> top-k -> top-p ->
    renormalize -> largest-remainder quantization with a floor of one slot
    per survivor.  Pure in (provider, config, seed); results are cached.
    """
    return _next_distribution_cached(fmt, config, seed[-fmt.context_len :])


@lru_cache(maxsize=1 << 18)
def _next_distribution_cached(
    fmt: ModelFormat, config: SamplingConfig, seed: str
) -> QuantizedDistribution:
    dq = config.quant_denominator
    if dq < len(fmt.tokens):
        raise ConfigError("quant_denominator smaller than the token set")
    logits = fmt.provider.logits(seed, fmt.tokens)
    if len(logits) != len(fmt.tokens):
        raise ProviderError("provider returned a logit vector of the wrong length")
    probs = softmax(logits, config.temperature)
    order = sorted(range(len(probs)), key=lambda i: (-probs[i], i))
    order = order[: config.top_k]
    if config.top_p < 1.0:
        kept, mass = [], 0.0
        for i in order:
            kept.append(i)
            mass += probs[i]
            if mass >= config.top_p:
                break
        order = kept
    mass = math.fsum(probs[i] for i in order)
    renormalized = [(i, probs[i] / mass) for i in order]
    freqs = _largest_remainder(renormalized, dq)
    return QuantizedDistribution.from_frequencies(freqs, dq)


def full_rank_order(fmt: ModelFormat, config: SamplingConfig, seed: str) -> dict[int, int]:
    """1-based rank of every token by unrestricted model probability.

    Ranks ignore top-k/top-p (a pruned token still has a rank) and are
    invariant to temperature; ties break by token index.
    """
    logits = fmt.provider.logits(seed[-fmt.context_len :], fmt.tokens)
    order = sorted(range(len(logits)), key=lambda i: (-logits[i], i))
    return {idx: pos + 1 for pos, idx in enumerate(order)}


def next_seed(fmt: ModelFormat, seed: str, token: str) -> str:
    """Seed transition: the trailing context_len characters of seed||token."""
    if token not in fmt.token_index:
        raise ConfigError(f"token {token!r} not in the token set")
    return (seed + token)[-fmt.context_len :]


def sample_index(dist: QuantizedDistribution, rng) -> int:
    """Draw a token index from the quantized distribution with an RNG."""
    idx, _, _ = dist.locate(rng.randrange(dist.denominator))
    return idx


def load_token_table(path) -> tuple[str, ...]:
    """One token per line; the line number is the token index."""
    with open(path, encoding="utf-8") as fh:
        tokens = [line.rstrip("\n") for line in fh]
    while tokens and tokens[-1] == "":
        tokens.pop()
    return tuple(tokens)


def save_token_table(path, tokens: Sequence[str]):
    with open(path, "w", encoding="utf-8") as fh:
        for tok in tokens:
            fh.write(tok + "\n")
