"""Evaluable adversaries and detection-economics arithmetic.

The strongest key-less attacker re-runs the public decoding machinery on
suspect posts: a post that cannot be parsed within the restricted sampling
support was provably not produced by the system (the decoding attack).  For
posts that do decode, the recovered bits are tested for randomness, since
genuine posts decode to authenticated ciphertext.  The remaining functions
implement a rank-based likelihood score, base-rate Bayes arithmetic, outcome
tables, user-level aggregation, and sender-side rejection filtering.
"""

from __future__ import annotations

import csv
import json
import math
import random
from dataclasses import dataclass, asdict
from typing import Callable, Iterable, Iterator, Sequence

from scipy.special import erfc, gammaincc

from .coder import CoderParams, PathEncoder
from .errors import ExhaustedRetries, TooShortInput, UntokenizableText
from .model import ModelFormat, SamplingConfig, full_rank_order, next_distribution
from .pipeline import _tokens_by_first_char, tokenize_greedy


# -- decoding attack ----------------------------------------------------------


@dataclass(frozen=True)
class AttackVerdict:
    decodable: bool
    recovered: bytes | None
    tokens: tuple[str, ...] | None


def decoding_attack(
    text: str,
    fmt: ModelFormat,
    config: SamplingConfig,
    params: CoderParams = CoderParams(),
) -> AttackVerdict:
    """Try to parse `text` entirely within the restricted sampling support.

    Depth-first over tokenizations with memoized dead states, so the verdict
    is exact: not-decodable means no parse exists.  For a decodable text the
    symbols recovered along one surviving parse are returned.
    """
    if not text or not set(text) <= fmt.alphabet:
        return AttackVerdict(decodable=False, recovered=None, tokens=None)
    by_first = _tokens_by_first_char(fmt)
    start_seed = fmt.initial_seed[-fmt.context_len :]
    dead: set[tuple[int, str]] = set()
    # iterative DFS; each frame is (pos, seed, iterator over viable tokens)
    path: list[str] = []

    def viable(pos: int, seed: str) -> Iterator[str]:
        dist = next_distribution(fmt, config, seed)
        options = [
            tok
            for tok in by_first.get(text[pos], ())
            if text.startswith(tok, pos) and dist.freq_of(fmt.token_index[tok]) > 0
        ]
        options.sort(key=lambda t: -dist.freq_of(fmt.token_index[t]))
        return iter(options)

    stack: list[tuple[int, str, Iterator[str]]] = [(0, start_seed, viable(0, start_seed))]
    while stack:
        pos, seed, options = stack[-1]
        advanced = False
        for token in options:
            new_pos = pos + len(token)
            new_seed = (seed + token)[-fmt.context_len :]
            if new_pos == len(text):
                path.append(token)
                tokens = tuple(path)
                enc = PathEncoder(fmt, config, params)
                for tok in tokens:
                    enc.feed(tok)
                return AttackVerdict(
                    decodable=True, recovered=enc.result().digits, tokens=tokens
                )
            if (new_pos, new_seed) in dead:
                continue
            path.append(token)
            stack.append((new_pos, new_seed, viable(new_pos, new_seed)))
            advanced = True
            break
        if not advanced:
            dead.add((pos, seed))
            stack.pop()
            if path:
                path.pop()
    return AttackVerdict(decodable=False, recovered=None, tokens=None)


@dataclass(frozen=True)
class SweepPoint:
    axis: str
    value: float
    decodable_fraction: float


def decodability_sweep(
    corpus: Sequence[str],
    fmt: ModelFormat,
    config: SamplingConfig,
    axis: str,
    values: Sequence[float],
    params: CoderParams = CoderParams(),
) -> list[SweepPoint]:
    """Fraction of the corpus decodable at each top-k or top-p setting."""
    if axis not in ("top_k", "top_p"):
        raise ValueError("axis must be top_k or top_p")
    if not corpus:
        raise ValueError("corpus is empty")
    points = []
    for value in values:
        if axis == "top_k":
            variant = config.restricted(top_k=int(value))
        else:
            variant = config.restricted(top_p=float(value))
        hits = sum(
            decoding_attack(text, fmt, variant, params).decodable for text in corpus
        )
        points.append(SweepPoint(axis=axis, value=value, decodable_fraction=hits / len(corpus)))
    return points


def recovered_bit_corpus(
    texts: Iterable[str],
    fmt: ModelFormat,
    config: SamplingConfig,
    params: CoderParams = CoderParams(),
) -> bytes:
    """Concatenated symbols recovered by decoding each decodable text."""
    out = bytearray()
    for text in texts:
        verdict = decoding_attack(text, fmt, config, params)
        if verdict.decodable and verdict.recovered:
            out += verdict.recovered
    return bytes(out)


# -- randomness of recovered bits --------------------------------------------


def bit_entropy(data: bytes) -> float:
    """Shannon entropy of the byte histogram, normalized to [0, 1]."""
    if not data:
        raise TooShortInput("entropy of an empty string is undefined")
    counts: dict[int, int] = {}
    for b in data:
        counts[b] = counts.get(b, 0) + 1
    n = len(data)
    h = -sum((c / n) * math.log2(c / n) for c in counts.values())
    return h / 8.0


def _bits(data: bytes) -> list[int]:
    out = []
    for byte in data:
        for i in range(7, -1, -1):
            out.append((byte >> i) & 1)
    return out


@dataclass(frozen=True)
class RandomnessResult:
    name: str
    p_value: float
    passed: bool


def randomness_battery(data: bytes, alpha: float = 0.01) -> list[RandomnessResult]:
    """Reduced pseudorandomness battery over the bits of `data`.

    Four tests: monobit frequency, runs, longest run of ones (8-bit blocks),
    and the two-bit serial test.  Needs at least 400 bits.
    """
    bits = _bits(data)
    n = len(bits)
    if n < 400:
        raise TooShortInput(f"need at least 400 bits, got {n}")
    results = []

    ones = sum(bits)
    s_obs = abs(2 * ones - n) / math.sqrt(n)
    results.append(_result("monobit", erfc(s_obs / math.sqrt(2)), alpha))

    pi = ones / n
    if abs(pi - 0.5) >= 2 / math.sqrt(n):
        results.append(_result("runs", 0.0, alpha))
    else:
        v_obs = 1 + sum(bits[i] != bits[i + 1] for i in range(n - 1))
        num = abs(v_obs - 2 * n * pi * (1 - pi))
        den = 2 * math.sqrt(2 * n) * pi * (1 - pi)
        results.append(_result("runs", erfc(num / den), alpha))

    results.append(_result("longest-run", _longest_run_p(bits), alpha))
    results.append(_result("serial", _serial_p(bits), alpha))
    return results


def _result(name: str, p: float, alpha: float) -> RandomnessResult:
    return RandomnessResult(name=name, p_value=float(p), passed=p >= alpha)


def _longest_run_p(bits: list[int]) -> float:
    # 8-bit block variant: categories for the longest 1-run are <=1,2,3,>=4
    m = 8
    probs = (0.2148, 0.3672, 0.2305, 0.1875)
    blocks = len(bits) // m
    counts = [0, 0, 0, 0]
    for i in range(blocks):
        block = bits[i * m : (i + 1) * m]
        longest = run = 0
        for b in block:
            run = run + 1 if b else 0
            longest = max(longest, run)
        counts[min(max(longest, 1), 4) - 1] += 1
    chi2 = sum(
        (counts[i] - blocks * probs[i]) ** 2 / (blocks * probs[i]) for i in range(4)
    )
    return float(gammaincc(3 / 2, chi2 / 2))


def _psi_squared(bits: list[int], m: int) -> float:
    if m == 0:
        return 0.0
    n = len(bits)
    counts: dict[tuple[int, ...], int] = {}
    extended = bits + bits[: m - 1]
    for i in range(n):
        pattern = tuple(extended[i : i + m])
        counts[pattern] = counts.get(pattern, 0) + 1
    return (2**m / n) * sum(c * c for c in counts.values()) - n


def _serial_p(bits: list[int]) -> float:
    psi2 = _psi_squared(bits, 2)
    psi1 = _psi_squared(bits, 1)
    delta = psi2 - psi1
    return float(gammaincc(1.0, delta / 2))


# -- rank-based likelihood detector -------------------------------------------


def rank_detector(text: str, fmt: ModelFormat, config: SamplingConfig) -> float:
    """Mean rank of each greedy-parse token within its step's distribution.

    Rank 1 is the model's most likely token; higher mean rank means less
    model-like text.  Ranks are taken over the unrestricted distribution so
    the score is defined even for tokens a top-k/top-p sender would never
    emit.
    """
    tokens = tokenize_greedy(text, fmt)
    if not tokens:
        raise UntokenizableText(text, 0)
    seed = fmt.initial_seed[-fmt.context_len :]
    total = 0
    for token in tokens:
        ranks = full_rank_order(fmt, config, seed)
        total += ranks[fmt.token_index[token]]
        seed = (seed + token)[-fmt.context_len :]
    return total / len(tokens)


# -- detection economics -------------------------------------------------------


def bayes_posterior(base_rate: float, tpr: float, fpr: float) -> float:
    """P(actually covert | flagged) for a detector at the given rates."""
    for name, value in (("base_rate", base_rate), ("tpr", tpr), ("fpr", fpr)):
        if not 0 <= value <= 1:
            raise ValueError(f"{name} must be in [0, 1]")
    numerator = tpr * base_rate
    denominator = tpr * base_rate + fpr * (1 - base_rate)
    if denominator == 0:
        return 0.0
    return numerator / denominator


def _round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


@dataclass(frozen=True)
class DetectionOutcome:
    population: int
    base_rate: float
    tpr: float
    fpr: float
    actual_positives: int
    true_flags: int
    false_alarms: int
    flagged: int
    missed: int
    posterior: float


def outcome_table(population: int, base_rate: float, tpr: float, fpr: float) -> DetectionOutcome:
    """Expected integer outcomes of monitoring `population` messages.

    Counts round half-up so the table is exact at the stated rates.
    """
    if population < 1:
        raise ValueError("population must be >= 1")
    actual = _round_half_up(base_rate * population)
    true_flags = _round_half_up(tpr * actual)
    false_alarms = _round_half_up(fpr * (population - actual))
    return DetectionOutcome(
        population=population,
        base_rate=base_rate,
        tpr=tpr,
        fpr=fpr,
        actual_positives=actual,
        true_flags=true_flags,
        false_alarms=false_alarms,
        flagged=true_flags + false_alarms,
        missed=actual - true_flags,
        posterior=bayes_posterior(base_rate, tpr, fpr),
    )


# -- user-level detection ------------------------------------------------------


@dataclass(frozen=True)
class UserSimConfig:
    users: int = 10_000
    covert_user_fraction: float = 0.01
    posts_per_user: int = 100
    per_user_base_rate: float = 0.1
    top_fraction: float = 0.1  # q: share of per-message scores averaged

    def __post_init__(self):
        if self.users < 1 or self.posts_per_user < 1:
            raise ValueError("counts must be >= 1")
        if not 0 < self.top_fraction <= 1:
            raise ValueError("top_fraction must be in (0, 1]")


@dataclass(frozen=True)
class UserSimResult:
    true_positives: int
    false_positives: int
    true_negatives: int
    false_negatives: int

    @property
    def precision(self) -> float:
        flagged = self.true_positives + self.false_positives
        return self.true_positives / flagged if flagged else 0.0


def aggregate_top_fraction(scores: Sequence[float], q: float) -> float:
    """Mean of the top-q share of scores (at least one)."""
    k = max(1, math.ceil(q * len(scores)))
    return sum(sorted(scores, reverse=True)[:k]) / k


def empirical_score_source(
    covert_scores: Sequence[float], normal_scores: Sequence[float]
) -> Callable[[random.Random, bool], float]:
    """Score source that resamples observed detector scores, letting large
    user populations be simulated without re-scoring millions of texts."""
    covert = list(covert_scores)
    normal = list(normal_scores)
    if not covert or not normal:
        raise ValueError("both score populations are required")

    def source(rng: random.Random, is_covert: bool) -> float:
        pool = covert if is_covert else normal
        return pool[rng.randrange(len(pool))]

    return source


def user_detection_sim(
    cfg: UserSimConfig,
    score_source: Callable[[random.Random, bool], float],
    threshold: float,
    rng_seed: int = 0,
) -> UserSimResult:
    """Flag users whose aggregated per-message scores clear the threshold.

    `score_source(rng, is_covert)` supplies one detector confidence per
    message; a user is covert when any of their posts are.
    """
    rng = random.Random(rng_seed)
    covert_users = _round_half_up(cfg.users * cfg.covert_user_fraction)
    covert_posts = _round_half_up(cfg.posts_per_user * cfg.per_user_base_rate)
    tp = fp = tn = fn = 0
    for u in range(cfg.users):
        is_covert_user = u < covert_users
        scores = []
        for p in range(cfg.posts_per_user):
            covert_post = is_covert_user and p < covert_posts
            scores.append(score_source(rng, covert_post))
        flagged = aggregate_top_fraction(scores, cfg.top_fraction) >= threshold
        if is_covert_user:
            tp += flagged
            fn += not flagged
        else:
            fp += flagged
            tn += not flagged
    return UserSimResult(
        true_positives=tp, false_positives=fp, true_negatives=tn, false_negatives=fn
    )


# -- sender-side rejection filtering ------------------------------------------


@dataclass(frozen=True)
class FilterOutcome:
    accepted: object
    attempts: int
    discarded: int


def score_quantile(calibration_scores: Sequence[float], keep_fraction: float) -> float:
    """Score below which `keep_fraction` of the calibration mass lies."""
    ordered = sorted(calibration_scores)
    k = min(len(ordered) - 1, max(0, int(keep_fraction * len(ordered))))
    return ordered[k]


def sender_filter(
    candidates: Iterator[object],
    detector: Callable[[object], float],
    reject_fraction: float,
    calibration_scores: Sequence[float],
    max_attempts: int = 100,
) -> FilterOutcome:
    """Draw fresh covertexts until one scores outside the detector's top
    `reject_fraction`; the acceptance threshold is calibrated on observed
    scores of genuine covertexts."""
    if not 0 <= reject_fraction < 1:
        raise ValueError("reject_fraction must be in [0, 1)")
    if reject_fraction == 0:
        candidate = next(candidates)
        return FilterOutcome(accepted=candidate, attempts=1, discarded=0)
    if not calibration_scores:
        raise ValueError("calibration corpus required when reject_fraction > 0")
    threshold = score_quantile(calibration_scores, 1 - reject_fraction)
    attempts = 0
    for candidate in candidates:
        attempts += 1
        if detector(candidate) < threshold:
            return FilterOutcome(accepted=candidate, attempts=attempts, discarded=attempts - 1)
        if attempts >= max_attempts:
            break
    raise ExhaustedRetries(f"no candidate passed the filter in {attempts} attempts")


# -- report files --------------------------------------------------------------


def write_sweep_csv(points: Sequence[SweepPoint], path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["axis", "value", "decodable_fraction"])
        for p in points:
            writer.writerow([p.axis, p.value, f"{p.decodable_fraction:.6f}"])


def write_outcome_csv(outcomes: Sequence[DetectionOutcome], path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "population",
                "base_rate",
                "tpr",
                "fpr",
                "actual_positives",
                "flagged",
                "false_alarms",
                "missed",
                "true_flags",
                "posterior",
            ]
        )
        for o in outcomes:
            writer.writerow(
                [
                    o.population,
                    o.base_rate,
                    o.tpr,
                    o.fpr,
                    o.actual_positives,
                    o.flagged,
                    o.false_alarms,
                    o.missed,
                    o.true_flags,
                    f"{o.posterior:.6f}",
                ]
            )


def write_json_summary(payload: dict, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def _jsonable(obj):
    if hasattr(obj, "__dataclass_fields__"):
        return asdict(obj)
    raise TypeError(f"not JSON serializable: {type(obj)!r}")
