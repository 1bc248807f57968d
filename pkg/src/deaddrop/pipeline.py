"""Sender and receiver flows over the coder and the record layer.

Sending: seal the message once per candidate tweak, transform each record
into tokens, keep the best-scoring covertext, append overt signals.  When the
covertext cannot fit the platform limit the message is fragmented and each
fragment becomes its own post.

Receiving: strip signals, parse the text back into tokens (greedy first,
then progressively wider beams over the non-unique tokenizations), check
candidate sentinels cheaply, peek the message length blockwise to trim coder
padding, and trial-open until a tag verifies.
"""

from __future__ import annotations

import hashlib
import math
import random
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

from . import record as rec
from .coder import CoderParams, PathEncoder, alternate_encoding, decode
from .errors import (
    ConfigError,
    MessageTooLong,
    ReceiveFailure,
    TokenNotInSupport,
    UntokenizableText,
)
from .model import ModelFormat, SamplingConfig, next_distribution

DEFAULT_PLATFORM_LIMIT = 500

# Senders fragment not only at the platform limit but whenever a covertext
# outgrows the receiver's reliably-parseable length: parse ambiguity compounds
# per character, so short posts are what keeps the beam ladder total.  Both
# bounds are calibrated for the built-in model (49-byte records measured a
# 100% ladder recovery rate over 2500 single-post trials).
COVERTEXT_CHAR_BUDGET = 160
MAX_FRAGMENT_RECORD_BYTES = 49


@dataclass(frozen=True)
class ReceiverSchedule:
    """Beam widths tried in order after the greedy parse fails."""

    widths: tuple[int, ...] = (5, 10, 40)

    def __post_init__(self):
        if not self.widths or any(w < 1 for w in self.widths):
            raise ConfigError("schedule widths must be >= 1")
        if list(self.widths) != sorted(set(self.widths)):
            raise ConfigError("schedule widths must be strictly increasing")


# The built-in hash model is far more ambiguous per character than a real
# language model (its alternatives have comparable probability), so total
# recovery needs a wider final rung than the stock (5, 10, 40).
TOY_SCHEDULE = ReceiverSchedule((5, 10, 40, 300, 4000))


@dataclass(frozen=True)
class CovertextPost:
    text: str
    signals: tuple[str, ...] = ()


@dataclass
class ParsePath:
    """One candidate tokenization with its attached encoder state."""

    tokens: tuple[str, ...]
    encoder: PathEncoder
    pos: int
    alive: bool = True
    dead_reason: str | None = None

    @property
    def joint_logprob(self) -> float:
        return self.encoder.logprob

    @property
    def recovered_prefix(self) -> bytes:
        return self.encoder.determined_symbols()

    def sort_key(self):
        return (-self.encoder.logprob, self.tokens)


@dataclass(frozen=True)
class SendResult:
    posts: tuple[CovertextPost, ...]
    counter: int
    tweak: int

    @property
    def fragment_count(self) -> int:
        return len(self.posts)


@dataclass(frozen=True)
class SvMatch:
    counter: int
    tweak: int
    fragment_index: int | None


@dataclass
class SvCheckResult:
    accepted: bool
    survivors: list[ParsePath]
    matches: list[SvMatch]
    paths_checked: int = 0


# -- tokenization -----------------------------------------------------------


def tokenize_greedy(text: str, fmt: ModelFormat) -> list[str]:
    """Left-to-right longest-match tokenization; stands in for a model's
    native tokenizer."""
    out = []
    pos = 0
    by_first = _tokens_by_first_char(fmt)
    while pos < len(text):
        choices = by_first.get(text[pos])
        token = None
        if choices:
            for cand in choices:  # sorted longest first
                if text.startswith(cand, pos):
                    token = cand
                    break
        if token is None:
            raise UntokenizableText(text, pos)
        out.append(token)
        pos += len(token)
    return out


_BY_FIRST_CACHE: dict[tuple[str, ...], dict[str, list[str]]] = {}


def _tokens_by_first_char(fmt: ModelFormat) -> dict[str, list[str]]:
    table = _BY_FIRST_CACHE.get(fmt.tokens)
    if table is None:
        table = {}
        for tok in fmt.tokens:
            table.setdefault(tok[0], []).append(tok)
        for toks in table.values():
            toks.sort(key=len, reverse=True)
        _BY_FIRST_CACHE[fmt.tokens] = table
    return table


def strip_signals(text: str, signals: Sequence[str]) -> str:
    """Remove the declared trailing signals (exact strings only)."""
    changed = True
    while changed:
        changed = False
        for sig in signals:
            suffix = " " + sig
            if text.endswith(suffix):
                text = text[: -len(suffix)]
                changed = True
    return text


def attach_signals(cover: str, signals: Sequence[str]) -> str:
    return cover + "".join(" " + sig for sig in signals)


# -- sender -----------------------------------------------------------------


def record_pad_source(wire: bytes) -> Callable[[int], int]:
    """Padding symbols derived from the record itself.

    Keeps covertext deterministic in (message, keys, counter, tweak) without
    giving padding structure to anyone who cannot already compute the record.
    """
    digest = hashlib.sha512(b"pad" + wire).digest()
    return random.Random(int.from_bytes(digest[:8], "big")).getrandbits


def sequence_logprob(tokens: Iterable[str], fmt: ModelFormat, config: SamplingConfig) -> float:
    total = 0.0
    seed = fmt.initial_seed[-fmt.context_len :]
    for token in tokens:
        dist = next_distribution(fmt, config, seed)
        freq = dist.freq_of(fmt.token_index[token])
        if freq == 0:
            return float("-inf")
        total += math.log(freq / dist.denominator)
        seed = (seed + token)[-fmt.context_len :]
    return total


def mean_token_logprob(tokens: Sequence[str], fmt: ModelFormat, config: SamplingConfig) -> float:
    if not tokens:
        return float("-inf")
    return sequence_logprob(tokens, fmt, config) / len(tokens)


def covertext_for_record(
    wire: bytes,
    fmt: ModelFormat,
    config: SamplingConfig,
    params: CoderParams,
    pad_source: Callable[[int], int] | None = None,
) -> tuple[str, tuple[str, ...]]:
    if pad_source is None:
        pad_source = record_pad_source(wire)
    result = decode(wire, fmt, config, params, pad_source=pad_source)
    return "".join(result.tokens), result.tokens


def send(
    message: bytes,
    keys: rec.KeyBundle,
    fmt: ModelFormat,
    config: SamplingConfig,
    params: CoderParams = CoderParams(),
    signals: Sequence[str] = (),
    num_tweak_candidates: int = 1,
    platform_limit: int = DEFAULT_PLATFORM_LIMIT,
    score: Callable[[str, Sequence[str]], float] | None = None,
    advance_counter: bool = True,
    covertext_char_budget: int = COVERTEXT_CHAR_BUDGET,
) -> SendResult:
    """Produce the covertext post(s) for a message.

    One record per candidate tweak is sealed and decoded; the candidate with
    the best score (default: mean per-token log-probability) wins.  Signals
    are appended overtly.  Fragmentation kicks in automatically when the
    single-record covertext would exceed the platform limit or the
    receiver-side parse budget.
    """
    if num_tweak_candidates < 1 or num_tweak_candidates > keys.tweak_range:
        raise ConfigError("num_tweak_candidates must be in [1, tweak_range]")
    if score is None:
        score = lambda text, tokens: mean_token_logprob(tokens, fmt, config)
    counter = keys.counter + 1
    iv_base = rec.derive_iv(keys, counter)
    budget = platform_limit - len(attach_signals("", signals).encode("utf-8"))
    if budget < 1:
        raise ConfigError("signals alone exceed the platform limit")
    budget = min(budget, covertext_char_budget)

    best: tuple[float, int, tuple[str, ...]] | None = None  # (score, tweak, texts)
    for tweak in range(num_tweak_candidates):
        iv = rec.InitialValue(iv=iv_base, tweak=tweak)
        texts, all_tokens = _covertexts_for_message(
            message, keys, iv, fmt, config, params, budget
        )
        candidate_score = score(" ".join(texts), all_tokens)
        key = (candidate_score, -tweak)
        if best is None or key > (best[0], -best[1]):
            best = (candidate_score, tweak, tuple(texts))
    assert best is not None
    _, tweak, texts = best
    posts = tuple(
        CovertextPost(text=attach_signals(t, signals), signals=tuple(signals))
        for t in texts
    )
    if advance_counter:
        keys.advance()
    return SendResult(posts=posts, counter=counter, tweak=tweak)


def _covertexts_for_message(
    message: bytes,
    keys: rec.KeyBundle,
    iv: rec.InitialValue,
    fmt: ModelFormat,
    config: SamplingConfig,
    params: CoderParams,
    char_budget: int,
) -> tuple[list[str], tuple[str, ...]]:
    wire = rec.seal(message, keys, iv).wire
    text, tokens = covertext_for_record(wire, fmt, config, params)
    if len(text.encode("utf-8")) <= char_budget:
        return [text], tokens

    # too long for one post: fragment, sizing records against the observed
    # expansion (and the receiver's parse budget) and backing off if a
    # fragment still overflows
    chars_per_record_byte = max(len(text) / len(wire), 0.1)
    budget_bits = min(
        int(char_budget / chars_per_record_byte * 0.9) * 8,
        MAX_FRAGMENT_RECORD_BYTES * 8,
    )
    for _ in range(12):
        if budget_bits < 8 * (rec.SV_LEN + rec.CONTROL_LEN + 1):
            break
        fragments = rec.build_fragments(message, keys, iv, budget_bits)
        texts, joined = [], []
        fits = True
        for frag_wire in fragments.wire_records():
            frag_text, frag_tokens = covertext_for_record(frag_wire, fmt, config, params)
            if len(frag_text.encode("utf-8")) > char_budget:
                fits = False
                break
            texts.append(frag_text)
            joined.extend(frag_tokens)
        if fits:
            return texts, tuple(joined)
        budget_bits = int(budget_bits * 0.8)
    raise MessageTooLong("could not fit the message within the platform limit")


# -- beam parsing -----------------------------------------------------------


def beam_parse(
    text: str,
    fmt: ModelFormat,
    config: SamplingConfig,
    params: CoderParams,
    width: int,
    stop: Callable[[ParsePath], bool] | None = None,
    max_positions: int | None = None,
    path_filter: Callable[[ParsePath], bool] | None = None,
) -> tuple[list[ParsePath], list[ParsePath]]:
    """Top-N lattice search over tokenizations of `text`.

    Paths are pruned per text position (only same-position paths compete),
    so a path survives as long as its joint probability ranks within the
    width among parses of the same prefix.  `path_filter` can veto a child
    outright (the receiver uses it to discard paths whose early symbols
    cannot match any expected sentinel).  Returns (finished, leftover):
    paths that consumed the whole text or met `stop`, and live paths parked
    when `max_positions` ran out.  Paths whose next token falls outside the
    sampling support die immediately.
    """
    if not text:
        return [], []
    by_first = _tokens_by_first_char(fmt)
    root = ParsePath(tokens=(), encoder=PathEncoder(fmt, config, params), pos=0)
    at: dict[int, list[ParsePath]] = {0: [root]}
    finished: list[ParsePath] = []
    leftover: list[ParsePath] = []
    horizon = len(text) if max_positions is None else min(len(text), max_positions)
    for pos in range(horizon):
        paths = at.pop(pos, None)
        if not paths:
            continue
        paths.sort(key=ParsePath.sort_key)
        # identical (seed, coder state) means identical digits and identical
        # futures; keeping only the best-scoring representative is lossless
        seen: set[tuple] = set()
        pruned = []
        for path in paths:
            state = (path.encoder.seed, path.encoder.low, path.encoder.span, path.encoder.emitted)
            if state in seen:
                continue
            seen.add(state)
            pruned.append(path)
            if len(pruned) >= width:
                break
        for path in pruned:
            matched = False
            for token in by_first.get(text[pos], ()):
                if not text.startswith(token, pos):
                    continue
                enc = path.encoder.copy()
                try:
                    enc.feed(token)
                except TokenNotInSupport:
                    continue
                matched = True
                child = ParsePath(
                    tokens=path.tokens + (token,), encoder=enc, pos=pos + len(token)
                )
                if path_filter is not None and not path_filter(child):
                    continue
                if stop is not None and stop(child):
                    finished.append(child)
                elif child.pos >= len(text):
                    finished.append(child)
                else:
                    at.setdefault(child.pos, []).append(child)
            if not matched:
                path.alive = False
                path.dead_reason = "no token in support matches the text"
    for paths in at.values():
        leftover.extend(paths)
    leftover.sort(key=ParsePath.sort_key)
    finished.sort(key=ParsePath.sort_key)
    return finished, leftover


# -- receiver ---------------------------------------------------------------


def _candidate_ivs(
    keys: rec.KeyBundle, counter_window: int, base_counter: int | None = None
) -> list[tuple[int, rec.InitialValue]]:
    base = keys.counter if base_counter is None else base_counter
    out = []
    for counter in range(base + 1, base + 1 + counter_window):
        iv_base = rec.derive_iv(keys, counter)
        for tweak in range(keys.tweak_range):
            out.append((counter, rec.InitialValue(iv=iv_base, tweak=tweak)))
    return out


def _sv_index(
    keys: rec.KeyBundle,
    counter_window: int,
    fragment_probe: int = 0,
    base_counter: int | None = None,
) -> dict[bytes, list[tuple[int, rec.InitialValue, int | None]]]:
    index: dict[bytes, list[tuple[int, rec.InitialValue, int | None]]] = {}
    for counter, iv in _candidate_ivs(keys, counter_window, base_counter):
        index.setdefault(rec.sentinel_value(keys, iv), []).append((counter, iv, None))
        for frag in range(fragment_probe):
            sv = rec.sentinel_value(keys, iv, fragment_index=frag)
            index.setdefault(sv, []).append((counter, iv, frag))
    return index


def sv_fast_check(
    text: str,
    keys: rec.KeyBundle,
    fmt: ModelFormat,
    config: SamplingConfig,
    iv_window: int = 16,
    params: CoderParams = CoderParams(),
    beam_width: int = 5,
    fragment_probe: int = 0,
    base_counter: int | None = None,
    max_positions: int = 64,
) -> SvCheckResult:
    """Parse just far enough to learn each path's first two symbols, then
    test them against every expected sentinel in the counter x tweak window.

    Expects signal-stripped text.  Rejection costs a handful of tokens per
    path; acceptance returns the surviving paths with their coder states so
    processing can continue where the check stopped.
    """
    index = _sv_index(keys, iv_window, fragment_probe, base_counter)
    if not set(text) <= fmt.alphabet:
        return SvCheckResult(accepted=False, survivors=[], matches=[])
    stop = lambda path: path.encoder.emitted >= rec.SV_LEN
    finished, frontier = beam_parse(
        text, fmt, config, params, beam_width, stop=stop, max_positions=max_positions
    )
    survivors: list[ParsePath] = []
    matches: list[SvMatch] = []
    checked = 0
    for path in finished + frontier:
        if path.encoder.emitted < rec.SV_LEN:
            continue
        checked += 1
        hit = False
        for prefix in path.encoder.prefix_candidates(rec.SV_LEN):
            for counter, iv, frag in index.get(prefix, ()):
                matches.append(SvMatch(counter=counter, tweak=iv.tweak, fragment_index=frag))
                hit = True
        if hit:
            survivors.append(path)
    return SvCheckResult(
        accepted=bool(survivors), survivors=survivors, matches=matches, paths_checked=checked
    )


def _try_open_path(
    encoder: PathEncoder,
    keys: rec.KeyBundle,
    ivs: Sequence[tuple[int, rec.InitialValue]],
    params: CoderParams,
) -> tuple[bytes, int, int] | None:
    """Trial-open one parse path against every candidate IV.

    Uses the blockwise length peek to trim coder padding, then tries the
    direct reading and, when the carry window reaches into the kept prefix,
    the alternate reading.
    """
    result = encoder.result()
    digits = result.digits
    if len(digits) < rec.RECORD_OVERHEAD:
        return None
    readings = [digits]
    if result.carry_window > 0:
        readings.append(alternate_encoding(result, params.symbol_bits))
    committed = len(digits) - result.carry_window
    for counter, iv in ivs:
        sv = rec.sentinel_value(keys, iv)
        for reading in readings:
            if reading[: rec.SV_LEN] != sv:
                continue
            declared = rec.peek_message_length(reading[:4], keys, iv)
            target = declared + rec.RECORD_OVERHEAD
            if target > len(digits):
                continue
            wires = {reading[:target]}
            if target <= committed:
                wires = {digits[:target]}
            for wire in wires:
                try:
                    plain = rec.open_record(wire, keys, iv)
                except Exception:
                    continue
                return plain, counter, iv.tweak
    return None


def receive(
    text: str,
    keys: rec.KeyBundle,
    fmt: ModelFormat,
    config: SamplingConfig,
    params: CoderParams = CoderParams(),
    schedule: ReceiverSchedule = ReceiverSchedule(),
    counter_window: int = 16,
    signals: Sequence[str] = (),
    base_counter: int | None = None,
) -> bytes:
    """Recover the plaintext of one single-record post, or raise.

    The greedy tokenizer path is tried first; on failure the beam ladder
    re-parses from scratch at each scheduled width.
    """
    plain = receive_detailed(
        text, keys, fmt, config, params, schedule, counter_window, signals, base_counter
    )
    return plain[0]


def receive_detailed(
    text: str,
    keys: rec.KeyBundle,
    fmt: ModelFormat,
    config: SamplingConfig,
    params: CoderParams = CoderParams(),
    schedule: ReceiverSchedule = ReceiverSchedule(),
    counter_window: int = 16,
    signals: Sequence[str] = (),
    base_counter: int | None = None,
) -> tuple[bytes, int, int, str]:
    """receive() plus (counter, tweak, stage) for callers that track state."""
    stripped = strip_signals(text, signals)
    if not stripped or not set(stripped) <= fmt.alphabet:
        raise ReceiveFailure("text contains characters outside the token alphabet")
    ivs = _candidate_ivs(keys, counter_window, base_counter)

    try:
        tokens = tokenize_greedy(stripped, fmt)
        enc = PathEncoder(fmt, config, params)
        for token in tokens:
            enc.feed(token)
    except (UntokenizableText, TokenNotInSupport):
        enc = None
    if enc is not None:
        opened = _try_open_path(enc, keys, ivs, params)
        if opened is not None:
            return opened[0], opened[1], opened[2], "greedy"

    index: dict[bytes, list[tuple[int, rec.InitialValue, int | None]]] = {}
    for counter, iv in ivs:
        index.setdefault(rec.sentinel_value(keys, iv), []).append((counter, iv, None))
    checkpoint = _record_head_filter(keys, index, len(stripped))
    for width in schedule.widths:
        finished, _ = beam_parse(stripped, fmt, config, params, width, path_filter=checkpoint)
        for path in finished:
            opened = _try_open_path(path.encoder, keys, ivs, params)
            if opened is not None:
                return opened[0], opened[1], opened[2], f"beam-{width}"
    raise ReceiveFailure("no parse path passed the tag check")


def _record_head_filter(
    keys: rec.KeyBundle,
    index: dict[bytes, list[tuple[int, rec.InitialValue, int | None]]],
    text_len: int,
    layouts: dict[tuple[int, int], list[tuple[int, int]]] | None = None,
) -> Callable[[ParsePath], bool]:
    """Checkpoint predicate over a path's first four retired symbols.

    Two symbols in, the path must match some expected sentinel; four symbols
    in, what those symbols decrypt to must be plausible: a record length
    this text could actually carry, or a consistent fragment control block.
    For fragments after the zeroth the control offset depends on the message
    length, so the strong check only applies once `layouts` carries the
    (total, length) pairs learned from already-parsed zeroth fragments.
    All checks are free for the receiver and unforgeable without the keys,
    so the beam spends its width only on genuine ambiguity.
    """
    head_len = rec.SV_LEN + 2
    # per sentinel: list of (kind, keystream of the checked stream bytes,
    # expected plaintext pair or None)
    checks: dict[bytes, list[tuple[str, bytes, bytes | None]]] = {}
    for sv, entries in index.items():
        for counter, iv, frag in entries:
            if frag is None:
                checks.setdefault(sv, []).append(
                    ("single", rec.ctr_xor(keys, iv, b"\x00\x00"), None)
                )
            elif frag == 0:
                checks.setdefault(sv, []).append(
                    ("frag0", rec.ctr_xor(keys, iv, b"\x00\x00"), None)
                )
            else:
                known = (layouts or {}).get((counter, iv.tweak), [])
                usable = [
                    (total, msg_len) for total, msg_len in known if frag < total
                ]
                if not usable:
                    checks.setdefault(sv, []).append(("later-frag", b"", None))
                    continue
                for total, msg_len in usable:
                    offset = sum(rec.fragment_body_lengths(msg_len, total)[:frag])
                    keystream = rec.ctr_xor(keys, iv, b"\x00\x00", offset=offset)
                    expected = bytes([frag, total])
                    checks.setdefault(sv, []).append(("fragN", keystream, expected))
    # a parse cannot plausibly retire more symbols than twice the character
    # count (tokens cover >= 1 char and carry at most 16 bits each), plus
    # slack for padding run-out
    max_record = 2 * text_len + 16

    def checkpoint(path: ParsePath) -> bool:
        emitted = path.encoder.emitted
        if emitted < rec.SV_LEN:
            return True
        if emitted < head_len:
            return any(p in checks for p in path.encoder.prefix_candidates(rec.SV_LEN))
        for prefix in path.encoder.prefix_candidates(head_len):
            for kind, keystream, expected in checks.get(prefix[: rec.SV_LEN], ()):
                if kind == "later-frag":
                    return True
                plain = bytes(a ^ b for a, b in zip(prefix[rec.SV_LEN :], keystream))
                if kind == "single":
                    declared = int.from_bytes(plain, "big")
                    if declared + rec.RECORD_OVERHEAD <= max_record:
                        return True
                elif kind == "frag0":
                    # control starts (index=0, total>=1)
                    if plain[0] == 0 and plain[1] >= 1:
                        return True
                else:  # fragN with a known layout: control is (index, total)
                    if plain == expected:
                        return True
        return False

    return checkpoint


# -- fragment reception -----------------------------------------------------


@dataclass
class _FragmentCandidate:
    encoder: PathEncoder
    counter: int
    iv: rec.InitialValue
    index: int


def _fragment_wire_candidates(
    encoder: PathEncoder, length: int, params: CoderParams
) -> list[bytes]:
    result = encoder.result()
    if length > len(result.digits):
        return []
    out = [result.digits[:length]]
    committed = len(result.digits) - result.carry_window
    if result.carry_window > 0 and length > committed:
        out.append(alternate_encoding(result, params.symbol_bits)[:length])
    return out


def receive_fragments(
    texts: Sequence[tuple[int, str]],
    keys: rec.KeyBundle,
    fmt: ModelFormat,
    config: SamplingConfig,
    params: CoderParams = CoderParams(),
    schedule: ReceiverSchedule = ReceiverSchedule(),
    counter_window: int = 16,
    signals: Sequence[str] = (),
    base_counter: int | None = None,
    fragment_probe: int = 16,
) -> list[tuple[list[int], bytes, int, int]]:
    """Reassemble fragmented messages scattered among (id, text) posts.

    Every post is parsed once; paths whose sentinel matches an index-keyed
    fragment sentinel are grouped by (counter, tweak) and spliced once the
    zeroth fragment reveals the message length.  Returns a list of
    (source post ids, plaintext, counter, tweak).
    """
    index = _sv_index(keys, counter_window, fragment_probe, base_counter)

    groups: dict[tuple[int, int], dict[int, list[tuple[int, str, PathEncoder]]]] = {}

    def collect(post_id: int, text: str, paths: Iterable[ParsePath]):
        for path in paths:
            if path.encoder.emitted < rec.SV_LEN:
                continue
            for prefix in path.encoder.prefix_candidates(rec.SV_LEN):
                for counter, iv, frag in index.get(prefix, ()):
                    if frag is None:
                        continue
                    bucket = groups.setdefault((counter, iv.tweak), {})
                    bucket.setdefault(frag, []).append((post_id, text, path.encoder))

    posts = []
    for post_id, text in texts:
        stripped = strip_signals(text, signals)
        if stripped and set(stripped) <= fmt.alphabet:
            posts.append((post_id, stripped))

    # escalate globally: parse every pool post at each rung, attempting
    # reassembly in between, so wider (expensive) beams only run while some
    # group is still missing a piece; a sentinel hit alone proves nothing
    # (genuine posts match it even on a wrong parse of their tail)
    done: set[tuple[int, int]] = set()
    out: list[tuple[list[int], bytes, int, int]] = []

    def try_assembly():
        for (counter, tweak), bucket in sorted(groups.items()):
            if (counter, tweak) in done or 0 not in bucket:
                continue
            iv = rec.InitialValue(iv=rec.derive_iv(keys, counter), tweak=tweak)
            recovered = _assemble_group(bucket, keys, iv, fmt, config, params)
            if recovered is not None:
                post_ids, plain = recovered
                out.append((post_ids, plain, counter, tweak))
                done.add((counter, tweak))

    def open_prospects() -> bool:
        return any(key not in done and 0 in bucket for key, bucket in groups.items())

    # (counter, tweak) -> [(total, message length)] read off vetted zeroth
    # fragments; gives later fragments their strong beam checkpoint
    layouts: dict[tuple[int, int], list[tuple[int, int]]] = {}

    def learn_layouts():
        for (counter, tweak), bucket in groups.items():
            if (counter, tweak) in done or 0 not in bucket:
                continue
            iv = rec.InitialValue(iv=rec.derive_iv(keys, counter), tweak=tweak)
            known = layouts.setdefault((counter, tweak), [])
            for _, _, _, enc in _dedupe_ranked(bucket[0]):
                head = enc.result().digits[: rec.SV_LEN + rec.CONTROL_LEN + rec.LENGTH_PREFIX]
                if len(head) < rec.SV_LEN + rec.CONTROL_LEN + rec.LENGTH_PREFIX:
                    continue
                ctrl = rec.ctr_xor(keys, iv, head[rec.SV_LEN : rec.SV_LEN + rec.CONTROL_LEN])
                if ctrl[0] != 0 or ctrl[1] < 1 or ctrl[2] != 0:
                    continue
                msg_len = int.from_bytes(
                    rec.ctr_xor(
                        keys, iv, head[rec.SV_LEN + rec.CONTROL_LEN :], offset=rec.CONTROL_LEN
                    ),
                    "big",
                )
                if (ctrl[1], msg_len) not in known:
                    known.append((ctrl[1], msg_len))
                if len(known) >= 8:
                    break

    for level in range(len(schedule.widths) + 1):
        width = None if level == 0 else schedule.widths[level - 1]
        # cheap rungs always run (they are what reveals the sentinels in the
        # first place); wide beams only while a revealed set is incomplete
        if width is not None and width > 40 and not open_prospects():
            break
        for post_id, stripped in posts:
            if width is None:
                try:
                    tokens = tokenize_greedy(stripped, fmt)
                    enc = PathEncoder(fmt, config, params)
                    for token in tokens:
                        enc.feed(token)
                    collect(post_id, stripped, [
                        ParsePath(tokens=tuple(tokens), encoder=enc, pos=len(stripped))
                    ])
                except (UntokenizableText, TokenNotInSupport):
                    pass
            else:
                checkpoint = _record_head_filter(keys, index, len(stripped), layouts)
                finished, _ = beam_parse(
                    stripped, fmt, config, params, width, path_filter=checkpoint
                )
                collect(post_id, stripped, finished)
        learn_layouts()
        try_assembly()
        # cheap rungs may still reveal a zeroth fragment, so only stop early
        # once something assembled and nothing else is pending
        if done and not open_prospects():
            break
    return out


def _dedupe_ranked(
    entries: list[tuple[int, str, PathEncoder]]
) -> list[tuple[float, int, str, PathEncoder]]:
    """Distinct (post, digits) candidates, best joint probability first."""
    seen = set()
    out = []
    for post_id, text, enc in entries:
        result = enc.result()
        key = (post_id, result.digits, result.carry_window)
        if key in seen:
            continue
        seen.add(key)
        out.append((enc.logprob, post_id, text, enc))
    out.sort(key=lambda t: -t[0])
    return out


def _assemble_group(
    bucket: dict[int, list[tuple[int, str, PathEncoder]]],
    keys: rec.KeyBundle,
    iv: rec.InitialValue,
    fmt: ModelFormat,
    config: SamplingConfig,
    params: CoderParams,
) -> tuple[list[int], bytes] | None:
    header_len = rec.SV_LEN + rec.CONTROL_LEN + rec.LENGTH_PREFIX
    seen_heads = set()
    for _, _, _, zero_enc in _dedupe_ranked(bucket[0]):
        zero = zero_enc.result()
        head = zero.digits[:header_len]
        if len(head) < header_len or head in seen_heads:
            continue
        seen_heads.add(head)
        ctrl = rec.ctr_xor(keys, iv, head[rec.SV_LEN : rec.SV_LEN + rec.CONTROL_LEN])
        total = ctrl[1]
        if ctrl[0] != 0 or total < 1 or total > rec.MAX_FRAGMENTS:
            continue
        # indices beyond the declared total are accidental sentinel matches
        # from unrelated posts; they are ignored, not disqualifying
        if set(range(total)) - set(bucket):
            continue
        msg_len = int.from_bytes(
            rec.ctr_xor(
                keys,
                iv,
                head[rec.SV_LEN + rec.CONTROL_LEN :],
                offset=rec.CONTROL_LEN,
            ),
            "big",
        )
        body_lens = rec.fragment_body_lengths(msg_len, total)
        wire_lens = [rec.SV_LEN + n for n in body_lens]
        wire_lens[-1] += rec.TAG_LEN
        offsets = [sum(body_lens[:i]) for i in range(total)]
        trusted: list[list[tuple[int, bytes]]] = []
        all_options: list[list[tuple[int, bytes]]] = []
        feasible = True
        for idx in range(total):
            options: list[tuple[int, bytes]] = []
            regenerated: list[tuple[int, bytes]] = []
            seen = set()
            scanned = 0
            for _, post_id, text, enc in _dedupe_ranked(bucket[idx]):
                digit_count = enc.emitted
                for wire in _fragment_wire_candidates(enc, wire_lens[idx], params):
                    if wire in seen:
                        continue
                    seen.add(wire)
                    # with the layout fixed by the zeroth fragment, every
                    # fragment's keystream offset is known, so its encrypted
                    # control block vets each candidate wire individually
                    ctrl_idx = rec.ctr_xor(
                        keys,
                        iv,
                        wire[rec.SV_LEN : rec.SV_LEN + rec.CONTROL_LEN],
                        offset=offsets[idx],
                    )
                    if ctrl_idx[0] != idx or ctrl_idx[1] != total:
                        continue
                    options.append((post_id, wire))
                    # covertext padding is derived from the record, so the
                    # true wire regenerates the posted text exactly when
                    # decoded, and the true parse retires barely more symbols
                    # than the wire holds; wrong same-text parses pass only
                    # when their padding-driven tail happens to coincide
                    plausible_overshoot = (
                        wire_lens[idx]
                        <= digit_count
                        <= wire_lens[idx] + params.window_symbols + 1
                    )
                    if plausible_overshoot and scanned < 4096 and len(regenerated) < 64:
                        scanned += 1
                        regen, _ = covertext_for_record(wire, fmt, config, params)
                        if regen == text:
                            regenerated.append((post_id, wire))
                if len(options) >= 1024:
                    break
            if not options:
                feasible = False
                break
            trusted.append(regenerated if regenerated else options[:64])
            all_options.append(options[:2048])
        if not feasible:
            continue
        # regeneration verifies most positions outright, so search trusted
        # combinations first, then re-open one position at a time over its
        # full vetted option list (texts whose tail tokens are near-forced
        # can drown the regeneration check in false passes); positions whose
        # verification looks unreliable are re-opened first
        found = _try_combos(trusted, keys, iv, 4096)
        if found is None:
            suspicion = sorted(range(total), key=lambda k: -len(trusted[k]))
            for free_idx in suspicion:
                if trusted[free_idx] == all_options[free_idx]:
                    continue
                # shallow free ranks with deep trusted combinations first,
                # then deep free ranks against the best trusted combinations
                axis_lists = list(trusted)
                axis_lists[free_idx] = all_options[free_idx][:256]
                found = _try_combos(axis_lists, keys, iv, 65536)
                if found is None:
                    found = _free_axis_search(trusted, all_options, free_idx, keys, iv)
                if found is not None:
                    break
        if found is not None:
            return found
    return None


def _try_combos(per_axis, keys: rec.KeyBundle, iv: rec.InitialValue, cap: int):
    for combo in _combinations(per_axis, cap):
        wires = [wire for _, wire in combo]
        try:
            plain = rec.reassemble_fragments(wires, keys, iv)
        except Exception:
            continue
        return [post_id for post_id, _ in combo], plain
    return None


def _free_axis_search(
    trusted, all_options, free_idx: int, keys: rec.KeyBundle, iv: rec.InitialValue
):
    """Deep scan of one position's candidates against the trusted rest.

    Iterates the freed position's options in rank order (down to ranks the
    sum-ordered search could never reach) while the other positions cycle
    through a small set of their best trusted combinations.
    """
    others = [lst for k, lst in enumerate(trusted) if k != free_idx]
    base = list(_combinations(others, 32)) if others else [[]]
    for candidate in all_options[free_idx][:2048]:
        for combo in base:
            full = list(combo[:free_idx]) + [candidate] + list(combo[free_idx:])
            wires = [wire for _, wire in full]
            try:
                plain = rec.reassemble_fragments(wires, keys, iv)
            except Exception:
                continue
            return [post_id for post_id, _ in full], plain
    return None


def _combinations(per_fragment, cap):
    """Cartesian combinations in best-first order (smallest rank sum first);
    per-fragment options are already sorted by parse quality."""
    import heapq

    start = (0,) * len(per_fragment)
    heap = [(0, start)]
    seen = {start}
    count = 0
    while heap and count < cap:
        _, indices = heapq.heappop(heap)
        yield [per_fragment[i][indices[i]] for i in range(len(per_fragment))]
        count += 1
        for i in range(len(indices)):
            if indices[i] + 1 < len(per_fragment[i]):
                nxt = indices[:i] + (indices[i] + 1,) + indices[i + 1 :]
                if nxt not in seen:
                    seen.add(nxt)
                    heapq.heappush(heap, (sum(nxt), nxt))
