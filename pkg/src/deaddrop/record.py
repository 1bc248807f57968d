"""Authenticated ciphertext records: sentinel || CTR body || truncated tag.

Layout of a sealed record for message M (|M| < 2**16):

    sentinel (2) || CTR-AES256( len(M) as 2 bytes || M ) || tag (5)

The sentinel is keyed by the initial value and a small tweak and is
independent of M, so a receiver can reject foreign posts after recovering
just two bytes.  The tag is an HMAC-SHA512 truncation over sentinel||body.
Records never carry the IV; both sides rederive it from the shared key
material and a message counter.
"""

from __future__ import annotations

import hashlib
import hmac
import secrets
from dataclasses import dataclass

from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from .errors import AuthenticationFailure, ConfigError, MalformedRecord, MessageTooLong

SV_LEN = 2
TAG_LEN = 5
LENGTH_PREFIX = 2
RECORD_OVERHEAD = SV_LEN + LENGTH_PREFIX + TAG_LEN  # 9 bytes
CONTROL_LEN = 3  # fragment index, fragment total, trailing pad bits
MAX_MESSAGE = (1 << 16) - 1
MAX_FRAGMENTS = 255

_SV_LABEL = b"SV"
_TAG_LABEL = b"Tag"
_CTR_LABEL = b"CTR"
_IV_LABEL = b"IV"
_KEY_LABELS = (b"key-sentinel", b"key-tag", b"key-cipher")


def _hmac512(key: bytes, msg: bytes) -> bytes:
    return hmac.new(key, msg, hashlib.sha512).digest()


@dataclass
class KeyBundle:
    """Three independent 32-byte keys plus sender counter and tweak range.

    The counter is the only mutable part; increments must be serialized by
    the caller (single writer).
    """

    sentinel_key: bytes
    tag_key: bytes
    cipher_key: bytes
    counter: int = 0
    tweak_range: int = 10

    def __post_init__(self):
        for key in (self.sentinel_key, self.tag_key, self.cipher_key):
            if len(key) != 32:
                raise ConfigError("keys must be 32 bytes")
        if not 1 <= self.tweak_range <= 255:
            raise ConfigError("tweak_range must be in [1, 255]")
        if not 0 <= self.counter < 1 << 64:
            raise ConfigError("counter out of range")

    @classmethod
    def generate(cls, seed_phrase: str | None = None, tweak_range: int = 10) -> "KeyBundle":
        if seed_phrase is None:
            master = secrets.token_bytes(32)
        else:
            master = hashlib.sha256(seed_phrase.encode("utf-8")).digest()
        k1, k2, k3 = (_hmac512(master, label)[:32] for label in _KEY_LABELS)
        return cls(sentinel_key=k1, tag_key=k2, cipher_key=k3, tweak_range=tweak_range)

    def advance(self) -> int:
        self.counter += 1
        return self.counter


@dataclass(frozen=True)
class InitialValue:
    iv: bytes
    tweak: int

    def __post_init__(self):
        if len(self.iv) != 16:
            raise ConfigError("iv must be 16 bytes")
        if not 0 <= self.tweak < 256:
            raise ConfigError("tweak must fit one byte")


def derive_iv(keys: KeyBundle, counter: int) -> bytes:
    """Counter-indexed IV from the shared key material; never transmitted."""
    master = keys.sentinel_key + keys.tag_key + keys.cipher_key
    return _hmac512(master, _IV_LABEL + counter.to_bytes(8, "big"))[:16]


def _ctr_blocks(key: bytes, block0: bytes, start_block: int, count: int) -> bytes:
    enc = Cipher(algorithms.AES(key), modes.ECB()).encryptor()
    base = int.from_bytes(block0, "big")
    out = bytearray()
    for i in range(count):
        out += enc.update(((base + start_block + i) % (1 << 128)).to_bytes(16, "big"))
    return bytes(out)


def ctr_xor(keys: KeyBundle, iv: InitialValue, data: bytes, offset: int = 0) -> bytes:
    """Encrypt/decrypt `data` at byte `offset` of the record's CTR stream."""
    block0 = hashlib.sha512(_CTR_LABEL + iv.iv + bytes([iv.tweak])).digest()[:16]
    first = offset // 16
    last = (offset + len(data) + 15) // 16
    stream = _ctr_blocks(keys.cipher_key, block0, first, last - first)
    skew = offset % 16
    return bytes(a ^ b for a, b in zip(data, stream[skew : skew + len(data)]))


def sentinel_value(keys: KeyBundle, iv: InitialValue, fragment_index: int | None = None) -> bytes:
    msg = _SV_LABEL + iv.iv + bytes([iv.tweak])
    if fragment_index is not None:
        msg += bytes([fragment_index])
    return _hmac512(keys.sentinel_key, msg)[:SV_LEN]


def record_tag(keys: KeyBundle, tagged: bytes) -> bytes:
    return _hmac512(keys.tag_key, _TAG_LABEL + tagged)[:TAG_LEN]


@dataclass(frozen=True)
class CiphertextRecord:
    sv: bytes
    body: bytes
    tag: bytes

    @property
    def wire(self) -> bytes:
        return self.sv + self.body + self.tag


def seal(message: bytes, keys: KeyBundle, iv: InitialValue) -> CiphertextRecord:
    """Build the record for a message; deterministic in (message, keys, iv)."""
    if len(message) > MAX_MESSAGE:
        raise MessageTooLong(f"message of {len(message)} bytes exceeds {MAX_MESSAGE}")
    prefixed = len(message).to_bytes(LENGTH_PREFIX, "big") + message
    body = ctr_xor(keys, iv, prefixed)
    sv = sentinel_value(keys, iv)
    tag = record_tag(keys, sv + body)
    return CiphertextRecord(sv=sv, body=body, tag=tag)


def open_record(wire: bytes, keys: KeyBundle, iv: InitialValue) -> bytes:
    """Verify and decrypt a record; raises on any inconsistency."""
    if len(wire) < RECORD_OVERHEAD:
        raise MalformedRecord("record shorter than the fixed overhead")
    sv, body, tag = wire[:SV_LEN], wire[SV_LEN:-TAG_LEN], wire[-TAG_LEN:]
    if not hmac.compare_digest(tag, record_tag(keys, sv + body)):
        raise AuthenticationFailure("tag mismatch")
    plain = ctr_xor(keys, iv, body)
    declared = int.from_bytes(plain[:LENGTH_PREFIX], "big")
    if declared != len(body) - LENGTH_PREFIX:
        raise MalformedRecord("length prefix inconsistent with body")
    return plain[LENGTH_PREFIX:]


def peek_message_length(wire_prefix: bytes, keys: KeyBundle, iv: InitialValue) -> int:
    """Decrypt only the length prefix (needs the first 4 record bytes)."""
    if len(wire_prefix) < SV_LEN + LENGTH_PREFIX:
        raise MalformedRecord("need at least 4 bytes to peek the length")
    plain = ctr_xor(keys, iv, wire_prefix[SV_LEN : SV_LEN + LENGTH_PREFIX])
    return int.from_bytes(plain, "big")


def expected_sv(keys: KeyBundle, iv_base: bytes, tweak_range: int) -> list[bytes]:
    """Sentinels for every tweak of one IV, in tweak order."""
    if tweak_range < 1:
        raise ConfigError("tweak_range must be >= 1")
    return [
        sentinel_value(keys, InitialValue(iv=iv_base, tweak=ix))
        for ix in range(tweak_range)
    ]


# -- fragmentation ----------------------------------------------------------
#
# One message split over several posts.  The CTR keystream runs continuously
# over the concatenated plaintext stream:
#
#   ctrl_0 || len(M) || piece_0 || ctrl_1 || piece_1 || ... || ctrl_n || piece_n
#
# where ctrl_i = (index, total, trailing_pad_bits) and the pieces split M as
# evenly as possible (sizes derivable from len(M) alone, so a receiver that
# has peeked the length knows every fragment boundary).  Each fragment gets
# its own index-keyed sentinel; a single tag covers sv_0||body_0||...||sv_n||
# body_n and travels with the last fragment.


@dataclass(frozen=True)
class Fragment:
    sv: bytes
    body: bytes
    control: bytes


@dataclass(frozen=True)
class FragmentSet:
    fragments: tuple[Fragment, ...]
    tag: bytes

    def wire_records(self) -> list[bytes]:
        """Per-post byte strings; the last fragment carries the tag."""
        out = [frag.sv + frag.body for frag in self.fragments]
        out[-1] += self.tag
        return out


def piece_sizes(message_len: int, count: int) -> list[int]:
    return [
        message_len * (i + 1) // count - message_len * i // count for i in range(count)
    ]


def fragment_body_lengths(message_len: int, count: int) -> list[int]:
    sizes = piece_sizes(message_len, count)
    return [
        CONTROL_LEN + (LENGTH_PREFIX if i == 0 else 0) + sizes[i] for i in range(count)
    ]


def fragment_wire_lengths(message_len: int, count: int) -> list[int]:
    bodies = fragment_body_lengths(message_len, count)
    out = [SV_LEN + b for b in bodies]
    out[-1] += TAG_LEN
    return out


def build_fragments(
    message: bytes,
    keys: KeyBundle,
    iv: InitialValue,
    max_record_bits_per_fragment: int,
) -> FragmentSet:
    if len(message) > MAX_MESSAGE:
        raise MessageTooLong(f"message of {len(message)} bytes exceeds {MAX_MESSAGE}")
    if max_record_bits_per_fragment < 8 * (SV_LEN + CONTROL_LEN + 1):
        raise ConfigError("per-fragment budget cannot hold sentinel, control and payload")
    count = 1
    while True:
        if count > MAX_FRAGMENTS:
            raise MessageTooLong("message needs more than 255 fragments")
        if max(fragment_wire_lengths(len(message), count)) * 8 <= max_record_bits_per_fragment:
            break
        count += 1
    return build_fragments_exact(message, keys, iv, count)


def build_fragments_exact(
    message: bytes, keys: KeyBundle, iv: InitialValue, count: int
) -> FragmentSet:
    if not 1 <= count <= MAX_FRAGMENTS:
        raise MessageTooLong("fragment count out of range")
    sizes = piece_sizes(len(message), count)
    stream = bytearray()
    controls = []
    pos = 0
    for i, size in enumerate(sizes):
        ctrl = bytes([i, count, 0])
        controls.append(ctrl)
        stream += ctrl
        if i == 0:
            stream += len(message).to_bytes(LENGTH_PREFIX, "big")
        stream += message[pos : pos + size]
        pos += size
    encrypted = ctr_xor(keys, iv, bytes(stream))
    bodies = []
    offset = 0
    for length in fragment_body_lengths(len(message), count):
        bodies.append(encrypted[offset : offset + length])
        offset += length
    fragments = tuple(
        Fragment(
            sv=sentinel_value(keys, iv, fragment_index=i),
            body=bodies[i],
            control=controls[i],
        )
        for i in range(count)
    )
    tagged = b"".join(f.sv + f.body for f in fragments)
    return FragmentSet(fragments=fragments, tag=record_tag(keys, tagged))


def reassemble_fragments(records: list[bytes], keys: KeyBundle, iv: InitialValue) -> bytes:
    """Rebuild a message from fragment records supplied in any order.

    Fragment identity is recovered from the index-keyed sentinels; the single
    tag over the whole set is checked before any payload is trusted.
    """
    count = len(records)
    if not 1 <= count <= MAX_FRAGMENTS:
        raise MalformedRecord("fragment count out of range")
    sv_to_index = {
        sentinel_value(keys, iv, fragment_index=i): i for i in range(count)
    }
    if len(sv_to_index) != count:
        raise MalformedRecord("fragment sentinels collide; cannot order fragments")
    ordered: list[bytes | None] = [None] * count
    for rec in records:
        if len(rec) < SV_LEN + CONTROL_LEN:
            raise MalformedRecord("fragment record too short")
        idx = sv_to_index.get(rec[:SV_LEN])
        if idx is None:
            raise MalformedRecord("record sentinel matches no expected fragment")
        if ordered[idx] is not None:
            raise MalformedRecord(f"duplicate fragment index {idx}")
        ordered[idx] = rec
    bodies = [rec[SV_LEN:] for rec in ordered]  # type: ignore[union-attr]
    if len(bodies[-1]) < TAG_LEN + CONTROL_LEN:
        raise MalformedRecord("last fragment too short to carry the tag")
    tag = bodies[-1][-TAG_LEN:]
    bodies[-1] = bodies[-1][:-TAG_LEN]
    tagged = b"".join(rec[:SV_LEN] + body for rec, body in zip(ordered, bodies))  # type: ignore[union-attr]
    if not hmac.compare_digest(tag, record_tag(keys, tagged)):
        raise AuthenticationFailure("fragment set tag mismatch")
    stream = ctr_xor(keys, iv, b"".join(bodies))
    # first control block and the message length live at fixed offsets
    if stream[0] != 0 or stream[1] != count:
        raise MalformedRecord("first fragment control block inconsistent")
    msg_len = int.from_bytes(stream[CONTROL_LEN : CONTROL_LEN + LENGTH_PREFIX], "big")
    sizes = piece_sizes(msg_len, count)
    expected_bodies = fragment_body_lengths(msg_len, count)
    if [len(b) for b in bodies] != expected_bodies:
        raise MalformedRecord("fragment body lengths inconsistent with message length")
    message = bytearray()
    pos = 0
    for i, size in enumerate(sizes):
        ctrl = stream[pos : pos + CONTROL_LEN]
        if ctrl[0] != i or ctrl[1] != count:
            raise MalformedRecord(f"control block of fragment {i} inconsistent")
        pos += CONTROL_LEN
        if i == 0:
            pos += LENGTH_PREFIX
        message += stream[pos : pos + size]
        pos += size
    return bytes(message)


# -- key file ---------------------------------------------------------------
# 96 bytes of key material, 8-byte big-endian counter, 1-byte tweak range.

KEY_FILE_LEN = 96 + 8 + 1


def save_keys(path, keys: KeyBundle):
    blob = (
        keys.sentinel_key
        + keys.tag_key
        + keys.cipher_key
        + keys.counter.to_bytes(8, "big")
        + bytes([keys.tweak_range])
    )
    assert len(blob) == KEY_FILE_LEN
    with open(path, "wb") as fh:
        fh.write(blob)


def load_keys(path) -> KeyBundle:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) != KEY_FILE_LEN:
        raise ConfigError(f"key file must be exactly {KEY_FILE_LEN} bytes")
    return KeyBundle(
        sentinel_key=blob[0:32],
        tag_key=blob[32:64],
        cipher_key=blob[64:96],
        counter=int.from_bytes(blob[96:104], "big"),
        tweak_range=blob[104],
    )
