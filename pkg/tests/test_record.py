import random

import pytest

from deaddrop.errors import (
    AuthenticationFailure,
    ConfigError,
    MalformedRecord,
    MessageTooLong,
)
from deaddrop.record import (
    KEY_FILE_LEN,
    InitialValue,
    KeyBundle,
    build_fragments,
    build_fragments_exact,
    derive_iv,
    expected_sv,
    fragment_wire_lengths,
    load_keys,
    open_record,
    peek_message_length,
    reassemble_fragments,
    save_keys,
    seal,
    sentinel_value,
)

ZERO_KEYS = KeyBundle(sentinel_key=bytes(32), tag_key=bytes(32), cipher_key=bytes(32))
ZERO_IV = InitialValue(iv=bytes(16), tweak=0)


def test_golden_record():
    # frozen from an independent HMAC (ipad/opad by hand) + AES-ECB CTR oracle
    record = seal(b"hi", ZERO_KEYS, ZERO_IV)
    assert record.wire.hex() == "3b9dd1e9e4aa6530456346"


def test_record_lengths():
    assert len(seal(bytes(40), ZERO_KEYS, ZERO_IV).wire) == 49
    empty = seal(b"", ZERO_KEYS, ZERO_IV)
    assert len(empty.wire) == 9
    assert open_record(empty.wire, ZERO_KEYS, ZERO_IV) == b""


def test_seal_open_round_trip(rng):
    keys = KeyBundle.generate(seed_phrase="rt")
    for n in (0, 1, 2, 40, 300, 5000, (1 << 16) - 1):
        iv = InitialValue(iv=derive_iv(keys, n + 1), tweak=n % 10)
        message = bytes(rng.getrandbits(8) for _ in range(n))
        assert open_record(seal(message, keys, iv).wire, keys, iv) == message


def test_message_too_long():
    with pytest.raises(MessageTooLong):
        seal(bytes(1 << 16), ZERO_KEYS, ZERO_IV)


def test_bit_flips_always_caught(rng):
    keys = KeyBundle.generate(seed_phrase="flip")
    iv = InitialValue(iv=derive_iv(keys, 1), tweak=0)
    wire = seal(b"a short message", keys, iv).wire
    for _ in range(200):
        pos = rng.randrange(len(wire) * 8)
        flipped = bytearray(wire)
        flipped[pos // 8] ^= 1 << (pos % 8)
        with pytest.raises((AuthenticationFailure, MalformedRecord)):
            open_record(bytes(flipped), keys, iv)


def test_truncated_record_fails():
    wire = seal(b"hello", ZERO_KEYS, ZERO_IV).wire
    with pytest.raises((AuthenticationFailure, MalformedRecord)):
        open_record(wire[:-1], ZERO_KEYS, ZERO_IV)
    with pytest.raises(MalformedRecord):
        open_record(wire[:8], ZERO_KEYS, ZERO_IV)


def test_sentinel_independent_of_message():
    a = seal(b"first message", ZERO_KEYS, ZERO_IV)
    b = seal(b"completely different", ZERO_KEYS, ZERO_IV)
    assert a.sv == b.sv


def test_seal_deterministic():
    assert seal(b"x", ZERO_KEYS, ZERO_IV).wire == seal(b"x", ZERO_KEYS, ZERO_IV).wire


def test_forgery_resistance(rng):
    keys = KeyBundle.generate(seed_phrase="forge")
    iv = InitialValue(iv=derive_iv(keys, 1), tweak=0)
    passes = 0
    for _ in range(10_000):
        fake = bytes(rng.getrandbits(8) for _ in range(49))
        try:
            open_record(fake, keys, iv)
            passes += 1
        except (AuthenticationFailure, MalformedRecord):
            pass
    assert passes == 0


def test_peek_length_matches_blockwise(rng):
    keys = KeyBundle.generate(seed_phrase="peek")
    for counter in range(1, 20):
        iv = InitialValue(iv=derive_iv(keys, counter), tweak=counter % 10)
        message = bytes(rng.getrandbits(8) for _ in range(rng.randint(0, 120)))
        wire = seal(message, keys, iv).wire
        assert peek_message_length(wire[:4], keys, iv) == len(message)


def test_expected_sv_consistency():
    keys = KeyBundle.generate(seed_phrase="sv")
    iv_base = derive_iv(keys, 3)
    svs = expected_sv(keys, iv_base, 1)
    assert svs == [seal(b"x", keys, InitialValue(iv=iv_base, tweak=0)).sv]


def test_expected_sv_distinct_across_tweaks(rng):
    collisions = 0
    trials = 1000
    for t in range(trials):
        keys = KeyBundle.generate(seed_phrase=f"sv-{t}")
        svs = expected_sv(keys, derive_iv(keys, 1), 10)
        if len(set(svs)) != 10:
            collisions += 1
    assert collisions <= trials // 100  # negligible-collision allowance


def test_tweak_changes_sentinel():
    changed = 0
    trials = 500
    for t in range(trials):
        keys = KeyBundle.generate(seed_phrase=f"tw-{t}")
        iv_base = derive_iv(keys, 1)
        a = sentinel_value(keys, InitialValue(iv=iv_base, tweak=0))
        b = sentinel_value(keys, InitialValue(iv=iv_base, tweak=1))
        changed += a != b
    assert changed >= trials * 99 // 100


def test_derive_iv_counter_sensitivity():
    keys = KeyBundle.generate(seed_phrase="iv")
    assert derive_iv(keys, 1) == derive_iv(keys, 1)
    assert derive_iv(keys, 1) != derive_iv(keys, 2)
    assert len(derive_iv(keys, 1)) == 16


def test_key_file_round_trip(tmp_path):
    keys = KeyBundle.generate(seed_phrase="file")
    keys.counter = 12345
    path = tmp_path / "keys.bin"
    save_keys(path, keys)
    assert path.stat().st_size == KEY_FILE_LEN == 105
    loaded = load_keys(path)
    assert loaded == keys


def test_keygen_determinism():
    assert KeyBundle.generate(seed_phrase="same") == KeyBundle.generate(seed_phrase="same")
    assert KeyBundle.generate() != KeyBundle.generate()


def test_key_validation():
    with pytest.raises(ConfigError):
        KeyBundle(sentinel_key=bytes(16), tag_key=bytes(32), cipher_key=bytes(32))
    with pytest.raises(ConfigError):
        KeyBundle(sentinel_key=bytes(32), tag_key=bytes(32), cipher_key=bytes(32), tweak_range=0)


# -- fragments ---------------------------------------------------------------


def frag_keys():
    return KeyBundle.generate(seed_phrase="fragments")


def test_single_fragment_equivalent_to_whole_message(rng):
    keys = frag_keys()
    iv = InitialValue(iv=derive_iv(keys, 1), tweak=2)
    message = bytes(rng.getrandbits(8) for _ in range(50))
    fs = build_fragments_exact(message, keys, iv, 1)
    assert len(fs.fragments) == 1
    assert reassemble_fragments(fs.wire_records(), keys, iv) == message


def test_fragments_reassemble_shuffled(rng):
    keys = frag_keys()
    iv = InitialValue(iv=derive_iv(keys, 2), tweak=0)
    message = bytes(rng.getrandbits(8) for _ in range(100))
    fs = build_fragments_exact(message, keys, iv, 3)
    records = fs.wire_records()
    for _ in range(5):
        shuffled = records[:]
        rng.shuffle(shuffled)
        assert reassemble_fragments(shuffled, keys, iv) == message


def test_fragment_tamper_detected(rng):
    keys = frag_keys()
    iv = InitialValue(iv=derive_iv(keys, 3), tweak=1)
    message = bytes(rng.getrandbits(8) for _ in range(64))
    records = build_fragments_exact(message, keys, iv, 3).wire_records()
    for i in range(3):
        broken = records[:]
        body = bytearray(broken[i])
        body[4] ^= 0x80
        broken[i] = bytes(body)
        with pytest.raises((AuthenticationFailure, MalformedRecord)):
            reassemble_fragments(broken, keys, iv)


def test_fragment_budget_respected(rng):
    keys = frag_keys()
    iv = InitialValue(iv=derive_iv(keys, 4), tweak=0)
    message = bytes(rng.getrandbits(8) for _ in range(200))
    budget_bits = 60 * 8
    fs = build_fragments(message, keys, iv, budget_bits)
    for wire in fs.wire_records():
        assert len(wire) * 8 <= budget_bits
    assert reassemble_fragments(fs.wire_records(), keys, iv) == message


def test_fragment_wire_lengths_account_for_everything():
    lens = fragment_wire_lengths(100, 3)
    # sv(2) + control(3) per fragment, length prefix once, tag once
    assert sum(lens) == 100 + 3 * (2 + 3) + 2 + 5


def test_too_many_fragments():
    keys = frag_keys()
    iv = InitialValue(iv=derive_iv(keys, 5), tweak=0)
    with pytest.raises(MessageTooLong):
        build_fragments(bytes(60000), keys, iv, 8 * (2 + 3 + 1))
