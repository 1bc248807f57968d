import pytest

from deaddrop.cli import main
from deaddrop.config import Config, load_config, parse_config
from deaddrop.errors import ConfigError
from deaddrop.record import KEY_FILE_LEN


def run(argv, capsys):
    code = main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def test_keygen_deterministic(tmp_path, capsys):
    a = tmp_path / "a.keys"
    b = tmp_path / "b.keys"
    assert main(["keygen", "--out", str(a), "--seed-phrase", "x"]) == 0
    assert main(["keygen", "--out", str(b), "--seed-phrase", "x"]) == 0
    capsys.readouterr()
    assert a.read_bytes() == b.read_bytes()
    assert a.stat().st_size == KEY_FILE_LEN == 105


def test_keygen_random_differs(tmp_path, capsys):
    a = tmp_path / "a.keys"
    b = tmp_path / "b.keys"
    main(["keygen", "--out", str(a)])
    main(["keygen", "--out", str(b)])
    capsys.readouterr()
    assert a.read_bytes() != b.read_bytes()


def test_send_recv_round_trip(tmp_path, capsys):
    keys = tmp_path / "k.keys"
    store = tmp_path / "s.jsonl"
    main(["keygen", "--out", str(keys), "--seed-phrase", "cli"])
    code, out, err = run(
        ["send", "--keys", str(keys), "--store", str(store), "--signals", "#t",
         "covert hello"],
        capsys,
    )
    assert code == 0
    assert "fragments: 1" in out
    assert "posted id 1" in out
    code, out, err = run(
        ["recv", "--keys", str(keys), "--store", str(store), "--signals", "#t"],
        capsys,
    )
    assert code == 0
    assert "1: covert hello" in out


def test_recv_empty_store(tmp_path, capsys):
    keys = tmp_path / "k.keys"
    main(["keygen", "--out", str(keys), "--seed-phrase", "cli"])
    capsys.readouterr()
    code, out, err = run(["recv", "--keys", str(keys), "--store", str(tmp_path / "none.jsonl")], capsys)
    assert code == 0
    assert out == ""


def test_empty_message_is_usage_error(tmp_path, capsys, monkeypatch):
    import io
    import sys

    keys = tmp_path / "k.keys"
    main(["keygen", "--out", str(keys), "--seed-phrase", "cli"])
    capsys.readouterr()
    monkeypatch.setattr(sys, "stdin", type("S", (), {"buffer": io.BytesIO(b"")})())
    code = main(["send", "--keys", str(keys), "--store", str(tmp_path / "s.jsonl")])
    assert code == 2


def test_missing_key_file_is_operational_error(tmp_path, capsys):
    code, out, err = run(
        ["send", "--keys", str(tmp_path / "missing.keys"), "--store",
         str(tmp_path / "s.jsonl"), "msg"],
        capsys,
    )
    assert code == 1
    assert "error" in err


def test_usage_error_exit_code():
    with pytest.raises(SystemExit) as exc:
        main(["no-such-command"])
    assert exc.value.code == 2


def test_attack_bayes_golden(capsys):
    code, out, _ = run(["attack", "bayes", "0.001", "0.221", "0.001"], capsys)
    assert code == 0
    assert out.splitlines()[0] == "0.1811"


def test_attack_sweep_monotonic(tmp_path, capsys):
    code, out, _ = run(
        ["attack", "sweep", "top_k", "1,5,max", "--count", "20", "--out", str(tmp_path)],
        capsys,
    )
    assert code == 0
    rows = (tmp_path / "sweep.csv").read_text().strip().splitlines()[1:]
    fractions = [float(r.split(",")[2]) for r in rows]
    assert fractions == sorted(fractions)
    assert fractions[-1] == 1.0


def test_attack_entropy_regime(tmp_path, capsys):
    code, out, _ = run(
        ["attack", "entropy", "--count", "8", "--segment-bytes", "1000",
         "--out", str(tmp_path)],
        capsys,
    )
    assert code == 0
    sealed = [l for l in out.splitlines() if l.startswith("sealed-records")]
    assert sealed and float(sealed[0].split()[-4]) >= 0.95
    assert (tmp_path / "entropy.json").exists()


def test_attack_users_simulation(tmp_path, capsys):
    code, out, _ = run(
        ["attack", "users", "--users", "400", "--fraction", "0.02", "--posts", "20",
         "--base-rate", "0.2", "--q", "0.1", "--sample", "30", "--out", str(tmp_path)],
        capsys,
    )
    assert code == 0
    assert "precision" in out
    assert (tmp_path / "users.json").exists()


def test_attack_filter_economics(tmp_path, capsys):
    code, out, _ = run(
        ["attack", "filter", "--runs", "40", "--sample", "60", "--seed", "5",
         "--out", str(tmp_path)],
        capsys,
    )
    assert code == 0
    assert "mean attempts" in out


def test_recv_finds_planted_covertext_among_background(tmp_path, capsys):
    from deaddrop.config import Config
    from deaddrop.platform import PlatformStore, generate_background

    keys = tmp_path / "k.keys"
    store_path = tmp_path / "s.jsonl"
    main(["keygen", "--out", str(keys), "--seed-phrase", "planted"])
    cfg = Config()
    store = PlatformStore()
    generate_background(store, cfg.model_format(), cfg.sampling_config(), 99,
                        rng_seed=8, signals=("#feed",))
    store.save(store_path)
    code, out, _ = run(
        ["send", "--keys", str(keys), "--store", str(store_path), "--signals", "#feed",
         "the planted message"],
        capsys,
    )
    assert code == 0
    code, out, _ = run(
        ["recv", "--keys", str(keys), "--store", str(store_path), "--signals", "#feed"],
        capsys,
    )
    assert code == 0
    assert out.strip() == "100: the planted message"


def test_recv_reassembles_scattered_fragments(tmp_path, capsys):
    from deaddrop.config import Config
    from deaddrop.platform import PlatformStore, generate_background

    keys_path = tmp_path / "k.keys"
    store_path = tmp_path / "s.jsonl"
    main(["keygen", "--out", str(keys_path), "--seed-phrase", "scatter"])
    capsys.readouterr()
    cfg = Config()
    fmt = cfg.model_format()
    sampling = cfg.sampling_config()

    from deaddrop.pipeline import send
    from deaddrop.record import load_keys, save_keys

    keys = load_keys(keys_path)
    message = b"a long message that must span several posts " * 4
    result = send(message, keys, fmt, sampling, cfg.coder_params(),
                  signals=("#feed",), platform_limit=400)
    assert result.fragment_count >= 2
    save_keys(keys_path, keys)

    store = PlatformStore(limit=500)
    generate_background(store, fmt, sampling, 10, rng_seed=3, signals=("#feed",))
    for post in result.posts:
        generate_background(store, fmt, sampling, 3, rng_seed=store.clock,
                            signals=("#feed",))
        store.post("sender", post.text)
    store.save(store_path)
    code, out, _ = run(
        ["recv", "--keys", str(keys_path), "--store", str(store_path),
         "--signals", "#feed"],
        capsys,
    )
    assert code == 0
    assert message.decode() in out


def test_config_parsing(tmp_path):
    text = """
# comment
temperature = 0.9
top_k = 20
signals = #a,#b
schedule = 5,10
keys = some/path.keys
"""
    cfg = parse_config(text)
    assert cfg.temperature == 0.9
    assert cfg.top_k == 20
    assert cfg.signals == ("#a", "#b")
    assert cfg.schedule == (5, 10)
    assert cfg.keys == "some/path.keys"
    path = tmp_path / "conf"
    path.write_text(text)
    assert load_config(path) == cfg


def test_config_rejects_unknown_keys():
    with pytest.raises(ConfigError):
        parse_config("nonsense = 1")
    with pytest.raises(ConfigError):
        parse_config("just a line")
    with pytest.raises(ConfigError):
        parse_config("top_k = notanumber")


def test_config_builds_components():
    cfg = Config()
    fmt = cfg.model_format()
    assert len(fmt.tokens) == 40
    assert cfg.sampling_config().quant_denominator == 1 << 16
    assert cfg.coder_params().symbol_bits == 8
    assert cfg.receiver_schedule().widths[-1] >= 40
