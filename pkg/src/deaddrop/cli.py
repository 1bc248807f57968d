"""Command-line surface: key management, send/receive, attack experiments.

Exit codes: 0 success, 1 operational failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import random
import statistics
import sys
from dataclasses import replace
from pathlib import Path

from . import adversary, pipeline, platform, record
from .config import Config, load_config
from .errors import DeaddropError, ReceiveFailure


def _load_cfg(args) -> Config:
    cfg = load_config(args.config) if args.config else Config()
    overrides = {}
    if getattr(args, "keys", None):
        overrides["keys"] = args.keys
    if getattr(args, "store", None):
        overrides["store"] = args.store
    if getattr(args, "signals", None) is not None:
        overrides["signals"] = tuple(s for s in args.signals.split(",") if s)
    if getattr(args, "tweaks", None) is not None:
        overrides["tweak_candidates"] = args.tweaks
    if getattr(args, "schedule", None):
        overrides["schedule"] = tuple(int(v) for v in args.schedule.split(","))
    if getattr(args, "out", None):
        overrides["out_dir"] = args.out
    return replace(cfg, **overrides) if overrides else cfg


def _open_store(cfg: Config) -> platform.PlatformStore:
    path = Path(cfg.store)
    if path.exists():
        return platform.PlatformStore.load(path, limit=cfg.platform_limit)
    return platform.PlatformStore(limit=cfg.platform_limit)


def cmd_keygen(args) -> int:
    keys = record.KeyBundle.generate(
        seed_phrase=args.seed_phrase, tweak_range=args.tweak_range
    )
    record.save_keys(args.out, keys)
    print(f"wrote {args.out} ({record.KEY_FILE_LEN} bytes, tweak range {keys.tweak_range})")
    return 0


def cmd_send(args) -> int:
    cfg = _load_cfg(args)
    if args.message is not None:
        message = args.message.encode("utf-8")
    else:
        message = sys.stdin.buffer.read()
    if not message:
        print("error: empty message", file=sys.stderr)
        return 2
    keys = record.load_keys(cfg.keys)
    fmt = cfg.model_format()
    store = _open_store(cfg)
    result = pipeline.send(
        message,
        keys,
        fmt,
        cfg.sampling_config(),
        cfg.coder_params(),
        signals=cfg.signals,
        num_tweak_candidates=cfg.tweak_candidates,
        platform_limit=cfg.platform_limit,
    )
    ids = [store.post("sender", post.text) for post in result.posts]
    store.save(cfg.store)
    record.save_keys(cfg.keys, keys)  # persists the advanced counter
    print(f"fragments: {result.fragment_count}")
    for post_id in ids:
        print(f"posted id {post_id}")
    return 0


def cmd_recv(args) -> int:
    cfg = _load_cfg(args)
    keys = record.load_keys(cfg.keys)
    fmt = cfg.model_format()
    sampling = cfg.sampling_config()
    params = cfg.coder_params()
    schedule = cfg.receiver_schedule()
    store = _open_store(cfg)
    posts = store.scrape(signal_filter=cfg.signals, since_id=args.since_id)
    recovered: list[tuple[int, bytes]] = []
    max_counter = keys.counter
    fragment_pool: list[tuple[int, str]] = []
    # the key file may be shared between roles, in which case its counter
    # already sits at the sender's last message; search a window around it
    base = max(0, keys.counter - cfg.counter_window)
    window = 2 * cfg.counter_window
    for post in posts:
        check = pipeline.sv_fast_check(
            pipeline.strip_signals(post.text, cfg.signals),
            keys,
            fmt,
            sampling,
            iv_window=window,
            params=params,
            fragment_probe=8,
            base_counter=base,
        )
        if not check.accepted:
            continue
        if any(m.fragment_index is not None for m in check.matches):
            fragment_pool.append((post.id, post.text))
        if any(m.fragment_index is None for m in check.matches):
            try:
                plain, counter, _, _ = pipeline.receive_detailed(
                    post.text,
                    keys,
                    fmt,
                    sampling,
                    params,
                    schedule,
                    window,
                    cfg.signals,
                    base_counter=base,
                )
            except ReceiveFailure as exc:
                print(f"post {post.id}: {exc}", file=sys.stderr)
                continue
            recovered.append((post.id, plain))
            max_counter = max(max_counter, counter)
    if fragment_pool:
        for ids, plain, counter, _ in pipeline.receive_fragments(
            fragment_pool,
            keys,
            fmt,
            sampling,
            params,
            schedule,
            window,
            cfg.signals,
            base_counter=base,
        ):
            recovered.append((min(ids), plain))
            max_counter = max(max_counter, counter)
    for post_id, plain in sorted(recovered):
        try:
            body = plain.decode("utf-8")
        except UnicodeDecodeError:
            body = plain.hex()
        print(f"{post_id}: {body}")
    if max_counter != keys.counter:
        keys.counter = max_counter
        record.save_keys(cfg.keys, keys)
    return 0


def _background_corpus(cfg: Config, count: int, seed: int) -> list[str]:
    fmt = cfg.model_format()
    sampling = cfg.sampling_config()
    store = platform.PlatformStore(limit=cfg.platform_limit)
    platform.generate_background(store, fmt, sampling, count, rng_seed=seed)
    return [p.text for p in store.posts]


def _covertext_corpus(cfg: Config, count: int, seed: int) -> list[str]:
    fmt = cfg.model_format()
    sampling = cfg.sampling_config()
    params = cfg.coder_params()
    keys = record.KeyBundle.generate(seed_phrase=f"corpus-{seed}")
    rng = random.Random(seed)
    texts = []
    for _ in range(count):
        message = bytes(rng.getrandbits(8) for _ in range(rng.randint(8, 40)))
        result = pipeline.send(message, keys, fmt, sampling, params)
        texts.append(result.posts[0].text)
    return texts


def cmd_attack_sweep(args) -> int:
    cfg = _load_cfg(args)
    fmt = cfg.model_format()
    sampling = cfg.sampling_config()
    corpus = _background_corpus(cfg, args.count, args.seed)
    values = [
        len(fmt.tokens) if v == "max" else (float(v) if args.axis == "top_p" else int(v))
        for v in args.values.split(",")
    ]
    points = adversary.decodability_sweep(corpus, fmt, sampling, args.axis, values)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    adversary.write_sweep_csv(points, out_dir / "sweep.csv")
    adversary.write_json_summary(
        {"axis": args.axis, "points": points}, out_dir / "sweep.json"
    )
    for p in points:
        print(f"{p.axis}={p.value}: {p.decodable_fraction:.1%} decodable")
    print(f"wrote {out_dir / 'sweep.csv'}")
    return 0


def cmd_attack_entropy(args) -> int:
    cfg = _load_cfg(args)
    fmt = cfg.model_format()
    sampling = cfg.sampling_config()
    params = cfg.coder_params()
    segment = args.segment_bytes

    backgrounds = _background_corpus(cfg, args.count, args.seed)
    covers = _covertext_corpus(cfg, args.count, args.seed + 1)
    rows = {}
    for name, texts in (("background", backgrounds), ("covertext", covers)):
        bits = adversary.recovered_bit_corpus(
            (pipeline.strip_signals(t, cfg.signals) for t in texts), fmt, sampling, params
        )
        segments = [bits[i : i + segment] for i in range(0, len(bits) - segment + 1, segment)]
        values = [adversary.bit_entropy(s) for s in segments] or [adversary.bit_entropy(bits)]
        rows[name] = (statistics.mean(values), len(values))
    keys = record.KeyBundle.generate(seed_phrase="entropy")
    iv = record.InitialValue(iv=record.derive_iv(keys, 1), tweak=0)
    rng = random.Random(args.seed)
    sealed = record.seal(bytes(rng.getrandbits(8) for _ in range(segment)), keys, iv).wire
    rows["sealed-records"] = (adversary.bit_entropy(sealed), 1)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    adversary.write_json_summary(
        {name: {"mean_entropy": m, "segments": n} for name, (m, n) in rows.items()},
        out_dir / "entropy.json",
    )
    for name, (mean, n) in rows.items():
        print(f"{name}: normalized entropy {mean:.4f} over {n} segment(s)")
    return 0


def cmd_attack_bayes(args) -> int:
    posterior = adversary.bayes_posterior(args.base_rate, args.tpr, args.fpr)
    print(f"{posterior:.4f}")
    outcome = adversary.outcome_table(args.population, args.base_rate, args.tpr, args.fpr)
    print(
        f"of {outcome.population} messages: {outcome.actual_positives} covert, "
        f"{outcome.flagged} flagged ({outcome.true_flags} hits, "
        f"{outcome.false_alarms} false alarms), {outcome.missed} missed"
    )
    return 0


def cmd_attack_users(args) -> int:
    cfg = _load_cfg(args)
    fmt = cfg.model_format()
    sampling = cfg.sampling_config()
    covers = _covertext_corpus(cfg, args.sample, args.seed)
    backgrounds = _background_corpus(cfg, args.sample, args.seed + 1)
    covert_scores = [adversary.rank_detector(pipeline.strip_signals(t, cfg.signals), fmt, sampling) for t in covers]
    normal_scores = [adversary.rank_detector(t, fmt, sampling) for t in backgrounds]
    source = adversary.empirical_score_source(covert_scores, normal_scores)
    sim_cfg = adversary.UserSimConfig(
        users=args.users,
        covert_user_fraction=args.fraction,
        posts_per_user=args.posts,
        per_user_base_rate=args.base_rate,
        top_fraction=args.q,
    )
    threshold = args.threshold
    if threshold is None:
        threshold = adversary.score_quantile(normal_scores, 0.999)
    result = adversary.user_detection_sim(sim_cfg, source, threshold, rng_seed=args.seed)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    adversary.write_json_summary(
        {
            "config": sim_cfg,
            "threshold": threshold,
            "result": result,
            "precision": result.precision,
        },
        out_dir / "users.json",
    )
    print(
        f"TP {result.true_positives}  FP {result.false_positives}  "
        f"TN {result.true_negatives}  FN {result.false_negatives}  "
        f"precision {result.precision:.3f}"
    )
    return 0


def cmd_attack_filter(args) -> int:
    cfg = _load_cfg(args)
    fmt = cfg.model_format()
    sampling = cfg.sampling_config()
    params = cfg.coder_params()
    detector = lambda text: adversary.rank_detector(text, fmt, sampling)
    calibration = [detector(t) for t in _covertext_corpus(cfg, args.sample, args.seed)]
    keys = record.KeyBundle.generate(seed_phrase=f"filter-{args.seed}")
    rng = random.Random(args.seed)
    attempts = []
    for _ in range(args.runs):
        message = bytes(rng.getrandbits(8) for _ in range(16))

        def candidates():
            while True:
                result = pipeline.send(message, keys, fmt, sampling, params)
                yield result.posts[0].text

        outcome = adversary.sender_filter(
            candidates(), detector, args.reject, calibration
        )
        attempts.append(outcome.attempts)
    mean_attempts = statistics.mean(attempts)
    print(f"mean attempts {mean_attempts:.3f} over {args.runs} sends (reject={args.reject})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deaddrop")
    parser.add_argument("--config", help="flat key=value config file")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keygen", help="write a key file")
    p.add_argument("--out", required=True)
    p.add_argument("--seed-phrase", help="derive keys deterministically (tests only)")
    p.add_argument("--tweak-range", type=int, default=10)
    p.set_defaults(func=cmd_keygen)

    p = sub.add_parser("send", help="embed a message and post covertext")
    p.add_argument("message", nargs="?", help="message text; stdin when omitted")
    for flag in ("--keys", "--store", "--signals", "--schedule"):
        p.add_argument(flag)
    p.add_argument("--tweaks", type=int)
    p.set_defaults(func=cmd_send)

    p = sub.add_parser("recv", help="scrape the store and recover plaintexts")
    p.add_argument("--since-id", type=int, default=0)
    for flag in ("--keys", "--store", "--signals", "--schedule"):
        p.add_argument(flag)
    p.set_defaults(func=cmd_recv)

    p = sub.add_parser("attack", help="adversary experiments")
    attack = p.add_subparsers(dest="experiment", required=True)

    s = attack.add_parser("sweep", help="decodability vs sampling restriction")
    s.add_argument("axis", choices=["top_k", "top_p"])
    s.add_argument("values", help="comma-separated values; 'max' = token count")
    s.add_argument("--count", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_attack_sweep)

    s = attack.add_parser("entropy", help="entropy of recovered bits")
    s.add_argument("--count", type=int, default=50)
    s.add_argument("--segment-bytes", type=int, default=1000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_attack_entropy)

    s = attack.add_parser("bayes", help="posterior and outcome table")
    s.add_argument("base_rate", type=float)
    s.add_argument("tpr", type=float)
    s.add_argument("fpr", type=float)
    s.add_argument("--population", type=int, default=10_000)
    s.set_defaults(func=cmd_attack_bayes)

    s = attack.add_parser("users", help="user-level detection simulation")
    s.add_argument("--users", type=int, default=10_000)
    s.add_argument("--fraction", type=float, default=0.01)
    s.add_argument("--posts", type=int, default=100)
    s.add_argument("--base-rate", type=float, default=0.1)
    s.add_argument("--q", type=float, default=0.1)
    s.add_argument("--threshold", type=float)
    s.add_argument("--sample", type=int, default=200)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_attack_users)

    s = attack.add_parser("filter", help="sender-side rejection economics")
    s.add_argument("--reject", type=float, default=0.2)
    s.add_argument("--runs", type=int, default=100)
    s.add_argument("--sample", type=int, default=200)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_attack_filter)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DeaddropError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
