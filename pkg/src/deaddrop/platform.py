"""Simulated public dead-drop: an append-only post store.

Stands in for a real micro-blogging platform in experiments: hashtag
filtering, chronological scraping by id, a byte-length post limit, and
deterministic background-traffic generation.  Persistence is a JSON-lines
file, one post per line.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field

from .errors import OverLimit, RateLimited
from .model import ModelFormat, SamplingConfig, next_distribution, sample_index

DEFAULT_LIMIT = 500


@dataclass(frozen=True)
class Post:
    id: int
    author: str
    text: str
    signals: tuple[str, ...]
    timestamp: int


def extract_signals(text: str) -> tuple[str, ...]:
    return tuple(word for word in text.split() if word.startswith("#"))


@dataclass
class PlatformStore:
    limit: int = DEFAULT_LIMIT
    rate_limit: tuple[int, int] | None = None  # (posts, per logical ticks)
    posts: list[Post] = field(default_factory=list)
    clock: int = 0

    def post(self, author: str, text: str) -> int:
        if len(text.encode("utf-8")) > self.limit:
            raise OverLimit(f"post of {len(text.encode('utf-8'))} bytes exceeds {self.limit}")
        self.clock += 1
        if self.rate_limit is not None:
            count, window = self.rate_limit
            recent = sum(
                1
                for p in self.posts
                if p.author == author and p.timestamp > self.clock - window
            )
            if recent >= count:
                raise RateLimited(f"{author} exceeded {count} posts per {window} ticks")
        post = Post(
            id=len(self.posts) + 1,
            author=author,
            text=text,
            signals=extract_signals(text),
            timestamp=self.clock,
        )
        self.posts.append(post)
        return post.id

    def scrape(self, signal_filter: tuple[str, ...] = (), since_id: int = 0) -> list[Post]:
        """Posts with id > since_id carrying every requested signal, in id order."""
        wanted = set(signal_filter)
        return [
            p
            for p in self.posts
            if p.id > since_id and wanted <= set(p.signals)
        ]

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for p in self.posts:
                fh.write(
                    json.dumps(
                        {
                            "id": p.id,
                            "author": p.author,
                            "text": p.text,
                            "signals": list(p.signals),
                            "timestamp": p.timestamp,
                        },
                        ensure_ascii=False,
                    )
                    + "\n"
                )

    @classmethod
    def load(cls, path, limit: int = DEFAULT_LIMIT) -> "PlatformStore":
        store = cls(limit=limit)
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                raw = json.loads(line)
                store.posts.append(
                    Post(
                        id=raw["id"],
                        author=raw["author"],
                        text=raw["text"],
                        signals=tuple(raw["signals"]),
                        timestamp=raw["timestamp"],
                    )
                )
        store.clock = max((p.timestamp for p in store.posts), default=0)
        return store


def sample_text(
    fmt: ModelFormat,
    config: SamplingConfig,
    rng: random.Random,
    min_chars: int = 30,
    max_chars: int = 120,
) -> str:
    """Ordinary model output (no embedded ciphertext)."""
    target = rng.randint(min_chars, max_chars)
    seed = fmt.initial_seed[-fmt.context_len :]
    out: list[str] = []
    length = 0
    while length < target:
        dist = next_distribution(fmt, config, seed)
        token = fmt.tokens[sample_index(dist, rng)]
        out.append(token)
        length += len(token)
        seed = (seed + token)[-fmt.context_len :]
    return "".join(out)


def generate_background(
    store: PlatformStore,
    fmt: ModelFormat,
    config: SamplingConfig,
    count: int,
    rng_seed: int,
    author: str = "background",
    signals: tuple[str, ...] = (),
) -> list[int]:
    """Post `count` ordinary model texts; identical rng_seed, identical posts."""
    rng = random.Random(rng_seed)
    ids = []
    suffix = "".join(" " + s for s in signals)
    budget = store.limit - len(suffix.encode("utf-8"))
    for _ in range(count):
        text = sample_text(fmt, config, rng, max_chars=min(120, max(31, budget)))
        ids.append(store.post(author, text + suffix))
    return ids
