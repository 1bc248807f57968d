"""Flat key=value configuration for the command-line tools.

The grammar is a single file of `key = value` lines; lines starting with `#`
are comments (inline comments are not supported, since values may contain
hashtags).  No sections, no nesting, no quoting: values run to end of line.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

from .coder import CoderParams
from .errors import ConfigError
from .model import DEFAULT_TOKENS, ModelFormat, SamplingConfig, ToyHashProvider, load_token_table
from .pipeline import TOY_SCHEDULE, ReceiverSchedule


@dataclass(frozen=True)
class Config:
    token_table: str = "builtin"
    context_len: int = 8
    initial_seed: str = ""
    temperature: float = 1.0
    top_k: int = len(DEFAULT_TOKENS)
    top_p: float = 1.0
    quant_bits: int = 16
    symbol_bits: int = 8
    window_symbols: int = 4
    keys: str = "deaddrop.keys"
    store: str = "store.jsonl"
    signals: tuple[str, ...] = ()
    tweak_candidates: int = 1
    schedule: tuple[int, ...] = TOY_SCHEDULE.widths
    platform_limit: int = 500
    counter_window: int = 16
    out_dir: str = "reports"

    def model_format(self) -> ModelFormat:
        if self.token_table == "builtin":
            tokens = DEFAULT_TOKENS
        else:
            tokens = load_token_table(self.token_table)
        return ModelFormat(
            tokens=tokens,
            context_len=self.context_len,
            initial_seed=self.initial_seed,
            provider=ToyHashProvider(),
        )

    def sampling_config(self) -> SamplingConfig:
        return SamplingConfig(
            temperature=self.temperature,
            top_k=self.top_k,
            top_p=self.top_p,
            quant_denominator=1 << self.quant_bits,
        )

    def coder_params(self) -> CoderParams:
        return CoderParams(symbol_bits=self.symbol_bits, window_symbols=self.window_symbols)

    def receiver_schedule(self) -> ReceiverSchedule:
        return ReceiverSchedule(tuple(self.schedule))


_INT_KEYS = {
    "context_len",
    "top_k",
    "quant_bits",
    "symbol_bits",
    "window_symbols",
    "tweak_candidates",
    "platform_limit",
    "counter_window",
}
_FLOAT_KEYS = {"temperature", "top_p"}
_LIST_INT_KEYS = {"schedule"}
_LIST_STR_KEYS = {"signals"}


def parse_config(text: str, base: Config | None = None) -> Config:
    cfg = base or Config()
    updates: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in Config.__dataclass_fields__:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            if key in _INT_KEYS:
                updates[key] = int(value)
            elif key in _FLOAT_KEYS:
                updates[key] = float(value)
            elif key in _LIST_INT_KEYS:
                updates[key] = tuple(int(v) for v in value.split(",") if v.strip())
            elif key in _LIST_STR_KEYS:
                updates[key] = tuple(v.strip() for v in value.split(",") if v.strip())
            else:
                updates[key] = value
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {value!r}") from exc
    return replace(cfg, **updates)


def load_config(path) -> Config:
    return parse_config(Path(path).read_text(encoding="utf-8"))
