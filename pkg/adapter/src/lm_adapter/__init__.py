"""Stdio JSON-lines adapter serving deterministic per-seed token logits."""

from .server import HashWeightModel, serve

__all__ = ["HashWeightModel", "serve"]
