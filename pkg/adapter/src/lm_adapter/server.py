"""Request loop and model backends for the logits adapter.

See PROTOCOL.md for the wire format. The loop is deliberately dumb: read a
line, answer a line. All model state is immutable after startup, so identical
requests always produce identical response bytes.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys

PROTOCOL_VERSION = 1

# 40-token demo table: lowercase letters, space, an ambiguous "t" family and
# non-chaining digrams (matches the reference token-table file shipped with
# the toolkit)
DEFAULT_TABLE = tuple("abcdefghijklmnopqrstuvwxyz") + (
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


class HashWeightModel:
    """Reference model: SHA-256 hash weights, no ML dependencies.

    logit(seed, token) = ln(1 + (first 4 bytes of SHA-256(seed||0x00||token),
    big endian, mod 255)).
    """

    def __init__(self, tokens=DEFAULT_TABLE):
        self.tokens = tuple(tokens)
        if not self.tokens or len(set(self.tokens)) != len(self.tokens):
            raise ValueError("token table must be non-empty and duplicate-free")
        digest = hashlib.sha256()
        digest.update(b"hash-weights/1\n")
        for tok in self.tokens:
            digest.update(tok.encode("utf-8") + b"\n")
        self.fingerprint = digest.hexdigest()

    def logits(self, seed: str) -> list[float]:
        prefix = seed.encode("utf-8") + b"\x00"
        out = []
        for tok in self.tokens:
            h = hashlib.sha256(prefix + tok.encode("utf-8")).digest()
            out.append(math.log(1 + (int.from_bytes(h[:4], "big") % 255)))
        return out

    def tokenize(self, text: str) -> list[str]:
        # greedy longest match, the natural tokenizer for a flat table
        by_first: dict[str, list[str]] = {}
        for tok in self.tokens:
            by_first.setdefault(tok[0], []).append(tok)
        for toks in by_first.values():
            toks.sort(key=len, reverse=True)
        out = []
        pos = 0
        while pos < len(text):
            for tok in by_first.get(text[pos], ()):
                if text.startswith(tok, pos):
                    out.append(tok)
                    pos += len(tok)
                    break
            else:
                raise ValueError(f"untokenizable text at offset {pos}")
        return out


class CausalLmModel:
    """Hugging Face causal LM backend (optional heavy dependencies)."""

    def __init__(self, name: str, device: str = "cpu"):
        import torch
        from transformers import AutoModelForCausalLM, AutoTokenizer

        torch.manual_seed(0)
        self._torch = torch
        self._tokenizer = AutoTokenizer.from_pretrained(name)
        self._model = AutoModelForCausalLM.from_pretrained(name).to(device).eval()
        self._device = device
        vocab = self._tokenizer.convert_ids_to_tokens(range(self._tokenizer.vocab_size))
        self.tokens = tuple(vocab)
        digest = hashlib.sha256()
        digest.update(name.encode("utf-8") + b"\n")
        digest.update(self._model.config.to_json_string().encode("utf-8"))
        digest.update(str(sum(p.numel() for p in self._model.parameters())).encode())
        self.fingerprint = digest.hexdigest()

    def logits(self, seed: str) -> list[float]:
        torch = self._torch
        with torch.no_grad():
            if seed:
                ids = self._tokenizer(seed, return_tensors="pt").input_ids
            else:
                ids = torch.tensor([[self._tokenizer.bos_token_id or 0]])
            out = self._model(ids.to(self._device)).logits[0, -1, : len(self.tokens)]
        return [float(v) for v in out.cpu()]

    def tokenize(self, text: str) -> list[str]:
        return self._tokenizer.tokenize(text)


def _handle(model, line: str) -> dict:
    try:
        request = json.loads(line)
    except json.JSONDecodeError as exc:
        return {"ok": False, "error": f"invalid JSON: {exc.msg}"}
    if not isinstance(request, dict):
        return {"ok": False, "error": "request must be a JSON object"}
    op = request.get("op")
    if op == "hello":
        version = request.get("protocol_version")
        if version not in (None, PROTOCOL_VERSION):
            return {"ok": False, "error": f"unsupported protocol_version {version}"}
        return {
            "ok": True,
            "protocol_version": PROTOCOL_VERSION,
            "tokens": list(model.tokens),
            "fingerprint": model.fingerprint,
        }
    if op == "logits":
        seed = request.get("seed")
        if not isinstance(seed, str):
            return {"ok": False, "error": "logits needs a string 'seed'"}
        micro = [round(v * 1e6) for v in model.logits(seed)]
        return {"ok": True, "logits_micro_nats": micro}
    if op == "tokens":
        text = request.get("text")
        if not isinstance(text, str):
            return {"ok": False, "error": "tokens needs a string 'text'"}
        try:
            return {"ok": True, "tokens": model.tokenize(text)}
        except ValueError as exc:
            return {"ok": False, "error": str(exc)}
    return {"ok": False, "error": f"unknown op {op!r}"}


def serve(model, stdin=None, stdout=None):
    """Answer requests until stdin closes; one response line per request."""
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    for line in stdin:
        if not line.strip():
            stdout.write(json.dumps({"ok": False, "error": "empty line"}) + "\n")
            stdout.flush()
            continue
        response = _handle(model, line)
        stdout.write(json.dumps(response, ensure_ascii=False, sort_keys=True) + "\n")
        stdout.flush()


def load_table(path) -> tuple[str, ...]:
    with open(path, encoding="utf-8") as fh:
        tokens = [line.rstrip("\n") for line in fh]
    while tokens and tokens[-1] == "":
        tokens.pop()
    return tuple(tokens)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="lm-adapter")
    parser.add_argument(
        "--model",
        default="hash-weights",
        help="'hash-weights' (reference) or a Hugging Face causal LM name",
    )
    parser.add_argument("--table", help="token table file for the reference model")
    parser.add_argument("--device", default="cpu")
    args = parser.parse_args(argv)
    if args.model == "hash-weights":
        table = load_table(args.table) if args.table else DEFAULT_TABLE
        model = HashWeightModel(table)
    else:
        model = CausalLmModel(args.model, device=args.device)
    serve(model)
    return 0


if __name__ == "__main__":
    sys.exit(main())
