"""Covert messaging toolkit: authenticated ciphertext in model-shaped text.

Plaintext is sealed into a compact authenticated record, transformed into a
natural-looking token sequence by running a range coder backwards against a
deterministic generative model, and posted to a public dead drop.  The
receiver scrapes candidate posts, rejects foreign ones after a two-byte
sentinel check, resolves ambiguous tokenizations with a beam ladder, and
trial-decrypts.  An adversary harness reproduces the statistical attacks and
the detection-economics arithmetic used to evaluate the scheme.
"""

from .coder import (
    CoderParams,
    DecodeResult,
    EncodeResult,
    alternate_encoding,
    decode,
    encode,
    reconstruction_candidates,
)
from .errors import DeaddropError
from .model import (
    DEFAULT_TOKENS,
    ModelFormat,
    QuantizedDistribution,
    SamplingConfig,
    next_distribution,
    next_seed,
)
from .pipeline import (
    TOY_SCHEDULE,
    CovertextPost,
    ReceiverSchedule,
    receive,
    receive_fragments,
    send,
    sv_fast_check,
    tokenize_greedy,
)
from .record import InitialValue, KeyBundle, open_record, seal

__all__ = [
    "CoderParams",
    "CovertextPost",
    "DEFAULT_TOKENS",
    "DeaddropError",
    "DecodeResult",
    "EncodeResult",
    "InitialValue",
    "KeyBundle",
    "ModelFormat",
    "QuantizedDistribution",
    "ReceiverSchedule",
    "SamplingConfig",
    "TOY_SCHEDULE",
    "alternate_encoding",
    "decode",
    "encode",
    "next_distribution",
    "next_seed",
    "open_record",
    "receive",
    "receive_fragments",
    "reconstruction_candidates",
    "seal",
    "send",
    "sv_fast_check",
    "tokenize_greedy",
]
