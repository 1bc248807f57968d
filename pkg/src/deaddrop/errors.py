"""Exception types shared across the toolkit."""


class DeaddropError(Exception):
    pass


class ConfigError(DeaddropError):
    pass


class ProviderError(DeaddropError):
    """A distribution provider failed or violated its protocol."""


class TokenNotInSupport(DeaddropError):
    """A token has zero frequency in the distribution for its step.

    Raised by the encoder; the receiver uses it to prune parse paths, and
    the decoding attack uses it as its discrimination primitive.
    """

    def __init__(self, token: str, step: int):
        super().__init__(f"token {token!r} not in sampling support at step {step}")
        self.token = token
        self.step = step


class DegenerateChain(DeaddropError):
    """The distribution chain stopped carrying information (single-token
    support everywhere), so no further payload symbols can move."""


class UntokenizableText(DeaddropError):
    def __init__(self, text: str, pos: int):
        super().__init__(f"no token matches text at offset {pos}: {text[pos:pos + 12]!r}")
        self.pos = pos


class MessageTooLong(DeaddropError):
    pass


class AuthenticationFailure(DeaddropError):
    """Tag mismatch when opening a ciphertext record."""


class MalformedRecord(DeaddropError):
    """Record too short, or its length prefix is inconsistent with the body."""


class ReceiveFailure(DeaddropError):
    """No parse path produced a plaintext passing the tag check."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class OverLimit(DeaddropError):
    pass


class RateLimited(DeaddropError):
    pass


class TooShortInput(DeaddropError):
    pass


class ExhaustedRetries(DeaddropError):
    pass
