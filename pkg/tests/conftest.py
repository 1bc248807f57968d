import random

import pytest

from deaddrop.coder import CoderParams
from deaddrop.model import ModelFormat, SamplingConfig
from deaddrop.record import KeyBundle


@pytest.fixture(scope="session")
def fmt():
    return ModelFormat()


@pytest.fixture(scope="session")
def sampling():
    return SamplingConfig()


@pytest.fixture(scope="session")
def params():
    return CoderParams()


@pytest.fixture
def rng():
    return random.Random(0xC0FFEE)


@pytest.fixture
def keypair():
    # equal bundles with independent counters, as a sender/receiver pair holds
    return (
        KeyBundle.generate(seed_phrase="test-pair"),
        KeyBundle.generate(seed_phrase="test-pair"),
    )


def random_message(rng, lo=1, hi=40) -> bytes:
    return bytes(rng.getrandbits(8) for _ in range(rng.randint(lo, hi)))
