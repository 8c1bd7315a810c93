"""Keyed random streams: every draw is addressed by integers, never by call order."""
import numpy as np

# Stream tags keep different consumers apart even when their keys coincide.
VIEW_STREAM = 1
MIX_STREAM = 2
SHUFFLE_STREAM = 3
PROBE_STREAM = 4
SYNTHETIC_STREAM = 5


def keyed_rng(stream: int, *key: int) -> np.random.Generator:
    """A generator seeded from (stream, *key) through numpy's SeedSequence."""
    return np.random.default_rng([stream, *(int(k) for k in key)])
