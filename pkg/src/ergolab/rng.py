"""Counter-based random sampling.

Every stochastic routine in the package draws from a Philox counter-based
generator keyed by ``(seed, stream)``.  Randomness is addressed, not
consumed: sample ``i`` of a given stream always reads the same 4-word
counter block regardless of chunk sizes, thread counts, or the order in
which ranges are requested.  That makes every estimate a pure function of
``(seed, stream, sample index)`` and is what the reproducibility guarantees
of the sampling estimators rest on.

Streams are small integers, one per independent purpose (orbit ensembles,
space averages, lemma candidates, ...) so that enlarging one stage's budget
never shifts another stage's draws.
"""

from __future__ import annotations

import numpy as np

# Stream ids.  Fixed forever; changing one silently changes every seeded
# result downstream.
STREAM_ORBITS = 1         # initial conditions for orbit ensembles
STREAM_SPACE_AVG = 2      # space-average sampling
STREAM_LEMMA_POINTS = 3   # candidate centers for the ball-lemma check
STREAM_LEMMA_BALLS = 4    # ball offsets for the ball-lemma check
STREAM_FLOW = 5           # flow-suite initial states
STREAM_ORBIT_SEED = 6     # seed point of a long empirical orbit

WORDS_PER_BLOCK = 4  # one Philox round emits four 64-bit words

_INV_2_53 = float(2.0**-53)
_U11 = np.uint64(11)


def raw_blocks(seed: int, stream: int, start: int, count: int) -> np.ndarray:
    """Return raw 64-bit words for blocks [start, start+count) of a stream.

    Shape ``(count, 4)`` of uint64.  Block ``k`` is independent of how any
    other block was (or was not) read.
    """
    if count < 0 or start < 0:
        raise ValueError("block range must be non-negative")
    bg = np.random.Philox(key=np.array([seed & (2**64 - 1), stream], dtype=np.uint64))
    state = bg.state
    state["state"]["counter"][0] = start
    bg.state = state
    words = bg.random_raw(WORDS_PER_BLOCK * count)
    return words.reshape(count, WORDS_PER_BLOCK)


def uniform01(words: np.ndarray) -> np.ndarray:
    """Map raw 64-bit words to uniform doubles in [0, 1).

    Uses the top 53 bits, identical to numpy's own double generation, so a
    word stream and a ``Generator.random`` stream agree bit for bit.
    """
    return (words >> _U11) * _INV_2_53
