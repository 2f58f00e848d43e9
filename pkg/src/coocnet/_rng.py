"""Seeded random streams.

Every random draw in the package goes through :func:`make_rng`. A stream is
identified by a user seed plus a tuple of non-negative integers (image index,
epoch, retry number, ...). The tuple is hashed by ``numpy.random.SeedSequence``
into a 128-bit key for the Philox4x64-10 counter-based bit generator, so a
stream depends only on its identifiers and never on how many draws other
streams made. That is what lets parallel and serial corpus generation produce
the same bytes.
"""

import numpy as np

# Stream namespaces keep independent consumers of one seed from colliding.
SPLIT = 1
SYNTH = 2
INIT = 3
SHUFFLE = 4
SOURCES = 5


def make_rng(seed, *stream):
    seed = int(seed)
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    ss = np.random.SeedSequence([seed, *(int(s) for s in stream)])
    return np.random.Generator(np.random.Philox(ss))
