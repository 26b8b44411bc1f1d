"""Counter-based splittable random number streams.

Every random draw in the library is addressed by a tuple
(seed, path, jump, replica, tag).  Streams built from distinct tuples are
statistically independent, and the same tuple always reproduces the same
draws, regardless of scheduling or worker count.  This is what makes
parallel Monte Carlo runs bit-reproducible.

Implementation: numpy's Philox counter-based generator.  The 64-bit seed
and a tag id form the Philox key; (path, jump, replica) fill the counter.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

# purpose tags
TAG_MARK = 1            # jump sizes / marks of the Poisson measure
TAG_TIME = 2            # jump times
TAG_RHO = 3             # auxiliary rho-blocks (gradient enrichment)
TAG_NESTED = 4          # nested Brownian path attached to a jump
TAG_NOISE = 5           # continuous driver / miscellaneous noise

_TAGS = (TAG_MARK, TAG_TIME, TAG_RHO, TAG_NESTED, TAG_NOISE)


@dataclass(frozen=True)
class RngStream:
    """Addressable random stream.

    A stream is cheap to create; `generator()` materialises a numpy
    Generator positioned at the start of the stream.
    """

    seed: int
    path: int = 0
    jump: int = 0
    replica: int = 0
    tag: int = TAG_NOISE

    def child(self, *, path=None, jump=None, replica=None, tag=None) -> "RngStream":
        """Derive a sub-stream with some coordinates replaced."""
        kw = {}
        if path is not None:
            kw["path"] = path
        if jump is not None:
            kw["jump"] = jump
        if replica is not None:
            kw["replica"] = replica
        if tag is not None:
            kw["tag"] = tag
        return replace(self, **kw)

    def generator(self) -> np.random.Generator:
        bitgen = np.random.Philox(
            counter=[self.path, self.jump, self.replica, 0],
            key=[self.seed & 0xFFFFFFFFFFFFFFFF, self.tag],
        )
        return np.random.Generator(bitgen)
