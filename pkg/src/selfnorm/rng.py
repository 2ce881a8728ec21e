"""Splittable, counter-based random streams.

A :class:`SeedStream` is an immutable ``(seed, stream_id)`` pair.  Every call
to :meth:`SeedStream.generator` returns a *fresh* generator positioned at the
start of that stream, so two consumers holding equal streams see identical
draws.  Streams are backed by the Philox4x64 counter-based generator keyed
from ``SeedSequence([seed, stream_id])``; distinct ids give distinct keys.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

_U64 = (1 << 64) - 1


def _label_to_int(label) -> int:
    if isinstance(label, (int, np.integer)) and not isinstance(label, bool):
        if label < 0:
            raise ValueError("stream labels must be non-negative")
        return int(label) & _U64
    # floats / strings go through a stable digest; numpy scalars are
    # normalised first so 1.5 and np.float64(1.5) map to the same id
    if isinstance(label, (float, np.floating)):
        text = "f:" + float(label).hex()
    else:
        text = "s:" + str(label)
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


@dataclass(frozen=True)
class SeedStream:
    seed: int
    stream_id: int = 0

    def __post_init__(self):
        if not 0 <= int(self.seed) <= _U64:
            raise ValueError(f"seed must fit in 64 bits, got {self.seed}")
        if int(self.stream_id) < 0:
            raise ValueError("stream_id must be >= 0")
        object.__setattr__(self, "seed", int(self.seed))
        object.__setattr__(self, "stream_id", int(self.stream_id))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence([self.seed, self.stream_id & _U64, self.stream_id >> 64])
        return np.random.Generator(np.random.Philox(ss))

    def child(self, *labels) -> "SeedStream":
        """Derive a stream from this one and a tuple of labels.

        The derived id depends only on ``(stream_id, labels)``, never on call
        order, which is what makes block-parallel runs worker-count invariant.
        """
        h = hashlib.blake2b(digest_size=8)
        h.update(self.stream_id.to_bytes(16, "little", signed=False))
        for lab in labels:
            h.update(_label_to_int(lab).to_bytes(8, "little"))
        return SeedStream(self.seed, int.from_bytes(h.digest(), "little"))


def as_generator(stream) -> np.random.Generator:
    """Accept a SeedStream, a Generator, or an int seed."""
    if isinstance(stream, np.random.Generator):
        return stream
    if isinstance(stream, SeedStream):
        return stream.generator()
    if isinstance(stream, (int, np.integer)):
        return SeedStream(int(stream)).generator()
    raise TypeError(f"cannot build a generator from {type(stream).__name__}")
