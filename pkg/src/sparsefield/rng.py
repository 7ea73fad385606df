"""Hierarchical counter-based random streams.

Every random quantity in the library is drawn from a :class:`Stream` addressed
by a path such as ``(seed, "field", replication, "pcgp", M)``.  Each path maps
to its own Philox key through :class:`numpy.random.SeedSequence`, so results
depend only on the path and never on scheduling, thread count or the order in
which streams are visited.
"""
from __future__ import annotations

import zlib

import numpy as np


def _key_part(k) -> int:
    if isinstance(k, (bool, np.bool_)):
        raise TypeError("stream keys must be ints or strings")
    if isinstance(k, (int, np.integer)):
        if k < 0:
            raise ValueError("stream keys must be non-negative")
        return int(k)
    if isinstance(k, str):
        # stable across interpreter runs, unlike hash()
        return zlib.crc32(k.encode("utf-8")) | (1 << 32)
    raise TypeError(f"unsupported stream key {k!r}")


class Stream:
    """A node in the stream tree.

    Parameters
    ----------
    seed : int
        Master seed (non-negative, up to 64 bits).
    *path : int or str
        Keys identifying the substream below the master seed.
    """

    __slots__ = ("seed", "path")

    def __init__(self, seed: int, *path):
        seed = int(seed)
        if seed < 0:
            raise ValueError("seed must be non-negative")
        self.seed = seed
        self.path = tuple(_key_part(k) for k in path)

    def child(self, *keys) -> "Stream":
        s = Stream.__new__(Stream)
        s.seed = self.seed
        s.path = self.path + tuple(_key_part(k) for k in keys)
        return s

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the start of this stream."""
        ss = np.random.SeedSequence(self.seed, spawn_key=self.path)
        return np.random.Generator(np.random.Philox(ss))

    def normals(self, n: int) -> np.ndarray:
        return self.generator().standard_normal(int(n))

    def normals_at(self, ids) -> np.ndarray:
        """Standard normals addressed by stable non-negative integer ids.

        The value for id ``t`` is the ``t``-th draw of this stream, so it does
        not depend on which other ids are requested or in what order.
        """
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size == 0:
            return np.empty(0)
        if ids.min() < 0:
            raise ValueError("ids must be non-negative")
        return self.normals(int(ids.max()) + 1)[ids]

    def uniforms(self, shape) -> np.ndarray:
        return self.generator().random(shape)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator().permutation(int(n))

    def __repr__(self):
        return f"Stream({self.seed}, path={self.path})"

    def __eq__(self, other):
        return isinstance(other, Stream) and (self.seed, self.path) == (other.seed, other.path)

    def __hash__(self):
        return hash((self.seed, self.path))


def as_stream(rng) -> Stream:
    """Accept a :class:`Stream` or an integer seed."""
    if isinstance(rng, Stream):
        return rng
    if isinstance(rng, (int, np.integer)) and not isinstance(rng, bool):
        return Stream(int(rng))
    raise TypeError(f"expected a Stream or an integer seed, got {type(rng).__name__}")
