"""Counter-based keyed random streams.

Every random quantity in a run is drawn from an :class:`RngStream` whose key is
``(seed, domain, client, round)``. Output is a pure function of the key and the
word position inside the stream, so client updates can run in any order (or in
parallel) and still reproduce bit-for-bit.

The generator core is Philox-4x64 from numpy. Only ``random_raw`` is used;
numpy's ``Generator`` methods are avoided because their algorithms are not
stream-stable across numpy releases. Uniforms take the top 53 bits of a word,
normals use Box-Muller on consecutive uniform pairs.
"""
from __future__ import annotations

import enum

import numpy as np

_MASK64 = (1 << 64) - 1
_TWO_PI = 2.0 * np.pi


class Domain(enum.IntEnum):
    DATA_GEN = 0
    PARTITION = 1
    SPLIT = 2
    BATCH = 3
    CLIENT_SAMPLE = 4
    INIT = 5
    EVAL = 6


class RngStream:
    """A keyed random stream positioned at ``counter`` 64-bit words.

    Parameters
    ----------
    seed : int
        Global seed (u64).
    domain : Domain
        What the randomness is for; distinct domains never share output.
    client, round : int
        Sub-keys (u32 each). Callers may use ``round`` for any secondary
        index (epoch number, generation stage, ...).
    counter : int
        Starting word position.
    """

    def __init__(self, seed: int, domain: Domain, client: int = 0, round: int = 0,
                 counter: int = 0):
        if not 0 <= client < 2**32 or not 0 <= round < 2**32:
            raise ValueError("client and round must fit in 32 bits")
        if counter < 0:
            raise ValueError("counter must be non-negative")
        self.seed = int(seed) & _MASK64
        self.domain = Domain(domain)
        self.client = int(client)
        self.round = int(round)
        block, skip = divmod(int(counter), 4)
        self._bitgen = np.random.Philox(
            key=np.array([self.seed, int(self.domain)], dtype=np.uint64),
            counter=np.array([block, 0, self.round, self.client], dtype=np.uint64),
        )
        self._counter = block * 4
        if skip:
            self.raw(skip)

    @property
    def key(self) -> tuple[int, Domain, int, int]:
        return (self.seed, self.domain, self.client, self.round)

    @property
    def counter(self) -> int:
        return self._counter

    def __repr__(self) -> str:
        return (f"RngStream(seed={self.seed}, domain={self.domain.name}, "
                f"client={self.client}, round={self.round}, counter={self._counter})")

    def raw(self, n: int) -> np.ndarray:
        """Next ``n`` raw 64-bit words."""
        out = self._bitgen.random_raw(int(n))
        self._counter += int(n)
        return np.asarray(out, dtype=np.uint64).reshape(int(n))

    def uniform(self, n: int) -> np.ndarray:
        """``n`` floats in [0, 1) with 53 bits of resolution."""
        return (self.raw(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def normal(self, n: int) -> np.ndarray:
        """``n`` standard normals via Box-Muller (one word pair per two draws)."""
        pairs = (int(n) + 1) // 2
        u = self.uniform(2 * pairs).reshape(pairs, 2)
        radius = np.sqrt(-2.0 * np.log1p(-u[:, 0]))  # 1 - u is in (0, 1]
        angle = _TWO_PI * u[:, 1]
        z = np.empty((pairs, 2))
        z[:, 0] = radius * np.cos(angle)
        z[:, 1] = radius * np.sin(angle)
        return z.reshape(-1)[: int(n)]

    def permutation(self, n: int) -> np.ndarray:
        """A uniformly random permutation of ``range(n)`` (stable sort of random keys)."""
        return np.argsort(self.raw(n), kind="stable")


def draw_normal(mean: float, std: float, count: int, stream: RngStream) -> np.ndarray:
    """``count`` i.i.d. N(mean, std**2) draws from ``stream``."""
    if std < 0:
        raise ValueError(f"std must be non-negative, got {std}")
    return mean + std * stream.normal(count)


def sample_without_replacement(n: int, k: int, stream: RngStream) -> np.ndarray:
    """Sorted array of ``k`` distinct indices in ``[0, n)``; all subsets equiprobable."""
    if not 0 < k <= n:
        raise ValueError(f"need 0 < k <= n, got n={n}, k={k}")
    return np.sort(stream.permutation(n)[:k])
