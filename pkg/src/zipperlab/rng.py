"""Schedule-independent random streams.

Every random quantity in the library is addressed by a key
``(master_seed, purpose, trial)`` plus a position (usually a lattice site).
The key is hashed through :class:`numpy.random.SeedSequence` into a Philox
key, and the position selects a block of the counter.  Because Philox is a
counter-based generator, the uniforms belonging to site ``k`` of trial ``t``
are the same no matter which worker draws them, in which order, or whether
they are drawn alone or as part of a contiguous range.

Uniform variates are converted to the distributions we need by exact
transforms that consume a fixed number of uniforms per variate, which is what
keeps the site-to-counter mapping valid.
"""

from __future__ import annotations

import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence, TypeVar

import numpy as np

_SITE_OFFSET = 1 << 62  # maps negative site indices onto the unsigned counter
_MASK64 = (1 << 64) - 1

T = TypeVar("T")


def _purpose_code(purpose: str) -> int:
    return zlib.crc32(purpose.encode("utf-8"))


@dataclass(frozen=True)
class Stream:
    """A keyed family of uniform variates indexed by integer positions.

    ``block`` is the number of uniforms owned by one position; it must be a
    multiple of 4 because one Philox counter increment yields four 64-bit
    words.
    """

    master_seed: int
    purpose: str = "disorder"
    trial: int = 0

    def key(self) -> np.ndarray:
        seq = np.random.SeedSequence(
            entropy=int(self.master_seed) & _MASK64,
            spawn_key=(_purpose_code(self.purpose), int(self.trial) & _MASK64),
        )
        return seq.generate_state(2, np.uint64)

    def child(self, trial: int) -> "Stream":
        return Stream(self.master_seed, self.purpose, trial)

    def with_purpose(self, purpose: str) -> "Stream":
        return Stream(self.master_seed, purpose, self.trial)

    def uniforms(self, start: int, stop: int, block: int) -> np.ndarray:
        """Uniforms on [0, 1) for positions ``start..stop-1``, shape (stop-start, block)."""
        if block % 4:
            raise ValueError("block must be a multiple of 4")
        count = stop - start
        if count <= 0:
            return np.empty((0, block))
        counter0 = ((start + _SITE_OFFSET) * (block // 4)) & _MASK64
        counter = np.array([counter0, 0, 0, 0], dtype=np.uint64)
        gen = np.random.Generator(np.random.Philox(key=self.key(), counter=counter))
        return gen.random(count * block).reshape(count, block)

    def generator(self) -> np.random.Generator:
        """A conventional generator for this key, for draws not tied to sites."""
        return np.random.Generator(np.random.Philox(key=self.key()))


def complex_normals(u: np.ndarray) -> np.ndarray:
    """Standard complex Gaussians (E|g|^2 = 1) from pairs of uniforms.

    The last axis of ``u`` must have even length; consecutive pairs
    ``(u1, u2)`` map to ``sqrt(-log(1-u1)) * exp(2 pi i u2)``, which has
    exponential squared modulus and uniform phase, i.e. the circular law.
    """
    u1 = u[..., 0::2]
    u2 = u[..., 1::2]
    return np.sqrt(-np.log1p(-u1)) * np.exp(2j * np.pi * u2)


def parallel_map(fn: Callable[[int], T], n_items: int, workers: int = 1) -> list[T]:
    """Evaluate ``fn(i)`` for ``i in range(n_items)`` and return results in index order.

    Each item must derive its own randomness from its index, so the output
    does not depend on ``workers``.
    """
    if workers <= 1 or n_items <= 1:
        return [fn(i) for i in range(n_items)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(n_items)))


def ordered_mean_and_stderr(samples: Sequence[float] | np.ndarray) -> tuple[float, float]:
    """Sample mean and standard error, summed in index order."""
    x = np.asarray(samples, dtype=float)
    n = x.size
    if n == 0:
        return float("nan"), float("nan")
    mean = float(np.sum(x) / n)
    if n < 2:
        return mean, float("nan")
    var = float(np.sum((x - mean) ** 2) / (n - 1))
    return mean, float(np.sqrt(var / n))
