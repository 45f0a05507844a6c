"""
Counter-based Gaussian increments

Every standard normal is addressed by (stream tag, step index, replica,
particle, coordinate).  Philox is keyed by (master_seed, tag); its counter is
(block, step, replica, 0) and the word at index particle * d + coordinate of
that lane is the requested value.  The address does not involve the particle
count N, and a value never depends on which other values were drawn, in which
order, or by which thread.
"""

from dataclasses import dataclass
from enum import IntEnum

import numpy as np
from scipy import special

_MASK64 = (1 << 64) - 1
_WORDS_PER_BLOCK = 4
_UNIT = 2.0 ** -53


class StreamTag(IntEnum):
    BROWNIAN = 0
    INITIAL = 1
    INITIAL_ALT = 2
    PROXY = 3
    PROXY_INITIAL = 4


@dataclass(frozen=True)
class NoiseStream:
    master_seed: int
    silent: bool = False  # zero-variance hook for deterministic tests

    def words(self, tag: int, step_index: int, start: int, count: int, replica: int = 0) -> np.ndarray:
        """Raw 64-bit words [start, start + count) of the (tag, step, replica) lane"""
        block, skip = divmod(int(start), _WORDS_PER_BLOCK)
        bit_generator = np.random.Philox(
            key=np.array([int(self.master_seed) & _MASK64, int(tag)], dtype=np.uint64),
            counter=np.array([block, int(step_index), int(replica), 0], dtype=np.uint64),
        )
        raw = bit_generator.random_raw(count + skip)
        return raw[skip:]

    def uniforms(self, tag: int, step_index: int, start: int, count: int, replica: int = 0) -> np.ndarray:
        """Open-interval uniforms from the top 53 bits, offset to the cell midpoint"""
        raw = self.words(tag, step_index, start, count, replica)
        return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * _UNIT

    def normals(self, step_index: int, n_particles: int, dim: int, replica_start: int = 0,
                n_replicas: int = 1, tag: int = StreamTag.BROWNIAN) -> np.ndarray:
        """Standard normals of shape (n_replicas, n_particles, dim)"""
        shape = (n_replicas, n_particles, dim)
        if self.silent:
            return np.zeros(shape)
        count = n_particles * dim
        lanes = [self.uniforms(tag, step_index, 0, count, replica_start + r) for r in range(n_replicas)]
        return special.ndtri(np.stack(lanes)).reshape(shape)
