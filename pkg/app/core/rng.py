"""
Counter-based random streams

Every path owns a Philox stream keyed by (master_seed, path_index, substream),
so path i is the same no matter how paths are spread over workers.
"""

from enum import IntEnum
from typing import Tuple, Union

import numpy as np
from scipy.special import ndtri

_MANTISSA_BITS = 53
_UNIT = 2.0 ** -_MANTISSA_BITS


class Substream(IntEnum):
    """Independent noise sources attached to one path"""

    DRIVER = 0       # W of the prelimit system
    INTERFACE = 1    # W1, the interface Brownian motion of a limit path
    SINGULAR = 2     # W0 / W2, the Brownian motion run on the local-time clock
    CROSSCHECK = 3   # direct Euler-Maruyama of the limit interface diffusion
    EXCURSION = 4    # boundary excursions
    SAMPLING = 5     # assumption sampling and other bookkeeping draws


class PathStream:
    """Gaussian/uniform draws from one counter-based stream"""

    def __init__(self, master_seed: int, path_index: int = 0, substream: int = Substream.DRIVER):
        self.master_seed = int(master_seed)
        self.path_index = int(path_index)
        self.substream = int(substream)
        seed_seq = np.random.SeedSequence(
            entropy=self.master_seed & 0xFFFFFFFFFFFFFFFF,
            spawn_key=(self.path_index, self.substream),
        )
        self.bit_generator = np.random.Philox(seed_seq)

    def uniforms(self, shape: Union[int, Tuple[int, ...]]) -> np.ndarray:
        """Uniforms in the open interval (0, 1), one raw counter output each"""
        size = int(np.prod(shape))
        raw = self.bit_generator.random_raw(size)
        values = ((raw >> np.uint64(64 - _MANTISSA_BITS)).astype(np.float64) + 0.5) * _UNIT
        return values.reshape(shape)

    def normals(self, shape: Union[int, Tuple[int, ...]]) -> np.ndarray:
        """Standard normals by inverse CDF"""
        return ndtri(self.uniforms(shape))


def batch_normals(
    master_seed: int,
    path_indices: np.ndarray,
    substream: int,
    shape: Tuple[int, ...],
) -> np.ndarray:
    """Stack per-path normal blocks of the given shape along a leading axis"""
    out = np.empty((len(path_indices),) + tuple(shape))
    for row, index in enumerate(path_indices):
        out[row] = PathStream(master_seed, int(index), substream).normals(shape)
    return out
