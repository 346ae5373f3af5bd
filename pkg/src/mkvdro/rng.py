"""Counter-based random streams.

A stream is a Philox4x64 keyed by ``(seed, stream)``; the ``j``-th 64-bit
word of the stream is a pure function of ``(seed, stream, j)``, so any slice
can be regenerated without producing the words before it.
"""

import numpy as np
from scipy.special import ndtri

_WORDS_PER_BLOCK = 4
_MASK64 = 2**64 - 1


def _raw_words(seed, stream, start, count):
    key = np.array([int(seed) & _MASK64, int(stream) & _MASK64], dtype=np.uint64)
    block, offset = divmod(int(start), _WORDS_PER_BLOCK)
    bitgen = np.random.Philox(key=key, counter=block)
    return bitgen.random_raw(offset + int(count))[offset:]


def philox_uniforms(seed, stream, start, count):
    """Uniforms on the open interval (0, 1) from 53-bit words."""
    words = _raw_words(seed, stream, start, count)
    return ((words >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def philox_normals(seed, stream, start, count):
    """Standard normals by inversion, one word per draw."""
    return ndtri(philox_uniforms(seed, stream, start, count))
