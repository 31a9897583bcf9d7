"""Reproducible normal sampling and seed derivation.

Every random quantity in the package comes from one documented pipeline so
that the bits can be regenerated by any port:

1. Bit source: Philox4x64-10 with the 128-bit key ``(seed, 0)`` and the
   counter starting at zero (``numpy.random.Philox(key=seed)``), read through
   ``random_raw`` as a stream of unsigned 64-bit words.
2. Uniforms: a word ``w`` becomes ``(w >> 11) * 2**-53`` in ``[0, 1)``.
3. Normals: consecutive word pairs ``(w1, w2)`` go through Box-Muller,
   ``rho = sqrt(-2 ln(1 - u1))``, giving ``rho cos(2 pi u2)`` followed by
   ``rho sin(2 pi u2)``. Draw ``k`` of a stream is entry ``k`` in row-major
   order of whatever array is being filled.
"""

from __future__ import annotations

import hashlib
import struct

import numpy as np

_TWO_M53 = 2.0 ** -53
U64_MASK = (1 << 64) - 1


def check_seed(seed) -> int:
    seed = int(seed)
    if not 0 <= seed <= U64_MASK:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


class NormalStream:
    """Sequential standard-normal draws from a Philox key.

    Successive calls continue the same stream, so ``normals(a)`` followed by
    ``normals(b)`` yields the same values as a single ``normals(a + b)`` when
    ``a`` is even.
    """

    def __init__(self, seed: int):
        self.seed = check_seed(seed)
        self._bits = np.random.Philox(key=self.seed)

    def uniforms(self, count: int) -> np.ndarray:
        raw = self._bits.random_raw(int(count))
        return (raw >> np.uint64(11)).astype(np.float64) * _TWO_M53

    def normals(self, count: int) -> np.ndarray:
        count = int(count)
        pairs = (count + 1) // 2
        u = self.uniforms(2 * pairs).reshape(pairs, 2)
        rho = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
        theta = 2.0 * np.pi * u[:, 1]
        out = np.empty((pairs, 2))
        out[:, 0] = rho * np.cos(theta)
        out[:, 1] = rho * np.sin(theta)
        return out.reshape(-1)[:count]


def standard_normal(seed: int, shape) -> np.ndarray:
    shape = (int(shape),) if np.ndim(shape) == 0 else tuple(int(k) for k in shape)
    count = int(np.prod(shape, dtype=np.int64))
    return NormalStream(seed).normals(count).reshape(shape)


def generator(seed: int) -> np.random.Generator:
    """numpy Generator over the same Philox key, for sampling tasks
    (permutations, subsets) that do not need cross-language bit stability."""
    return np.random.Generator(np.random.Philox(key=check_seed(seed)))


def derive_seed(master_seed: int, role: str, index: int = 0) -> int:
    """Child seed for ``(master_seed, role, index)``.

    The first 8 bytes (little-endian) of BLAKE2b-64 over
    ``u64le(master_seed) || utf8(role) || 0x00 || u64le(index)``.
    """
    payload = (
        struct.pack("<Q", check_seed(master_seed))
        + role.encode("utf-8")
        + b"\x00"
        + struct.pack("<Q", int(index) & U64_MASK)
    )
    digest = hashlib.blake2b(payload, digest_size=8).digest()
    return struct.unpack("<Q", digest)[0]
