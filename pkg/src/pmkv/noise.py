"""Counter-based Gaussian noise.

Every variate is a pure function of ``(seed, stream, particle, step, coordinate)``,
computed with the Philox4x32-10 block cipher, so a given increment does not depend
on evaluation order, chunking, or worker count. Two chains that use the same
policy receive identical increments, which is how synchronous coupling is built.
"""

from dataclasses import dataclass

import numpy as np

_MASK32 = np.uint64(0xFFFFFFFF)
_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = 0x9E3779B9
_W1 = 0xBB67AE85
_ROUNDS = 10

# streams reserved for internal draws, kept away from user stream numbers
STREAM_INITIAL = 0x4000_0000
STREAM_SUBSAMPLE = 0x4000_0001
STREAM_DIRECTIONS = 0x4000_0002


def philox4x32(c0, c1, c2, c3, k0, k1, rounds=_ROUNDS):
    """Vectorised Philox4x32 on uint32-valued arrays; returns four uint64 arrays < 2**32."""
    c0, c1, c2, c3 = (np.asarray(c, dtype=np.uint64) & _MASK32 for c in (c0, c1, c2, c3))
    c0, c1, c2, c3 = np.broadcast_arrays(c0, c1, c2, c3)
    k0 = int(k0) & 0xFFFFFFFF
    k1 = int(k1) & 0xFFFFFFFF
    for _ in range(rounds):
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0, lo0 = p0 >> np.uint64(32), p0 & _MASK32
        hi1, lo1 = p1 >> np.uint64(32), p1 & _MASK32
        c0, c1, c2, c3 = (
            hi1 ^ c1 ^ np.uint64(k0),
            lo1,
            hi0 ^ c3 ^ np.uint64(k1),
            lo0,
        )
        k0 = (k0 + _W0) & 0xFFFFFFFF
        k1 = (k1 + _W1) & 0xFFFFFFFF
    return c0, c1, c2, c3


def _to_unit(hi, lo):
    # 53-bit uniform in [0, 1)
    return ((hi >> np.uint64(5)).astype(np.float64) * 67108864.0
            + (lo >> np.uint64(6)).astype(np.float64)) / 9007199254740992.0


@dataclass(frozen=True)
class NoisePolicy:
    """Global seed plus a stream id; ``index_map`` relabels particle keys (mean-field symmetry tests)."""

    seed: int = 0
    stream: int = 0
    index_map: tuple = None

    def _key(self):
        s = int(self.seed)
        return (s & 0xFFFFFFFF), ((s >> 32) ^ (int(self.stream) * 0x85EBCA6B)) & 0xFFFFFFFF

    def with_stream(self, stream):
        return NoisePolicy(self.seed, stream, self.index_map)

    def _particles(self, particles):
        idx = np.asarray(particles, dtype=np.int64)
        if self.index_map is not None:
            idx = np.asarray(self.index_map, dtype=np.int64)[idx]
        return idx

    def uniforms(self, particles, step, ncols):
        """Uniforms in [0, 1) of shape (len(particles), ncols) keyed by (particle, step, column)."""
        idx = self._particles(particles).astype(np.uint64)
        npairs = (ncols + 1) // 2
        col = np.arange(npairs, dtype=np.uint64)
        step = int(step)
        k0, k1 = self._key()
        x0, x1, x2, x3 = philox4x32(idx[:, None], step & 0xFFFFFFFF, step >> 32, col[None, :], k0, k1)
        u = np.empty((idx.size, 2 * npairs))
        u[:, 0::2] = _to_unit(x0, x1)
        u[:, 1::2] = _to_unit(x2, x3)
        return u[:, :ncols]

    def normals(self, particles, step, ncols):
        """Standard normals of shape (len(particles), ncols) via Box-Muller on keyed uniforms."""
        idx = self._particles(particles).astype(np.uint64)
        npairs = (ncols + 1) // 2
        col = np.arange(npairs, dtype=np.uint64)
        step = int(step)
        k0, k1 = self._key()
        x0, x1, x2, x3 = philox4x32(idx[:, None], step & 0xFFFFFFFF, step >> 32, col[None, :], k0, k1)
        u1 = 1.0 - _to_unit(x0, x1)  # (0, 1]
        u2 = _to_unit(x2, x3)
        rad = np.sqrt(-2.0 * np.log(u1))
        ang = 2.0 * np.pi * u2
        z = np.empty((idx.size, 2 * npairs))
        z[:, 0::2] = rad * np.cos(ang)
        z[:, 1::2] = rad * np.sin(ang)
        return z[:, :ncols]
