"""Forward-secure pseudorandom stream from a SHA-256 hash chain.

    out_i     = SHA256(state_i || 0x01)
    state_i+1 = SHA256(state_i || 0x00),   state_0 = key

Every output block is split into four big-endian 64-bit words. Holding
``state_i`` reveals nothing about blocks ``< i``; the class deliberately
offers no way to step backwards or to re-derive an earlier state.
"""

import hashlib
import os

import numpy as np

KEY_BYTES = 32
_WORDS_PER_BLOCK = 4
_TWO_POW_53 = float(1 << 53)


def new_key(rng=None):
    """A 256-bit key, from ``rng`` (a numpy Generator) or the OS entropy pool."""
    if rng is None:
        return os.urandom(KEY_BYTES)
    return rng.bytes(KEY_BYTES)


def derive_keys(M, seed=None):
    """``M`` tier keys; reproducible only when ``seed`` is given."""
    rng = None if seed is None else np.random.default_rng([seed, 0x5EC])
    return [new_key(rng) for _ in range(M)]


class Fsprng:
    def __init__(self, state):
        if len(state) != KEY_BYTES:
            raise ValueError(f"state must be {KEY_BYTES} bytes")
        self._state = bytes(state)
        self.blocks = 0
        self._pending = []

    @property
    def state(self):
        """The current chain state (enough to continue, not to go back)."""
        return self._state

    def next_block(self):
        out = hashlib.sha256(self._state + b"\x01").digest()
        self._state = hashlib.sha256(self._state + b"\x00").digest()
        self.blocks += 1
        return out

    def words(self, n):
        """``n`` 64-bit words; a partially used block is kept for the next call."""
        words = self._pending[:n]
        self._pending = self._pending[n:]
        while len(words) < n:
            block = self.next_block()
            chunk = [int.from_bytes(block[8 * j : 8 * j + 8], "big") for j in range(_WORDS_PER_BLOCK)]
            take = n - len(words)
            words.extend(chunk[:take])
            self._pending = chunk[take:]
        return words

    def uniforms(self, n):
        """``n`` floats in [0, 1): each word is u64 / 2**64 truncated to 53 bits."""
        return np.array([(w >> 11) / _TWO_POW_53 for w in self.words(n)], dtype=np.float64)


def fsprng_stream(key, n):
    if n < 0:
        raise ValueError("n must be >= 0")
    return Fsprng(key).uniforms(n)
