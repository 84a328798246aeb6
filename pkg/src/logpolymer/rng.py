"""Counter-based random streams.

Every draw is a pure function of (key, counter): the key comes from a
(seed, stream id) pair, and lattice fields derive one key per vertex from the
vertex coordinates. The mixing function is the SplitMix64 finalizer, so a
stream with a fixed key is exactly the SplitMix64 sequence started at that key.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_COORD_OFFSET = 1 << 31
_TWO_M53 = 1.0 / 9007199254740992.0
_MASK64 = (1 << 64) - 1


@njit(cache=True)
def mix64(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def uniform_at(key, ctr):
    """Uniform on the open interval (0, 1) for counter ``ctr`` of ``key``."""
    r = mix64(np.uint64(key) + np.uint64(ctr + 1) * _GOLDEN)
    return (float(r >> np.uint64(11)) + 0.5) * _TWO_M53


@njit(cache=True)
def vertex_key(key, x, y):
    cx = np.uint64(x + _COORD_OFFSET)
    cy = np.uint64(y + _COORD_OFFSET)
    packed = (cx << np.uint64(32)) | cy
    return mix64(np.uint64(key) ^ mix64(packed + _GOLDEN))


@njit(cache=True)
def log_gamma_variate(key, ctr, shape):
    """Log of a Ga(shape) draw by Marsaglia-Tsang rejection.

    Shapes below one draw at shape + 1 and multiply by U^(1/shape), which is
    applied in the log domain so tiny shapes do not underflow. Returns the
    value and the advanced counter.
    """
    boost = shape < 1.0
    a = shape + 1.0 if boost else shape
    d = a - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)
    while True:
        u1 = uniform_at(key, ctr)
        u2 = uniform_at(key, ctr + 1)
        ctr += 2
        x = math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)
        v = 1.0 + c * x
        if v <= 0.0:
            continue
        v = v * v * v
        u = uniform_at(key, ctr)
        ctr += 1
        if math.log(u) < 0.5 * x * x + d - d * v + d * math.log(v):
            break
    lg = math.log(d) + math.log(v)
    if boost:
        u = uniform_at(key, ctr)
        ctr += 1
        lg += math.log(u) / shape
    return lg, ctr


@njit(cache=True)
def _stream_log_gamma(key, ctr, shape, n):
    out = np.empty(n)
    for i in range(n):
        out[i], ctr = log_gamma_variate(key, ctr, shape)
    return out, ctr


@njit(cache=True)
def _stream_uniform(key, ctr, n):
    out = np.empty(n)
    for i in range(n):
        out[i] = uniform_at(key, ctr + i)
    return out


@njit(cache=True)
def _stream_normal(key, ctr, n):
    out = np.empty(n)
    for i in range(n):
        u1 = uniform_at(key, ctr + 2 * i)
        u2 = uniform_at(key, ctr + 2 * i + 1)
        out[i] = math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)
    return out


@njit(cache=True)
def field_log_gamma(key, x0, y0, n1, n2, shape):
    """Per-vertex log Ga(shape) draws on a rectangle, each keyed by its coordinates."""
    out = np.empty((n1, n2))
    for i in range(n1):
        for j in range(n2):
            out[i, j], _ = log_gamma_variate(vertex_key(key, x0 + i, y0 + j), 0, shape)
    return out


@njit(cache=True)
def field_uniform(key, x0, y0, n1, n2):
    out = np.empty((n1, n2))
    for i in range(n1):
        for j in range(n2):
            out[i, j] = uniform_at(vertex_key(key, x0 + i, y0 + j), 0)
    return out


def stream_key(seed: int, stream_id: int) -> np.uint64:
    """Key of stream ``stream_id`` under ``seed``; both are 64-bit integers."""
    seed &= _MASK64
    stream_id &= _MASK64
    k = int(mix64(np.uint64(seed ^ 0x243F6A8885A308D3)))
    return np.uint64(int(mix64(np.uint64((k + stream_id * 0x9E3779B97F4A7C15) & _MASK64))))


def derive_stream_id(*parts: int) -> int:
    """Fold integers into one 64-bit stream id (used for replica addressing)."""
    h = 0x6A09E667F3BCC908
    for p in parts:
        h = int(mix64(np.uint64((h ^ (int(p) & _MASK64)) & _MASK64)))
        h = (h + 0x9E3779B97F4A7C15) & _MASK64
    return h


class RngStream:
    """Sequential stream over the counter space of one (seed, stream id) key."""

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        self.key = stream_key(self.seed, self.stream_id)
        self.counter = 0

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id}, counter={self.counter})"

    def __getstate__(self):
        return (self.seed, self.stream_id, self.counter)

    def __setstate__(self, state):
        self.seed, self.stream_id, self.counter = state
        self.key = stream_key(self.seed, self.stream_id)

    def spawn(self, *parts: int) -> "RngStream":
        """Independent child stream addressed by ``parts``."""
        return RngStream(self.seed, derive_stream_id(self.stream_id, *parts))

    def uniform(self, size=None):
        n = 1 if size is None else int(np.prod(size))
        out = _stream_uniform(self.key, self.counter, n)
        self.counter += n
        return float(out[0]) if size is None else out.reshape(size)

    def normal(self, size=None):
        n = 1 if size is None else int(np.prod(size))
        out = _stream_normal(self.key, self.counter, n)
        self.counter += 2 * n
        return float(out[0]) if size is None else out.reshape(size)

    def log_gamma(self, shape: float, size=None):
        if not shape > 0.0:
            raise ValueError(f"gamma shape must be positive, got {shape!r}")
        n = 1 if size is None else int(np.prod(size))
        out, self.counter = _stream_log_gamma(self.key, self.counter, float(shape), n)
        return float(out[0]) if size is None else out.reshape(size)

    def integers(self, low: int, high: int, size=None):
        """Integers in [low, high)."""
        u = self.uniform(size)
        return (low + np.floor(np.asarray(u) * (high - low))).astype(np.int64) if size is not None else int(
            low + math.floor(u * (high - low))
        )

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.uniform(n), kind="stable")
