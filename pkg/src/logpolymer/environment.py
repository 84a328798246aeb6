"""Random environments: inverse-gamma weights, their CDF, and monotone recoupling."""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .rng import RngStream, field_log_gamma, field_uniform, stream_key

Coord = tuple[int, int]

_MAGIC = b"LGPWFLD\x00"
_VERSION = 1
_HEADER = struct.Struct("<8sI4qdQQ")

BULK_STREAM = 0
UNIFORM_STREAM = 1


def sample_gamma(theta: float, rng: RngStream, size=None):
    """Ga(theta) draws (rate one) by rejection; exact for every theta > 0."""
    lg = rng.log_gamma(theta, size)
    return np.exp(lg) if size is not None else math.exp(lg)


def sample_inverse_gamma(theta: float, rng: RngStream, size=None):
    """Reciprocal of the Ga(theta) draw the same stream state would give."""
    lg = rng.log_gamma(theta, size)
    return 1.0 / np.exp(lg) if size is not None else 1.0 / math.exp(lg)


def sample_log_inverse_gamma(theta: float, rng: RngStream, size=None):
    lg = rng.log_gamma(theta, size)
    return -lg


def inv_gamma_cdf(theta: float, x):
    """P(Y <= x) for Y ~ Ga^-1(theta): the upper regularized incomplete gamma at 1/x."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        out = special.gammaincc(theta, 1.0 / x)
    out = np.where(x <= 0.0, 0.0, out)
    return float(out) if out.ndim == 0 else out


def inv_gamma_sf(theta: float, x):
    """P(Y > x) for Y ~ Ga^-1(theta), computed directly for accuracy in the upper tail."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        out = special.gammainc(theta, 1.0 / x)
    out = np.where(x <= 0.0, 1.0, out)
    return float(out) if out.ndim == 0 else out


class QuantileError(RuntimeError):
    pass


_TINY = 1e-280


def _log_lower(theta, s):
    """log P(G <= e^s) for G ~ Ga(theta), with the small-argument series where scipy underflows."""
    s = np.asarray(s, dtype=float)
    z = np.exp(s)
    with np.errstate(divide="ignore"):
        v = special.gammainc(theta, z)
        series = theta * s - z - math.lgamma(theta + 1.0) + np.log1p(z / (theta + 1.0) + z * z / ((theta + 1.0) * (theta + 2.0)))
        return np.where(v > _TINY, np.log(np.maximum(v, _TINY)), series)


def _log_upper(theta, s):
    """log P(G > e^s), switching to the asymptotic expansion deep in the tail."""
    s = np.asarray(s, dtype=float)
    z = np.exp(s)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        v = special.gammaincc(theta, z)
        a1 = theta - 1.0
        corr = 1.0 + a1 / z + a1 * (theta - 2.0) / z**2 + a1 * (theta - 2.0) * (theta - 3.0) / z**3
        asym = a1 * s - z - math.lgamma(theta) + np.log(corr)
        return np.where(v > _TINY, np.log(np.maximum(v, _TINY)), asym)


def _gamma_log_quantile(theta: float, log_p: np.ndarray, upper: np.ndarray) -> np.ndarray:
    """Solve for s = log g with log P(G <= g) = log_p (or log P(G > g) where ``upper``).

    Bracketed Newton iteration in s with a bisection fallback.
    """
    lgam = math.lgamma(theta)
    n = log_p.shape[0]
    s = np.full(n, math.log(theta))
    sign = np.where(upper, -1.0, 1.0)  # the target is increasing in s iff not upper

    def h(sv):
        with np.errstate(divide="ignore", over="ignore"):
            val = np.where(upper, _log_upper(theta, sv), _log_lower(theta, sv))
        return val - log_p

    lo = s - 1.0
    hi = s + 1.0
    for _ in range(64):
        hl = sign * h(lo)
        bad = ~(hl < 0.0)
        if not bad.any():
            break
        lo = np.where(bad, lo - 2.0 * (hi - lo), lo)
    for _ in range(64):
        hh = sign * h(hi)
        bad = ~(hh > 0.0)
        if not bad.any():
            break
        hi = np.where(bad, hi + 2.0 * (hi - lo), hi)
    if not (np.all(sign * h(lo) < 0.0) and np.all(sign * h(hi) > 0.0)):
        raise QuantileError(f"could not bracket the quantile for shape {theta}")
    s = 0.5 * (lo + hi)
    done = np.zeros(n, dtype=bool)
    for _ in range(200):
        hs = h(s)
        g = sign * hs
        lo = np.where(g < 0.0, s, lo)
        hi = np.where(g > 0.0, s, hi)
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            log_dens = theta * s - np.exp(s) - lgam
            cdf_log = hs + log_p
            deriv = sign * np.exp(log_dens - cdf_log)
            step = hs / deriv
        new = s - step
        inside = np.isfinite(new) & (new > lo) & (new < hi)
        new = np.where(inside, new, 0.5 * (lo + hi))
        conv = np.abs(new - s) <= 4e-16 * np.maximum(1.0, np.abs(s))
        conv |= (hi - lo) <= 4e-16 * np.maximum(1.0, np.abs(s))
        s = np.where(done, s, new)
        done |= conv | (g == 0.0)
        if done.all():
            return s
    raise QuantileError(
        f"quantile iteration did not converge for shape {theta}: {int((~done).sum())} of {n} entries open"
    )


def inv_gamma_log_quantile_from_tails(theta: float, log_cdf: np.ndarray, log_sf: np.ndarray) -> np.ndarray:
    """log F^-1 for Ga^-1(theta) given both tail probabilities in log form.

    The smaller tail drives the solve so probabilities near one keep precision.
    Y <= y iff G >= 1/y, so the CDF of Y is the upper tail of G.
    """
    log_cdf = np.atleast_1d(np.asarray(log_cdf, dtype=float)).ravel()
    log_sf = np.atleast_1d(np.asarray(log_sf, dtype=float)).ravel()
    use_upper = log_cdf <= log_sf
    target = np.where(use_upper, log_cdf, log_sf)
    s = _gamma_log_quantile(theta, target, use_upper)
    return -s


def inv_gamma_quantile(theta: float, u):
    u = np.asarray(u, dtype=float)
    if np.any((u <= 0.0) | (u >= 1.0)):
        raise ValueError("quantile level must lie in (0, 1)")
    flat = np.atleast_1d(u).ravel()
    out = np.exp(inv_gamma_log_quantile_from_tails(theta, np.log(flat), np.log1p(-flat)))
    return float(out[0]) if u.ndim == 0 else out.reshape(u.shape)


def monotone_recouple_log(log_x, theta_from: float, theta_to: float) -> np.ndarray:
    """log of F_to^-1(F_from(x)) for inverse-gamma CDFs, input and output in logs."""
    log_x = np.asarray(log_x, dtype=float)
    if theta_from == theta_to:
        return log_x.copy()
    flat = np.atleast_1d(log_x).ravel()
    # Y <= x iff G >= 1/x
    log_cdf = _log_upper(theta_from, -flat)
    log_sf = _log_lower(theta_from, -flat)
    out = inv_gamma_log_quantile_from_tails(theta_to, log_cdf, log_sf)
    return out.reshape(log_x.shape)


def monotone_recouple(x, theta_from: float, theta_to: float):
    """Quantile coupling F_to^-1(F_from(x)) between Ga^-1(theta_from) and Ga^-1(theta_to)."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0.0):
        raise ValueError("recoupling needs positive inputs")
    if theta_from == theta_to:
        return float(x) if x.ndim == 0 else x.copy()
    out = np.exp(monotone_recouple_log(np.log(x), theta_from, theta_to))
    return float(out) if x.ndim == 0 else out


def _as_coord(p) -> Coord:
    return (int(p[0]), int(p[1]))


@dataclass
class WeightField:
    """Log vertex weights on the rectangle [lo, hi] (inclusive).

    ``logw[i, j]`` is the log weight at (lo[0] + i, lo[1] + j).
    """

    lo: Coord
    hi: Coord
    logw: np.ndarray
    sigma: float = float("nan")
    seed: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.lo = _as_coord(self.lo)
        self.hi = _as_coord(self.hi)
        shape = (self.hi[0] - self.lo[0] + 1, self.hi[1] - self.lo[1] + 1)
        if shape[0] < 1 or shape[1] < 1:
            raise ValueError(f"empty rectangle {self.lo}..{self.hi}")
        if self.logw.shape != shape:
            raise ValueError(f"weight array shape {self.logw.shape} does not match rectangle {shape}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.logw.shape

    def contains(self, x) -> bool:
        return self.lo[0] <= x[0] <= self.hi[0] and self.lo[1] <= x[1] <= self.hi[1]

    def index(self, x) -> tuple[int, int]:
        if not self.contains(x):
            raise IndexError(f"vertex {tuple(x)} outside field {self.lo}..{self.hi}")
        return (int(x[0]) - self.lo[0], int(x[1]) - self.lo[1])

    def log_weight(self, x) -> float:
        return float(self.logw[self.index(x)])

    def weights(self) -> np.ndarray:
        return np.exp(self.logw)

    def subfield(self, lo, hi) -> "WeightField":
        lo = _as_coord(lo)
        hi = _as_coord(hi)
        i0, j0 = self.index(lo)
        i1, j1 = self.index(hi)
        return WeightField(lo, hi, self.logw[i0 : i1 + 1, j0 : j1 + 1].copy(), self.sigma, self.seed, dict(self.meta))

    def with_log_weights(self, logw: np.ndarray) -> "WeightField":
        return WeightField(self.lo, self.hi, logw, self.sigma, self.seed, dict(self.meta))

    @classmethod
    def from_weights(cls, lo, weights) -> "WeightField":
        weights = np.asarray(weights, dtype=float)
        if np.any(weights <= 0.0):
            raise ValueError("weights must be positive")
        lo = _as_coord(lo)
        hi = (lo[0] + weights.shape[0] - 1, lo[1] + weights.shape[1] - 1)
        return cls(lo, hi, np.log(weights))

    @classmethod
    def constant(cls, lo, hi, value: float = 1.0) -> "WeightField":
        lo = _as_coord(lo)
        hi = _as_coord(hi)
        shape = (hi[0] - lo[0] + 1, hi[1] - lo[1] + 1)
        if shape[0] < 1 or shape[1] < 1:
            raise ValueError(f"empty rectangle {lo}..{hi}")
        return cls(lo, hi, np.full(shape, math.log(value)))

    def dump(self, path) -> None:
        """Binary dump: header then row-major little-endian float64 log weights."""
        header = _HEADER.pack(
            _MAGIC, _VERSION, self.lo[0], self.lo[1], self.hi[0], self.hi[1], float(self.sigma), int(self.seed) & ((1 << 64) - 1),
            int(self.meta.get("stream", 0)) & ((1 << 64) - 1),
        )
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(np.ascontiguousarray(self.logw, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "WeightField":
        with open(path, "rb") as fh:
            raw = fh.read()
        if len(raw) < _HEADER.size:
            raise ValueError("truncated weight file")
        magic, version, x0, y0, x1, y1, sigma, seed, stream = _HEADER.unpack_from(raw)
        if magic != _MAGIC:
            raise ValueError("not a weight field file")
        if version != _VERSION:
            raise ValueError(f"unsupported weight file version {version}")
        shape = (x1 - x0 + 1, y1 - y0 + 1)
        payload = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
        if payload.size != shape[0] * shape[1]:
            raise ValueError("weight file payload does not match its header")
        return cls((x0, y0), (x1, y1), payload.reshape(shape).astype(float), sigma, seed, {"stream": stream})


def make_bulk_field(lo, hi, sigma: float, seed: int, stream: int = BULK_STREAM) -> WeightField:
    """i.i.d. Ga^-1(sigma) weights addressed by vertex coordinates.

    Every vertex has its own counter-based key, so any sub-rectangle equals a
    fresh generation on that sub-rectangle with the same seed and stream.
    """
    if not sigma > 0.0:
        raise ValueError("sigma must be positive")
    lo = _as_coord(lo)
    hi = _as_coord(hi)
    n1, n2 = hi[0] - lo[0] + 1, hi[1] - lo[1] + 1
    if n1 < 1 or n2 < 1:
        raise ValueError(f"empty rectangle {lo}..{hi}")
    key = stream_key(seed, stream)
    logw = -field_log_gamma(key, lo[0], lo[1], n1, n2, float(sigma))
    return WeightField(lo, hi, logw, float(sigma), int(seed), {"stream": int(stream)})


@dataclass
class UniformField:
    lo: Coord
    hi: Coord
    values: np.ndarray

    def index(self, x) -> tuple[int, int]:
        return (int(x[0]) - self.lo[0], int(x[1]) - self.lo[1])


def make_uniform_field(lo, hi, seed: int, stream: int = UNIFORM_STREAM) -> UniformField:
    lo = _as_coord(lo)
    hi = _as_coord(hi)
    n1, n2 = hi[0] - lo[0] + 1, hi[1] - lo[1] + 1
    if n1 < 1 or n2 < 1:
        raise ValueError(f"empty rectangle {lo}..{hi}")
    return UniformField(lo, hi, field_uniform(stream_key(seed, stream), lo[0], lo[1], n1, n2))


@dataclass
class BoundaryWeights:
    """Stationary boundary at base o: horizontal I ~ Ga^-1(sigma - alpha), vertical J ~ Ga^-1(alpha).

    ``log_i[k - 1]`` sits at o + k e1 and ``log_j[l - 1]`` at o + l e2.
    """

    base: Coord
    alpha: float
    sigma: float
    log_i: np.ndarray
    log_j: np.ndarray

    @classmethod
    def sample(cls, base, alpha: float, sigma: float, m: int, n: int, rng: RngStream) -> "BoundaryWeights":
        if not 0.0 < alpha < sigma:
            raise ValueError("stationary boundary needs 0 < alpha < sigma")
        log_i = sample_log_inverse_gamma(sigma - alpha, rng, m) if m > 0 else np.empty(0)
        log_j = sample_log_inverse_gamma(alpha, rng, n) if n > 0 else np.empty(0)
        return cls(_as_coord(base), float(alpha), float(sigma), log_i, log_j)
