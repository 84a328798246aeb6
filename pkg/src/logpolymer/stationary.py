"""Burke-type constructions for the log-gamma polymer.

The half-line map takes horizontal ratios I and bulk weights Y along a line
and produces the next level's ratios (the D output), the running vertical
ratio (the S output) and dual weights (the R output). Iterating the involution
``(I, J, Y) -> (Y(1 + I/J), Y(1 + J/I), (1/I + 1/J)^-1)`` from a seed performs
the map on a finite window. Everything here works with log values.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .environment import (
    BoundaryWeights,
    WeightField,
    monotone_recouple_log,
    sample_log_inverse_gamma,
)
from .numerics import digamma, trigamma
from .polymer import UNIT_BASE, LogZGrid, log_partition_forward
from .rng import RngStream

MAX_DEPTH = 1_000_000


@njit(cache=True)
def _log1pexp(x):
    if x > 0.0:
        return x + math.log1p(math.exp(-x))
    return math.log1p(math.exp(x))


@njit(cache=True)
def _half_line_kernel(li, ly, lseed):
    nb, length = li.shape
    it = np.empty((nb, length))
    lj = np.empty((nb, length))
    yt = np.empty((nb, length))
    for b in range(nb):
        prev = lseed[b]
        for k in range(length):
            d = li[b, k] - prev
            it[b, k] = ly[b, k] + _log1pexp(d)
            cur = ly[b, k] + _log1pexp(-d)
            # -log(1/I + 1/J_prev)
            yt[b, k] = li[b, k] - _log1pexp(d)
            lj[b, k] = cur
            prev = cur
    return it, lj, yt


@njit(cache=True)
def _columns_kernel(jcol, bulk, lseed):
    """Sweep columns: column k maps the previous column's vertical ratios with the bulk of column k.

    jcol (B, L): vertical ratios on column 0; bulk (B, m, L); lseed (B, m).
    Returns vertical ratios on columns 1..m and horizontal ratios at every (k, row).
    """
    nb, m, length = bulk.shape
    jout = np.empty((nb, m, length))
    iout = np.empty((nb, m, length))
    for b in range(nb):
        for k in range(m):
            prev = lseed[b, k]
            for r in range(length):
                inp = jcol[b, r] if k == 0 else jout[b, k - 1, r]
                d = inp - prev
                jout[b, k, r] = bulk[b, k, r] + _log1pexp(d)
                cur = bulk[b, k, r] + _log1pexp(-d)
                iout[b, k, r] = cur
                prev = cur
    return jout, iout


def _positive_check(*arrs):
    for a in arrs:
        a = np.asarray(a, dtype=float)
        if np.any(~(a > 0.0)) or np.any(~np.isfinite(a)):
            raise ValueError("involution inputs must be positive and finite")


def apply_involution(i, j, y):
    """(I, J, Y) -> (Y(1 + I/J), Y(1 + J/I), 1/(1/I + 1/J))."""
    _positive_check(i, j, y)
    i = np.asarray(i, dtype=float)
    j = np.asarray(j, dtype=float)
    y = np.asarray(y, dtype=float)
    out = (y * (1.0 + i / j), y * (1.0 + j / i), 1.0 / (1.0 / i + 1.0 / j))
    if i.ndim == 0:
        return tuple(float(v) for v in out)
    return out


def involution_log(li, lj, ly):
    li = np.asarray(li, dtype=float)
    lj = np.asarray(lj, dtype=float)
    ly = np.asarray(ly, dtype=float)
    return (
        ly + np.logaddexp(0.0, li - lj),
        ly + np.logaddexp(0.0, lj - li),
        -np.logaddexp(-li, -lj),
    )


@dataclass
class RatioSeq:
    """Positive values stored as logs on the integer window [start, start + len - 1]."""

    log_values: np.ndarray
    start: int
    tag: str = "J"
    param: float = float("nan")

    def __post_init__(self):
        self.log_values = np.asarray(self.log_values, dtype=float)
        if self.log_values.ndim != 1 or self.log_values.size == 0:
            raise ValueError("ratio sequence window must be nonempty")
        if not np.all(np.isfinite(self.log_values)):
            raise ValueError("ratio sequence entries must be positive and finite")
        if self.tag not in ("I", "J", "Y"):
            raise ValueError(f"unknown ratio tag {self.tag!r}")

    @property
    def stop(self) -> int:
        return self.start + self.log_values.size - 1

    def window(self) -> tuple[int, int]:
        return (self.start, self.stop)

    def at(self, k: int) -> float:
        return float(self.log_values[k - self.start])


def half_line_boundary(log_i, log_y, log_seed):
    """Seeded finite half-line construction.

    Iterates (I~_k, J_k, Y~_k) = Theta(I_k, J_{k-1}, Y_k) from J = seed at the left
    edge. Inputs are logs along the last axis (leading axes are replicas).
    Returns log I~, log J and log Y~ with the input shape.
    """
    li = np.asarray(log_i, dtype=float)
    ly = np.asarray(log_y, dtype=float)
    if li.shape != ly.shape or li.shape[-1] < 1:
        raise ValueError("half-line inputs must share a nonempty window")
    if not (np.all(np.isfinite(li)) and np.all(np.isfinite(ly))):
        raise ValueError("half-line inputs must be positive and finite")
    lead = li.shape[:-1]
    seed = np.broadcast_to(np.asarray(log_seed, dtype=float), lead).reshape(-1)
    if not np.all(np.isfinite(seed)):
        raise ValueError("seed must be positive and finite")
    it, lj, yt = _half_line_kernel(
        np.ascontiguousarray(li.reshape(-1, li.shape[-1])), np.ascontiguousarray(ly.reshape(-1, li.shape[-1])), seed
    )
    return it.reshape(li.shape), lj.reshape(li.shape), yt.reshape(li.shape)


def vertical_ratio_series(log_i, log_y, log_seed) -> np.ndarray:
    """Closed form J_k = seed prod (Y/I) + sum_j Y_j prod_{i>j} (Y_i/I_i) over the window."""
    li = np.asarray(log_i, dtype=float)
    ly = np.asarray(log_y, dtype=float)
    c = np.cumsum(ly - li)
    out = np.empty_like(li)
    for k in range(li.size):
        terms = np.concatenate([[log_seed + c[k]], ly[: k + 1] + c[k] - c[: k + 1]])
        out[k] = np.logaddexp.reduce(terms)
    return out


def _log_moment_bound(theta: float) -> float:
    # log-scale size of a Ga^-1(theta) seed: |E log| plus four standard deviations
    return abs(digamma(theta)) + 4.0 * math.sqrt(trigamma(theta))


def adaptive_depth(rho: float, sigma: float, tol: float = 1e-12, max_depth: int = MAX_DEPTH) -> int:
    """Depth M with e^{-M delta} * bound < tol, delta = (digamma(sigma) - digamma(rho)) / 3."""
    if not 0.0 < rho < sigma:
        raise ValueError(f"half-line construction needs 0 < rho < sigma, got rho={rho}, sigma={sigma}")
    if not 0.0 < tol < 1.0:
        raise ValueError("tolerance must lie in (0, 1)")
    delta = (digamma(sigma) - digamma(rho)) / 3.0
    need = (_log_moment_bound(sigma - rho) - math.log(tol)) / delta
    depth = max(1, int(math.ceil(need)))
    if depth > max_depth:
        raise ValueError(f"required depth {depth} exceeds cap {max_depth} (rho too close to sigma)")
    return depth


@dataclass
class StationaryQuadrant:
    base: tuple[int, int]
    alpha: float
    sigma: float
    boundary: BoundaryWeights
    field: WeightField
    grid: LogZGrid

    @property
    def log_i(self) -> np.ndarray:
        """log Z(x) - log Z(x - e1), NaN on the vertical axis and outside."""
        z = self.grid.logz
        out = np.full(z.shape, np.nan)
        out[1:, :] = z[1:, :] - z[:-1, :]
        return out

    @property
    def log_j(self) -> np.ndarray:
        z = self.grid.logz
        out = np.full(z.shape, np.nan)
        out[:, 1:] = z[:, 1:] - z[:, :-1]
        return out


def composite_field(o, hi, bulk: WeightField, boundary: BoundaryWeights) -> WeightField:
    """Bulk weights inside, boundary weights on the axes through o, weight one at o."""
    sub = bulk.subfield(o, hi)
    logw = sub.logw.copy()
    m, n = logw.shape[0] - 1, logw.shape[1] - 1
    if boundary.log_i.size != m or boundary.log_j.size != n:
        raise ValueError("boundary lengths do not match the quadrant")
    logw[0, 0] = 0.0
    logw[1:, 0] = boundary.log_i
    logw[0, 1:] = boundary.log_j
    return WeightField(sub.lo, sub.hi, logw, sub.sigma, sub.seed, {"composite": True})


def build_stationary_quadrant(
    o, alpha: float, sigma: float, hi, bulk: WeightField, rng: RngStream | None = None,
    boundary: BoundaryWeights | None = None,
) -> StationaryQuadrant:
    """Stationary process Z^alpha on [o, hi] with unit base weight.

    Horizontal boundary ratios are Ga^-1(sigma - alpha), vertical ones Ga^-1(alpha).
    """
    if not 0.0 < alpha < sigma:
        raise ValueError("stationary quadrant needs 0 < alpha < sigma")
    o = (int(o[0]), int(o[1]))
    hi = (int(hi[0]), int(hi[1]))
    m, n = hi[0] - o[0], hi[1] - o[1]
    if m < 0 or n < 0:
        raise ValueError("quadrant corner must dominate the base")
    if boundary is None:
        if rng is None:
            raise ValueError("need an rng or explicit boundary weights")
        boundary = BoundaryWeights.sample(o, alpha, sigma, m, n, rng)
    field = composite_field(o, hi, bulk, boundary)
    grid = log_partition_forward(field, o, UNIT_BASE)
    return StationaryQuadrant(o, float(alpha), float(sigma), boundary, field, grid)


@dataclass
class JointColumns:
    """Batched half-plane sweep for a (lam, rho) pair; rows are j = row_start .. row_start + L - 1."""

    row_start: int
    vertical_lam: np.ndarray  # (B, L)
    vertical_rho: np.ndarray
    j_lam: np.ndarray  # (B, m, L), vertical ratios on columns 1..m
    j_rho: np.ndarray
    i_lam: np.ndarray  # (B, m, L), horizontal ratios at (k, row)
    i_rho: np.ndarray

    def row(self, j: int) -> int:
        return j - self.row_start


def joint_columns(
    lam: float, rho: float, sigma: float, m: int, n: int, batch: int, rng: RngStream,
    tol: float = 1e-12, bulk_rows: np.ndarray | None = None, sweep_upper: bool = True,
) -> JointColumns:
    """Build the coupled boundary pair and sweep m columns of the half plane.

    The vertical pair on column 0 is (J^rho, J^lam) = (Y^rho, D(Y^lam, Y^rho)). Each
    column k then maps (J^{alpha, k-1}, bulk column k) through the half-line
    construction, with column seeds coupled by quantiles so the lam seed never
    exceeds the rho seed. The vertical pair covers rows -M+1 .. n, M the
    adaptive depth; the column sweep covers the same rows, or only rows <= 0
    when ``sweep_upper`` is false. ``bulk_rows`` optionally supplies the
    weights of rows 1..n as (B, m, n).
    """
    if not 0.0 < lam < rho < sigma:
        raise ValueError("joint construction needs 0 < lam < rho < sigma")
    if m < 0 or n < 0 or batch < 1:
        raise ValueError("bad joint construction geometry")
    depth_h = max(adaptive_depth(lam, sigma, tol), adaptive_depth(rho, sigma, tol))
    depth_v = adaptive_depth(lam, rho, tol)
    length = depth_h + n
    ylam = sample_log_inverse_gamma(lam, rng, (batch, depth_v + length))
    yrho = sample_log_inverse_gamma(rho, rng, (batch, depth_v + length))
    seed_v = sample_log_inverse_gamma(rho - lam, rng, batch)
    it, _, _ = half_line_boundary(ylam, yrho, seed_v)
    vlam = np.ascontiguousarray(it[:, depth_v:])
    vrho = np.ascontiguousarray(yrho[:, depth_v:])
    strip = sample_log_inverse_gamma(sigma, rng, (batch, m, depth_h)) if m else np.empty((batch, 0, depth_h))
    if sweep_upper and n:
        if bulk_rows is None:
            upper = sample_log_inverse_gamma(sigma, rng, (batch, m, n)) if m else np.empty((batch, 0, n))
        else:
            upper = np.asarray(bulk_rows, dtype=float).reshape(batch, m, n)
        bulk = np.ascontiguousarray(np.concatenate([strip, upper], axis=2))
        clam, crho = vlam, vrho
    else:
        bulk = np.ascontiguousarray(strip)
        clam = np.ascontiguousarray(vlam[:, :depth_h])
        crho = np.ascontiguousarray(vrho[:, :depth_h])
    seeds_rho = sample_log_inverse_gamma(sigma - rho, rng, (batch, m)) if m else np.empty((batch, 0))
    seeds_lam = monotone_recouple_log(seeds_rho, sigma - rho, sigma - lam) if m else np.empty((batch, 0))
    jl, il = _columns_kernel(clam, bulk, np.ascontiguousarray(seeds_lam))
    jr, ir = _columns_kernel(crho, bulk, np.ascontiguousarray(seeds_rho))
    return JointColumns(-depth_h + 1, vlam, vrho, jl, jr, il, ir)


@dataclass
class JointStationaryPair:
    lam: float
    rho: float
    sigma: float
    quad_lam: StationaryQuadrant
    quad_rho: StationaryQuadrant
    log_eta_h: np.ndarray  # Ga^-1(sigma) weights on o + k e1, k >= 1
    log_eta_v: np.ndarray  # on o + l e2, l >= 1
    columns: JointColumns

    @property
    def base(self):
        return self.quad_lam.base


def build_joint_pair(
    o, lam: float, rho: float, sigma: float, hi, rng: RngStream, bulk: WeightField | None = None,
    tol: float = 1e-12,
) -> JointStationaryPair:
    """Two stationary quadrants at o with coupled boundaries.

    Pointwise, eta <= I^lam <= I^rho on the horizontal axis and
    eta <= J^rho <= J^lam on the vertical axis, where the eta are Ga^-1(sigma)
    weights obtained by quantile recoupling.
    """
    o = (int(o[0]), int(o[1]))
    hi = (int(hi[0]), int(hi[1]))
    m, n = hi[0] - o[0], hi[1] - o[1]
    if m < 0 or n < 0:
        raise ValueError("quadrant corner must dominate the base")
    cols = joint_columns(lam, rho, sigma, m, n, 1, rng, tol, sweep_upper=False)
    zero = cols.row(0)
    i_lam = cols.i_lam[0, :, zero] if m else np.empty(0)
    i_rho = cols.i_rho[0, :, zero] if m else np.empty(0)
    j_lam = cols.vertical_lam[0, zero + 1 : zero + 1 + n]
    j_rho = cols.vertical_rho[0, zero + 1 : zero + 1 + n]
    if bulk is None:
        inner = sample_log_inverse_gamma(sigma, rng, (m + 1, n + 1))
        bulk = WeightField(o, hi, inner, sigma)
    b_lam = BoundaryWeights(o, lam, sigma, i_lam.copy(), j_lam.copy())
    b_rho = BoundaryWeights(o, rho, sigma, i_rho.copy(), j_rho.copy())
    q_lam = build_stationary_quadrant(o, lam, sigma, hi, bulk, boundary=b_lam)
    q_rho = build_stationary_quadrant(o, rho, sigma, hi, bulk, boundary=b_rho)
    eta_h = monotone_recouple_log(i_lam, sigma - lam, sigma) if m else np.empty(0)
    eta_v = monotone_recouple_log(j_rho, rho, sigma) if n else np.empty(0)
    return JointStationaryPair(float(lam), float(rho), float(sigma), q_lam, q_rho, eta_h, eta_v, cols)


def dd_identity_residual(log_a, log_i, log_y, seeds) -> float:
    """Max |log| discrepancy between D(D(A, I), Y) and D(D(A, R(I, Y)), D(I, Y)) on a window.

    ``seeds = (s, a, b)``: s seeds the (I, Y) construction, a the inner map
    D(A, I) and b the outer map of the left side; b < s is required. The
    right side's seeds are derived so both sides carry the same history left
    of the window: inner a (1 - b/s), outer b s / (s - b).
    """
    la = np.asarray(log_a, dtype=float)
    li = np.asarray(log_i, dtype=float)
    ly = np.asarray(log_y, dtype=float)
    if not (la.shape == li.shape == ly.shape) or la.ndim != 1 or la.size == 0:
        raise ValueError("sequences must share one nonempty window")
    s, a, b = (float(v) for v in seeds)
    if not (s > 0 and a > 0 and 0 < b < s):
        raise ValueError("seeds must be positive with b < s")
    inner, _, _ = half_line_boundary(la, li, math.log(a))
    left, _, _ = half_line_boundary(inner, ly, math.log(b))
    i_t, _, y_t = half_line_boundary(li, ly, math.log(s))
    c = a * (1.0 - b / s)
    d = b * s / (s - b)
    inner_r, _, _ = half_line_boundary(la, y_t, math.log(c))
    right, _, _ = half_line_boundary(inner_r, i_t, math.log(d))
    return float(np.max(np.abs(left - right)))


@njit(cache=True)
def _batch_quadrant_kernel(logw):
    b, n1, n2 = logw.shape
    out = np.empty((b, n1, n2))
    for r in range(b):
        out[r, 0, 0] = 0.0
        for j in range(1, n2):
            out[r, 0, j] = out[r, 0, j - 1] + logw[r, 0, j]
        for i in range(1, n1):
            out[r, i, 0] = out[r, i - 1, 0] + logw[r, i, 0]
            for j in range(1, n2):
                a = out[r, i - 1, j]
                c = out[r, i, j - 1]
                hi = max(a, c)
                out[r, i, j] = logw[r, i, j] + hi + math.log1p(math.exp(min(a, c) - hi))
    return out


def stationary_quadrant_batch(
    alpha: float, sigma: float, m: int, n: int, batch: int, rng: RngStream, vertical_shape: float | None = None,
) -> np.ndarray:
    """log Z^alpha on [0, m] x [0, n] for ``batch`` independent quadrants, shape (B, m+1, n+1).

    ``vertical_shape`` overrides the law of the vertical boundary weights
    (used to check that tests notice a wrong parameter).
    """
    if not 0.0 < alpha < sigma:
        raise ValueError("stationary quadrant needs 0 < alpha < sigma")
    vshape = alpha if vertical_shape is None else vertical_shape
    logw = np.zeros((batch, m + 1, n + 1))
    logw[:, 1:, 0] = sample_log_inverse_gamma(sigma - alpha, rng, (batch, m))
    logw[:, 0, 1:] = sample_log_inverse_gamma(vshape, rng, (batch, n))
    logw[:, 1:, 1:] = sample_log_inverse_gamma(sigma, rng, (batch, m, n))
    return _batch_quadrant_kernel(logw)
