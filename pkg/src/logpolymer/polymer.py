"""Point-to-point partition functions, quenched path laws, exit times and edge crossings.

Grids live on the full rectangle of a WeightField. A forward grid based at o
holds log Z_{o,x} for x >= o and -inf elsewhere; a backward grid based at p
holds log Z_{x,p} (down-left paths from p) for x <= p.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .environment import WeightField
from .rng import RngStream

FORWARD = "forward"
BACKWARD = "backward"
WITH_BASE_WEIGHT = "with_base_weight"
UNIT_BASE = "unit_base"
_CONVENTIONS = (WITH_BASE_WEIGHT, UNIT_BASE)
MAX_ENUMERATION_STEPS = 24

E1 = np.array([1, 0])
E2 = np.array([0, 1])


@njit(cache=True)
def _lse(a, b):
    if a == -np.inf:
        return b
    if b == -np.inf:
        return a
    if a >= b:
        return a + math.log1p(math.exp(b - a))
    return b + math.log1p(math.exp(a - b))


@njit(cache=True)
def _forward_kernel(logw, bi, bj, unit_base):
    n1, n2 = logw.shape
    out = np.full((n1, n2), -np.inf)
    out[bi, bj] = 0.0 if unit_base else logw[bi, bj]
    for j in range(bj + 1, n2):
        out[bi, j] = logw[bi, j] + out[bi, j - 1]
    for i in range(bi + 1, n1):
        out[i, bj] = logw[i, bj] + out[i - 1, bj]
        for j in range(bj + 1, n2):
            out[i, j] = logw[i, j] + _lse(out[i - 1, j], out[i, j - 1])
    return out


@njit(cache=True)
def _sample_back_kernel(logz, bi, bj, pi, pj, uniforms):
    """Walk from (pi, pj) down to (bi, bj); returns vertex indices, end first."""
    n = (pi - bi) + (pj - bj)
    verts = np.empty((n + 1, 2), dtype=np.int64)
    i, j = pi, pj
    verts[0, 0] = i
    verts[0, 1] = j
    for t in range(n):
        a = logz[i - 1, j] if i > bi else -np.inf
        b = logz[i, j - 1] if j > bj else -np.inf
        p1 = math.exp(a - _lse(a, b)) if a > -np.inf else 0.0
        if p1 >= uniforms[t]:
            i -= 1
        else:
            j -= 1
        verts[t + 1, 0] = i
        verts[t + 1, 1] = j
    return verts


@njit(cache=True)
def _sample_forward_kernel(logz_back, oi, oj, pi, pj, uniforms):
    """Markov chain from (oi, oj) to (pi, pj) driven by a backward grid from p."""
    n = (pi - oi) + (pj - oj)
    verts = np.empty((n + 1, 2), dtype=np.int64)
    i, j = oi, oj
    verts[0, 0] = i
    verts[0, 1] = j
    for t in range(n):
        a = logz_back[i + 1, j] if i < pi else -np.inf
        b = logz_back[i, j + 1] if j < pj else -np.inf
        p1 = math.exp(a - _lse(a, b)) if a > -np.inf else 0.0
        if p1 >= uniforms[t]:
            i += 1
        else:
            j += 1
        verts[t + 1, 0] = i
        verts[t + 1, 1] = j
    return verts


@dataclass
class Path:
    """Up-right lattice path stored as an (L+1, 2) integer vertex array."""

    vertices: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 1:
            raise ValueError("path vertices must be a nonempty (L+1, 2) array")
        d = np.diff(v, axis=0)
        if d.size and not np.all((d.sum(axis=1) == 1) & (d.min(axis=1) == 0)):
            raise ValueError("path steps must be e1 or e2")
        self.vertices = v

    @classmethod
    def from_steps(cls, start, steps) -> "Path":
        """Steps coded 0 for e1 and 1 for e2."""
        steps = np.asarray(steps, dtype=np.int64)
        incr = np.stack([1 - steps, steps], axis=1)
        v = np.vstack([np.asarray(start, dtype=np.int64)[None, :], np.asarray(start) + np.cumsum(incr, axis=0)])
        return cls(v)

    @property
    def start(self) -> tuple[int, int]:
        return (int(self.vertices[0, 0]), int(self.vertices[0, 1]))

    @property
    def end(self) -> tuple[int, int]:
        return (int(self.vertices[-1, 0]), int(self.vertices[-1, 1]))

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.vertices, axis=0)[:, 1]

    def __len__(self):
        return self.vertices.shape[0]

    def vertex_set(self) -> set:
        return {(int(a), int(b)) for a, b in self.vertices}

    def key(self) -> tuple:
        return tuple(int(s) for s in self.steps)

    def __eq__(self, other):
        return isinstance(other, Path) and np.array_equal(self.vertices, other.vertices)


@dataclass
class LogZGrid:
    base: tuple[int, int]
    orientation: str
    convention: str
    lo: tuple[int, int]
    hi: tuple[int, int]
    logz: np.ndarray

    def index(self, x) -> tuple[int, int]:
        i, j = int(x[0]) - self.lo[0], int(x[1]) - self.lo[1]
        if not (0 <= i < self.logz.shape[0] and 0 <= j < self.logz.shape[1]):
            raise IndexError(f"vertex {tuple(x)} outside grid {self.lo}..{self.hi}")
        return (i, j)

    def at(self, x) -> float:
        return float(self.logz[self.index(x)])

    def __call__(self, x) -> float:
        return self.at(x)


def _check_convention(convention: str) -> None:
    if convention not in _CONVENTIONS:
        raise ValueError(f"unknown base convention {convention!r}")


def log_partition_forward(field: WeightField, o, convention: str = WITH_BASE_WEIGHT) -> LogZGrid:
    """log Z_{o,x} for every x >= o in the field; -inf off the quadrant of o.

    Recursion log Z(x) = log Y_x + lse(log Z(x - e1), log Z(x - e2)); the base
    value is log Y_o or 0 depending on the convention.
    """
    _check_convention(convention)
    bi, bj = field.index(o)
    logz = _forward_kernel(field.logw, bi, bj, convention == UNIT_BASE)
    return LogZGrid((int(o[0]), int(o[1])), FORWARD, convention, field.lo, field.hi, logz)


def log_partition_backward(field: WeightField, p, convention: str = WITH_BASE_WEIGHT) -> LogZGrid:
    """log Z_{x,p} over down-left paths from p: the forward grid of the field reflected through p."""
    _check_convention(convention)
    bi, bj = field.index(p)
    n1, n2 = field.shape
    flipped = field.logw[::-1, ::-1]
    logz = _forward_kernel(np.ascontiguousarray(flipped), n1 - 1 - bi, n2 - 1 - bj, convention == UNIT_BASE)
    return LogZGrid((int(p[0]), int(p[1])), BACKWARD, convention, field.lo, field.hi, logz[::-1, ::-1].copy())


def path_log_weight(field: WeightField, path: Path, convention: str = WITH_BASE_WEIGHT) -> float:
    """Sum of log weights along the path; the unit-base convention drops the first vertex."""
    idx = path.vertices - np.asarray(field.lo)
    vals = field.logw[idx[:, 0], idx[:, 1]]
    if convention == UNIT_BASE:
        vals = vals[1:]
    return float(vals.sum())


def quenched_path_log_prob(grid: LogZGrid, field: WeightField, path: Path) -> float:
    """log Q(path) for a path between the grid base and another vertex."""
    if grid.orientation == FORWARD:
        if path.start != grid.base:
            raise ValueError("path must start at the grid base")
        other = path.end
        walk = path
    else:
        if path.end != grid.base:
            raise ValueError("path must end at the grid base")
        other = path.start
        walk = Path(path.vertices[::-1])
    return path_log_weight(field, walk, grid.convention) - grid.at(other)


def sample_path(grid: LogZGrid, field: WeightField, p, rng: RngStream) -> Path:
    """Sample Q_{o,p} backward from p using a forward grid from o.

    At z the walk steps to z - e1 with probability Z(z - e1) / (Z(z - e1) + Z(z - e2));
    it takes -e1 when that probability is >= the uniform.
    """
    if grid.orientation != FORWARD:
        raise ValueError("sample_path needs a forward grid")
    bi, bj = grid.index(grid.base)
    pi, pj = grid.index(p)
    if pi < bi or pj < bj:
        raise ValueError("endpoint must dominate the base")
    n = (pi - bi) + (pj - bj)
    u = rng.uniform(n) if n else np.empty(0)
    verts = _sample_back_kernel(grid.logz, bi, bj, pi, pj, u)[::-1] + np.asarray(grid.lo)
    return Path(verts)


def sample_path_forward(field: WeightField, o, p, rng: RngStream) -> Path:
    """Sample Q_{o,p} as a Markov chain from o, with transitions Z_{x+e_i,p} / (Z_{x+e1,p} + Z_{x+e2,p})."""
    back = log_partition_backward(field, p)
    oi, oj = field.index(o)
    pi, pj = field.index(p)
    if pi < oi or pj < oj:
        raise ValueError("endpoint must dominate the base")
    n = (pi - oi) + (pj - oj)
    u = rng.uniform(n) if n else np.empty(0)
    verts = _sample_forward_kernel(back.logz, oi, oj, pi, pj, u) + np.asarray(field.lo)
    return Path(verts)


def exit_time(path: Path, o, v) -> int:
    """Signed exit time relative to v: +max i with v + i e1 on the path, else -max j with v + j e2."""
    verts = path.vertices
    v = np.asarray(v)
    on_row = (verts[:, 1] == v[1]) & (verts[:, 0] > v[0])
    if on_row.any():
        return int(verts[on_row, 0].max() - v[0])
    on_col = (verts[:, 0] == v[0]) & (verts[:, 1] > v[1])
    if on_col.any():
        return -int(verts[on_col, 1].max() - v[1])
    raise ValueError(f"path does not leave through the axes of {tuple(v)}")


@dataclass
class ExitDistribution:
    """Quenched law of the signed exit time: values ell and probabilities."""

    values: np.ndarray
    log_probs: np.ndarray

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs)

    def prob(self, ell: int) -> float:
        hit = self.values == ell
        return float(np.exp(self.log_probs[hit][0])) if hit.any() else 0.0

    def tail_at_least(self, k: int) -> float:
        return float(self.probs[self.values >= k].sum())

    def tail_at_most(self, k: int) -> float:
        return float(self.probs[self.values <= k].sum())


def exit_distribution_exact(field: WeightField, o, v, p, convention: str = WITH_BASE_WEIGHT) -> ExitDistribution:
    """Exact law of tau_{o,v,p} under Q_{o,p}.

    Q(tau = +k) = Z_{o, v+k e1} Z_{v+k e1+e2, p} / Z_{o,p} and
    Q(tau = -k) = Z_{o, v+k e2} Z_{v+k e2+e1, p} / Z_{o,p}.
    """
    o = (int(o[0]), int(o[1]))
    v = (int(v[0]), int(v[1]))
    p = (int(p[0]), int(p[1]))
    if not (o[0] <= v[0] < p[0] and o[1] <= v[1] < p[1]):
        raise ValueError("exit time needs o <= v < p")
    fwd = log_partition_forward(field, o, convention)
    back = log_partition_backward(field, p)
    total = fwd.at(p)
    vi, vj = fwd.index(v)
    pi, pj = fwd.index(p)
    ks = np.arange(1, pi - vi + 1)
    pos = fwd.logz[vi + ks, vj] + back.logz[vi + ks, vj + 1] - total
    ls = np.arange(1, pj - vj + 1)
    neg = fwd.logz[vi, vj + ls] + back.logz[vi + 1, vj + ls] - total
    values = np.concatenate([-ls[::-1], ks])
    log_probs = np.concatenate([neg[::-1], pos])
    return ExitDistribution(values, log_probs)


def edge_crossing_log_probs(field: WeightField, u, v) -> tuple[np.ndarray, np.ndarray]:
    """Heights i and log p_i, where p_i is the Q_{u,v} probability of the edge (i e2, i e2 + e1)."""
    u = (int(u[0]), int(u[1]))
    v = (int(v[0]), int(v[1]))
    if not (u[0] <= -1 and v[0] >= 1 and u[1] <= v[1]):
        raise ValueError("edge crossing needs u strictly west and v strictly east of the y-axis")
    fwd = log_partition_forward(field, u)
    back = log_partition_backward(field, v)
    heights = np.arange(u[1], v[1] + 1)
    i0, j0 = fwd.index((0, u[1]))
    cols = j0 + (heights - u[1])
    logp = fwd.logz[i0, cols] + back.logz[i0 + 1, cols] - fwd.at(v)
    return heights, logp


def edge_crossing_probs(field: WeightField, u, v) -> tuple[np.ndarray, np.ndarray]:
    heights, logp = edge_crossing_log_probs(field, u, v)
    return heights, np.exp(logp)


def gibbs_resample(path: Path, k: int, l: int, field: WeightField, rng: RngStream) -> Path:
    """Replace vertices k..l of the path by a fresh Q_{x_k, x_l} sample."""
    n = len(path) - 1
    if not 0 <= k <= l <= n:
        raise ValueError(f"segment {k}..{l} outside path of length {n}")
    if k == l:
        return Path(path.vertices.copy())
    a = path.vertices[k]
    b = path.vertices[l]
    sub = field.subfield(a, b)
    grid = log_partition_forward(sub, a)
    seg = sample_path(grid, sub, b, rng)
    verts = np.vstack([path.vertices[:k], seg.vertices, path.vertices[l + 1 :]])
    return Path(verts)


def enumerate_paths(o, p) -> list[Path]:
    """All up-right paths from o to p in lexicographic order of the step sequence (e1 < e2)."""
    o = (int(o[0]), int(o[1]))
    p = (int(p[0]), int(p[1]))
    m, n = p[0] - o[0], p[1] - o[1]
    if m < 0 or n < 0:
        raise ValueError("endpoint must dominate the start")
    if m + n > MAX_ENUMERATION_STEPS:
        raise ValueError(f"enumeration limited to {MAX_ENUMERATION_STEPS} steps, got {m + n}")
    out = []
    for first in itertools.combinations(range(m + n), m):
        steps = np.ones(m + n, dtype=np.int64)
        steps[list(first)] = 0
        out.append(Path.from_steps(o, steps))
    return out


def nested_ratio_field(field: WeightField, u, v, grid: LogZGrid | None = None) -> WeightField:
    """Weights for Z^{(u)}_{v,.}: ratios Z_{u,v+i e_r} / Z_{u,v+(i-1) e_r} on the axes through v.

    The result covers [v, field.hi] and carries weight one at v, so a UNIT_BASE
    forward grid from v gives log Z^{(u)}_{v,w}, which equals log Z_{u,w} - log Z_{u,v}.
    """
    u = (int(u[0]), int(u[1]))
    v = (int(v[0]), int(v[1]))
    if not (u[0] <= v[0] and u[1] <= v[1]):
        raise ValueError("nested boundary needs u <= v")
    if grid is None:
        grid = log_partition_forward(field, u)
    sub = field.subfield(v, field.hi)
    vi, vj = grid.index(v)
    z = grid.logz
    logw = sub.logw.copy()
    logw[0, 0] = 0.0
    logw[1:, 0] = np.diff(z[vi:, vj])
    logw[0, 1:] = np.diff(z[vi, vj:])
    return sub.with_log_weights(logw)


def log_partition_exit_at_least(field: WeightField, u, x, k: int) -> float:
    """log Z_{u,x}(tau >= k): paths whose first k steps are e1, base weight included."""
    u = (int(u[0]), int(u[1]))
    x = (int(x[0]), int(x[1]))
    if not 1 <= k <= x[0] - u[0]:
        return -math.inf
    i0, j0 = field.index(u)
    head = float(field.logw[i0 : i0 + k, j0].sum())
    return head + log_partition_forward(field, (u[0] + k, u[1])).at(x)


def log_partition_exit_at_most(field: WeightField, u, y, l: int) -> float:
    """log Z_{u,y}(tau <= -l): paths whose first l steps are e2."""
    u = (int(u[0]), int(u[1]))
    y = (int(y[0]), int(y[1]))
    if not 1 <= l <= y[1] - u[1]:
        return -math.inf
    i0, j0 = field.index(u)
    head = float(field.logw[i0, j0 : j0 + l].sum())
    return head + log_partition_forward(field, (u[0], u[1] + l)).at(y)
