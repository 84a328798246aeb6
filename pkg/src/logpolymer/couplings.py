"""Monotone tree couplings, ratio walks, crossing bounds and boundary sandwiches."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .environment import UniformField, WeightField, make_bulk_field
from .numerics import characteristic_parameter
from .polymer import (
    UNIT_BASE,
    LogZGrid,
    Path,
    edge_crossing_log_probs,
    log_partition_backward,
    log_partition_forward,
)
from .rng import RngStream, derive_stream_id, log_gamma_variate
from .stationary import RatioSeq, build_joint_pair

STEP_E1 = 1  # the step -e1
STEP_E2 = 2  # the step -e2


@njit(cache=True)
def _step_kernel(logz, bi, bj, uniforms):
    n1, n2 = logz.shape
    out = np.zeros((n1, n2), dtype=np.int8)
    for i in range(bi, n1):
        for j in range(bj, n2):
            if i == bi and j == bj:
                continue
            a = logz[i - 1, j] if i > bi else -np.inf
            b = logz[i, j - 1] if j > bj else -np.inf
            if a == -np.inf:
                p1 = 0.0
            elif b == -np.inf:
                p1 = 1.0
            else:
                m = max(a, b)
                p1 = math.exp(a - m) / (math.exp(a - m) + math.exp(b - m))
            out[i, j] = STEP_E1 if p1 >= uniforms[i, j] else STEP_E2
    return out


@dataclass
class StepField:
    """Down-left pointers of the tree rooted at ``base``: 1 for -e1, 2 for -e2, 0 at the root and outside."""

    base: tuple[int, int]
    lo: tuple[int, int]
    steps: np.ndarray

    def at(self, z) -> int:
        return int(self.steps[z[0] - self.lo[0], z[1] - self.lo[1]])

    def path_from(self, y) -> Path:
        """Follow pointers from y to the root and return the up-right path root -> y."""
        z = [int(y[0]), int(y[1])]
        if z[0] < self.base[0] or z[1] < self.base[1]:
            raise ValueError("tree paths start from vertices dominating the root")
        verts = [tuple(z)]
        limit = (z[0] - self.base[0]) + (z[1] - self.base[1])
        for _ in range(limit):
            s = self.steps[z[0] - self.lo[0], z[1] - self.lo[1]]
            if s == STEP_E1:
                z[0] -= 1
            elif s == STEP_E2:
                z[1] -= 1
            else:
                raise RuntimeError("tree pointer missing before reaching the root")
            verts.append(tuple(z))
        if tuple(z) != self.base:
            raise RuntimeError("tree path did not terminate at the root")
        return Path(np.array(verts[::-1], dtype=np.int64))


def build_step_field(field: WeightField, grid: LogZGrid, uniforms: UniformField) -> StepField:
    """V(z) = -e1 iff Y_z Z_{x, z-e1} / Z_{x,z} >= U_z, else -e2, for z >= x."""
    if grid.orientation != "forward":
        raise ValueError("step field needs a forward grid")
    if uniforms.lo != field.lo or uniforms.values.shape != field.shape:
        raise ValueError("uniform field must cover the weight field")
    bi, bj = grid.index(grid.base)
    steps = _step_kernel(grid.logz, bi, bj, uniforms.values)
    return StepField(grid.base, field.lo, steps)


def precedes(a, b) -> bool:
    """a is weakly up-left of b: a1 <= b1 and a2 >= b2."""
    return a[0] <= b[0] and a[1] >= b[1]


def pairs_ordered(x1, y1, x2, y2) -> bool:
    """Endpoint relation: x1 <= y1, x2 <= y2, x1 up-left of x2 and y1 up-left of y2."""
    return (
        x1[0] <= y1[0] and x1[1] <= y1[1] and x2[0] <= y2[0] and x2[1] <= y2[1]
        and precedes(x1, x2) and precedes(y1, y2)
    )


def path_order(pi1: Path, pi2: Path) -> bool:
    """pi1 lies weakly above and to the left of pi2."""
    if not pairs_ordered(pi1.start, pi1.end, pi2.start, pi2.end):
        return False
    lev1 = pi1.vertices.sum(axis=1)
    lev2 = pi2.vertices.sum(axis=1)
    lo = max(lev1[0], lev2[0])
    hi = min(lev1[-1], lev2[-1])
    if lo > hi:
        return True
    a = pi1.vertices[lo - lev1[0] : hi - lev1[0] + 1]
    b = pi2.vertices[lo - lev2[0] : hi - lev2[0] + 1]
    return bool(np.all(a[:, 0] <= b[:, 0]) and np.all(a[:, 1] >= b[:, 1]))


def coupled_tree_paths(field: WeightField, uniforms: UniformField, pairs) -> list[Path]:
    """Tree path from y down to x for every (x, y), all driven by the same uniforms."""
    trees: dict = {}
    out = []
    for x, y in pairs:
        x = (int(x[0]), int(x[1]))
        y = (int(y[0]), int(y[1]))
        if not (x[0] <= y[0] and x[1] <= y[1]):
            raise ValueError(f"pair {x}, {y} is not ordered")
        if x not in trees:
            grid = log_partition_forward(field, x)
            trees[x] = build_step_field(field, grid, uniforms)
        out.append(trees[x].path_from(y))
    return out


@dataclass
class TwoSidedWalk:
    """log W_n on the window [lo, hi] with W_0 = 1."""

    lo: int
    hi: int
    log_values: np.ndarray

    def at(self, n: int) -> float:
        return float(self.log_values[n - self.lo])

    @property
    def indices(self) -> np.ndarray:
        return np.arange(self.lo, self.hi + 1)


def walk_from_log_steps(log_steps: np.ndarray, start: int) -> TwoSidedWalk:
    """Two-sided walk from steps X_start .. X_stop; needs start <= 1 and stop >= 0."""
    log_steps = np.asarray(log_steps, dtype=float)
    stop = start + log_steps.size - 1
    if start > 1 or stop < 0:
        raise ValueError("steps must cover a window around the origin")
    pos = log_steps[1 - start :]  # X_1 .. X_stop
    neg = log_steps[: 1 - start]  # X_start .. X_0
    right = np.cumsum(pos)
    left = -np.cumsum(neg[::-1])[::-1]  # W_n = -sum_{j=n+1}^{0} log X_j, n = start-1 .. -1
    vals = np.concatenate([left, [0.0], right])
    return TwoSidedWalk(start - 1, stop, vals)


def ratio_walk(forward_j: RatioSeq, backward_j: RatioSeq) -> TwoSidedWalk:
    """Walk with steps X_i = J_i / J^_i."""
    if forward_j.window() != backward_j.window():
        raise ValueError("ratio windows differ")
    return walk_from_log_steps(forward_j.log_values - backward_j.log_values, forward_j.start)


def _crossing_pieces(field: WeightField, u, v):
    u = (int(u[0]), int(u[1]))
    v = (int(v[0]), int(v[1]))
    if not (u[0] <= -1 and v[0] >= 1 and u[1] <= 0 <= v[1] and u[1] < v[1]):
        raise ValueError("crossing bound needs u southwest and v northeast of the y-axis around height 0, u2 < v2")
    heights, logp = edge_crossing_log_probs(field, u, v)
    fwd = log_partition_forward(field, u)
    back = log_partition_backward(field, v)
    i0, j0 = fwd.index((0, u[1]))
    col = fwd.logz[i0, j0 : j0 + (v[1] - u[1]) + 1]  # log Z_{u, i e2}, i = u2..v2
    bcol = back.logz[i0 + 1, j0 : j0 + (v[1] - u[1]) + 1]  # log Z^_{v, e1 + i e2}
    fj = RatioSeq(col[1:] - col[:-1], u[1] + 1, "J")
    bj = RatioSeq(bcol[:-1] - bcol[1:], u[1] + 1, "J")
    return heights, logp, fj, bj


def crossing_bound_margins(field: WeightField, u, v) -> tuple[TwoSidedWalk, float, np.ndarray]:
    """Walk W^{u,v}, log p_0 and the margins -log W_n - log p_0 (nonnegative when the bound holds)."""
    heights, logp, fj, bj = _crossing_pieces(field, u, v)
    walk = ratio_walk(fj, bj)
    lp0 = float(logp[heights == 0][0])
    return walk, lp0, -walk.log_values - lp0


def crossing_bound_check(field: WeightField, u, v, slack: float = 1e-9) -> bool:
    """p_0 <= 1 / W_n for every n in the window (``slack`` absorbs rounding in logs)."""
    _, _, margins = crossing_bound_margins(field, u, v)
    return bool(np.all(margins >= -slack))


def gamma_log_walk(alpha: float, beta: float, n: int, rng: RngStream, replicas: int | None = None) -> np.ndarray:
    """Partial sums S_1..S_n of steps log G^alpha - log G^beta."""
    if not (alpha > 0 and beta > 0):
        raise ValueError("walk parameters must be positive")
    shape = (n,) if replicas is None else (replicas, n)
    ga = rng.log_gamma(alpha, shape)
    gb = rng.log_gamma(beta, shape)
    return np.cumsum(ga - gb, axis=-1)


@njit(cache=True)
def _walk_max_kernel(key, ctr, alpha, beta, n, replicas, level):
    below = np.zeros(replicas, dtype=np.bool_)
    for r in range(replicas):
        s = 0.0
        ok = True
        for _ in range(n):
            ga, ctr = log_gamma_variate(key, ctr, alpha)
            gb, ctr = log_gamma_variate(key, ctr, beta)
            s += ga - gb
            if s > level:
                ok = False
                break
        below[r] = ok
    return below, ctr


def walk_max_below(alpha: float, beta: float, n: int, level: float, rng: RngStream, replicas: int) -> np.ndarray:
    """Indicator per replica that max_{1<=m<=n} S_m <= level."""
    below, rng.counter = _walk_max_kernel(rng.key, rng.counter, float(alpha), float(beta), int(n), int(replicas), float(level))
    return below


# sandwich inequalities around the y-axis


def southwest_boundary(n_side: int, eps: float) -> list[tuple[int, int]]:
    """Lattice points of {-N} x [-N, -eps N] and [-N, -eps N] x {-N}, from the top of the west side clockwise."""
    top = -int(math.ceil(eps * n_side))
    west = [(-n_side, y) for y in range(top, -n_side - 1, -1)]
    south = [(x, -n_side) for x in range(-n_side + 1, top + 1)]
    return west + south


def northeast_boundary(n_side: int, eps: float) -> list[tuple[int, int]]:
    return [(-a, -b) for a, b in southwest_boundary(n_side, eps)]


def block(points, o, half_length: float) -> list[tuple[int, int]]:
    """Boundary points within l1 distance ``half_length`` of o."""
    return [u for u in points if abs(u[0] - o[0]) + abs(u[1] - o[1]) <= half_length]


def block_min_corner(pts) -> tuple[int, int]:
    """The coordinatewise minimum of a block, which must itself belong to the block."""
    c = (min(p[0] for p in pts), min(p[1] for p in pts))
    if c not in set(pts):
        raise ValueError("block has no minimal point")
    return c


def point_parameter(o) -> float:
    """rho(o): the parameter whose characteristic direction is |o| normalized."""
    a, b = abs(o[0]), abs(o[1])
    return characteristic_parameter(a / (a + b))


def shifted_parameters(rho: float, n_side: int, r: float) -> tuple[float, float, float]:
    """(rho - s, rho + s) with s = r N^(-1/3), clipped so both stay in (0, 1); also returns s."""
    s = min(r * n_side ** (-1.0 / 3.0), 0.9 * min(rho, 1.0 - rho))
    return rho - s, rho + s, s


def restricted_exit_log_partition(field: WeightField, o, top: int, depth: int, vertical: bool) -> LogZGrid:
    """Unit-base log Z_{o,x}(tau < -depth) if ``vertical``, else log Z_{o,x}(tau > depth).

    Paths leaving the vertical axis at height l <= depth pass through o + e1 + l e2,
    so blocking those vertices and the horizontal axis leaves exactly tau <= -(depth + 1).
    """
    logw = field.logw.copy()
    bi, bj = field.index(o)
    if vertical:
        logw[bi + 1 :, bj] = -np.inf
        logw[bi + 1 : bi + 2, bj : bj + depth + 1] = -np.inf
    else:
        logw[bi, bj + 1 :] = -np.inf
        logw[bi : bi + depth + 1, bj + 1 : bj + 2] = -np.inf
    return log_partition_forward(field.with_log_weights(logw), o, UNIT_BASE)


@dataclass
class BlockSide:
    """Stationary comparison ratios and bulk ratios on the y-axis for one block.

    Ratio arrays hold log J_i for i = -K+1 .. K in the frame of the block.
    """

    base: tuple[int, int]
    rho: float
    rho_down: float
    rho_up: float
    event: bool
    min_prob_down: float
    min_prob_up: float
    log_j_down: np.ndarray
    log_j_up: np.ndarray
    log_j_bulk: dict
    coupled: WeightField


def block_side(
    field: WeightField, points, rho: float, k_half: int, depth: int, n_side: int, r: float, y: float,
    rng: RngStream, tol: float = 1e-10,
) -> BlockSide:
    """Couple two stationary processes at the block's minimal point and read off ratios on the y-axis.

    ``field`` spans from at least the block corner to (0, K). Its weights on the
    axes through the corner are replaced by the eta weights of the joint pair,
    and the bulk processes from the block points run on that coupled field.
    """
    oc = block_min_corner(points)
    rho_dn, rho_up, _ = shifted_parameters(rho, n_side, r)
    hi = (0, k_half)
    sub = field.subfield(oc, hi)
    jp = build_joint_pair(oc, rho_dn, rho_up, 1.0, hi, rng, sub, tol)
    logw = sub.logw.copy()
    logw[1:, 0] = jp.log_eta_h
    logw[0, 1:] = jp.log_eta_v
    coupled = sub.with_log_weights(logw)

    qd, qu = jp.quad_lam, jp.quad_rho
    ci, cj = qd.grid.index((0, -k_half))
    rows = np.arange(cj, cj + 2 * k_half + 1)
    rd = restricted_exit_log_partition(qd.field, oc, k_half, depth, vertical=True)
    ru = restricted_exit_log_partition(qu.field, oc, k_half, depth, vertical=False)
    prob_dn = np.exp(rd.logz[ci, rows] - qd.grid.logz[ci, rows])
    prob_up = np.exp(ru.logz[ci, rows] - qu.grid.logz[ci, rows])
    event = bool(prob_dn.min() >= 1.0 - y and prob_up.min() >= 1.0 - y)
    col_d = qd.grid.logz[ci, rows]
    col_u = qu.grid.logz[ci, rows]
    bulk = {}
    for u in points:
        c = log_partition_forward(coupled, u).logz[ci, rows]
        bulk[u] = np.diff(c)
    return BlockSide(
        oc, rho, rho_dn, rho_up, event, float(prob_dn.min()), float(prob_up.min()),
        np.diff(col_d), np.diff(col_u), bulk, coupled,
    )


def _max_rise(d: np.ndarray) -> float:
    """max over m < n of d[n] - d[m]."""
    if d.size < 2:
        return -np.inf
    run_min = np.minimum.accumulate(d[:-1])
    return float(np.max(d[1:] - run_min))


def ratio_sandwich_violations(side: BlockSide, y: float, slack: float = 1e-9) -> int:
    """Count bulk points breaking (1-y) prod J^up <= prod J^u <= prod J^down / (1-y) on some window."""
    bound = -math.log(1.0 - y)
    cd = np.concatenate([[0.0], np.cumsum(side.log_j_down)])
    cu = np.concatenate([[0.0], np.cumsum(side.log_j_up)])
    bad = 0
    for lj in side.log_j_bulk.values():
        cb = np.concatenate([[0.0], np.cumsum(lj)])
        if _max_rise(cb - cd) > bound + slack or _max_rise(cu - cb) > bound + slack:
            bad += 1
    return bad


@dataclass
class SandwichReport:
    event_a: bool
    event_b: bool
    aod1_checked: int
    aod1_violations: int
    bod1_checked: int
    bod1_violations: int
    sw5_checked: int = 0
    sw5_violations: int = 0
    pi2_checked: int = 0
    pi2_violations: int = 0
    details: dict = field(default_factory=dict)

    @property
    def violations(self) -> int:
        return self.aod1_violations + self.bod1_violations + self.sw5_violations + self.pi2_violations


def reflect_east(field_logw: np.ndarray, n_side: int) -> np.ndarray:
    """Weights of x1 in [1, N] seen through z -> e1 - z, on x1 in [1-N, 0], x2 reversed."""
    return np.ascontiguousarray(field_logw[n_side + 1 :, :][::-1, ::-1])


def _two_sides(n_side, o, o_hat, seed, replica, eps, y, r, d, tol, corners_only=False):
    """Global field, the two blocks and their BlockSides (northeast in the reflected frame)."""
    if r is None:
        r = n_side ** (2.0 / 15.0)
    if d is None:
        d = (1.0, n_side ** 0.125)
    k_half = int(math.floor(n_side ** (2.0 / 3.0)))
    rng = RngStream(seed, derive_stream_id(7, replica))
    glob = make_bulk_field((-n_side, -n_side), (n_side, n_side), 1.0, seed, stream=derive_stream_id(8, replica))
    scale = n_side ** (2.0 / 3.0)

    sw_pts = block(southwest_boundary(n_side, eps), o, 0.5 * d[0] * scale)
    ne_pts = block(northeast_boundary(n_side, eps), o_hat, 0.5 * d[1] * scale)
    if not sw_pts or not ne_pts:
        raise ValueError("block centers must lie on the boundary")
    sw_field = glob.subfield((-n_side, -n_side), (0, n_side))
    oc = block_min_corner(sw_pts)
    sw = block_side(
        sw_field, [oc] if corners_only else sw_pts, point_parameter(oc), k_half,
        int(math.floor(d[0] * scale)), n_side, r, y, rng.spawn(1), tol,
    )
    ne_field = WeightField((1 - n_side, -n_side), (0, n_side), reflect_east(glob.logw, n_side), 1.0)
    ne_refl = [(1 - p[0], -p[1]) for p in ne_pts]
    oc_hat = (max(p[0] for p in ne_pts), max(p[1] for p in ne_pts))
    ne = block_side(
        ne_field, [block_min_corner(ne_refl)] if corners_only else ne_refl, point_parameter(oc_hat), k_half,
        int(math.floor(d[1] * scale)), n_side, r, y, rng.spawn(2), tol,
    )
    return glob, sw_pts, ne_pts, sw, ne, k_half


def _stationary_walks(sw: BlockSide, ne: BlockSide, k_half: int) -> tuple[TwoSidedWalk, TwoSidedWalk]:
    def hat(lj):
        return lj[::-1]  # J^_i = J'_{1-i}; both windows are -K+1 .. K

    start = -k_half + 1
    w_prime = walk_from_log_steps(sw.log_j_down - hat(ne.log_j_up), start)
    w_plain = walk_from_log_steps(sw.log_j_up - hat(ne.log_j_down), start)
    return w_prime, w_plain


def boundary_walks(
    n_side: int, o, o_hat, seed: int, replica: int = 0, eps: float = 0.5, r: float | None = None,
    d: tuple[float, float] | None = None, tol: float = 1e-10,
) -> tuple[TwoSidedWalk, TwoSidedWalk]:
    """The comparison walks W' and W built from the stationary pairs at the two block corners."""
    y = (math.sqrt(2.0) - 1.0) / math.sqrt(2.0)
    _, _, _, sw, ne, k_half = _two_sides(n_side, o, o_hat, seed, replica, eps, y, r, d, tol, corners_only=True)
    return _stationary_walks(sw, ne, k_half)


def sandwich_check(
    n_side: int, o, o_hat, seed: int, replica: int = 0, eps: float = 0.5, y: float | None = None,
    r: float | None = None, d: tuple[float, float] | None = None, tol: float = 1e-10, slack: float = 1e-9,
) -> SandwichReport:
    """Evaluate the boundary events exactly and test the ratio sandwiches on one environment.

    o lies on the southwest boundary and o_hat on the northeast boundary of
    [-N, N]^2. The northeast side is handled in the frame z -> e1 - z, where
    its down-left processes become up-right ones and the shifted axis
    e1 + Z e2 becomes the y-axis, so that J^_i = J'_{1-i}.
    """
    if y is None:
        y = (math.sqrt(2.0) - 1.0) / math.sqrt(2.0)
    glob, sw_pts, ne_pts, sw, ne, k_half = _two_sides(n_side, o, o_hat, seed, replica, eps, y, r, d, tol)
    rep = SandwichReport(sw.event, ne.event, 0, 0, 0, 0)
    if sw.event:
        rep.aod1_checked = len(sw.log_j_bulk)
        rep.aod1_violations = ratio_sandwich_violations(sw, y, slack)
    if ne.event:
        rep.bod1_checked = len(ne.log_j_bulk)
        rep.bod1_violations = ratio_sandwich_violations(ne, y, slack)
    rep.details = {
        "rho": (sw.rho, ne.rho),
        "min_prob_sw": (sw.min_prob_down, sw.min_prob_up),
        "min_prob_ne": (ne.min_prob_down, ne.min_prob_up),
    }

    def hat(lj):
        return lj[::-1]

    start = -k_half + 1
    w_prime, w_plain = _stationary_walks(sw, ne, k_half)
    f = -2.0 * math.log(1.0 - y)
    idx = w_prime.indices
    neg, pos = idx < 0, idx > 0
    if sw.event and ne.event:
        for ju in sw.log_j_bulk.values():
            for jv in ne.log_j_bulk.values():
                w = walk_from_log_steps(ju - hat(jv), start).log_values
                rep.sw5_checked += 1
                ok = (
                    np.all(w[neg] >= w_prime.log_values[neg] - f - slack)
                    and np.all(w[neg] <= w_plain.log_values[neg] + f + slack)
                    and np.all(w[pos] >= w_plain.log_values[pos] - f - slack)
                    and np.all(w[pos] <= w_prime.log_values[pos] + f + slack)
                )
                if not ok:
                    rep.sw5_violations += 1

    # crossing bound on the full coupled square for every pair of block points
    full = glob.logw.copy()
    ox, oy = sw.coupled.lo[0] + n_side, sw.coupled.lo[1] + n_side
    full[ox : ox + sw.coupled.shape[0], oy : oy + sw.coupled.shape[1]] = sw.coupled.logw
    east = reflect_east(full, n_side)
    hx, hy = ne.coupled.lo[0] - (1 - n_side), ne.coupled.lo[1] + n_side
    east[hx : hx + ne.coupled.shape[0], hy : hy + ne.coupled.shape[1]] = ne.coupled.logw
    full[n_side + 1 :, :] = east[::-1, ::-1]
    square = WeightField(glob.lo, glob.hi, full, 1.0)
    i0, j0 = square.index((0, -k_half))
    rows = np.arange(j0, j0 + 2 * k_half + 1)
    back = {v: log_partition_backward(square, v) for v in ne_pts}
    for u in sw_pts:
        fwd = log_partition_forward(square, u)
        ju = np.diff(fwd.logz[i0, rows])
        for v in ne_pts:
            bv = back[v].logz[i0 + 1, rows]
            jv = bv[:-1] - bv[1:]
            lp0 = fwd.logz[i0, j0 + k_half] + back[v].logz[i0 + 1, j0 + k_half] - fwd.at(v)
            w = walk_from_log_steps(ju - jv, start).log_values
            rep.pi2_checked += 1
            if np.any(-w - lp0 < -slack):
                rep.pi2_violations += 1
    return rep
