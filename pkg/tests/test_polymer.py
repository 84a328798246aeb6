import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import enumerated_log_z, four_weight_field, freq_within, random_field
from logpolymer.environment import WeightField
from logpolymer.polymer import (
    UNIT_BASE,
    WITH_BASE_WEIGHT,
    Path,
    edge_crossing_probs,
    enumerate_paths,
    exit_distribution_exact,
    exit_time,
    gibbs_resample,
    log_partition_backward,
    log_partition_exit_at_least,
    log_partition_exit_at_most,
    log_partition_forward,
    nested_ratio_field,
    path_log_weight,
    quenched_path_log_prob,
    sample_path,
    sample_path_forward,
)
from logpolymer.rng import RngStream
from logpolymer.stats import chi_square


def test_forward_unit_weights_counts_paths(unit_field):
    g = log_partition_forward(unit_field, (0, 0))
    assert g.at((2, 2)) == pytest.approx(math.log(6), abs=1e-14)
    assert g.at((3, 1)) == pytest.approx(math.log(4), abs=1e-14)
    assert g.at((-1, 2)) == -math.inf


def test_forward_four_weights():
    f = four_weight_field()
    g = log_partition_forward(f, (0, 0), WITH_BASE_WEIGHT)
    assert g.at((1, 1)) == pytest.approx(math.log(20), abs=1e-14)
    assert g.at((0, 0)) == 0.0
    u = log_partition_forward(f, (0, 0), UNIT_BASE)
    assert u.at((1, 1)) == pytest.approx(math.log(20), abs=1e-14)
    f2 = f.with_log_weights(f.logw + math.log(5.0))
    assert log_partition_forward(f2, (0, 0)).at((0, 0)) == pytest.approx(math.log(5.0))
    assert log_partition_forward(f2, (0, 0), UNIT_BASE).at((0, 0)) == 0.0


def test_forward_rejects_outside_base(unit_field):
    with pytest.raises(IndexError):
        log_partition_forward(unit_field, (9, 0))


def test_forward_matches_enumeration_random():
    for seed in range(10):
        f = random_field((0, 0), (4, 3), seed)
        g = log_partition_forward(f, (1, 0))
        for p in [(1, 0), (2, 2), (4, 3), (3, 1)]:
            assert g.at(p) == pytest.approx(enumerated_log_z(f, (1, 0), p), rel=1e-12)


def test_backward_examples(unit_field):
    b = log_partition_backward(unit_field, (2, 2))
    assert b.at((0, 0)) == pytest.approx(math.log(6), abs=1e-14)
    f = random_field((0, 0), (2, 5), 3)
    col = log_partition_backward(f, (0, 3))
    assert col.at((0, 0)) == pytest.approx(f.logw[0, :4].sum(), rel=1e-14)


def test_backward_is_forward_on_reflected_field():
    f = random_field((0, 0), (6, 5), 11)
    p = (6, 5)
    refl = WeightField((0, 0), (6, 5), f.logw[::-1, ::-1].copy(), 1.0)
    b = log_partition_backward(f, p)
    g = log_partition_forward(refl, (0, 0))
    assert np.array_equal(b.logz, g.logz[::-1, ::-1])


def test_quenched_probabilities():
    uf = WeightField.constant((0, 0), (2, 2))
    g = log_partition_forward(uf, (0, 0))
    paths = enumerate_paths((0, 0), (2, 2))
    for q in paths:
        assert quenched_path_log_prob(g, uf, q) == pytest.approx(-math.log(6), abs=1e-14)
    f = four_weight_field()
    g = log_partition_forward(f, (0, 0))
    right = Path(np.array([[0, 0], [1, 0], [1, 1]]))
    up = Path(np.array([[0, 0], [0, 1], [1, 1]]))
    assert quenched_path_log_prob(g, f, right) == pytest.approx(math.log(0.4), abs=1e-14)
    assert quenched_path_log_prob(g, f, up) == pytest.approx(math.log(0.6), abs=1e-14)
    assert quenched_path_log_prob(g, f, Path(np.array([[0, 0]]))) == 0.0


def test_quenched_law_sums_to_one():
    f = random_field((0, 0), (4, 4), 5)
    g = log_partition_forward(f, (0, 0))
    lp = [quenched_path_log_prob(g, f, q) for q in enumerate_paths((0, 0), (4, 4))]
    assert np.exp(np.logaddexp.reduce(lp)) == pytest.approx(1.0, abs=1e-12)


def test_path_validation():
    with pytest.raises(ValueError):
        Path(np.array([[0, 0], [1, 1]]))
    p = Path.from_steps((2, 3), [0, 1, 1])
    assert p.end == (3, 5) and len(p) == 4


def test_sample_path_uniform_frequencies():
    uf = WeightField.constant((0, 0), (2, 2))
    g = log_partition_forward(uf, (0, 0))
    rng = RngStream(17, 1)
    paths = enumerate_paths((0, 0), (2, 2))
    index = {q.key(): i for i, q in enumerate(paths)}
    n = 60000
    counts = np.zeros(6, dtype=int)
    for _ in range(n):
        counts[index[sample_path(g, uf, (2, 2), rng).key()]] += 1
    assert all(freq_within(c, n, 1 / 6) for c in counts)


def test_sample_path_four_weights():
    f = four_weight_field()
    g = log_partition_forward(f, (0, 0))
    rng = RngStream(17, 2)
    n = 40000
    via_right = sum(sample_path(g, f, (1, 1), rng).vertices[1, 0] == 1 for _ in range(n))
    assert freq_within(via_right, n, 0.4)


def test_sample_path_forced_on_axis():
    f = random_field((0, 0), (5, 5), 2)
    g = log_partition_forward(f, (0, 0))
    q = sample_path(g, f, (4, 0), RngStream(0))
    assert np.array_equal(q.vertices[:, 1], np.zeros(5))


def test_forward_chain_sampler_agrees_with_backward_sampler():
    f = random_field((0, 0), (2, 2), 8)
    g = log_partition_forward(f, (0, 0))
    paths = enumerate_paths((0, 0), (2, 2))
    probs = np.exp([quenched_path_log_prob(g, f, q) for q in paths])
    index = {q.key(): i for i, q in enumerate(paths)}
    rng = RngStream(8, 3)
    n = 30000
    counts = np.zeros(len(paths))
    for _ in range(n):
        counts[index[sample_path_forward(f, (0, 0), (2, 2), rng).key()]] += 1
    assert chi_square(counts, probs).pvalue > 0.001


def test_exit_time_examples():
    a = Path(np.array([[0, 0], [1, 0], [2, 0], [2, 1]]))
    b = Path(np.array([[0, 0], [0, 1], [1, 1]]))
    assert exit_time(a, (0, 0), (0, 0)) == 2
    assert exit_time(b, (0, 0), (0, 0)) == -1


def test_exit_law_unit_symmetry():
    uf = WeightField.constant((0, 0), (1, 1))
    d = exit_distribution_exact(uf, (0, 0), (0, 0), (1, 1))
    assert d.prob(1) == pytest.approx(0.5) and d.prob(-1) == pytest.approx(0.5)


def test_exit_law_matches_enumeration():
    for seed in range(5):
        f = random_field((0, 0), (4, 4), seed + 40)
        v = (1, 1)
        d = exit_distribution_exact(f, (0, 0), v, (4, 4))
        g = log_partition_forward(f, (0, 0))
        hist = {}
        for q in enumerate_paths((0, 0), (4, 4)):
            t = exit_time(q, (0, 0), v)
            hist[t] = hist.get(t, 0.0) + math.exp(quenched_path_log_prob(g, f, q))
        assert d.probs.sum() == pytest.approx(1.0, abs=1e-12)
        for t, pr in hist.items():
            assert d.prob(t) == pytest.approx(pr, abs=1e-12)


def test_exit_time_consistency_random_paths():
    rng = RngStream(1, 1)
    f = random_field((0, 0), (6, 6), 1)
    g = log_partition_forward(f, (0, 0))
    for _ in range(50):
        q = sample_path(g, f, (6, 6), rng)
        assert exit_time(q, (0, 0), (0, 0)) == exit_time(q, (0, 0), q.start)


def test_edge_crossing_examples():
    uf = WeightField.constant((-1, 0), (1, 1))
    h, p = edge_crossing_probs(uf, (-1, 0), (1, 0))
    assert p[h == 0][0] == pytest.approx(1.0)
    h, p = edge_crossing_probs(uf, (-1, 0), (1, 1))
    assert p[h == 0][0] == pytest.approx(1 / 3) and p[h == 1][0] == pytest.approx(2 / 3)
    with pytest.raises(ValueError):
        edge_crossing_probs(uf, (0, 0), (1, 1))


def test_gibbs_resample_degenerate_and_endpoints():
    f = random_field((0, 0), (4, 4), 6)
    g = log_partition_forward(f, (0, 0))
    rng = RngStream(6, 1)
    x = sample_path(g, f, (4, 4), rng)
    assert gibbs_resample(x, 3, 3, f, rng) == x
    for _ in range(100):
        a, b = sorted(rng.integers(0, len(x), 2))
        y = gibbs_resample(x, a, b, f, rng)
        assert np.array_equal(y.vertices[: a + 1], x.vertices[: a + 1])
        assert np.array_equal(y.vertices[b:], x.vertices[b:])
    with pytest.raises(ValueError):
        gibbs_resample(x, 5, 2, f, rng)


def test_gibbs_whole_path_is_exact_resampling():
    f = random_field((0, 0), (2, 2), 9)
    g = log_partition_forward(f, (0, 0))
    paths = enumerate_paths((0, 0), (2, 2))
    probs = np.exp([quenched_path_log_prob(g, f, q) for q in paths])
    index = {q.key(): i for i, q in enumerate(paths)}
    rng = RngStream(9, 2)
    start = paths[0]
    counts = np.zeros(len(paths))
    for _ in range(20000):
        counts[index[gibbs_resample(start, 0, len(start) - 1, f, rng).key()]] += 1
    assert chi_square(counts, probs).pvalue > 0.001


def test_gibbs_preserves_law_on_2x2_unit_field():
    uf = WeightField.constant((0, 0), (1, 1))
    g = log_partition_forward(uf, (0, 0))
    rng = RngStream(10, 1)
    counts = np.zeros(2)
    for _ in range(20000):
        x = sample_path(g, uf, (1, 1), rng)
        y = gibbs_resample(x, 0, 2, uf, rng)
        counts[int(y.vertices[1, 0] == 1)] += 1
    assert chi_square(counts, [0.5, 0.5]).pvalue > 0.001


def test_enumerate_paths_counts():
    assert len(enumerate_paths((0, 0), (0, 0))) == 1
    assert len(enumerate_paths((0, 0), (2, 2))) == 6
    assert len(enumerate_paths((0, 0), (3, 1))) == 4
    keys = [q.key() for q in enumerate_paths((0, 0), (3, 3))]
    assert keys == sorted(keys) and len(set(keys)) == 20
    with pytest.raises(ValueError):
        enumerate_paths((0, 0), (13, 12))


def test_nesting_identity_and_ratio_propagation():
    for seed in range(50):
        rng = RngStream(seed, 77)
        m, n = rng.integers(3, 11), rng.integers(3, 11)
        f = random_field((0, 0), (m - 1, n - 1), seed)
        u = (rng.integers(0, m // 2), rng.integers(0, n // 2))
        v = (rng.integers(u[0], m - 1), rng.integers(u[1], n - 1))
        g = log_partition_forward(f, u)
        nested = log_partition_forward(nested_ratio_field(f, u, v, g), v, UNIT_BASE)
        vi, vj = g.index(v)
        expect = g.logz[vi:, vj:] - g.at(v)
        assert np.allclose(nested.logz, expect, rtol=1e-10, atol=1e-10)
        assert np.allclose(np.diff(nested.logz, axis=0), np.diff(expect, axis=0), rtol=1e-10, atol=1e-10)


def test_exit_identity_through_nested_boundary():
    for seed in range(50):
        f = random_field((0, 0), (5, 5), seed + 100)
        rng = RngStream(seed, 78)
        u = (0, rng.integers(0, 2))
        v = (rng.integers(1, 4), rng.integers(u[1] + 1, 4))
        w = (5, 5)
        d1 = exit_distribution_exact(f, u, v, w)
        nf = nested_ratio_field(f, u, v)
        d2 = exit_distribution_exact(nf, v, v, w, UNIT_BASE)
        assert np.array_equal(d1.values, d2.values)
        assert np.allclose(d1.log_probs, d2.log_probs, rtol=1e-10, atol=1e-10)


def test_restricted_partitions_match_enumeration():
    f = random_field((0, 0), (4, 4), 12)
    paths = enumerate_paths((0, 0), (4, 3))
    for k in range(1, 5):
        ref = np.logaddexp.reduce([path_log_weight(f, q) for q in paths if np.all(q.steps[:k] == 0)])
        assert log_partition_exit_at_least(f, (0, 0), (4, 3), k) == pytest.approx(ref, rel=1e-12)
    for l in range(1, 4):
        ref = np.logaddexp.reduce([path_log_weight(f, q) for q in paths if np.all(q.steps[:l] == 1)])
        assert log_partition_exit_at_most(f, (0, 0), (4, 3), l) == pytest.approx(ref, rel=1e-12)
    assert log_partition_exit_at_least(f, (0, 0), (4, 3), 5) == -math.inf


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 6), st.integers(1, 6))
def test_edge_crossing_sums_to_one(seed, a, b):
    f = random_field((-a, -b), (a, b), seed)
    h, p = edge_crossing_probs(f, (-a, -b), (a, b))
    assert p.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(p >= 0)
