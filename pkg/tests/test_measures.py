"""Exact-coupling distance checks against brute-force enumeration."""

import itertools

import numpy as np
import pytest

from mfchaos import (
    DimensionError,
    EmpiricalMeasure,
    ParameterError,
    empirical_moment,
    wasserstein_1d,
    wasserstein_assignment,
)


def brute_force_wasserstein(a, b, k):
    """Independent oracle: minimum over all permutation couplings."""
    a = np.atleast_2d(np.asarray(a, dtype=float).T).T
    b = np.atleast_2d(np.asarray(b, dtype=float).T).T
    if a.ndim == 1:
        a, b = a[:, None], b[:, None]
    n = a.shape[0]
    best = np.inf
    for perm in itertools.permutations(range(n)):
        cost = np.mean(np.linalg.norm(a - b[list(perm)], axis=1) ** k)
        best = min(best, cost)
    return best ** (1.0 / k)


def test_identical_measures_distance_zero():
    pts = [0.3, -1.2, 5.0]
    assert wasserstein_1d(pts, pts, 2) == 0.0
    assert wasserstein_assignment(pts, pts, 2) == 0.0


def test_singleton_gap():
    assert wasserstein_1d([0.0], [1.0], 2) == pytest.approx(1.0)


def test_two_point_sorted_matching():
    # brute force: sorted matching costs 1, crossing costs sqrt(5)
    a, b = [0.0, 2.0], [1.0, 3.0]
    assert brute_force_wasserstein(a, b, 2) == pytest.approx(1.0)
    assert wasserstein_1d(a, b, 2) == pytest.approx(1.0)


def test_assignment_single_pair_euclidean():
    a = np.array([[0.0, 0.0]])
    b = np.array([[3.0, 4.0]])
    assert wasserstein_assignment(a, b, 2) == pytest.approx(5.0)


def test_assignment_two_permutations():
    a = np.array([[0.0, 0.0], [1.0, 0.0]])
    b = np.array([[0.0, 1.0], [1.0, 1.0]])
    assert brute_force_wasserstein(a, b, 2) == pytest.approx(1.0)
    assert wasserstein_assignment(a, b, 2) == pytest.approx(1.0)


@pytest.mark.parametrize("k", [1.0, 2.0, 3.5])
def test_assignment_matches_brute_force_small_clouds(k):
    gen = np.random.Generator(np.random.Philox(key=[7, 0]))
    for d in (1, 2, 3):
        for _ in range(20):
            n = int(gen.integers(1, 6))
            a = gen.standard_normal((n, d))
            b = gen.standard_normal((n, d))
            expected = brute_force_wasserstein(a, b, k)
            assert wasserstein_assignment(a, b, k) == pytest.approx(expected, rel=1e-10)


def test_one_dimensional_oracle_equivalence():
    # sorted pairing must agree with the assignment solver on 200 cases
    gen = np.random.Generator(np.random.Philox(key=[11, 0]))
    for _ in range(200):
        n = int(gen.integers(1, 65))
        k = float(gen.uniform(1.0, 4.0))
        a = 3.0 * gen.standard_normal((n, 1))
        b = 3.0 * gen.standard_normal((n, 1))
        w_sort = wasserstein_1d(a, b, k)
        w_assign = wasserstein_assignment(a, b, k)
        assert abs(w_sort - w_assign) <= 1e-12 * max(1.0, w_sort)


def test_triangle_inequality_random_triples():
    gen = np.random.Generator(np.random.Philox(key=[13, 0]))
    for _ in range(50):
        n = int(gen.integers(2, 33))
        k = float(gen.choice([1.0, 2.0, 3.0]))
        a, b, c = (gen.standard_normal((n, 1)) for _ in range(3))
        w_ab = wasserstein_1d(a, b, k)
        w_bc = wasserstein_1d(b, c, k)
        w_ac = wasserstein_1d(a, c, k)
        assert w_ac <= (w_ab + w_bc) * (1 + 1e-12)
    for _ in range(20):
        n = int(gen.integers(2, 17))
        a, b, c = (gen.standard_normal((n, 2)) for _ in range(3))
        w_ab = wasserstein_assignment(a, b, 2)
        w_bc = wasserstein_assignment(b, c, 2)
        w_ac = wasserstein_assignment(a, c, 2)
        assert w_ac <= (w_ab + w_bc) * (1 + 1e-12)


def test_sorted_pairing_dominated_by_any_pairing():
    # W_k <= ((1/N) sum |x_j - y_j|^k)^(1/k) for the unsorted pairing,
    # with equality once both samples are sorted
    gen = np.random.Generator(np.random.Philox(key=[17, 0]))
    for _ in range(50):
        n = int(gen.integers(2, 40))
        k = float(gen.choice([1.0, 2.0, 4.0]))
        x = gen.standard_normal(n)
        y = gen.standard_normal(n)
        unsorted_cost = np.mean(np.abs(x - y) ** k) ** (1.0 / k)
        w = wasserstein_1d(x, y, k)
        assert w <= unsorted_cost + 1e-12
        xs, ys = np.sort(x), np.sort(y)
        sorted_cost = np.mean(np.abs(xs - ys) ** k) ** (1.0 / k)
        assert w == pytest.approx(sorted_cost, abs=1e-14)


def test_monotone_in_order():
    gen = np.random.Generator(np.random.Philox(key=[19, 0]))
    for _ in range(30):
        n = int(gen.integers(2, 30))
        x = gen.standard_normal(n)
        y = gen.standard_normal(n)
        orders = [1.0, 1.5, 2.0, 3.0, 4.0]
        vals = [wasserstein_1d(x, y, k) for k in orders]
        assert all(v1 <= v2 + 1e-12 for v1, v2 in zip(vals, vals[1:]))


def test_empirical_moment_values():
    est = empirical_moment(np.zeros((2, 3)), 2)
    assert est.value == 0.0
    est = empirical_moment([1.0, -1.0], 2)
    assert est.value == pytest.approx(1.0)
    assert est.std_error == pytest.approx(0.0)
    est = empirical_moment([1.0, 2.0, 3.0], 2)
    assert est.value == pytest.approx(14.0 / 3.0)
    assert est.replication_count == 3


def test_error_conditions():
    with pytest.raises(DimensionError):
        wasserstein_1d([0.0, 1.0], [0.0], 2)
    with pytest.raises(ParameterError):
        wasserstein_1d([0.0], [1.0], 0.5)
    with pytest.raises(DimensionError):
        wasserstein_assignment(np.zeros((2, 2)), np.zeros((2, 3)), 2)
    with pytest.raises(ParameterError):
        wasserstein_assignment(np.zeros((600, 2)), np.ones((600, 2)), 2)
    with pytest.raises(ParameterError):
        empirical_moment([], 2)
    with pytest.raises(DimensionError):
        EmpiricalMeasure(np.zeros((0, 1)))


def test_measure_stat_caching():
    mu = EmpiricalMeasure([[1.0], [3.0]])
    calls = []

    def fn(points):
        calls.append(1)
        return points.mean()

    assert mu.stat("m", fn) == 2.0
    assert mu.stat("m", fn) == 2.0
    assert len(calls) == 1
