import statistics

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from leakbench.errors import UndefinedCorrelationError
from leakbench.metrics import (
    MetricSummary,
    accuracy,
    aggregate,
    class_distribution,
    plcc,
    rank,
    srocc,
    summarize,
)
from oracles import average_ranks_brute, pearson_double_loop, spearman_brute


def test_plcc_identity_and_reversal():
    assert plcc([1, 2, 3], [1, 2, 3]) == 1.0
    assert plcc([1, 2, 3], [3, 2, 1]) == -1.0


def test_plcc_and_srocc_small_case():
    # centered x = (-1.5,-.5,.5,1.5), y = (-1.5,.5,-.5,1.5): 4/5
    assert plcc([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8, abs=1e-15)
    assert srocc([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8, abs=1e-15)


def test_srocc_tie_case():
    assert list(rank([1, 2, 2, 3])) == [1.0, 2.5, 2.5, 4.0]
    expected = pearson_double_loop([1, 2.5, 2.5, 4], [1, 2, 3, 4])
    assert srocc([1, 2, 2, 3], [1, 2, 3, 4]) == pytest.approx(expected, abs=1e-15)


def test_srocc_monotone_transform():
    x = np.linspace(-2, 3, 17)
    assert srocc(x, np.exp(x)) == 1.0
    assert srocc(x, x**3 + 4) == 1.0


def test_constant_input_is_an_error():
    with pytest.raises(UndefinedCorrelationError):
        plcc([1, 1, 1], [1, 2, 3])
    with pytest.raises(UndefinedCorrelationError):
        srocc([1, 2, 3], [2, 2, 2])
    s = summarize([1, 1, 1], [1, 2, 3])
    assert s.undefined and s.plcc is None


def test_length_mismatch():
    with pytest.raises(ValueError):
        plcc([1, 2], [1, 2, 3])


def test_oracles_on_random_vectors():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(3, 101))
        x = rng.normal(size=n)
        y = rng.normal(size=n) if rng.random() < 0.5 else np.round(rng.normal(size=n), 0)
        assert abs(plcc(x, y) - pearson_double_loop(list(x), list(y))) <= 1e-12
        assert abs(srocc(x, y) - spearman_brute(list(x), list(y))) <= 1e-12


@settings(max_examples=100, deadline=None)
@given(
    x=st.lists(st.integers(min_value=-5, max_value=5), min_size=3, max_size=30),
    seed=st.integers(min_value=0, max_value=1000),
)
def test_srocc_is_plcc_of_ranks(x, seed):
    y = list(np.random.default_rng(seed).integers(-3, 4, size=len(x)))
    if len(set(x)) < 2 or len(set(y)) < 2:
        return
    assert srocc(x, y) == plcc(rank(x), rank(y))
    assert list(rank(x)) == average_ranks_brute(x)


@settings(max_examples=100, deadline=None)
@given(
    # |b| / a is bounded so that forming a*x + b itself loses < 1e-13 relative
    a=st.floats(min_value=0.1, max_value=1e3),
    b=st.floats(min_value=-10.0, max_value=10.0),
    seed=st.integers(min_value=0, max_value=10_000),
)
def test_plcc_affine_invariance(a, b, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=20)
    y = rng.normal(size=20)
    assert abs(plcc(a * x + b, y) - plcc(x, y)) <= 1e-12


def test_accuracy_and_distribution():
    assert accuracy([0, 1, 2], [0, 1, 2]) == 1.0
    assert accuracy([0, 1, 2], [1, 2, 0]) == 0.0
    truth = [0, 0, 1, 2, 0, 3, 0, 1]
    dist = class_distribution(truth, range(5))
    assert dist == {0: 0.5, 1: 0.25, 2: 0.125, 3: 0.125, 4: 0.0}
    assert accuracy([0] * len(truth), truth) == dist[0]
    with pytest.raises(ValueError):
        accuracy([], [])


def test_aggregate_cases():
    one = aggregate([MetricSummary(0.7, 0.6, 10)])
    assert one["plcc_std"] == 0.0 and one["srocc_std"] == 0.0
    two = aggregate([MetricSummary(0.6, 0.5, 10), MetricSummary(0.8, 0.7, 10)])
    assert two["plcc_mean"] == pytest.approx(0.7, abs=1e-15)


def test_aggregate_matches_independent_recomputation():
    values = [(0.71, 0.69), (0.65, 0.62), (0.74, 0.73), (0.69, 0.66), (0.70, 0.68)]
    out = aggregate(MetricSummary(p, s, 50) for p, s in values)
    for k, name in enumerate(("plcc", "srocc")):
        col = [v[k] for v in values]
        assert abs(out[f"{name}_mean"] - statistics.fmean(col)) <= 1e-12
        assert abs(out[f"{name}_std"] - statistics.pstdev(col)) <= 1e-12
    assert out["std_convention"] == "population"


def test_aggregate_skips_and_counts_undefined():
    out = aggregate([MetricSummary(None, None, 5), MetricSummary(0.5, 0.4, 5)])
    assert out["n_undefined"] == 1 and out["plcc_mean"] == 0.5
    empty = aggregate([MetricSummary(None, None, 5)])
    assert empty["plcc_mean"] is None
