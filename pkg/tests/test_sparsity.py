import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from slrprune.sparsity import (
    SparsityPlan,
    apply_mask,
    cardinality_ok,
    compression_rate,
    count_nonzero,
    mask_from,
    project_cardinality,
)

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False, width=32)


def brute_force(x, budget):
    """Best z over every support of size <= budget; lowest indices win ties."""
    flat = x.ravel()
    best, best_err = None, math.inf
    for size in range(budget + 1):
        for support in itertools.combinations(range(flat.size), size):
            err = float(np.sum(np.delete(flat, support).astype(np.float64) ** 2))
            if err < best_err:
                best, best_err = support, err
    z = np.zeros_like(flat)
    z[list(best)] = flat[list(best)]
    return z.reshape(x.shape), best_err


@given(arrays(np.float32, st.integers(1, 7), elements=finite), st.data())
@settings(max_examples=150, deadline=None)
def test_projection_is_optimal(x, data):
    budget = data.draw(st.integers(0, x.size))
    z = project_cardinality(x, budget)
    _, best_err = brute_force(x, budget)
    err = float(np.sum((x.astype(np.float64) - z) ** 2))
    assert err == pytest.approx(best_err, rel=1e-12, abs=0)
    assert count_nonzero(z) <= budget


@given(arrays(np.float64, st.integers(1, 30), elements=st.floats(-10, 10)), st.data())
@settings(max_examples=100, deadline=None)
def test_projection_properties(x, data):
    budget = data.draw(st.integers(0, x.size))
    z = project_cardinality(x, budget)
    assert cardinality_ok(z, budget)
    np.testing.assert_array_equal(project_cardinality(z, budget), z)  # idempotent
    kept = z != 0
    np.testing.assert_array_equal(z[kept], x[kept])  # entries copied, not scaled
    if kept.any() and (~kept).any():
        assert np.abs(x[~kept]).max() <= np.abs(x[kept]).min()


def test_tie_break_keeps_lower_index():
    x = np.array([1.0, -3.0, 3.0, 2.0, 3.0])
    np.testing.assert_array_equal(project_cardinality(x, 2), [0, -3.0, 3.0, 0, 0])


def test_budget_edges():
    x = np.arange(1.0, 7.0).reshape(2, 3)
    np.testing.assert_array_equal(project_cardinality(x, 6), x)
    assert not project_cardinality(x, 0).any()
    with pytest.raises(ValueError):
        project_cardinality(x, 7)
    with pytest.raises(ValueError):
        project_cardinality(x, -1)


def test_pruned_slots_are_positive_zero():
    z = project_cardinality(np.array([-0.0, -5.0, -1.0]), 2)
    assert not np.signbit(z[0])
    z = project_cardinality(np.array([-0.0, 1.0]), 2)  # a kept -0.0 is written as +0.0
    assert not np.signbit(z[0])
    masked = apply_mask(np.array([-1.0, 2.0]), np.array([False, True]))
    assert masked[0] == 0 and not np.signbit(masked[0])


def test_negative_zero_counts_as_zero():
    assert count_nonzero(np.array([-0.0, 0.0, 1e-30])) == 1
    np.testing.assert_array_equal(mask_from(np.array([-0.0, 2.0])), [False, True])


def test_plan_from_keep_fraction():
    plan = SparsityPlan.from_keep_fraction({"a": (10, 10), "b": (3,)}, 0.1)
    assert plan.budgets == {"a": 10, "b": 1}
    plan = SparsityPlan.from_keep_fraction({"a": (10, 10)}, 0.5, overrides={"a": 7})
    assert plan.budgets == {"a": 7}
    with pytest.raises(ValueError):
        SparsityPlan.from_keep_fraction({"a": (2,)}, 1.5)
    with pytest.raises(ValueError):
        SparsityPlan({"a": 5}).validate({"a": (2, 2)})
    with pytest.raises(ValueError):
        SparsityPlan({"missing": 1}).validate({"a": (2,)})


def test_plan_project_and_feasible():
    plan = SparsityPlan({"w": 1})
    layers = {"w": np.array([1.0, -2.0]), "bias": np.array([5.0, 5.0])}
    assert not plan.feasible(layers)
    z = plan.project(layers)
    assert set(z) == {"w"} and plan.feasible(z)


def test_compression_rate():
    overall, per_layer = compression_rate({"a": 100, "b": 50}, {"a": 10, "b": 5})
    assert overall == pytest.approx(10.0)
    assert per_layer == {"a": 10.0, "b": 10.0}
    overall, per_layer = compression_rate({"a": 4, "b": 4}, {"a": np.array([1, 0, 0, 0]), "b": 0})
    assert overall == 8.0 and per_layer["b"] == math.inf
    with pytest.raises(ZeroDivisionError):
        compression_rate({"a": 4}, {"a": 0})
