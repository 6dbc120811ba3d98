import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gradbalance.objectives import (
    CostBank,
    CostTable,
    make_quadratic,
    make_quartic,
    make_table,
    quartic_envelope,
    sample_uniform_quartics,
)


def test_quadratic_examples():
    assert make_quadratic(1, 0).derivative(2.0) == 2.0
    assert make_quadratic(2, 0).inverse_derivative(4.0) == 2.0
    assert make_quadratic(1, -3).derivative(3.0) == 0.0
    f = make_quadratic(2.5, 1.0)
    assert f.lipschitz == f.strong_convexity == 2.5
    assert f.value(2.0) == pytest.approx(0.5 * 2.5 * 4 + 2.0)


@pytest.mark.parametrize("c", [0, -1.0])
def test_quadratic_rejects_nonpositive_curvature(c):
    with pytest.raises(ValueError):
        make_quadratic(c, 0)


def test_quartic_lipschitz_matches_numeric_curvature():
    f = make_quartic(1.0, 0.0, (-4.0, 4.0))
    lo, hi = f.validity_interval
    assert (lo, hi) == pytest.approx((-1.0, 1.0))
    # finite-difference second derivative over a dense grid of the validity interval
    xs = np.linspace(lo, hi, 20001)
    h = 1e-5
    curvature = (f.derivative(xs + h) - f.derivative(xs - h)) / (2 * h)
    assert curvature.max() == pytest.approx(12.0, rel=1e-6)
    assert f.lipschitz == pytest.approx(12.0)
    assert f.strong_convexity is None


def test_quartic_examples():
    f = make_quartic(1.0, 0.0, (-4.0, 4.0))
    assert f.derivative(1.0) == 4.0
    assert f.inverse_derivative(4.0) == pytest.approx(1.0)
    assert f.inverse_derivative(-4.0) == pytest.approx(-1.0)


def test_zero_weight_quartic_is_flagged_constant():
    f = make_quartic(0.0, 0.3, (-1.0, 1.0))
    assert f.constant and not f.has_inverse
    assert f.derivative(5.0) == 0.0
    with pytest.raises(TypeError):
        f.inverse_derivative(0.0)


def test_sample_uniform_quartics_is_deterministic():
    assert sample_uniform_quartics(3, 7) == sample_uniform_quartics(3, 7)
    assert sample_uniform_quartics(3, 7) != sample_uniform_quartics(3, 8)
    with pytest.raises(ValueError):
        sample_uniform_quartics(0, 1)


def test_sample_uniform_quartics_law_of_large_numbers():
    draws = np.array(sample_uniform_quartics(1000, 1))
    assert 0.45 <= draws[:, 0].mean() <= 0.55
    assert 0.45 <= draws[:, 1].mean() <= 0.55
    assert draws.min() >= 0 and draws.max() <= 1
    # a differently seeded generator of another family agrees on the mean
    other = np.random.default_rng(12345).uniform(size=1000)
    assert abs(draws[:, 0].mean() - other.mean()) < 0.05


def test_envelope_covers_initial_slopes():
    params = [(0.5, 0.2), (1.0, 0.9)]
    lo, hi = quartic_envelope(params, [0.0, 0.0])
    slopes = [4 * w * (0 - a) ** 3 for w, a in params]
    assert lo <= min(slopes) and max(slopes) <= hi
    assert hi == pytest.approx(1.5 * max(abs(s) for s in slopes))


def test_cost_table_and_bank():
    table = CostTable(((1, 9.0), (0, 4.0)), 0.5)
    costs = table.costs()
    assert [f.derivative(123.0) for f in costs] == [4.0, 9.0]
    bank = CostBank(costs)
    assert not bank.has_value
    np.testing.assert_array_equal(bank.derivative(np.zeros(2)), [4.0, 9.0])
    with pytest.raises(ValueError):
        CostTable(((0, 1.0), (2, 1.0)), 0.5)


def test_bank_matches_scalar_evaluation_on_mixed_families():
    costs = [make_quadratic(2.0, 1.0), make_quartic(0.7, 0.2, (-3, 3)), make_quadratic(0.5, -1.0)]
    bank = CostBank(costs)
    x = np.array([0.3, -0.4, 1.7])
    np.testing.assert_array_equal(bank.derivative(x), [f.derivative(v) for f, v in zip(costs, x)])
    np.testing.assert_array_equal(bank.values(x), [f.value(v) for f, v in zip(costs, x)])
    X = np.vstack([x, 2 * x])
    np.testing.assert_array_equal(bank.total(X)[1], bank.total(2 * x))


def _random_cost(draw_kind, p1, p2):
    if draw_kind == "quadratic":
        return make_quadratic(0.1 + 5 * p1, 4 * p2 - 2)
    return make_quartic(0.05 + p1, p2, (-3.0, 3.0))


cost_strategy = st.builds(
    _random_cost,
    st.sampled_from(["quadratic", "quartic"]),
    st.floats(0, 1),
    st.floats(0, 1),
)


@settings(max_examples=60, deadline=None)
@given(f=cost_strategy, seed=st.integers(0, 2**32 - 1))
def test_cost_certificates(f, seed):
    rng = np.random.default_rng(seed)
    lo, hi = f.validity_interval
    lo, hi = max(lo, -50.0), min(hi, 50.0)
    pairs = np.sort(rng.uniform(lo, hi, size=(1000, 2)), axis=1)
    x, y = pairs[:, 0], pairs[:, 1]
    dx, dy = f.derivative(x), f.derivative(y)
    slack = 1e-12 * (1 + np.abs(dx) + np.abs(dy))
    # monotone slope
    assert np.all(dy - dx >= -slack)
    # Lipschitz slope on the validity interval
    assert np.all(np.abs(dy - dx) <= f.lipschitz * (y - x) + slack)
    if f.strong_convexity is not None:
        assert np.all(dy - dx >= f.strong_convexity * (y - x) - slack)
    back = f.inverse_derivative(dx)
    np.testing.assert_allclose(back, x, rtol=1e-9, atol=1e-9)
