import math
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from dramap.bounds import BoundParams, bank_sample_bound, row_sample_bound


def test_bank_worked_example():
    assert bank_sample_bound(BoundParams(n=32, k=4, theta=0.05, epsilon=0.01)) == 584


def test_row_worked_example():
    assert row_sample_bound(BoundParams(n=32, k=4, k_prime=4, theta=0.05, epsilon=0.01)) == 517


def test_bank_noise_free_direct_evaluation():
    # 16 * (log2(2**28 - 1) + log2(100)) = 554.30...
    direct = 16 * (math.log2(2**28 - 1) + math.log2(100))
    assert 554 < direct < 555
    assert bank_sample_bound(BoundParams(n=32, k=4, theta=0.0, epsilon=0.01)) == 555


@pytest.mark.parametrize("theta", [1.0, 1.5, -0.1])
def test_theta_out_of_range(theta):
    with pytest.raises(ValueError, match="theta"):
        bank_sample_bound(BoundParams(n=32, k=4, theta=theta))


@pytest.mark.parametrize(
    "params,field",
    [
        (BoundParams(n=32, k=32), "k="),
        (BoundParams(n=32, k=4, epsilon=0.0), "epsilon"),
        (BoundParams(n=32, k=4, epsilon=1.0), "epsilon"),
    ],
)
def test_bank_invariant_violations_named(params, field):
    with pytest.raises(ValueError, match=field):
        bank_sample_bound(params)


def test_row_rejects_zero_k_prime():
    with pytest.raises(ValueError, match="k_prime"):
        row_sample_bound(BoundParams(n=32, k=4, k_prime=0))


def test_row_rejects_oversized_ranks():
    with pytest.raises(ValueError, match="k \\+ k_prime"):
        row_sample_bound(BoundParams(n=8, k=4, k_prime=4))


def test_theta_ratio():
    lo = row_sample_bound(BoundParams(n=32, k=4, k_prime=4, theta=0.05))
    hi = row_sample_bound(BoundParams(n=32, k=4, k_prime=4, theta=0.5))
    expected = Fraction(95, 50)
    # each side is a ceiling, so the ratio can drift by about 1/lo
    assert abs(hi / lo - float(expected)) <= 2.0 / lo


@given(
    n=st.integers(4, 60),
    k=st.integers(1, 10),
    theta=st.floats(0, 0.9),
    eps=st.floats(1e-6, 0.5),
)
def test_monotone(n, k, theta, eps):
    if k >= n - 1:
        return
    base = bank_sample_bound(BoundParams(n=n, k=k, theta=theta, epsilon=eps))
    assert bank_sample_bound(BoundParams(n=n, k=k, theta=min(theta + 0.05, 0.95), epsilon=eps)) >= base
    assert bank_sample_bound(BoundParams(n=n, k=k, theta=theta, epsilon=eps / 2)) >= base
    # growing k shrinks the log term; it can win only with two unknown bits left and a loose epsilon
    if n - k >= 3 or eps <= 1 / 3:
        assert bank_sample_bound(BoundParams(n=n, k=k + 1, theta=theta, epsilon=eps)) >= base


def test_not_monotone_in_k_near_full_rank():
    assert bank_sample_bound(BoundParams(n=4, k=2, epsilon=0.5)) == 11
    assert bank_sample_bound(BoundParams(n=4, k=3, epsilon=0.5)) == 8
