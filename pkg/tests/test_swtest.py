import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from odesel.swtest import (
    Decision,
    DegenerateVarianceError,
    VarianceComponents,
    decide,
    optimal_h,
    regularized_variance,
    reweighted_lr,
    sw_statistic,
    variance_components,
    weights,
)

Z975 = 1.959963984540054
finite = st.floats(-50, 50, allow_nan=False)
seqs = st.integers(3, 40).flatmap(lambda n: st.tuples(st.lists(finite, min_size=n, max_size=n),
                                                      st.lists(finite, min_size=n, max_size=n)))


def _unit_fit(trace):
    # an (H, V) pair with tr(H^-1 V) = trace
    return np.eye(2), np.diag([trace / 2, trace / 2])


# ---------------------------------------------------------------- components


def test_identical_sequences_have_zero_variance():
    vc = variance_components([0.3, -1.2, 4.0], [0.3, -1.2, 4.0])
    assert vc.sigma2 == pytest.approx(0.0, abs=1e-15)


def test_components_hand_case():
    vc = variance_components([0.0, 2.0], [0.0, 0.0])
    assert (vc.sigma_p2, vc.sigma_q2, vc.sigma_pq, vc.sigma2) == (1.0, 0.0, 0.0, 1.0)


def test_constant_sequence_has_zero_variance():
    assert variance_components([2.0] * 5, [1.0, 2, 3, 4, 5]).sigma_p2 == 0.0


def test_components_need_two_points():
    with pytest.raises(ValueError):
        variance_components([1.0], [2.0])


@given(seqs, finite)
def test_component_invariants(pq, c):
    p, q = map(np.array, pq)
    vc = variance_components(p, q)
    assert vc.sigma_p2 >= 0 and vc.sigma_q2 >= 0
    assert abs(vc.sigma_pq) <= math.sqrt(vc.sigma_p2 * vc.sigma_q2) + 1e-12 * (1 + vc.sigma_p2 + vc.sigma_q2)
    assert vc.sigma2 >= -1e-12 * (1 + vc.sigma_p2 + vc.sigma_q2)
    shifted = variance_components(p + c, q)
    assert shifted.sigma_p2 == pytest.approx(vc.sigma_p2, rel=1e-9, abs=1e-9)


# ---------------------------------------------------------------- reweighted ratio


def test_weights_pattern():
    assert np.array_equal(weights(4, 0.1), [1, 1.1, 1, 1.1, 1])


def test_h_zero_is_plain_mean_ratio():
    p, q = np.array([0.1, -0.4, 2.0]), np.array([1.0, 0.5, -0.2])
    assert reweighted_lr(p, q, 0.0) == pytest.approx(np.mean(p - q))


def test_n2_formula():
    A, B, h = (0.7, -1.1), (0.3, 2.5), 0.37
    want = 0.5 * (A[0] - (1 + h) * B[0] + (1 + h) * A[1] - B[1])
    assert reweighted_lr(A, B, h) == pytest.approx(want, rel=1e-15)


def test_n2_hand_value():
    assert reweighted_lr([1, 1], [0, 0], 0.5) == 1.25


def test_n4_weight_pattern():
    p, q = [1, 2, 1, 2], [0, 1, 0, 1]
    # w = (1, 1.1, 1, 1.1, 1); sum_i w_i p_i - w_{i+1} q_i
    want = ((1 - 1.1 * 0) + (1.1 * 2 - 1 * 1) + (1 - 1.1 * 0) + (1.1 * 2 - 1 * 1)) / 4
    assert reweighted_lr(p, q, 0.1) == pytest.approx(want, rel=1e-15)
    assert want == pytest.approx(1.1)


def test_odd_n_uses_last_weight():
    # n = 3: q_3 carries w_4 = 1 + h
    assert reweighted_lr([0, 0, 0], [0, 0, 1], 0.5) == pytest.approx(-1.5 / 3)


# ---------------------------------------------------------------- regularised variance


def test_regularized_variance_examples():
    assert regularized_variance(VarianceComponents(2.0, 0.5, 1.0), 0.0) == pytest.approx(2.0)
    assert regularized_variance(VarianceComponents(1.0, 1.0, 1.0), 0.1) == pytest.approx(0.01)
    # sigma2 = 2 - 2*2 + 3 = 1
    assert regularized_variance(VarianceComponents(2.0, 2.0, 3.0), 0.5) == pytest.approx(2.125)


def test_regularized_variance_degenerate():
    with pytest.raises(DegenerateVarianceError):
        regularized_variance(VarianceComponents(0.0, 0.0, 0.0), 0.5)


@given(seqs, st.floats(0, 2), st.floats(0, 2))
def test_regularized_variance_monotone_in_h(pq, h1, h2):
    vc = variance_components(*pq)
    if vc.sigma_p2 + vc.sigma_q2 == 0:
        return
    lo, hi = sorted((h1, h2))
    try:
        a = regularized_variance(vc, lo)
    except DegenerateVarianceError:
        return
    assert regularized_variance(vc, hi) >= a * (1 - 1e-12)


def test_n2_variance_identity_by_simulation():
    rng = np.random.default_rng(17)
    h = 0.4
    cov = np.array([[1.0, 0.3], [0.3, 2.0]])
    AB1 = rng.multivariate_normal([0, 0], cov, 100_000)
    AB2 = rng.multivariate_normal([0, 0], cov, 100_000)
    lr = 0.5 * (AB1[:, 0] - (1 + h) * AB1[:, 1] + (1 + h) * AB2[:, 0] - AB2[:, 1])
    emp = np.var(math.sqrt(2) * lr)
    vc = VarianceComponents(cov[0, 0], cov[0, 1], cov[1, 1])
    want = regularized_variance(vc, h)
    # s.e. of a sample variance of a Gaussian: v * sqrt(2/(N-1))
    assert abs(emp - want) <= 3 * want * math.sqrt(2 / (lr.size - 1))


# ---------------------------------------------------------------- optimal h


def test_delta_hat_unit_sigma():
    vc = VarianceComponents(1.0, 0.0, 0.0)  # sigma2 = 1
    _, diag = optimal_h(vc, _unit_fit(1.0), _unit_fit(1.0), 0.05, 100)
    assert diag.z == pytest.approx(Z975, abs=1e-12)
    # 0.5*(z - sqrt(4 + z^2)) evaluated at 40 digits
    assert diag.delta == pytest.approx(-0.4201482535191036, abs=1e-12)


def test_constants_formula():
    vc = VarianceComponents(2.0, 0.5, 1.5)
    h, diag = optimal_h(vc, _unit_fit(3.0), _unit_fit(-5.0), 0.1, 200)
    z = 1.6448536269514722
    s = math.sqrt(vc.sigma2)
    delta = 0.5 * s * (z - math.sqrt(4 + z * z))
    phi = lambda u: math.exp(-u * u / 2) / math.sqrt(2 * math.pi)  # noqa: E731
    c_sd = phi(z - delta / s) * delta * (vc.sigma2 - 2 * 3.5) / (4 * s**3)
    c_pl = 2 * phi(z) * 5.0 / math.sqrt(3.5 / 2)
    assert diag.c_sd == pytest.approx(c_sd, rel=1e-12)
    assert diag.c_pl == pytest.approx(c_pl, rel=1e-12)
    want = abs(c_sd / c_pl) ** (1 / 3) * 200 ** (-1 / 6) * math.log(math.log(200)) ** (1 / 3)
    assert h == pytest.approx(want, rel=1e-12)
    assert diag.trace_b == pytest.approx(-5.0)


def test_h_sample_size_scaling():
    vc = VarianceComponents(2.0, 0.5, 1.5)
    h64, _ = optimal_h(vc, _unit_fit(3.0), _unit_fit(2.0), 0.05, 64)
    h4096, _ = optimal_h(vc, _unit_fit(3.0), _unit_fit(2.0), 0.05, 4096)
    # (4096/64)^(-1/6) * (loglog 4096 / loglog 64)^(1/3), evaluated at 30 digits
    assert h4096 / h64 == pytest.approx(0.5706137497578975, rel=1e-12)


@given(st.integers(3, 10**6), st.integers(3, 10**6))
def test_h_scales_exactly_with_n(n1, n2):
    vc = VarianceComponents(1.0, 0.2, 0.8)
    h1, _ = optimal_h(vc, _unit_fit(1.0), _unit_fit(2.0), 0.05, n1)
    h2, _ = optimal_h(vc, _unit_fit(1.0), _unit_fit(2.0), 0.05, n2)
    f = lambda n: n ** (-1 / 6) * math.log(math.log(n)) ** (1 / 3)  # noqa: E731
    assert h1 / h2 == pytest.approx(f(n1) / f(n2), rel=1e-12)


def test_identical_models_fall_back_to_unit_ratio():
    vc = VarianceComponents(1.0, 1.0, 1.0)
    h, diag = optimal_h(vc, _unit_fit(1.0), _unit_fit(1.0), 0.05, 500)
    assert h == pytest.approx(500 ** (-1 / 6) * math.log(math.log(500)) ** (1 / 3))
    assert any("C_SD=0" in f for f in diag.fallbacks)
    assert any("nested" in f for f in diag.fallbacks)


def test_zero_traces_fall_back():
    h, diag = optimal_h(VarianceComponents(1.0, 0.0, 1.0), _unit_fit(0.0), _unit_fit(0.0), 0.05, 50)
    assert h > 0 and any("C_PL=0" in f for f in diag.fallbacks)


def test_singular_hessian_uses_pseudo_inverse():
    H = np.array([[1.0, 0.0], [0.0, 1e-14]])
    V = np.eye(2)
    _, diag = optimal_h(VarianceComponents(1.0, 0.0, 1.0), (H, V), _unit_fit(1.0), 0.05, 50)
    assert diag.pinv_a and diag.trace_a == pytest.approx(1.0)


def test_optimal_h_preconditions():
    vc = VarianceComponents(1.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        optimal_h(vc, _unit_fit(1), _unit_fit(1), 0.05, 2)
    with pytest.raises(ValueError):
        optimal_h(vc, _unit_fit(1), _unit_fit(1), 1.0, 10)
    with pytest.raises(DegenerateVarianceError):
        optimal_h(VarianceComponents(0.0, 0.0, 0.0), _unit_fit(1), _unit_fit(1), 0.05, 10)


# ---------------------------------------------------------------- statistic and decision


def test_statistic_identical_sequences_is_finite():
    p = np.array([-1.0, -2.0, -1.5, -0.5])
    vc = variance_components(p, p)
    t = sw_statistic(p, p, vc, 0.2)
    assert math.isfinite(t)


def test_statistic_constant_sequences_is_degenerate():
    with pytest.raises(DegenerateVarianceError):
        sw_statistic([1, 1], [0, 0], variance_components([1, 1], [0, 0]), 0.5)


def test_statistic_value():
    p, q = np.array([1.0, 2, 1, 2]), np.array([0.0, 1, 0, 1])
    vc = variance_components(p, q)
    h = 0.1
    want = 2 * 1.1 / math.sqrt(regularized_variance(vc, h))
    assert sw_statistic(p, q, vc, h) == pytest.approx(want)


@given(seqs)
def test_unweighted_statistic_is_antisymmetric(pq):
    p, q = map(np.array, pq)
    vc, vc2 = variance_components(p, q), variance_components(q, p)
    try:
        a = sw_statistic(p, q, vc, 0.0)
    except DegenerateVarianceError:
        return
    assert a == pytest.approx(-sw_statistic(q, p, vc2, 0.0), rel=1e-12, abs=1e-12)


@given(seqs, st.floats(0.01, 1))
def test_duplicated_data_keeps_direction(pq, h):
    p, q = map(np.array, pq)
    vc = variance_components(p, q)
    p2, q2 = np.repeat(p, 2), np.repeat(q, 2)
    vc2 = variance_components(p2, q2)
    try:
        t = sw_statistic(p2, q2, vc2, h)
    except DegenerateVarianceError:
        return
    lr = reweighted_lr(p2, q2, h)
    assert np.sign(t) == np.sign(lr)
    if abs(t) > Z975:
        assert decide(t, 0.05) is (Decision.FAVOR_A if lr > 0 else Decision.FAVOR_B)
    assert vc2.sigma2 == pytest.approx(vc.sigma2, rel=1e-9, abs=1e-9)


@pytest.mark.parametrize(
    "t, want",
    [(-0.359, Decision.RETAIN), (-4.433, Decision.FAVOR_B), (0.987, Decision.RETAIN),
     (5.802, Decision.FAVOR_A), (Z975, Decision.RETAIN), (-Z975, Decision.RETAIN)],
)
def test_decisions(t, want):
    assert decide(t, 0.05) is want


def test_decide_alpha_bounds():
    with pytest.raises(ValueError):
        decide(1.0, 0.0)
