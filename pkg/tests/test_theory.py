import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from attreval import theory
from attreval.theory import (
    JointTable,
    LogitAttribution,
    ParameterRangeError,
    SharedFeatureDistribution,
    joint_table,
    mutual_info,
    mutual_info_kl,
)


def _mi_nats(matrix):
    # independent oracle: plug-in mutual information of a 2x2 table in nats
    P = np.asarray(matrix, dtype=float)
    outer = P.sum(1, keepdims=True) @ P.sum(0, keepdims=True)
    nz = P > 0
    return float((P[nz] * np.log(P[nz] / outer[nz])).sum())


def test_perfect_correlation_table():
    t = joint_table(SharedFeatureDistribution(0.5, 0.5, 1.0))
    np.testing.assert_allclose(t.as_array(), [0.5, 0, 0, 0.5])


def test_reference_tables():
    d = SharedFeatureDistribution(0.2, 0.3, 0.5)
    np.testing.assert_allclose(joint_table(d).as_array(), [0.15, 0.05, 0.15, 0.65], atol=1e-15)
    np.testing.assert_allclose(joint_table(d, True).as_array(), [0.15, 0.05, 0.0, 0.80], atol=1e-15)


@pytest.mark.parametrize(
    "g,p,a",
    [(0.0, 0.3, 0.5), (0.2, 1.0, 0.5), (0.2, 0.3, 1.2), (0.1, 0.5, 0.9), (0.9, 0.5, 0.0)],
)
def test_invalid_distributions_rejected(g, p, a):
    with pytest.raises(ParameterRangeError):
        SharedFeatureDistribution(g, p, a)


def test_joint_table_must_sum_to_one():
    with pytest.raises(ParameterRangeError):
        JointTable(0.5, 0.5, 0.1, 0.0)


def test_independent_table_has_zero_information():
    py, ps = np.array([0.3, 0.7]), np.array([0.6, 0.4])
    m = np.outer(py, ps)  # [y, s]
    t = JointTable(m[1, 1], m[1, 0], m[0, 1], m[0, 0])
    assert abs(mutual_info(t, 2)) <= 1e-12


def test_one_bit():
    assert mutual_info(joint_table(SharedFeatureDistribution(0.5, 0.5, 1.0)), 2) == pytest.approx(1.0, abs=1e-12)


def test_two_routes_agree_reference():
    t = joint_table(SharedFeatureDistribution(0.2, 0.3, 0.5, C=5))
    assert abs(mutual_info(t, 5) - mutual_info_kl(t, 5)) <= 1e-12


@st.composite
def distributions(draw):
    g = draw(st.floats(0.02, 0.98))
    p = draw(st.floats(0.02, 0.98))
    lo = max(0.0, (g + p - 1) / p)
    hi = min(1.0, g / p)
    a = draw(st.floats(lo, hi))
    C = draw(st.integers(2, 10))
    try:
        return SharedFeatureDistribution(g, p, a, C)
    except ParameterRangeError:
        return SharedFeatureDistribution(0.2, 0.3, 0.5, C)


@settings(max_examples=300, deadline=None)
@given(distributions(), st.booleans())
def test_information_matches_oracle(d, manipulated):
    t = joint_table(d, manipulated)
    assert t.as_array().sum() == pytest.approx(1.0, abs=1e-12)
    expected = _mi_nats(t.as_matrix()) / math.log(d.C)
    assert mutual_info(t, d.C) == pytest.approx(max(expected, 0.0), abs=1e-12)
    assert mutual_info_kl(t, d.C) == pytest.approx(expected, abs=1e-12)
    assert mutual_info(t, d.C) >= 0


@settings(max_examples=200, deadline=None)
@given(distributions())
def test_label_entropy_unchanged_by_manipulation(d):
    assert theory.label_entropy(joint_table(d), d.C) == pytest.approx(
        theory.label_entropy(joint_table(d, True), d.C), abs=1e-12
    )
    assert joint_table(d, True).y0_s1 == 0.0


def test_check_requires_p_above_gamma():
    with pytest.raises(ParameterRangeError, match="p > gamma"):
        theory.theorem1_check(SharedFeatureDistribution(0.3, 0.3, 0.5))


def test_independent_start_gains_information():
    res = theory.theorem1_check(SharedFeatureDistribution(0.2, 0.4, 0.2, C=2))
    assert res["I"] == pytest.approx(0.0, abs=1e-12)
    assert res["I_tilde"] > 0 and res["holds"]


def test_reference_gap_signs():
    # the exact gap is positive while the first-order term on its own is negative;
    # it enters the gap with a minus sign next to the two entropy-like terms
    res = theory.theorem1_check(SharedFeatureDistribution(0.2, 0.3, 0.5))
    assert res["gap_exact"] > 0
    assert res["gap_taylor"] < 0
    assert res["holds"]


def test_gap_is_information_difference():
    d = SharedFeatureDistribution(0.25, 0.5, 0.4, C=3)
    res = theory.theorem1_check(d)
    assert res["gap_exact"] == pytest.approx(res["I_tilde"] - res["I"], abs=1e-12)


def test_taylor_remainder_small_delta():
    worst = 0.0
    for g, p, a in itertools.product(np.arange(0.05, 0.5, 0.05), np.arange(0.06, 0.95, 0.02), np.arange(0.5, 1.0, 0.01)):
        if p <= g:
            continue
        try:
            d = SharedFeatureDistribution(float(g), float(p), float(a), 2)
        except ParameterRangeError:
            continue
        if d.delta > 0.05 or d.delta == 0:
            continue
        res = theory.theorem1_check(d)
        r = abs(res["gap_exact"] - (res["gap_taylor"] + theory.ideal_terms(d)))
        worst = max(worst, r / d.delta ** 2)
    assert worst <= 10


def test_grid_holds_where_first_order_term_is_accurate():
    rows = theory.theorem1_grid(
        np.arange(0.05, 0.46, 0.05), True, np.round(np.arange(0.3, 0.91, 0.1), 10), classes=(2, 5, 10)
    )
    assert rows and all(r["holds"] for r in rows)


def test_grid_counterexamples_have_large_delta():
    rows = theory.theorem1_grid(np.round(np.arange(0.05, 0.46, 0.05), 10), True,
                                np.round(np.arange(0.1, 0.91, 0.1), 10), classes=(2,))
    bad = [r for r in rows if not r["holds"]]
    for r in bad:
        assert r["p"] * (1 - r["alpha"]) > 0.3
        matrix = joint_table(SharedFeatureDistribution(r["gamma"], r["p"], r["alpha"])).as_matrix()
        tilde = joint_table(SharedFeatureDistribution(r["gamma"], r["p"], r["alpha"]), True).as_matrix()
        assert _mi_nats(tilde) <= _mi_nats(matrix)


def test_grid_skips_invalid_points():
    rows = theory.theorem1_grid([0.05], True, [0.9], classes=(2,))
    # alpha * p must not exceed gamma
    assert all(r["alpha"] * r["p"] <= r["gamma"] + 1e-12 for r in rows)


# -- weak positive contributors ---------------------------------------------


def test_wpc_reference_instance():
    a = LogitAttribution((0.0, 0.0, 0.0), (0.1, 1.0, 1.0), 0)
    c = theory.wpc_condition(a)
    assert c["is_positive"] and c["is_weak"]
    assert c["expectation"] == pytest.approx(math.e)
    res = theory.theorem2_check(a)
    assert res["f_without"] == pytest.approx(1 / 3)
    expected = math.exp(0.1) / (math.exp(0.1) + 2 * math.e)
    assert res["f_with"] == pytest.approx(expected)
    assert res["f_with"] == pytest.approx(0.169, abs=1e-3)
    assert res["attribution_sign"] == -1 and res["consistent"]


def test_wpc_condition_target_index_matters():
    # same vectors with the target on a strong class: not weak
    c = theory.wpc_condition(LogitAttribution((0.0, 0.0, 0.0), (0.1, 1.0, 1.0), 1))
    assert c["is_positive"] and not c["is_weak"]


def test_equal_xi_is_not_weak():
    c = theory.wpc_condition(LogitAttribution((0.3, -1.0, 2.0), (0.7, 0.7, 0.7), 0))
    assert c["is_positive"] and not c["is_weak"]


def test_strong_contributor():
    assert not theory.wpc_condition(LogitAttribution((0.0, 0.0, 0.0), (2.0, 0.0, 0.0), 0))["is_weak"]


def test_zero_attribution():
    res = theory.theorem2_check(LogitAttribution((1.0, 2.0), (0.0, 0.0), 0))
    assert res["f_with"] == res["f_without"]
    assert res["attribution_sign"] == 0 and res["consistent"] and not res["is_wpc"]


@pytest.mark.parametrize(
    "ctx,xi,target",
    [((0.0,), (0.0,), 0), ((0.0, 1.0), (0.0,), 0), ((0.0, 1.0), (0.0, 1.0), 2), ((0.0, np.inf), (0.0, 0.0), 0)],
)
def test_logit_attribution_validation(ctx, xi, target):
    with pytest.raises(ValueError):
        LogitAttribution(ctx, xi, target)


@settings(max_examples=300, deadline=None)
@given(
    st.integers(2, 10).flatmap(
        lambda C: st.tuples(
            st.lists(st.floats(-5, 5), min_size=C, max_size=C),
            st.lists(st.floats(-3, 3), min_size=C, max_size=C),
            st.integers(0, C - 1),
        )
    )
)
def test_wpc_always_lowers_probability(case):
    ctx, xi, y = case
    res = theory.theorem2_check(LogitAttribution(tuple(ctx), tuple(xi), y))
    assert res["consistent"]


def test_expectation_uses_context_weights():
    ctx = np.array([0.5, -1.0, 2.0, 0.0])
    xi = np.array([0.2, 1.5, -0.5, 0.3])
    c = theory.wpc_condition(LogitAttribution(tuple(ctx), tuple(xi), 0))
    f = np.exp(ctx) / np.exp(ctx).sum()
    w = f[1:] / (1 - f[0])
    assert c["expectation"] == pytest.approx(float(np.sum(w * np.exp(xi[1:]))), rel=1e-12)


def test_fuzz_is_seeded():
    a, b = theory.wpc_fuzz(2000, seed=3), theory.wpc_fuzz(2000, seed=3)
    assert a == b
    assert a["instances"] == 2000 and a["violations"] == 0
