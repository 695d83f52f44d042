import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from tscert import certmath as cm

# frozen from tests/oracles.py (dense 1e5-point alpha grid)
ORACLE_RADII = [
    ((0.6, 0.2, 1.0), 0.47742947032346067),
    ((0.9, 0.05, 0.5), 0.6246869363297363),
    ((0.99242791, 0.00757209, 0.4), 0.7985345938266896),
    ((0.7, 0.3, 0.25), 0.10476753649814578),
    ((0.5, 0.1, 2.0), 1.152951863630251),
]


def test_power_mean_examples():
    assert cm.power_mean(1, 0.6, 0.2) == pytest.approx(0.4, abs=1e-15)
    assert cm.power_mean(-1, 0.6, 0.2) == pytest.approx(0.3, abs=1e-15)
    assert cm.power_mean(2, 0.3, 0.4) == pytest.approx(math.sqrt(0.125), abs=1e-15)


def test_power_mean_extremes():
    assert cm.power_mean(-1e6, 0.6, 0.2) == pytest.approx(0.2, rel=1e-5)
    assert cm.power_mean(-1e-12, 0.6, 0.2) == pytest.approx(math.sqrt(0.12), rel=1e-9)
    assert cm.power_mean(-3, 0.0, 0.5) == 0.0
    with pytest.raises(ValueError):
        cm.power_mean(0, 0.5, 0.5)


@settings(max_examples=200, deadline=None)
@given(st.floats(-50, 50), st.floats(1e-6, 1), st.floats(1e-6, 1))
def test_power_mean_between_min_and_max(q, a, b):
    assume(abs(q) > 1e-9)
    v = cm.power_mean(q, a, b)
    assert min(a, b) * (1 - 1e-9) <= v <= max(a, b) * (1 + 1e-9)


def test_spot_value_alpha_two():
    assert cm.radius_at_alpha(0.6, 0.2, 1.0, 2.0) == pytest.approx(math.sqrt(-math.log(0.8)), abs=1e-12)


@pytest.mark.parametrize("args,expected", ORACLE_RADII)
def test_certified_radius_matches_oracle(args, expected):
    assert cm.certified_radius(*args).radius == pytest.approx(expected, abs=1e-6)


def test_supremum_dominates_every_alpha():
    r = cm.certified_radius(0.6, 0.2, 1.0)
    for alpha in [1.0001, 1.1, 1.5, 2.0, 5.0, 50.0]:
        assert cm.radius_at_alpha(0.6, 0.2, 1.0, alpha) <= r.radius + 1e-12
    assert cm.radius_at_alpha(0.6, 0.2, 1.0, r.alpha_star) == pytest.approx(r.radius, rel=1e-9)


def test_equal_probabilities_give_zero():
    assert cm.radius_at_alpha(0.4, 0.4, 1.0, 3.0) == 0.0
    r = cm.certified_radius(0.4, 0.4, 1.0)
    assert r.radius == 0.0 and r.abstained


def test_order_violation_rejected():
    with pytest.raises(ValueError):
        cm.radius_at_alpha(0.2, 0.6, 1.0, 2.0)
    with pytest.raises(ValueError):
        cm.radius_at_alpha(0.6, 0.2, 1.0, 1.0)


def test_degenerate_extremes_fail_conservative():
    r = cm.certified_radius(1.0, 0.0, 0.5)
    assert r.radius == 0.0 and r.clamped
    assert cm.certified_radius(0.8, 0.1, 0.0).radius == 0.0


@settings(max_examples=60, deadline=None)
@given(st.floats(0.01, 0.99), st.floats(0.0, 1.0), st.floats(0.05, 3.0))
def test_sigma_linearity(pA, frac, sigma):
    pB = min(pA * frac, 1.0 - pA)
    r1 = cm.certified_radius(pA, pB, sigma).radius
    r2 = cm.certified_radius(pA, pB, 2 * sigma).radius
    assert r2 == pytest.approx(2 * r1, rel=1e-9, abs=1e-300)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.3, 0.95), st.floats(0.001, 0.04), st.floats(0.0, 0.5))
def test_monotone_in_pA_and_pB(pA, dp, frac):
    pB = frac * (1.0 - pA - dp)
    pB = min(pB, pA)
    base = cm.certified_radius(pA, pB, 1.0).radius
    assert cm.certified_radius(pA + dp, pB, 1.0).radius >= base - 1e-9
    if pB + dp <= pA and pA + pB + dp <= 1:
        assert cm.certified_radius(pA, pB + dp, 1.0).radius <= base + 1e-9


def test_clopper_pearson_closed_forms():
    for n in [1, 10, 1000]:
        for beta in [0.001, 0.05]:
            half = beta / 2
            assert cm.clopper_pearson_lower(n, n, half) == pytest.approx(half ** (1 / n), abs=1e-12)
            assert cm.clopper_pearson_upper(0, n, half) == pytest.approx(1 - half ** (1 / n), abs=1e-12)


@pytest.mark.parametrize(
    "k,lower,upper",
    # frozen from oracles.cp_bounds_by_bisection at level 0.0005, n = 1000
    [(700, 0.6504201479969676, 0.7465256847608297), (37, 0.02034976327986482, 0.06084602225506358)],
)
def test_clopper_pearson_against_bisection(k, lower, upper):
    assert cm.clopper_pearson_lower(k, 1000, 0.0005) == pytest.approx(lower, abs=1e-9)
    assert cm.clopper_pearson_upper(k, 1000, 0.0005) == pytest.approx(upper, abs=1e-9)


def test_multinomial_ci_uses_top_two():
    b = cm.multinomial_ci([30, 700, 270], 0.001)
    assert b.pA_lower == cm.clopper_pearson_lower(700, 1000, 0.0005)
    assert b.pB_upper == cm.clopper_pearson_upper(270, 1000, 0.0005)
    assert b.pA_lower < 0.7 and b.pB_upper > 0.27


def test_top_two_tie_breaks_low_index():
    assert cm.top_two([5, 9, 9, 1]) == (1, 2)
    assert cm.top_two([4, 4]) == (0, 1)


def test_certify_counts_all_votes_one_label():
    c = cm.certify_counts([1000, 0, 0], 0.4, 0.001)
    assert c.prediction == 0 and not c.abstained
    assert c.bounds.pA_lower == pytest.approx(0.0005 ** (1 / 1000), abs=1e-12)
    assert c.radius.radius == pytest.approx(0.7985345938266896, abs=1e-6)


def test_certify_counts_abstains_on_split_vote():
    c = cm.certify_counts([500, 500], 0.4, 0.001)
    assert c.abstained and c.radius.radius == 0.0


def test_radius_surface_properties():
    alphas = [1.5, 2.0, 4.0, 16.0]
    grid = np.linspace(0.5, 0.99, 50)
    rows = cm.emit_radius_surface(1.0, alphas, grid)
    assert len(rows) == len(alphas) * len(grid)
    for a in alphas:
        col = [l2 for al, _, l2 in rows if al == a]
        assert col[0] == 0.0
        assert all(y >= x for x, y in zip(col, col[1:]))


def test_radius_surface_file(tmp_path):
    rows = cm.emit_radius_surface(0.5, [2.0], [0.5, 0.75])
    cm.write_radius_surface(tmp_path / "s.tsv", rows)
    lines = (tmp_path / "s.tsv").read_text().splitlines()
    assert lines[0] == "alpha\tp_a\tl_squared"
    assert len(lines) == 3
