import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from simplexq import analytic as an
from simplexq.core import BernoulliTwoPoint, Exp, Pareto
from simplexq.errors import (
    DegenerateRegimeError, InfiniteMomentError, InstabilityError, ParameterError,
)

FAMILIES = [Exp(1.0), Exp(2.5), Pareto(1, 3), Pareto(0.5, 2.2), BernoulliTwoPoint(1, 10, 0.2)]


# ---- type-j moments --------------------------------------------------------

def test_type_j_examples():
    m = an.type_j_moments(Exp(1), 1, 1)
    assert (m.m1, m.m2) == pytest.approx((0.5, 0.5))
    m = an.type_j_moments(Exp(1), 1, 0)
    assert (m.m1, m.m2) == pytest.approx((2 / 3, 7 / 9))
    assert an.type_j_moments(Pareto(1, 3), 1, 1).m1 == pytest.approx(1.2)
    assert an.type_j_moments(BernoulliTwoPoint(1, 10, 0.2), 2, 0).m1 == pytest.approx(1.23328)


@pytest.mark.parametrize("t", [1, 2, 3])
def test_bernoulli_matches_enumeration(t):
    d = BernoulliTwoPoint(1, 10, 0.2)
    for j in range(t + 1):
        m = an.type_j_moments(d, t, j)
        assert (m.m1, m.m2) == pytest.approx(oracles.bernoulli_type_j_exact(1, 10, 0.2, t, j))


def test_type_j_errors():
    with pytest.raises(ParameterError):
        an.type_j_moments(Exp(1), 1, 2)
    with pytest.raises(InfiniteMomentError):
        an.type_j_moments(Pareto(1, 1.2), 0, 0)


@pytest.mark.parametrize("d", FAMILIES)
@pytest.mark.parametrize("t", range(0, 6))
def test_type_j_monotone_in_j(d, t):
    ms = [an.type_j_moments(d, t, j) for j in range(t + 1)]
    for a, b in zip(ms, ms[1:]):
        assert b.m1 <= a.m1 * (1 + 1e-12) and b.m2 <= a.m2 * (1 + 1e-12)


def test_exp_t3_reference_values():
    vals = [an.type_j_moments(Exp(1), 3, j).m1 for j in range(4)]
    assert vals == pytest.approx([16 / 35, 11 / 30, 0.3, 0.25])


# ---- PK ----------------------------------------------------------------------

def test_pk():
    assert an.pk_sojourn(0, 0.7, 3.0).sojourn == 0.7
    assert an.pk_sojourn(0.5, 1, 2).sojourn == pytest.approx(2.0)
    with pytest.raises(InstabilityError) as exc:
        an.pk_sojourn(1, 1, 2)
    assert exc.value.utilization == 1
    with pytest.raises(ParameterError):
        an.pk_sojourn(-0.1, 1, 2)


# ---- availability one --------------------------------------------------------

def test_high_traffic_steady_state():
    c = an.high_traffic_t1_steady_state(1, 1, 1)
    assert (c.p00, c.ratio_right, c.ratio_left) == pytest.approx((1 / 3, 0.5, 0.5))
    assert an.high_traffic_t1_steady_state(2, 1, 1).p00 == pytest.approx(0.5)
    assert an.high_traffic_t1_steady_state(2, 1, 0).ratio_left == 0
    with pytest.raises(InstabilityError):
        an.high_traffic_t1_steady_state(1, 3, 1)


def test_high_traffic_against_chain_simulation():
    rng = np.random.default_rng(2)
    p00, f0 = oracles.high_traffic_chain(1, 1, 1, 400_000, rng)
    assert an.high_traffic_t1_steady_state(1, 1, 1).p00 == pytest.approx(p00, abs=0.01)
    assert an.fj_high_traffic_t1(1, 1).f[0] == pytest.approx(f0, abs=0.01)
    p00, f0 = oracles.high_traffic_chain(2, 1, 1, 400_000, rng)
    assert an.high_traffic_t1_steady_state(2, 1, 1).p00 == pytest.approx(p00, abs=0.01)
    assert an.fj_high_traffic_t1(2, 1).f[0] == pytest.approx(f0, abs=0.01)


def test_fj_high_traffic_limits():
    assert an.fj_high_traffic_t1(1, 1).f == pytest.approx((0.6, 0.4))
    assert an.fj_high_traffic_t1(1e6, 1).f[0] == pytest.approx(1, abs=1e-5)
    assert an.fj_high_traffic_t1(1e-9, 1).f[1] == pytest.approx(1, abs=1e-8)


def test_winning_fractions():
    w = an.winning_fraction_bounds(1, 1)
    assert (w.ws_lb, w.wr_ub) == pytest.approx((0.6, 0.4))
    assert an.winning_fraction_bounds(1, 1e-6).ws_lb == pytest.approx(1)
    assert an.winning_fraction_bounds(1e-9, 1).ws_lb == pytest.approx(0, abs=1e-8)


def test_heterogeneous_t1_matches_homogeneous():
    s0, s1 = an.t1_type_moments(1, 1)
    assert (s0.m1, s0.m2, s1.m1, s1.m2) == pytest.approx((2 / 3, 7 / 9, 0.5, 0.5))


# ---- f_j estimators -----------------------------------------------------------

def test_fj_examples():
    assert an.fj_estimate(3, 0.5, 1.0, "naive").f == (0.25,) * 4
    assert an.fj_estimate(1, 0, 7 / 12, "best").f == (1.0, 0.0)
    f = an.fj_estimate(1, 0.6, 7 / 12, "best").f
    assert f == pytest.approx((0.65, 0.35))


@pytest.mark.parametrize("t", [1, 2, 3, 5])
@pytest.mark.parametrize("x", [0.05, 0.3, 0.5, 0.7])
def test_best_matches_exact_recursion(t, x):
    if x > t / (t + 1):
        pytest.skip("outside the admissible range")
    exact, _ = oracles.best_recursion_exact(t, x)
    got = an.fj_estimate(t, x, 1.0, "best").f
    assert got == pytest.approx([float(v) for v in exact], abs=1e-12)


def test_best_degenerate():
    with pytest.raises(DegenerateRegimeError):
        an.fj_estimate(1, 0.6, 1.0, "best")
    with pytest.raises(InstabilityError):
        an.fj_estimate(2, 1.0, 1.0, "better")


def test_better_refine_root():
    x, t = 0.3, 3
    r = an._smallest_root(x, t)
    assert (1 - x) * r ** (t + 1) - r + x == pytest.approx(0, abs=1e-12)
    assert x <= r < 1
    f = an.fj_estimate(t, x, 1.0, "better", refine=True).f
    assert f[1] / f[0] == pytest.approx(r)


@given(t=st.integers(0, 7), x=st.floats(0, 0.99), method=st.sampled_from(["naive", "better", "best"]))
@settings(max_examples=200, deadline=None)
def test_fj_probability_vector(t, x, method):
    try:
        f = an.fj_estimate(t, x, 1.0, method).f
    except DegenerateRegimeError:
        assert method == "best" and x > t / (t + 1) - 1e-9
        return
    assert len(f) == t + 1
    assert abs(sum(f) - 1) < 1e-12
    assert all(v >= 0 for v in f)
    assert all(b <= a + 1e-15 for a, b in zip(f, f[1:]))


# ---- replicate-to-all ----------------------------------------------------------

def test_reptoall_examples():
    # 0.6 + 0.6 * (2/3) / (2 * (1 - 0.36))
    assert an.reptoall_sojourn(1, 0.6, Exp(1), "high_traffic_t1").sojourn == pytest.approx(0.9125)
    assert an.reptoall_sojourn(0, 0.5, Exp(1), "best").sojourn == pytest.approx(2.0)
    m = an.reptoall_sojourn(3, 0, Exp(1), "naive")
    assert m.sojourn == pytest.approx(m.m1)


def test_reptoall_bounds_examples():
    b = an.reptoall_bounds(1, 0.6, Exp(1))
    assert b.lb_sojourn == pytest.approx(0.5 + 0.3 / 1.4)
    assert b.ub_sojourn == pytest.approx(2 / 3 + 0.6 * (7 / 9) / (2 * 0.6))
    b = an.reptoall_bounds(2, 0, Exp(1))
    assert (b.lb_sojourn, b.ub_sojourn) == pytest.approx(
        (an.type_j_moments(Exp(1), 2, 2).m1, an.type_j_moments(Exp(1), 2, 0).m1))
    lam = 1 / an.type_j_moments(Exp(1), 3, 0).m1
    b = an.reptoall_bounds(3, lam, Exp(1))
    assert math.isinf(b.ub_sojourn) and math.isfinite(b.lb_sojourn)


@pytest.mark.parametrize("t", [1, 2, 3])
@pytest.mark.parametrize("d", [Exp(1), Pareto(1, 3), BernoulliTwoPoint(1, 10, 0.2)])
def test_bound_sandwich(t, d):
    cap = 1 / an.type_j_moments(d, t, 0).m1
    methods = ["naive", "better", "best"] + (["high_traffic_t1"] if t == 1 and isinstance(d, Exp) else [])
    for lam in np.linspace(0, 0.95 * cap, 12):
        b = an.reptoall_bounds(t, lam, d)
        for m in methods:
            try:
                s = an.reptoall_sojourn(t, lam, d, m).sojourn
            except DegenerateRegimeError:
                continue
            assert b.lb_sojourn - 1e-12 <= s <= b.ub_sojourn + 1e-12


# ---- select-one ----------------------------------------------------------------

def test_selectone_examples():
    assert an.selectone_sojourn(1, 0.5, 1, (1, 0)) == pytest.approx(2.0)
    assert an.selectone_sojourn(1, 1e-12, 1, (0.5, 0.5)) == pytest.approx(1.25)
    assert an.selectone_sojourn(1, 1, 1, (0.5, 0.5)) == pytest.approx(2.4375)
    with pytest.raises(InstabilityError) as exc:
        an.selectone_sojourn(1, 1.5, 1, (0.8, 0.2))
    assert exc.value.where == "systematic"


def test_selectone_optimal_weights():
    assert an.selectone_optimal_weights(1, 0, 1)[0] == 1.0
    assert an.selectone_optimal_weights(3, 1e-6, 1)[0] == pytest.approx(1.0)
    w = an.selectone_optimal_weights(1, 1.2, 1)
    assert w[0] < 1
    for t, lam in [(1, 1.2), (3, 2.0), (2, 0.5)]:
        w = an.selectone_optimal_weights(t, lam, 1)
        best = an.selectone_sojourn(t, lam, 1, w)
        for g in range(t + 1):
            for h in range(t + 1):
                if g == h:
                    continue
                p = list(w)
                p[g] += 0.01
                p[h] -= 0.01
                if min(p) < 0:
                    continue
                try:
                    assert an.selectone_sojourn(t, lam, 1, p) >= best - 1e-9
                except InstabilityError:
                    pass
    with pytest.raises(InstabilityError):
        an.selectone_optimal_weights(1, 2.5, 1)


# ---- fairness-first --------------------------------------------------------------

def test_fairnessfirst_bounds():
    b = an.fairnessfirst_bounds(3, 0, Exp(1))
    # lower-bound law: e^{-s}(1-(1-e^{-s})^2)^3 integrates to 16/35
    assert b.lb_sojourn == pytest.approx(16 / 35)
    assert b.ub_sojourn == pytest.approx(an.ff_type_moments(Exp(1), 1)[0])
    b1 = an.fairnessfirst_bounds(1, 0, Exp(1))
    assert b1.ub_sojourn == pytest.approx(1.0)
    with pytest.raises(ParameterError):
        an.fairnessfirst_bounds(2, 0.1, Exp(1))


@pytest.mark.parametrize("d", [Exp(1), Pareto(1, 3), BernoulliTwoPoint(1, 3, 0.2)])
def test_lowtraffic_collapses(d):
    grid = np.linspace(0, 6, 100)
    for s in grid:
        lb = an.ff_type_tail(d, 3, s)
        ub = an.ff_type_tail(d, 1, s)
        assert an.fairnessfirst_lowtraffic_tail(d, 3, 0.0, s) == pytest.approx(lb, abs=1e-10)
        assert an.fairnessfirst_lowtraffic_tail(d, 3, 0.3, s, rho=1.0) == pytest.approx(ub, abs=1e-10)


@pytest.mark.parametrize("d", [Exp(1), BernoulliTwoPoint(1, 3, 0.2)])
def test_lowtraffic_between_bounds(d):
    lam = 0.1
    b = an.fairnessfirst_bounds(3, lam, d)
    for lam_c in np.linspace(0, 0.95 / d.mean, 6):
        s = an.fairnessfirst_lowtraffic_sojourn(3, lam, lam_c, d).sojourn
        assert b.lb_sojourn - 1e-9 <= s <= b.ub_sojourn + 1e-9


# ---- appendices ----------------------------------------------------------------

def test_conj_pathway():
    assert an.conj_pathway_prob(1, 0) == pytest.approx(7 / 9)
    assert an.conj_pathway_prob(2, 1) == pytest.approx(0.64)
    t = 2
    assert an.conj_pathway_prob(t, t - 1) == pytest.approx(1 - t / (1 + 2 * t) + 1 / (1 + 2 * t) ** 2)
    for t in range(1, 11):
        for j in range(t):
            assert an.conj_pathway_prob(t, j) > 0.5
    with pytest.raises(ParameterError):
        an.conj_pathway_prob(2, 2)


def test_rate_allocation():
    rows = an.rate_allocation_curve(3, [0.5, 1, 2], 0.3)
    s = [r.sojourn for r in rows]
    assert s[0] > s[1] > s[2]
    assert len(an.rate_allocation_curve(3, [1.0], 0.3)) == 1
    a, b = an.rate_allocation_curve(3, [1.0, 1.0], 0.3)
    assert a.sojourn == b.sojourn
    rows = an.rate_allocation_curve(1, [0.1, 1.0], 0.9)
    assert [r.stable for r in rows] == [False, False] or not all(r.stable for r in rows)
    assert all(math.isinf(r.sojourn) for r in rows if not r.stable)
