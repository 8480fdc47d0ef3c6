import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, special, stats

from semimarkov_ldp.kernel import Dirac, Exponential, Gamma, Rayleigh, alternator, builtin_examples, explicit
from semimarkov_ldp.rate import (LegendreError, MeasureFlowPair, dv_functional, flow_marginal_rate, fq, gq, gq_star,
                                 joint_rate, legendre_point, measure_marginal_rate, optimal_measure, zeta_q)
from semimarkov_ldp.simulate import Flow

P3 = [[0.0, 0.6, 0.4], [0.3, 0.2, 0.5], [0.5, 0.5, 0.0]]


def exp_grid_sup(a, weights, step=1e-5):
    """sup_lam {a lam + sum w log(1 - lam/q)} for exponential laws, by brute force."""
    zeta = min(q for q, _ in weights)
    # the maximizer lies above -sum(w) / a
    lo = -max(60.0, 2.0 * sum(w for _, w in weights) / a)
    lam = np.arange(lo, zeta, step)
    vals = a * lam + sum(w * np.log1p(-lam / q) for q, w in weights)
    return float(vals.max())


# ---------------------------------------------------------------------------
# joint rate

def test_joint_rate_zero_at_stationary_pair():
    for name, model in builtin_examples().items():
        if not model.is_closed:
            continue
        br = joint_rate(MeasureFlowPair.stationary(model))
        assert br.total <= 1e-10, name


def test_joint_rate_infinite_off_divergence_free():
    m = alternator()
    pair = MeasureFlowPair(m, Flow({(1, 2): 0.5, (2, 1): 0.3}))
    assert joint_rate(pair).total == math.inf


def test_joint_rate_matches_hand_sum():
    m = explicit([[0.5, 0.5], [0.5, 0.5]], [Exponential(1.0), Exponential(1.0)], labels=[1, 2])
    laws = {1: Exponential(1.5), 2: Exponential(0.8)}
    a = 1.0 / (1 / 1.5 + 1 / 0.8)
    flow = Flow({(1, 1): 0.3 * a, (1, 2): 0.7 * a, (2, 1): 0.7 * a, (2, 2): 0.3 * a})
    br = joint_rate(MeasureFlowPair(m, flow, laws))
    jump = a * 2 * float(np.sum(special.rel_entr([0.3, 0.7], [0.5, 0.5])))

    def kl(q):
        p, r = stats.expon(scale=1 / q), stats.expon(scale=1.0)
        return integrate.quad(lambda s: p.pdf(s) * (p.logpdf(s) - r.logpdf(s)), 0, np.inf)[0]

    hand = jump + a * (kl(1.5) + kl(0.8))
    assert br.total == pytest.approx(hand, abs=1e-9)
    assert br.total == pytest.approx(sum(br.jump.values()) + sum(br.waiting.values()) + sum(br.atom.values()))


def test_atom_term_and_zero_atom_convention():
    m = alternator()
    half = Flow({(1, 2): 0.25, (2, 1): 0.25})
    pair = MeasureFlowPair.build(m, half, atoms={1: 0.5}, normalize=False)
    br = joint_rate(pair)
    assert br.atom[1] == pytest.approx(0.5)  # zeta = 1 for Exp(1)
    d = explicit([[0, 1], [1, 0]], [Dirac(1.0), Dirac(1.0)], labels=[1, 2])
    zero = joint_rate(MeasureFlowPair(d, Flow({(1, 2): 0.5, (2, 1): 0.5}), atoms={1: 0.0}))
    assert zero.total == 0.0


def _random_pair(model, rng):
    # random divergence-free flow: mix of cycle flows on the 3-state graph
    cycles = [[(0, 1), (1, 0)], [(0, 2), (2, 0)], [(1, 2), (2, 1)], [(0, 1), (1, 2), (2, 0)], [(1, 1)]]
    w = rng.random(len(cycles)) + 0.05
    entries = {}
    for c, wc in zip(cycles, w):
        for e in c:
            entries[e] = entries.get(e, 0.0) + wc
    laws = {x: Exponential(float(rng.uniform(0.5, 3.0))) for x in range(3)}
    return MeasureFlowPair.build(model, Flow(entries), laws)


@given(st.integers(0, 10_000), st.sampled_from([0.25, 0.5, 0.75]))
@settings(max_examples=40, deadline=None)
def test_joint_rate_is_convex(seed, alpha):
    model = explicit(P3, [Exponential(1.0), Exponential(2.0), Exponential(0.5)])
    rng = np.random.default_rng(seed)
    a, b = _random_pair(model, rng), _random_pair(model, rng)
    mix = a.mix(b, alpha)
    ia, ib, im = joint_rate(a).total, joint_rate(b).total, joint_rate(mix).total
    assert im >= 0.0
    assert im <= alpha * ia + (1 - alpha) * ib + 1e-8


# ---------------------------------------------------------------------------
# G_Q, F_Q, zeta_Q

def test_gq_examples():
    laws = [(Exponential(1.0), 0.5), (Exponential(1.0), 0.5)]
    assert gq(laws, 0.0) == 0.0
    assert gq(laws, 0.5) == pytest.approx(math.log(2.0), abs=1e-14)
    h = 1e-6
    fd = (gq(laws, 0.5 + h) - gq(laws, 0.5 - h)) / (2 * h)
    assert fq(laws, 0.5) == pytest.approx(2.0, abs=1e-12)
    assert fd == pytest.approx(2.0, abs=1e-6)
    assert gq(laws, 1.0) == math.inf
    with pytest.raises(LegendreError):
        fq(laws, 1.0)


def test_zeta_q_examples():
    assert zeta_q([(Exponential(2.0), 0.3), (Exponential(2.0), 0.7)]) == 2.0
    assert zeta_q([(Exponential(1.0), 0.3), (Exponential(3.0), 0.7)]) == 1.0
    assert zeta_q([(Dirac(1.0), 0.3), (Dirac(2.0), 0.7)]) == math.inf


# ---------------------------------------------------------------------------
# Legendre transform

def test_gq_star_dirac_lower_boundary():
    pt = legendre_point([(Dirac(1.0), 0.5), (Dirac(1.0), 0.5)], 1.0)
    assert pt.value == 0.0 and pt.branch == "lower boundary"


def test_gq_star_exponential_interior():
    c = 0.25
    laws = [(Exponential(1.0), c), (Exponential(1.0), c)]
    pt = legendre_point(laws, 1.0)
    assert pt.lam_star == pytest.approx(1 - 2 * c, abs=1e-12)
    closed = 1 - 2 * c + 2 * c * math.log(2 * c)
    assert pt.value == pytest.approx(closed, abs=1e-12)
    assert exp_grid_sup(1.0, [(1.0, 2 * c)]) == pytest.approx(0.153426, abs=1e-5)


def test_gq_star_outside_is_infinite():
    assert gq_star([(Dirac(2.0), 0.5), (Dirac(2.0), 0.5)], 1.0) == math.inf


def test_gq_star_upper_boundary():
    laws = [(Dirac(1.0), 0.5), (Dirac(3.0), 0.5)]
    pt = legendre_point(laws, 2.0)
    assert pt.branch in ("lower boundary", "upper boundary")
    assert pt.value == 0.0


def test_gq_star_refuses_finite_mgf_at_zeta():
    from semimarkov_ldp.kernel import NumericDensity
    c = integrate.quad(lambda s: math.exp(-s) / (1 + s) ** 3, 0, np.inf)[0]
    law = NumericDensity(lambda s: np.exp(-s) / (1 + s) ** 3 / c, zeta_hint=1.0, diverges_at_zeta=False)
    with pytest.raises(LegendreError, match="unsupported"):
        gq_star([(law, 1.0)], 2.0)


@given(st.floats(0.3, 3.0), st.floats(0.2, 2.0), st.floats(0.3, 3.0), st.floats(0.2, 2.0), st.floats(0.05, 4.0))
@settings(max_examples=40, deadline=None)
def test_gq_star_matches_exponential_brute_force(q1, w1, q2, w2, a):
    laws = [(Exponential(q1), w1), (Exponential(q2), w2)]
    ref = exp_grid_sup(a, [(q1, w1), (q2, w2)], step=2e-4)
    val = gq_star(laws, a)
    # the grid misses the maximizer by at most step / 2; the concave gap is second order
    assert val == pytest.approx(ref, abs=1e-5 * max(1.0, abs(ref)))
    assert val >= ref - 1e-12


def test_derivative_of_legendre_transform_is_lam_star():
    laws = [(Gamma(2.0, 3.0), 0.4), (Rayleigh(0.7), 0.3), (Exponential(1.5), 0.5)]
    for a in (0.3, 0.8, 1.5, 3.0):
        h = 1e-5
        fd = (gq_star(laws, a + h) - gq_star(laws, a - h)) / (2 * h)
        assert fd == pytest.approx(legendre_point(laws, a).lam_star, abs=1e-4)


def test_lam_star_increases_toward_zeta():
    laws = [(Exponential(2.0), 0.5), (Gamma(2.0, 4.0), 0.5)]
    lams = [legendre_point(laws, a).lam_star for a in (0.5, 1.0, 5.0, 50.0, 500.0, 5000.0)]
    assert all(x < y for x, y in zip(lams, lams[1:]))
    assert 2.0 - lams[-1] < 1e-3


# ---------------------------------------------------------------------------
# flow marginal

def test_flow_marginal_examples():
    m = alternator()
    assert flow_marginal_rate(Flow({(1, 2): 0.5, (2, 1): 0.2}), m) == math.inf
    assert flow_marginal_rate(Flow({(1, 2): 0.5, (2, 1): 0.5}), m) == pytest.approx(0.0, abs=1e-12)
    assert flow_marginal_rate(Flow({(1, 2): 0.25, (2, 1): 0.25}), m) == pytest.approx(0.153426, abs=1e-5)
    ref = exp_grid_sup(1.0, [(1.0, 0.5)], step=1e-4)
    assert flow_marginal_rate(Flow({(1, 2): 0.25, (2, 1): 0.25}), m) == pytest.approx(ref, abs=1e-7)


def test_flow_marginal_below_joint_and_equal_at_optimal_measure():
    m = explicit(P3, [Gamma(2.0, 3.0), Gamma(2.0, 1.0), Gamma(2.0, 5.0)])
    rng = np.random.default_rng(4)
    for _ in range(5):
        pair = _random_pair(m, rng)
        flow = pair.flow
        i2 = flow_marginal_rate(flow, m)
        assert i2 <= joint_rate(pair).total + 1e-9
        best = optimal_measure(flow, m)
        assert joint_rate(best).total == pytest.approx(i2, abs=1e-6)


def test_flow_marginal_empty_support_corner():
    m = alternator(1.0, 2.0)
    assert flow_marginal_rate(Flow({}), m) == pytest.approx(1.0)


# ---------------------------------------------------------------------------
# occupation marginal

def test_dv_zero_at_invariant_measure():
    m = builtin_examples()["ctmc3"]
    nu = m.stationary_jump_distribution()
    assert dv_functional(nu, m) == pytest.approx(0.0, abs=1e-9)


def test_dv_infinite_for_alternator_point_mass():
    assert dv_functional([1.0, 0.0], alternator()) == math.inf


def test_dv_against_one_dimensional_grid():
    m = explicit([[0.5, 0.5], [0.5, 0.5]], [Exponential(1.0)] * 2)
    r = np.geomspace(1e-3, 1e3, 400_001)
    grid = np.max(0.7 * np.log(2 / (1 + r)) + 0.3 * np.log(2 * r / (1 + r)))
    assert dv_functional([0.7, 0.3], m) == pytest.approx(grid, abs=1e-8)


def test_measure_marginal_examples():
    m = alternator()
    assert measure_marginal_rate(m.stationary_occupation(), m).value == pytest.approx(0.0, abs=1e-6)
    assert measure_marginal_rate([1.0, 0.0], alternator(1.0, 2.0)).value == pytest.approx(1.0, abs=1e-6)
    with pytest.raises(ValueError):
        measure_marginal_rate([1.2, -0.2], m)


def test_measure_marginal_ctmc_two_state_closed_form():
    # for a two-state chain with rates a, b the occupation rate is (sqrt(a pi_1) - sqrt(b pi_2))^2
    a, b = 1.0, 2.0
    m = alternator(a, b)
    for p in (0.2, 0.5, 0.9):
        ref = (math.sqrt(a * p) - math.sqrt(b * (1 - p))) ** 2
        assert measure_marginal_rate([p, 1 - p], m).value == pytest.approx(ref, abs=1e-6)
