import math

import numpy as np
import pytest

from semimarkov_ldp.kernel import Exponential, Gamma, Rayleigh, alternator, birth_death, explicit
from semimarkov_ldp.rate import MeasureFlowPair
from semimarkov_ldp.simulate import (Flow, OccupationAtLeast, Trajectory, empirical_flow, empirical_measure,
                                     sample_trajectory, simulate_batch)
from semimarkov_ldp.tilt import (TiltError, TiltSpec, WaitTilt, batch_log_likelihood, importance_estimate,
                                 loglik_ratio, martingale_sample, martingale_value, martingale_value_uA,
                                 occupation_tilt, spec_from_u_A, tilt_from_target, tilted_kernel, wait_accumulator)

P3 = [[0.0, 0.6, 0.4], [0.3, 0.2, 0.5], [0.5, 0.5, 0.0]]
MIXED = explicit(P3, [Exponential(1.5), Gamma(0.5, 1.0), Rayleigh(0.8)])
EXP3 = explicit(P3, [Exponential(1.0), Exponential(2.0), Exponential(0.5)])


# ---------------------------------------------------------------------------
# tilted kernels

def test_identity_tilt_leaves_model_unchanged():
    assert tilted_kernel(MIXED, TiltSpec()) is MIXED


def test_exponential_wait_tilt_stays_exponential():
    m = explicit([[1.0]], [Exponential(2.0)])
    law = tilted_kernel(m, TiltSpec(wait={0: WaitTilt(beta=0.5)})).law(0)
    assert isinstance(law, Exponential)
    assert law.rate == pytest.approx(1.5, abs=1e-14)


def test_edge_tilt_reweights_row():
    m = explicit([[0.5, 0.5], [0.5, 0.5]], [Exponential(1.0)] * 2, labels=[1, 2])
    t = tilted_kernel(m, TiltSpec(edge={(1, 2): math.log(3.0)}))
    assert t.p(1, 2) == pytest.approx(0.75, abs=1e-14)
    assert t.p(1, 1) == pytest.approx(0.25, abs=1e-14)
    assert t.p(2, 1) == pytest.approx(0.5, abs=1e-14)


def test_divergent_wait_tilt_is_rejected():
    with pytest.raises(TiltError, match="0"):
        tilted_kernel(explicit([[1.0]], [Exponential(1.0)]), TiltSpec(wait={0: WaitTilt(beta=1.0)}))


def test_g_against_direct_formula():
    spec = TiltSpec(edge={(0, 1): 0.4, (1, 2): -0.3}, wait={0: WaitTilt(beta=0.5, gamma=0.1)})
    g = spec.g(EXP3)
    # Exp(1) tilted by 0.5 has normalizer 1 / (1 - 0.5)
    assert g[0] == pytest.approx(math.log(0.6 * math.exp(0.4) + 0.4) + math.log(2.0) + 0.1, abs=1e-10)
    assert g[1] == pytest.approx(math.log(0.3 + 0.2 + 0.5 * math.exp(-0.3)), abs=1e-10)
    assert g[2] == pytest.approx(0.0, abs=1e-12)


# ---------------------------------------------------------------------------
# tilts from targets

def test_stationary_target_gives_identity_tilt():
    spec, tilted = tilt_from_target(EXP3, MeasureFlowPair.stationary(EXP3))
    assert all(v == 0.0 for v in spec.edge.values() if math.isfinite(v))
    assert not spec.wait
    traj = sample_trajectory(EXP3, 0, 200.0, seed=4)
    assert abs(loglik_ratio(traj, spec, EXP3)) <= 1e-12 * (traj.n_jumps + 1)


def test_alternator_target_with_equal_flows():
    c = 0.8
    m = alternator(1.0, 3.0)
    pair = MeasureFlowPair.build(m, Flow({(1, 2): c, (2, 1): c}), {1: Exponential(2 * c), 2: Exponential(2 * c)},
                                 normalize=False)
    assert pair.total_mass() == pytest.approx(1.0, abs=1e-12)
    spec, tilted = tilt_from_target(m, pair)
    assert tilted.law(1).rate == pytest.approx(2 * c) and tilted.law(2).rate == pytest.approx(2 * c)
    assert tilted.stationary_occupation() == pytest.approx([0.5, 0.5], abs=1e-12)
    traj = sample_trajectory(tilted, 1, 2e4, seed=6)
    # N_t / t tends to 1 / E[tau] = 2c
    assert traj.n_jumps / 2e4 == pytest.approx(2 * c, rel=0.02)


def test_reducible_target_is_rejected():
    m = explicit(np.full((4, 4), 0.25), [Exponential(1.0)] * 4)
    flow = Flow({(0, 1): 0.25, (1, 0): 0.25, (2, 3): 0.25, (3, 2): 0.25})
    with pytest.raises(TiltError):
        tilt_from_target(m, MeasureFlowPair.build(m, flow))


def test_target_tilt_reproduces_target_kernel_and_lln():
    P = [[0.0, 0.3, 0.7], [0.6, 0.1, 0.3], [0.2, 0.8, 0.0]]
    target_model = explicit(P, [Exponential(3.0), Exponential(1.0), Exponential(1.2)])
    tilde = {x: target_model.law(x) for x in range(3)}
    pair = MeasureFlowPair.build(EXP3, Flow(target_model.stationary_flow()), tilde)
    spec, tilted = tilt_from_target(EXP3, pair)
    for x in range(3):
        for y in range(3):
            assert tilted.p(x, y) == pytest.approx(P[x][y], abs=1e-12)
        assert tilted.law(x).rate == pytest.approx(target_model.law(x).rate, rel=1e-12)
    # at t = 1e4 a single path has per-edge flow noise of several percent, so the 2% check runs longer
    traj = sample_trajectory(tilted, 0, 2e5, seed=12)
    pi = empirical_measure(traj).pi()
    q = empirical_flow(traj)
    for x, v in pair.pi().items():
        assert pi[x] == pytest.approx(v, rel=0.02)
    for e, v in pair.flow.entries.items():
        assert q.get(*e) == pytest.approx(v, rel=0.02)


def test_u_a_spec_has_zero_g():
    m = birth_death(0.25, Exponential(1.0), radius=30, policy="renormalize")
    for A in ([], [0, 1, 2]):
        g = spec_from_u_A(m, lambda x: 2.0 ** x, A).g(m)
        assert max(abs(v) for v in g.values()) <= 1e-10


def test_u_a_spec_requires_positive_u():
    with pytest.raises(TiltError):
        spec_from_u_A(EXP3, lambda x: float(x), [])


# ---------------------------------------------------------------------------
# likelihood ratios and martingales

def test_identity_loglik_is_zero():
    traj = sample_trajectory(MIXED, 0, 30.0, seed=1)
    assert loglik_ratio(traj, TiltSpec(), MIXED) == 0.0
    assert martingale_value(traj, TiltSpec(), MIXED) == 1.0


def test_loglik_matches_hand_sum():
    m = alternator(1.0, 2.0)
    spec = TiltSpec(edge={(1, 2): 0.3, (2, 1): -0.2}, wait={1: WaitTilt(beta=0.4, gamma=0.1)})
    traj = Trajectory(np.array([0, 1, 0, 1]), np.array([0.7, 1.2, 1.5]), np.array([0.0, 0.7, 1.9, 3.4]), 3.0, (1, 2))
    g1 = 0.3 + math.log(1.0 / (1.0 - 0.4)) + 0.1
    g2 = -0.2
    terms = [
        (0.3 - g1) + (0.4 * 0.7 + 0.1),   # leave 1 after 0.7
        (-0.2 - g2) + 0.0,                # leave 2 after 1.2
        (0.3 - g1) + (0.4 * 1.5 + 0.1),   # leave 1 after the overshooting 1.5
    ]
    assert loglik_ratio(traj, spec, m) == pytest.approx(sum(terms) / 3.0, abs=1e-14)


def test_u_a_martingale_with_constant_u_is_one():
    traj = sample_trajectory(EXP3, 0, 20.0, seed=2)
    assert martingale_value_uA(traj, lambda x: 1.0, [0, 1, 2], EXP3) == pytest.approx(1.0, abs=1e-14)


def test_batch_loglik_closed_form_matches_accumulator():
    closed = TiltSpec(edge={(0, 1): 0.4, (2, 0): -0.5}, wait={0: WaitTilt(beta=0.5), 1: WaitTilt(beta=-0.3)})
    # an indicator term beyond an unreachable cutoff forces the per-wait accumulator route
    cut = TiltSpec(closed.edge, {0: WaitTilt(beta=0.5, c=0.3, cutoff=1e9), 1: WaitTilt(beta=-0.3)})
    stats = simulate_batch(EXP3, 0, 8.0, 500, seed=5, accumulators=[wait_accumulator(EXP3, cut)])
    a = batch_log_likelihood(stats, closed, EXP3)
    b = batch_log_likelihood(stats, cut, EXP3, wait_column=0)
    assert np.allclose(a, b, rtol=1e-10, atol=1e-10)


def test_martingale_mean_is_one_on_finite_model():
    spec = TiltSpec(edge={(0, 1): 0.4, (1, 2): -0.3, (2, 1): 0.2}, wait={0: WaitTilt(beta=0.5),
                                                                         1: WaitTilt(beta=-0.4, gamma=0.2)})
    s = martingale_sample(MIXED, spec, 0, 5.0, 100_000, seed=17)
    assert s.mean <= 1 + 3 * s.stderr
    assert abs(s.mean - 1.0) <= 3 * s.stderr


def test_reweighting_reproduces_untilted_edge_frequencies():
    spec = TiltSpec(edge={(0, 1): 0.5, (1, 0): -0.4}, wait={0: WaitTilt(beta=0.4), 2: WaitTilt(beta=-0.5)})
    tilted = tilted_kernel(EXP3, spec)
    under = simulate_batch(tilted, 0, 6.0, 10_000, seed=31)
    w = np.exp(-batch_log_likelihood(under, spec, EXP3))
    plain = simulate_batch(EXP3, 0, 6.0, 10_000, seed=32)
    assert under.edges == plain.edges
    for j in range(len(plain.edges)):
        a = w * under.edge_counts[:, j]
        b = plain.edge_counts[:, j].astype(float)
        se = math.sqrt(a.var(ddof=1) / a.size + b.var(ddof=1) / b.size)
        assert abs(a.mean() - b.mean()) <= 3 * se


# ---------------------------------------------------------------------------
# importance sampling

def test_identity_tilt_is_naive_monte_carlo():
    ev = OccupationAtLeast(0, 0.4)
    est = importance_estimate(MIXED, ev, TiltSpec(), 10.0, 2000, seed=3)
    stats = simulate_batch(MIXED, 0, 10.0, 2000, seed=3)
    assert est.estimate == ev(stats).mean()


def test_tilted_estimate_agrees_with_naive_on_likely_event():
    ev = OccupationAtLeast(0, 0.3)
    naive = importance_estimate(EXP3, ev, TiltSpec(), 10.0, 4000, seed=8)
    assert 0.2 < naive.estimate < 0.8
    spec = TiltSpec(edge={(1, 0): 0.3}, wait={0: WaitTilt(beta=0.2)})
    tilted = importance_estimate(EXP3, ev, spec, 10.0, 4000, seed=9)
    assert abs(tilted.estimate - naive.estimate) <= 3 * math.hypot(tilted.stderr, naive.stderr)


def test_occupation_tilt_reduces_variance_on_alternator():
    m = alternator()
    ev = OccupationAtLeast(1, 0.7)
    spec, _, _ = occupation_tilt(m, [0.7, 0.3])
    tilted = importance_estimate(m, ev, spec, 50.0, 4000, seed=1, start=1)
    naive = importance_estimate(m, ev, TiltSpec(), 50.0, 4000, seed=2, start=1)
    assert tilted.relative_stderr < naive.relative_stderr
    assert tilted.relative_stderr < 0.05
