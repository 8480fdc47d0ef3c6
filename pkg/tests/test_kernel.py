import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, optimize, stats

from semimarkov_ldp.kernel import (Dirac, Exponential, Gamma, LawError, ModelError, NumericDensity, Rayleigh,
                                   SemiMarkovModel, alternator, birth_death, ess_bounds, explicit, mgf,
                                   mixture, relative_entropy_waiting, theta, validate_model, zeta)


def quad_mgf(pdf, lam, hi=np.inf):
    def f(s):
        d = pdf(s)
        return 0.0 if d <= 0 else math.exp(lam * s + math.log(d))
    val, _ = integrate.quad(f, 0, hi, limit=400, epsabs=1e-13, epsrel=1e-12)
    return val


# ---------------------------------------------------------------------------
# mgf

def test_mgf_exponential_below_rate_matches_quadrature():
    assert mgf(Exponential(2.0), 1.0) == pytest.approx(2.0, abs=1e-12)
    ref = quad_mgf(lambda s: 2.0 * math.exp(-2.0 * s), 1.0)
    assert ref == pytest.approx(2.0, rel=1e-9)


def test_mgf_exponential_at_rate_is_infinite():
    assert mgf(Exponential(1.0), 1.0) == math.inf


def test_mgf_dirac_is_point_evaluation():
    assert mgf(Dirac(0.5), 3.0) == pytest.approx(4.481689070338065, abs=1e-12)


@pytest.mark.parametrize("law,pdf", [
    (Exponential(1.7), lambda s: stats.expon(scale=1 / 1.7).pdf(s)),
    (Gamma(2.5, 3.0), lambda s: stats.gamma(2.5, scale=1 / 3.0).pdf(s)),
    (Gamma(0.5, 1.0), lambda s: stats.gamma(0.5, scale=1.0).pdf(s)),
    (Rayleigh(0.8), lambda s: stats.rayleigh(scale=0.8).pdf(s)),
])
def test_closed_form_mgf_matches_quadrature_below_zeta(law, pdf):
    z = law.zeta
    top = min(z - 0.05 * (z if math.isfinite(z) else 1.0), 4.0)
    for lam in np.linspace(-5.0, top, 12):
        ref = quad_mgf(pdf, float(lam))
        assert float(law.mgf(lam)) == pytest.approx(ref, rel=1e-8, abs=1e-12)


@pytest.mark.parametrize("law", [Exponential(2.0), Gamma(3.0, 0.5), Dirac(2.0), Rayleigh(1.3),
                                 mixture([Exponential(1.0), Dirac(0.4)], [0.3, 0.7])])
def test_mgf_at_zero_is_one(law):
    assert abs(float(law.mgf(0.0)) - 1.0) <= 1e-12


def test_numeric_density_mgf_and_divergence():
    law = NumericDensity(lambda s: 3.0 * np.exp(-3.0 * s))
    assert float(law.mgf(1.0)) == pytest.approx(1.5, rel=1e-8)
    assert float(law.mgf(3.5)) == math.inf


def test_numeric_density_rejects_wrong_mass():
    with pytest.raises(LawError):
        NumericDensity(lambda s: 2.0 * np.exp(-s))


# ---------------------------------------------------------------------------
# zeta, theta, essential bounds

def test_zeta_examples():
    assert zeta(Dirac(1.0)) == math.inf
    assert zeta(Exponential(3.0)) == 3.0
    assert zeta(Rayleigh(1.0)) == math.inf
    # at lam = 3 the integrand is the constant 3, so partial integrals grow linearly
    for hi in (10.0, 100.0):
        assert quad_mgf(lambda s: 3 * math.exp(-3 * s), 3.0, hi=hi) == pytest.approx(3 * hi, rel=1e-9)


@pytest.mark.parametrize("law", [Exponential(2.0), Gamma(2.0, 3.0), Dirac(0.7), Rayleigh(0.5), Gamma(0.3, 2.0)])
def test_theta_of_one_is_zero(law):
    assert theta(law, 1.0) == 0.0


def _theta_oracle(mgf_fn, t, lo, hi):
    return optimize.brentq(lambda lam: mgf_fn(lam) - t, lo, hi, xtol=1e-14)


def test_theta_gamma_closed_form_against_root_finding():
    ref = _theta_oracle(lambda lam: (3.0 / (3.0 - lam)) ** 2, 8.0, -10.0, 2.9999)
    assert ref == pytest.approx(3 * (1 - 8 ** -0.5), abs=1e-10)
    assert theta(Gamma(2.0, 3.0), 8.0) == pytest.approx(1.939339828220179, abs=1e-10)


def test_theta_exponential_closed_form_against_root_finding():
    ref = _theta_oracle(lambda lam: 2.0 / (2.0 - lam), 4.0, -10.0, 1.9999)
    assert theta(Exponential(2.0), 4.0) == pytest.approx(ref, abs=1e-10)
    assert theta(Exponential(2.0), 4.0) == pytest.approx(1.5, abs=1e-12)


def test_theta_rayleigh_inverts_mgf():
    law = Rayleigh(0.9)
    for t in (0.01, 0.5, 2.0, 50.0):
        ref = _theta_oracle(lambda lam: quad_mgf(lambda s: stats.rayleigh(scale=0.9).pdf(s), lam), t, -200.0, 20.0)
        assert theta(law, t) == pytest.approx(ref, abs=1e-7)


def test_theta_plateau_for_finite_mgf_at_zeta():
    # density proportional to exp(-s)/(1+s)^3 has a finite MGF at its abscissa 1
    c = integrate.quad(lambda s: math.exp(-s) / (1 + s) ** 3, 0, np.inf)[0]
    law = NumericDensity(lambda s: np.exp(-s) / (1 + s) ** 3 / c, zeta_hint=1.0, diverges_at_zeta=False)
    top = integrate.quad(lambda s: 1.0 / (1 + s) ** 3 / c, 0, np.inf)[0]
    # the density callable underflows past s ~ 745, which costs about 1e-6 of the tail
    assert law.mgf_at_zeta == pytest.approx(top, rel=1e-5)
    assert theta(law, top * 2) == 1.0


@given(st.sampled_from(["exp", "gamma", "dirac", "rayleigh"]), st.floats(0.2, 5.0), st.floats(0.3, 4.0),
       st.floats(-3.0, 3.0), st.floats(-3.0, 3.0))
@settings(max_examples=60, deadline=None)
def test_theta_is_monotone_and_inverts(fam, a, b, u, v):
    law = {"exp": Exponential(a), "gamma": Gamma(b, a), "dirac": Dirac(a), "rayleigh": Rayleigh(a)}[fam]
    t1, t2 = sorted((10.0 ** u, 10.0 ** v))
    th1, th2 = theta(law, t1), theta(law, t2)
    assert th1 <= th2
    assert abs(float(law.mgf(th1)) - t1) <= 1e-8 * max(1.0, t1)


def test_ess_bounds_examples():
    assert ess_bounds(Dirac(2.0)) == (2.0, 2.0)
    assert ess_bounds(Exponential(1.0)) == (0.0, math.inf)
    assert ess_bounds(Gamma(0.5, 1.0)) == (0.0, math.inf)


# ---------------------------------------------------------------------------
# relative entropy

def test_kl_identical_is_zero():
    assert relative_entropy_waiting(Exponential(1.0), Exponential(1.0)) == 0.0


def test_kl_exponentials_against_quadrature():
    ref = integrate.quad(lambda s: math.exp(-s) * (-s - math.log(2.0) + 2 * s), 0, np.inf)[0]
    assert relative_entropy_waiting(Exponential(1.0), Exponential(2.0)) == pytest.approx(ref, abs=1e-10)
    assert ref == pytest.approx(1 - math.log(2), abs=1e-10)


def test_kl_dirac_against_continuous_is_infinite():
    assert relative_entropy_waiting(Dirac(1.0), Exponential(1.0)) == math.inf
    assert relative_entropy_waiting(Dirac(1.0), Dirac(2.0)) == math.inf
    assert relative_entropy_waiting(Dirac(1.0), Dirac(1.0)) == 0.0


def test_kl_gamma_rayleigh_against_quadrature():
    p, q = stats.gamma(2.0, scale=0.5), stats.rayleigh(scale=1.2)
    ref = integrate.quad(lambda s: p.pdf(s) * (p.logpdf(s) - q.logpdf(s)), 0, np.inf, limit=200)[0]
    assert relative_entropy_waiting(Gamma(2.0, 2.0), Rayleigh(1.2)) == pytest.approx(ref, rel=1e-7)


@given(st.floats(0.2, 5.0), st.floats(0.2, 5.0), st.floats(0.2, 5.0), st.floats(0.2, 5.0))
@settings(max_examples=50, deadline=None)
def test_kl_gamma_nonnegative_and_zero_iff_equal(a1, q1, a2, q2):
    kl = relative_entropy_waiting(Gamma(a1, q1), Gamma(a2, q2))
    assert kl >= 0.0
    if (a1, q1) == (a2, q2):
        assert kl == 0.0
    elif abs(a1 - a2) + abs(q1 - q2) > 1e-3:
        assert kl > 0.0


# ---------------------------------------------------------------------------
# models

def test_alternator_validates():
    rep = validate_model(alternator())
    assert rep.ok
    assert {c.name for c in rep.checks} >= {"row stochasticity", "irreducibility", "local finiteness"}


def test_row_sum_failure_names_row():
    m = SemiMarkovModel({0: {1: 0.5, 2: 0.4}, 1: {0: 1.0}, 2: {0: 1.0}}, {x: Exponential(1.0) for x in range(3)})
    rep = validate_model(m)
    assert not rep.ok
    chk = rep.check("row stochasticity")
    assert chk.verdict == "fails" and "row 0" in chk.detail
    with pytest.raises(ModelError, match="row 0"):
        m.require_valid()


def test_reducible_model_fails_irreducibility():
    m = explicit([[1.0, 0.0], [0.5, 0.5]], [Exponential(1.0)] * 2)
    assert validate_model(m).check("irreducibility").verdict == "fails"


def test_birth_death_recurrence_heuristic():
    m = birth_death(0.25, Exponential(1.0), radius=60)
    chk = validate_model(m).check("recurrence")
    assert "recurrent" in chk.verdict
    # independent partial sums of (q/p)^k = 3^k grow without bound
    assert sum(3.0 ** k for k in range(1, 51)) > 1e20


def test_finite_irreducible_model_is_recurrent():
    chk = validate_model(alternator()).check("recurrence")
    assert chk.verdict == "holds" and "finite" in chk.detail


def test_stationary_objects_of_alternator():
    m = alternator(1.0, 2.0)
    occ = m.stationary_occupation()
    assert occ == pytest.approx([2 / 3, 1 / 3], abs=1e-14)
    flow = m.stationary_flow()
    assert flow[(1, 2)] == pytest.approx(2 / 3, abs=1e-14)
