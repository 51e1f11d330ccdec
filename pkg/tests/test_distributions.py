import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate, optimize, special, stats

from bayes_tucker.distributions import (
    GammaParams,
    GIGParams,
    InvGammaParams,
    gig_moments,
    log_bessel_k,
    marginal_laplace_check,
    marginal_student_check,
)

# Reference values below were computed once with mpmath at 20 digits:
# K_nu by its cosh integral, GIG moments by quadrature over the density.
K_07_31 = 0.033170914890682699829
GIG_211_MEAN = 4.370441174631401387
GIG_211_MEAN_INV = 0.3704411746314180164
GIG_211_MEAN_LOG = 1.2591176507371634491
GIG_211_ENTROPY = 2.2898793760198375471
STUDENT_3_2_AT_1P5 = 0.098304
LAPLACE_4_AT_2 = 0.018315638888734180294


def test_log_bessel_half_order_closed_form():
    assert log_bessel_k(0.5, 2.0) == pytest.approx(math.log(math.sqrt(math.pi / 4) * math.exp(-2.0)), rel=1e-12)


def test_log_bessel_quadrature_value():
    assert math.exp(log_bessel_k(0.7, 3.1)) == pytest.approx(K_07_31, rel=1e-8)


@pytest.mark.parametrize("nu", [0.5, 1.5, 2.5])
@pytest.mark.parametrize("x", [0.1, 1.0, 7.0, 50.0])
def test_log_bessel_half_integer_orders(nu, x):
    # K_{n+1/2} from the spherical Bessel closed form
    poly = {0.5: 1.0, 1.5: 1.0 + 1.0 / x, 2.5: 1.0 + 3.0 / x + 3.0 / x**2}[nu]
    exact = math.log(math.sqrt(math.pi / (2 * x))) - x + math.log(poly)
    assert log_bessel_k(nu, x) == pytest.approx(exact, rel=1e-10)
    assert log_bessel_k(-nu, x) == log_bessel_k(nu, x)


def test_log_bessel_symmetric_in_order():
    assert log_bessel_k(-3.0, 1.0) == log_bessel_k(3.0, 1.0)


def test_log_bessel_rejects_nonpositive_argument():
    with pytest.raises(ValueError):
        log_bessel_k(1.0, 0.0)


@given(st.floats(0.01, 60.0), st.floats(0.05, 200.0))
def test_log_bessel_recurrence(nu, x):
    # K_{v+1} = K_{v-1} + (2v/x) K_v, checked in log space
    lo, mid, hi = (log_bessel_k(nu + d, x) for d in (-1.0, 0.0, 1.0))
    rhs = np.logaddexp(lo, math.log(2 * nu / x) + mid)
    assert hi == pytest.approx(rhs, rel=1e-9, abs=1e-9)


@pytest.mark.parametrize("x", [1e-12, 1e-3, 1.0, 1e3, 1e8])
@pytest.mark.parametrize("nu", [0.0, 3.3, 40.0, 249.9, 250.0, 4000.0])
def test_log_bessel_finite_over_range(nu, x):
    assert np.isfinite(log_bessel_k(nu, x))


@pytest.mark.parametrize("x", [300.0, 600.0, 2000.0])
def test_log_bessel_large_order_matches_scaled_scipy(x):
    nu = 300.0
    ref = math.log(special.kve(nu, x)) - x
    assert log_bessel_k(nu, x) == pytest.approx(ref, rel=1e-10)


@pytest.mark.parametrize("x", [0.5, 30.0, 400.0])
def test_log_bessel_continuous_at_expansion_switch(x):
    below, above = log_bessel_k(250.0 - 1e-9, x), log_bessel_k(250.0, x)
    assert below == pytest.approx(above, rel=1e-9)


def test_gamma_moments_and_entropy():
    g = GammaParams(3.0, 2.0)
    assert g.mean == 1.5
    assert g.inv_mean() == 1.0
    assert g.entropy() == pytest.approx(stats.gamma(3.0, scale=0.5).entropy(), rel=1e-12)
    assert g.mean_log == pytest.approx(special.digamma(3.0) - math.log(2.0))
    # E_q[ln q] = -H(q)
    assert g.expected_log_pdf(g.mean, g.mean_log) == pytest.approx(-g.entropy(), rel=1e-12)


def test_gamma_rejects_bad_parameters():
    with pytest.raises(ValueError):
        GammaParams(0.0, 1.0)
    with pytest.raises(ValueError):
        GammaParams(1.0, -1.0)
    with pytest.raises(ValueError):
        GammaParams(1.0, 1.0).inv_mean()


def test_gig_reduces_to_gamma():
    p = GIGParams.from_gamma(GammaParams(3.0, 2.0))
    mean_x, mean_inv, _ = gig_moments(p)
    assert mean_x == pytest.approx(1.5, rel=1e-10)
    assert mean_inv == pytest.approx(2.0 / 2.0, rel=1e-10)


def test_gig_reduces_to_inverse_gamma():
    ig = InvGammaParams(3.0, 2.0)
    mean_x, mean_inv, _ = gig_moments(ig.as_gig())
    assert mean_x == pytest.approx(1.0, rel=1e-10)
    assert mean_inv == pytest.approx(1.5, rel=1e-10)
    x = np.linspace(0.1, 5.0, 7)
    np.testing.assert_allclose(ig.as_gig().pdf(x), ig.pdf(x), rtol=1e-10)


def test_gig_quadrature_reference():
    p = GIGParams(2.0, 1.0, 1.0)
    mean_x, mean_inv, _ = gig_moments(p)
    assert mean_x == pytest.approx(GIG_211_MEAN, rel=1e-8)
    assert mean_inv == pytest.approx(GIG_211_MEAN_INV, rel=1e-8)
    assert p.mean_log() == pytest.approx(GIG_211_MEAN_LOG, rel=1e-8)
    assert p.entropy() == pytest.approx(GIG_211_ENTROPY, rel=1e-8)


@given(st.floats(-8.0, 8.0), st.floats(0.05, 20.0), st.floats(0.05, 20.0))
def test_gig_reciprocal_law(h, a, b):
    p = GIGParams(h, a, b)
    _, mean_inv, _ = gig_moments(p)
    recip_mean, _, _ = gig_moments(p.reciprocal())
    assert mean_inv == pytest.approx(recip_mean, rel=1e-10)


@given(st.floats(-6.0, 6.0), st.floats(0.1, 10.0), st.floats(0.1, 10.0))
def test_gig_density_normalized(h, a, b):
    p = GIGParams(h, a, b)
    mean_x, _, _ = gig_moments(p)
    total, _ = integrate.quad(p.pdf, 0, np.inf, limit=200)
    first, _ = integrate.quad(lambda x: x * p.pdf(x), 0, np.inf, limit=200)
    assert total == pytest.approx(1.0, rel=1e-6)
    assert first == pytest.approx(mean_x, rel=1e-6)


@given(st.floats(-6.0, 6.0), st.floats(0.1, 10.0), st.floats(0.1, 10.0))
def test_mode_of_reciprocal_is_density_argmax(h, a, b):
    p = GIGParams(h, a, b)
    _, _, mode_inv = gig_moments(p)
    q = p.reciprocal()
    res = optimize.minimize_scalar(
        lambda t: -((q.h - 1) * math.log(t) - 0.5 * (q.a * t + q.b / t)),
        bracket=(mode_inv * 0.5, mode_inv, mode_inv * 2.0),
        method="golden",
        tol=1e-10,
    )
    assert mode_inv == pytest.approx(res.x, rel=1e-6)


def test_gig_large_order_is_finite():
    # orders this large show up in the Laplace column-precision posterior
    p = GIGParams(2000.0, np.array([1e-3, 5.0, 1e4]), np.array([1e-9, 1.0, 7.0]))
    for m in gig_moments(p):
        assert np.all(np.isfinite(m)) and np.all(m > 0)
    assert np.all(np.isfinite(p.entropy()))


def test_gig_domain_checks():
    with pytest.raises(ValueError):
        GIGParams(1.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        GIGParams(1.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        GIGParams(-1.0, 1.0, 0.0)


def test_student_marginal_reference_points():
    hier, direct = marginal_student_check(1.0, 1.0, 0.0)
    assert hier == pytest.approx(direct, abs=1e-6)
    assert direct == pytest.approx(1.0 / (2.0 * math.sqrt(2.0)), rel=1e-12)
    hier, direct = marginal_student_check(3.0, 2.0, 1.5)
    assert hier == pytest.approx(STUDENT_3_2_AT_1P5, abs=1e-9)
    assert direct == pytest.approx(STUDENT_3_2_AT_1P5, abs=1e-9)


def test_laplace_marginal_reference_points():
    hier, direct = marginal_laplace_check(1.0, 0.0)
    assert direct == pytest.approx(0.5)
    assert hier == pytest.approx(0.5, abs=1e-6)
    hier, direct = marginal_laplace_check(4.0, 2.0)
    assert hier == pytest.approx(LAPLACE_4_AT_2, abs=1e-9)
    assert direct == pytest.approx(LAPLACE_4_AT_2, abs=1e-9)


@given(st.floats(0.2, 8.0), st.floats(0.2, 8.0), st.floats(0.0, 5.0))
def test_marginals_symmetric_in_x(a, b, x):
    assert marginal_student_check(a, b, x)[0] == pytest.approx(marginal_student_check(a, b, -x)[0], rel=1e-12)
    assert marginal_laplace_check(a, x)[0] == pytest.approx(marginal_laplace_check(a, -x)[0], rel=1e-12)


def test_log_bessel_k_subnormal_order():
    # reference: K_0(1) via mpmath
    assert log_bessel_k(5e-324, 1.0) == pytest.approx(math.log(0.42102443824070833334), rel=1e-14)
