import csv
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from opo_squeeze import analytic as A
from opo_squeeze.analytic import DomainError, PerturbationWarning, Regime, SolverError

G3 = math.sqrt(1e-3)
mus = st.floats(0.0, 0.98)
gammas = st.floats(1e-3, 100.0)
couplings = st.floats(1e-4, 0.05)
omegas = st.floats(-20.0, 20.0)


def ou_spectrum(D, lam, omega):
    """Fourier transform of the OU autocovariance (D / 2 lam) exp(-lam |t|)."""
    f = lambda t: (D / (2 * lam)) * math.exp(-lam * t) * math.cos(omega * t)
    return 2 * integrate.quad(f, 0, np.inf, limit=200)[0]


# --- linear spectra --------------------------------------------------------


def test_linear_reference_value():
    _, V = A.linear_spectrum(0.9, 0.0, "y")
    assert V == pytest.approx(0.0027701, abs=1e-7)


@pytest.mark.parametrize("mu,omega", [(0.9, 0.0), (0.5, 1.3), (0.2, 4.0)])
def test_linear_matches_ou_transfer_function(mu, omega):
    # normally ordered diffusion of y is -2 mu, of x is +2 mu; decay rates 1 + mu and 1 - mu
    Sy, _ = A.linear_spectrum(mu, omega, "y")
    Sx, _ = A.linear_spectrum(mu, omega, "x")
    assert Sy == pytest.approx(ou_spectrum(-2 * mu, 1 + mu, omega), rel=1e-8)
    assert Sx == pytest.approx(ou_spectrum(2 * mu, 1 - mu, omega), rel=1e-8)


@given(mus, omegas)
def test_uncertainty_product(mu, omega):
    assert A.linear_spectrum(mu, omega, "x")[1] * A.linear_spectrum(mu, omega, "y")[1] == pytest.approx(1, rel=1e-12)


def test_linear_vacuum_and_domain():
    w = np.linspace(-5, 5, 11)
    assert np.all(A.linear_spectrum(0.0, w, "x")[1] == 1)
    assert np.all(A.linear_spectrum(0.0, w, "y")[1] == 1)
    for bad in (1.0, 1.2, -0.1):
        with pytest.raises(DomainError):
            A.linear_spectrum(bad, 0.0)
    with pytest.raises(ValueError):
        A.linear_spectrum(0.5, 0.0, "z")


# --- moments ---------------------------------------------------------------


def test_positive_p_moment_reference():
    m = A.nonlinear_moments(0.9, 0.5, G3, "positive-p")
    assert m.y1_squared == pytest.approx(0.5271894, abs=1e-7)
    assert m.y1_squared_offset == pytest.approx(0.0272, abs=1e-4)


def test_pump_depletion_and_first_order():
    m = A.nonlinear_moments(0.5, 0.5, G3, "positive-p")
    assert m.x2_2 == pytest.approx(-2 / 3)
    assert m.y1y1 == pytest.approx(-1 / 3) and m.x1x1 == pytest.approx(1.0)
    w = A.nonlinear_moments(0.5, 0.5, G3, "wigner")
    assert w.y1y1 == pytest.approx(2 / 3) and w.x1x1 == pytest.approx(2.0)
    # symmetric minus normal ordering is the vacuum contribution 1
    assert w.y1y1 - m.y1y1 == pytest.approx(1.0) and w.x1x1 - m.x1x1 == pytest.approx(1.0)


def test_wigner_second_order_variance_at_zero_drive():
    assert A.nonlinear_moments(0.0, 2.0, G3, "wigner").y2y2 == pytest.approx(0.5)


@given(st.floats(0.0, 0.99), gammas, couplings)
def test_assembled_moments_match_single_expressions(mu, gr, g):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PerturbationWarning)
        for rep in ("positive-p", "wigner"):
            a = A.nonlinear_moments(mu, gr, g, rep).y1_squared
            b = A.y1_squared_closed_form(mu, gr, g, rep)
            assert a == pytest.approx(b, rel=1e-12)


def _corrections(mu, gr):
    g = 1e-4
    p = A.nonlinear_moments(mu, gr, g, "positive-p").correction / g**2
    w = A.nonlinear_moments(mu, gr, g, "wigner").correction / g**2
    return p, w


def test_near_threshold_representation_agreement():
    mus_ = np.linspace(0.95, 0.9999, 60)
    worst = lambda gr: max(abs(p / w - 1) for p, w in map(lambda m: _corrections(m, gr), mus_))
    for gr in np.linspace(0.1, 4.5, 23):
        assert worst(gr) < 0.10
    # the relative gap keeps growing slowly with gamma_r: about 11% at gamma_r = 10
    assert 0.10 < worst(10.0) < 0.12


def test_far_below_threshold_representations_disagree():
    for mu in (0.02, 0.05, 0.1):
        for gr in (1.0, 3.0, 10.0):
            p, w = _corrections(mu, gr)
            assert w / p > 2
    p, w = _corrections(0.1, 1.0)
    assert w / p == pytest.approx(7.97, abs=0.01)


# --- triple correlations ---------------------------------------------------


def test_triple_reference_values():
    assert A.triple_correlation(0.5, 2.0) == pytest.approx(1 / 6)
    assert A.triple_correlation(0.5, 2.0, "wigner", "112") == pytest.approx(-2 / 3)
    assert A.triple_correlation(0.5, 2.0, "wigner", "mixed") == pytest.approx(4 / 3)
    assert A.triple_correlation(0.5, 2.0, "wigner", "total") == pytest.approx(2 / 3)
    for rep in ("positive-p", "wigner"):
        assert A.triple_correlation(0.0, 1.0, rep) == pytest.approx(0.0) or rep == "wigner"
    assert A.triple_spectrum(0.0, 1.0, 0.3, 0.2) == 0
    assert A.pump_scale(0.01, 2.0) == pytest.approx(0.005)
    with pytest.raises(ValueError):
        A.triple_correlation(0.5, 2.0, "wigner", "121")


@pytest.mark.parametrize("mu,gr", [(0.5, 2.0), (0.8, 0.3)])
def test_triple_spectrum_integrates_to_moment(mu, gr):
    # the delta function removes one integral; the three 1/sqrt(2 pi) factors and the
    # spectrum's own 1/sqrt(2 pi) leave 1/(2 pi)^2 over (W1, W2)
    f = lambda w2, w1: (A.triple_spectrum(mu, gr, w1, w2) * math.sqrt(2 * math.pi)).real
    val = integrate.dblquad(f, -np.inf, np.inf, -np.inf, np.inf, epsabs=1e-10)[0] / (2 * math.pi) ** 2
    assert val == pytest.approx(A.triple_correlation(mu, gr), abs=1e-4)


# --- spectra ---------------------------------------------------------------


def test_v0_reference_values():
    lin = 1 - 4 * 0.9 / 1.9**2
    assert A.v0(0.9, 0.5, G3) - lin == pytest.approx(4.0228e-3, abs=1e-7)
    assert A.v0(0.9, 1.0, G3) == pytest.approx(0.0071168, abs=1e-7)
    assert A.v0(0.9, 1.0, 0.0) == pytest.approx(lin, rel=1e-15)


def test_v0_equals_spectrum_at_zero_for_random_triples():
    rng = np.random.default_rng(0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PerturbationWarning)
        for _ in range(1000):
            mu, gr, g = rng.uniform(0, 0.999), 10 ** rng.uniform(-3, 2), 10 ** rng.uniform(-4, -1)
            a = A.v0(mu, gr, g)
            b = A.nonlinear_spectrum(mu, gr, g, 0.0)
            assert abs(a - b) <= 1e-14 * abs(a) + 1e-16


def test_nonlinear_spectrum_reference_values():
    assert A.nonlinear_spectrum(0.9, 1.0, G3, 0.0) == pytest.approx(0.0071, abs=2e-4)
    assert A.nonlinear_spectrum(0.0, 0.5, G3, 0.0, "wigner") == pytest.approx(1 + 4e-3 * 0.5 / 1.5, abs=1e-12)
    assert A.nonlinear_spectrum(0.0, 0.5, G3, 0.0, "wigner") == pytest.approx(1.001333, abs=1e-6)


@given(gammas, couplings, omegas)
def test_positive_p_vacuum_limit(gr, g, w):
    assert A.nonlinear_spectrum(0.0, gr, g, w) == pytest.approx(1.0, abs=1e-15)
    assert abs(A.nonlinear_spectrum(1e-6, gr, g, w) - 1) < 1e-5


def test_small_gamma_representations_agree():
    p = A.nonlinear_spectrum(0.5, 1e-4, G3, 0.0) - A.linear_spectrum(0.5, 0.0)[1]
    w = A.nonlinear_spectrum(0.5, 1e-4, G3, 0.0, "wigner") - A.linear_spectrum(0.5, 0.0)[1]
    assert p / w == pytest.approx(1.0, abs=0.01)


def _curvature(mu, gr=0.01, g=G3, h=1e-3):
    V = lambda w: A.nonlinear_spectrum(mu, gr, g, w)
    return (V(h) - 2 * V(0.0) + V(-h)) / h**2


def test_spectral_bifurcation():
    assert _curvature(0.90) > 0
    assert _curvature(0.93) > 0
    assert _curvature(0.96) < 0
    w = np.linspace(0, 1, 2001)
    V = A.nonlinear_spectrum(0.96, 0.01, G3, w)
    assert 0 < w[np.argmin(V)] < 1


@pytest.mark.parametrize("mu,gr", [(0.9, 0.5), (0.5, 2.0), (0.3, 1.0)])
def test_spectrum_integrates_to_moment(mu, gr):
    # internal normally ordered spectrum over |W| <= 50 against <:y1^2:>.  Both the
    # linear part and the O(g^2) part fall off as 1/W^2, so the band misses a tail
    # that is added back from the asymptotic forms.
    band = 50.0
    g = G3
    nl = lambda w: (A.internal_spectrum(mu, gr, g, w) - A.linear_spectrum(mu, w)[0]) / g**2
    scaled = integrate.quad(nl, -band, band, limit=400)[0] / (2 * math.pi)
    m = A.nonlinear_moments(mu, gr, g)
    nl_tail = mu / ((1 - mu * mu) * band * math.pi)  # S_nl ~ mu / ((1 - mu^2) W^2)
    assert abs(scaled - 2 * m.y1y3) > 0.5 * nl_tail
    assert scaled + nl_tail == pytest.approx(2 * m.y1y3, abs=1e-3)
    full = integrate.quad(lambda w: A.internal_spectrum(mu, gr, g, w), -band, band, limit=400)[0] / (2 * math.pi)
    lin_tail = -mu * (1 - 2 * math.atan(band / (1 + mu)) / math.pi) / (1 + mu)
    assert full + lin_tail + g * g * nl_tail == pytest.approx(m.y1_squared - 1, abs=1e-4)


def test_domain_and_warnings():
    for f in (lambda: A.v0(1.0, 1.0, G3), lambda: A.nonlinear_spectrum(1.1, 1.0, G3, 0.0),
              lambda: A.nonlinear_moments(1.0, 1.0, G3), lambda: A.triple_correlation(1.0, 1.0)):
        with pytest.raises(DomainError):
            f()
    with pytest.raises(DomainError):
        A.v0(0.5, 0.0, G3)
    with pytest.warns(PerturbationWarning):
        A.v0(1 - 5e-3, 1.0, G3)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        A.v0(1 - 2e-2, 1.0, G3)


# --- optimum ---------------------------------------------------------------


def _bisect(f, a, b, tol=1e-13):
    fa = f(a)
    while b - a > tol:
        m = 0.5 * (a + b)
        if np.sign(f(m)) == np.sign(fa):
            a, fa = m, f(m)
        else:
            b = m
    return 0.5 * (a + b)


def test_quintic_root_against_independent_oracles():
    gr, g2 = 0.5, 1e-3
    res = A.quintic_optimum(gr, math.sqrt(g2))
    assert -0.135 <= res.delta <= -0.128
    G = gr * (gr + 2)
    coeffs = [4, 4 * G, G**2, 0, -4 * g2 * G, g2 * G**2]
    real = sorted(r.real for r in np.roots(coeffs) if abs(r.imag) < 1e-12 and -1 < r.real < 0)
    assert real[-1] == pytest.approx(res.delta, abs=1e-10)
    assert len(real) == 3
    b = _bisect(lambda d: A.quintic(d, gr, math.sqrt(g2)), -0.2, -0.12)
    assert b == pytest.approx(res.delta, abs=1e-12)
    assert res.regime is Regime.QUINTIC and res.V_opt == pytest.approx(A.v0(res.mu_opt, gr, math.sqrt(g2)))


def test_quintic_forms_and_errors():
    with pytest.raises(SolverError):
        A.quintic_optimum(1.0, 10.0)
    with pytest.raises(ValueError):
        A.quintic(-0.1, 1.0, 0.01, "other")


def test_asymptotic_branches():
    big = A.asymptotic_optimum(1.0, 1e-3)
    assert big.regime is Regime.LARGE_GAMMA
    assert big.mu_opt == pytest.approx(0.99) and big.V_opt == pytest.approx(7.5e-5)
    scan = A.direct_scan_optimum(1.0, 1e-3)
    assert abs(scan.mu_opt - big.mu_opt) < 1e-3
    small = A.asymptotic_optimum(0.01, G3)
    assert small.regime is Regime.SMALL_GAMMA
    assert small.mu_opt == pytest.approx(0.9331, abs=1e-4)
    assert small.V_opt == pytest.approx(2.236e-3, abs=1e-6)


def test_direct_scan_reference_values():
    r = A.optimal_drive(0.01, G3, "DirectScan")
    assert r.mu_opt == pytest.approx(0.93850, abs=1e-5)
    assert r.V_opt == pytest.approx(2.238e-3, abs=1e-6)
    assert -1 < r.delta < 0 and r.V_opt > 0
    # golden-section minimum is a true minimum
    for eps in (1e-4, -1e-4):
        assert A.v0(r.mu_opt + eps, 0.01, G3) > r.V_opt
    with pytest.raises(ValueError):
        A.optimal_drive(1.0, G3, "Newton")


@pytest.mark.parametrize("g2", [1e-4, 1e-5, 1e-6])
@pytest.mark.parametrize("gr", [0.1, 0.3, 1.0, 3.0, 10.0])
def test_direct_scan_tracks_rederived_quintic(gr, g2):
    # both are leading-order near-threshold statements: agreement to O(delta^2)
    scan = A.direct_scan_optimum(gr, math.sqrt(g2))
    q = A.quintic_optimum(gr, math.sqrt(g2), form="rederived")
    assert abs(scan.mu_opt - q.mu_opt) <= scan.delta**2


def test_original_quintic_departs_at_small_gamma():
    scan = A.direct_scan_optimum(0.1, 1e-2)
    orig = A.quintic_optimum(0.1, 1e-2)
    assert abs(orig.delta) > 2 * abs(scan.delta)


def test_direct_scan_approaches_large_gamma_law():
    g = 1e-6
    r = A.direct_scan_optimum(1.0, g)
    assert abs(r.mu_opt - (1 - g ** (2 / 3))) < 1e-3


def test_tabulate_csv(tmp_path):
    w = np.linspace(-2, 2, 5)
    path = tmp_path / "a.csv"
    V = A.tabulate_spectrum(path, 0.5, 1.0, G3, w)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["omega", "V", "stderr", "imag_residual"]
    assert [float(r[1]) for r in rows[1:]] == list(V)
