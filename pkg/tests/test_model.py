import math
import warnings

import numpy as np
import pytest

from opo_squeeze.dynamics import LinearizationMode, Representation, drift
from opo_squeeze.model import (
    ParameterError,
    PhysicalParams,
    ScaledParams,
    WeakCouplingWarning,
    classical_steady_state,
    critical_drive,
    scale_params,
    threshold_input_flux,
    threshold_photon_number,
    unscale_params,
)


def test_scale_reference_point():
    chi = math.sqrt(2 * 0.5 * 0.001)
    e = 0.9 * 1.0 * 0.5 / chi
    s = scale_params(PhysicalParams(1.0, 0.5, chi, e))
    assert s.g2 == pytest.approx(0.001, rel=1e-14)
    assert s.gamma_r == 0.5
    assert s.mu == pytest.approx(0.9, rel=1e-14)
    assert s.n_c == pytest.approx(1000.0, rel=1e-12)


@pytest.mark.filterwarnings("ignore::opo_squeeze.model.WeakCouplingWarning")
def test_critical_drive_gives_unit_mu():
    e = 0.37
    p = PhysicalParams(1.0, 1.0, 1.0 / e, e)
    assert scale_params(p).mu == 1.0
    assert critical_drive(p) * p.chi == pytest.approx(p.gamma1 * p.gamma2)


def test_threshold_flux_two_routes():
    s = ScaledParams.from_g2(0.001, 0.5, 1.0)
    assert s.i_c == pytest.approx(250.0)
    p = unscale_params(s)
    # flux from E_c^2 / (2 gamma2), and N_c from E_c^2 / gamma2^2
    assert threshold_input_flux(p) == pytest.approx(250.0)
    assert threshold_photon_number(p) == pytest.approx(s.n_c)
    assert s.n_c == pytest.approx(2 * s.i_c / s.gamma_r)


@pytest.mark.parametrize("g,mu,gr", [(0.03, 0.9, 0.5), (1e-3, 0.1, 10.0), (0.05, 1.7, 0.01)])
@pytest.mark.parametrize("gamma1", [1.0, 2.5])
def test_round_trip(g, mu, gr, gamma1):
    s = ScaledParams(g, mu, gr)
    back = scale_params(unscale_params(s, gamma1))
    for a, b in ((back.g, g), (back.mu, mu), (back.gamma_r, gr)):
        assert abs(a - b) <= 1e-14 * abs(b)


@pytest.mark.parametrize(
    "kwargs",
    [dict(gamma1=0.0), dict(gamma2=-1.0), dict(chi=float("nan")), dict(drive=-0.1), dict(nbar1=0.5)],
)
def test_physical_validation(kwargs):
    base = dict(gamma1=1.0, gamma2=1.0, chi=0.1, drive=1.0)
    base.update(kwargs)
    with pytest.raises(ParameterError):
        PhysicalParams(**base)


def test_scaled_validation_and_warning():
    with pytest.raises(ParameterError):
        ScaledParams(0.0, 0.5, 1.0)
    with pytest.raises(ParameterError):
        ScaledParams(0.01, -0.1, 1.0)
    with pytest.raises(ParameterError):
        ScaledParams(0.01, 0.5, 0.0)
    with pytest.warns(WeakCouplingWarning):
        ScaledParams(0.2, 0.5, 1.0)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        ScaledParams(0.1, 0.5, 1.0)


def test_below_threshold_state():
    s = ScaledParams.from_g2(1e-3, 0.5, 0.5)
    (st,) = classical_steady_state(s)
    assert st.branch == "below" and st.alpha1 == 0
    # pump quadrature in units of the threshold pump amplitude E_c / gamma_r is 2 mu
    assert 2 * st.alpha2.real / (s.e_c / s.gamma_r) == pytest.approx(1.0)


def test_threshold_continuity():
    s = ScaledParams.from_g2(1e-3, 1.0, 0.5)
    states = classical_steady_state(s)
    assert [abs(c.alpha1) for c in states] == [0.0, 0.0]
    a = [abs(classical_steady_state(s.with_mu(1 + eps))[0].alpha1) for eps in (1e-2, 1e-4, 1e-6)]
    assert a[0] > a[1] > a[2] and a[2] < 1e-1


@pytest.mark.parametrize("mu", [0.0, 0.5, 0.99, 1.0, 1.5, 3.0])
@pytest.mark.parametrize("rep", list(Representation))
def test_steady_states_have_zero_drift(mu, rep):
    s = ScaledParams.from_g2(1e-3, mu, 0.5)
    for st in classical_steady_state(s):
        x = st.as_phase_state(rep)
        d = drift(rep, LinearizationMode.FULL, x, s)
        scale = max(abs(s.drive), 1.0)
        assert np.max(np.abs(d)) <= 1e-12 * scale


def test_above_threshold_branches():
    s = ScaledParams.from_g2(1e-3, 1.5, 0.5)
    plus, minus = classical_steady_state(s)
    assert plus.alpha1 == -minus.alpha1
    assert plus.alpha1.real ** 2 == pytest.approx(2 * (s.drive - s.e_c) / s.chi)
    assert plus.alpha2 == pytest.approx(1 / s.chi)
    assert plus.above_threshold
