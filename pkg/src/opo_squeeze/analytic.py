"""Closed-form below-threshold results in scaled units (``gamma1 = 1``).

Linear (first-order) spectra, the ``O(g^2)`` corrections to moments and to
the external squeezing spectrum in both the positive-P (normally ordered)
and truncated Wigner (symmetrically ordered) treatments, triple
correlations, and the drive that minimises the zero-frequency variance.

Perturbative moments are the scaled coefficients of the expansion
``x = x^(1) + g x^(2) + g^2 x^(3) + ...``; physical pump fluctuations carry
an extra ``1/sqrt(2 gamma_r)`` (see :func:`pump_scale`).
"""

from __future__ import annotations

import csv
import enum
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .dynamics import Representation


class DomainError(ValueError):
    """Formula evaluated at or above threshold."""


class PerturbationWarning(UserWarning):
    """Drive so close to threshold that ``g^2/(1 - mu)`` is not small."""


class SolverError(RuntimeError):
    pass


def _check_mu(mu, g=None):
    m = np.asarray(mu, dtype=float)
    if np.any(m < 0) or np.any(m >= 1) or not np.all(np.isfinite(m)):
        raise DomainError(f"below-threshold formulas need 0 <= mu < 1, got {mu!r}")
    if g is not None and g > 0 and np.any(m >= 1 - 10 * g * g):
        warnings.warn(
            f"mu within 10 g^2 of threshold: perturbation theory unreliable",
            PerturbationWarning,
            stacklevel=3,
        )


def _check_gamma(gamma_r):
    if not gamma_r > 0:
        raise DomainError(f"gamma_r must be positive, got {gamma_r!r}")


def pump_scale(g: float, gamma_r: float) -> float:
    """Physical pump quadrature per unit scaled second-order pump variable."""
    return g / math.sqrt(2.0 * gamma_r)


# --- first order -----------------------------------------------------------


def linear_spectrum(mu, omega, quadrature: str = "y"):
    """Internal normally ordered spectrum ``S`` and external variance ``V = 1 + 2S``."""
    _check_mu(mu)
    w2 = np.asarray(omega, dtype=float) ** 2
    if quadrature == "y":
        S = -2 * mu / (w2 + (1 + mu) ** 2)
    elif quadrature == "x":
        S = 2 * mu / (w2 + (1 - mu) ** 2)
    else:
        raise ValueError("quadrature must be 'x' or 'y'")
    return S, 1 + 2 * S


# --- second-order moments --------------------------------------------------


@dataclass(frozen=True)
class AnalyticMomentSet:
    """Scaled perturbative moments and the assembled ``<y1^2>`` (operator moment)."""

    representation: Representation
    mu: float
    gamma_r: float
    g: float
    x2_2: float
    y1y1: float
    x1x1: float
    y1y3: float
    triple: float
    y2y2: float | None
    y1_squared: float

    @property
    def y1_squared_offset(self) -> float:
        return self.y1_squared - 0.5

    @property
    def correction(self) -> float:
        """``O(g^2)`` part of ``<y1^2>``."""
        return self.y1_squared - 1.0 / (1.0 + self.mu)


def nonlinear_moments(mu: float, gamma_r: float, g: float, rep="positive-p") -> AnalyticMomentSet:
    _check_mu(mu, g)
    _check_gamma(gamma_r)
    rep = Representation(rep)
    gr = gamma_r
    r = gr / (gr + 2)
    x2_2 = -mu / (1 - mu * mu)
    if rep is Representation.POSITIVE_P:
        y1y1 = -mu / (1 + mu)
        x1x1 = mu / (1 - mu)
        bracket = mu * r + (gr * (1 - mu + mu * mu) + 2 * (1 + mu)) / ((1 + mu) * (gr + 2 * (1 + mu)))
        y1y3 = mu / (4 * (1 + mu) * (1 - mu * mu)) * bracket
        triple = r * mu * mu / (1 - mu * mu)
        y2y2 = None
        y_sq = 1 + y1y1 + 2 * g * g * y1y3
    else:
        y1y1 = 1 / (1 + mu)
        x1x1 = 1 / (1 - mu)
        y2y2 = 0.5 * r / (1 - mu * mu) + gr / (2 * (1 + mu) ** 2 * (gr + 2 * (1 + mu)))
        bracket = -r + (gr * (2 - mu) + 2 * (1 + mu)) / ((1 + mu) * (gr + 2 * (1 + mu)))
        y1y3 = mu / (4 * (1 + mu) * (1 - mu * mu)) * bracket
        triple = triple_correlation(mu, gamma_r, rep, order="112")
        y_sq = y1y1 + g * g * (y2y2 + 2 * y1y3)
    return AnalyticMomentSet(rep, mu, gamma_r, g, x2_2, y1y1, x1x1, y1y3, triple, y2y2, y_sq)


def y1_squared_closed_form(mu: float, gamma_r: float, g: float, rep="positive-p") -> float:
    """Single-expression ``<y1^2>``; equals the assembled moment set."""
    _check_mu(mu, g)
    gr = gamma_r
    if Representation(rep) is Representation.POSITIVE_P:
        b = mu * gr / (gr + 2) + (gr * (1 - mu + mu**2) + 2 * (1 + mu)) / ((1 + mu) * (gr + 2 * (1 + mu)))
        return 1 / (1 + mu) + g * g * mu / (2 * (1 + mu) ** 2 * (1 - mu)) * b
    b = gr / (gr + 2) + (gr * (1 + 2 * mu - 2 * mu**2) + 2 * mu * (1 + mu)) / ((1 + mu) * (gr + 2 * (1 + mu)))
    return 1 / (1 + mu) + g * g / (2 * (1 + mu) * (1 - mu * mu)) * b


# --- triple correlations ---------------------------------------------------


def triple_correlation(mu: float, gamma_r: float, rep="positive-p", order: str = "total") -> float:
    """Scaled steady-state ``<x1 y1 y2>`` at first order in ``g``.

    Positive-P: ``<x1^(1) y1^(1) y2^(2)>``, the only term at this order.
    Wigner, ``order="112"``: the ``<x1^(1) y1^(1) y2^(2)>`` term alone;
    ``order="mixed"``: ``<x1^(2) y1^(1) y2^(1)> + <x1^(1) y1^(2) y2^(1)>``;
    ``order="total"``: all three, which is what a simulation measures.
    The physical moment is ``pump_scale(g, gamma_r)`` times this value.
    """
    _check_mu(mu)
    _check_gamma(gamma_r)
    r = gamma_r / (gamma_r + 2)
    if Representation(rep) is Representation.POSITIVE_P:
        return r * mu * mu / (1 - mu * mu)
    base = r / (1 - mu * mu)
    if order == "112":
        return -base
    if order == "mixed":
        return 2 * base
    if order == "total":
        return base
    raise ValueError(f"unknown order {order!r}")


def triple_spectrum(mu: float, gamma_r: float, omega1, omega2, omega3=None):
    """Positive-P ``<x1~(W1) y1~(W2) y2~^(2)(W3)>`` without its delta function.

    ``omega3`` defaults to ``-(omega1 + omega2)``.
    """
    _check_mu(mu)
    _check_gamma(gamma_r)
    w1 = np.asarray(omega1, dtype=float)
    w2 = np.asarray(omega2, dtype=float)
    w3 = -(w1 + w2) if omega3 is None else np.asarray(omega3, dtype=float)
    num = 4 * mu * mu * gamma_r / math.sqrt(2 * math.pi)
    return num / ((1j * w3 + gamma_r) * (w1**2 + (1 - mu) ** 2) * (w2**2 + (1 + mu) ** 2))


# --- spectra ---------------------------------------------------------------


def nonlinear_spectrum(mu: float, gamma_r: float, g: float, omega, rep="positive-p"):
    """External squeezed-quadrature variance ``V(W)`` including ``O(g^2)`` terms."""
    _check_mu(mu, g)
    _check_gamma(gamma_r)
    w2 = np.asarray(omega, dtype=float) ** 2
    gr = gamma_r
    A = w2 + (1 + mu) ** 2
    lin = (w2 + (1 - mu) ** 2) / A  # 1 - 4 mu / A without cancellation
    if Representation(rep) is Representation.POSITIVE_P:
        # first bracket term multiplied through by mu^2 gamma_r (finite at mu = 0)
        pre = 2 * g * g * mu * (w2 + 1 - mu * mu) / (A**2 * (1 - mu * mu))
        b = ((1 - mu + gr) * (1 + mu) - w2) / ((1 - mu) * (w2 + (1 - mu + gr) ** 2))
        b = b - ((1 + mu + gr) * (1 + mu) - w2) / ((1 + mu) * (w2 + (1 + mu + gr) ** 2))
        return lin + pre + 4 * g * g * mu * mu * gr / A**2 * b
    t1 = mu * (1 + w2 - mu * mu) / (gr * (1 - mu * mu))
    t2 = (((1 - mu) * (1 - mu + gr) - 2 * mu * mu) * w2 + (1 - mu + gr) * (1 + mu + mu**2 + mu**3)) / (
        (1 - mu) * (w2 + (1 - mu + gr) ** 2)
    )
    t3 = (((1 + mu) * (1 + mu + gr) + 2 * mu * mu) * w2 + (1 + mu + gr) * (1 + 3 * mu + mu**2 - mu**3)) / (
        (1 + mu) * (w2 + (1 + mu + gr) ** 2)
    )
    return lin + 2 * g * g * gr / A**2 * (t1 + t2 + t3)


def internal_spectrum(mu: float, gamma_r: float, g: float, omega):
    """Positive-P internal normally ordered spectrum, ``(V - 1)/2``."""
    return 0.5 * (nonlinear_spectrum(mu, gamma_r, g, omega, "positive-p") - 1)


def v0(mu, gamma_r: float, g: float):
    """Positive-P external ``V(0)``."""
    _check_mu(mu, g)
    _check_gamma(gamma_r)
    gr = gamma_r
    # (1 + gr)^2 - mu^2 factored to avoid cancellation near threshold at small gamma_r
    corr = 1 + 4 * gr * mu * mu * (gr + 2) / ((1 - mu) * (1 + gr - mu) * (1 + gr + mu))
    return (1 - mu) ** 2 / (1 + mu) ** 2 + 2 * mu * g * g / (1 + mu) ** 4 * corr


# --- optimum drive ---------------------------------------------------------


class Regime(str, enum.Enum):
    QUINTIC = "QuinticNumeric"
    LARGE_GAMMA = "LargeGammaAsymptotic"
    SMALL_GAMMA = "SmallGammaAsymptotic"
    DIRECT_SCAN = "DirectScan"


@dataclass(frozen=True)
class OptimumResult:
    mu_opt: float
    delta: float
    V_opt: float
    regime: Regime

    def as_dict(self) -> dict:
        return {"mu_opt": self.mu_opt, "delta": self.delta, "V_opt": self.V_opt, "regime": self.regime.value}


EDGE = 1e-9


QUINTIC_FORMS = ("original", "rederived")


def quintic(delta, gamma_r: float, g: float, form: str = "original"):
    """Stationarity condition of the near-threshold ``V(0)`` in ``delta = mu - 1``.

    ``"original"``: ``delta^3 (2 delta + G)^2 = g^2 G (4 delta - G)`` with
    ``G = gamma_r (gamma_r + 2)``.  Expanding ``(1 + gamma_r)^2 - mu^2`` to
    first order in ``delta`` gives ``G - 2 delta`` rather than ``G + 2 delta``;
    ``"rederived"`` uses that factor and tracks the direct minimum of
    :func:`v0` at small ``gamma_r`` where the original form does not.
    """
    G = gamma_r * (gamma_r + 2)
    if form == "original":
        lead = (2 * delta + G) ** 2
    elif form == "rederived":
        lead = (G - 2 * delta) ** 2
    else:
        raise ValueError(f"form must be one of {QUINTIC_FORMS}")
    return delta**3 * lead - g * g * G * (4 * delta - G)


def _v0_quiet(mu, gamma_r, g):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PerturbationWarning)
        return v0(mu, gamma_r, g)


def _optimum(mu, gamma_r, g, regime):
    return OptimumResult(float(mu), float(mu - 1), float(_v0_quiet(mu, gamma_r, g)), regime)


def quintic_optimum(gamma_r: float, g: float, form: str = "original") -> OptimumResult:
    """Root of :func:`quintic` closest to threshold, bracketed on ``(-1, 0)``.

    The original form can have three roots in the bracket at moderate
    ``gamma_r``; the one nearest ``delta = 0`` is the near-threshold optimum.
    """
    _check_gamma(gamma_r)
    d = -np.logspace(math.log10(EDGE), math.log10(1 - EDGE), 4001)
    q = quintic(d, gamma_r, g, form)
    flips = np.nonzero(np.sign(q[:-1]) != np.sign(q[1:]))[0]
    if len(flips) == 0:
        raise SolverError(
            f"quintic has no sign change on (-1, 0) for gamma_r={gamma_r}, g={g}: "
            f"values {q[0]:.3g} at {d[0]:.3g} and {q[-1]:.3g} at {d[-1]:.3g}"
        )
    i = flips[0]
    root = optimize.brentq(quintic, d[i + 1], d[i], args=(gamma_r, g, form), xtol=1e-14, rtol=1e-14)
    return _optimum(1 + root, gamma_r, g, Regime.QUINTIC)


def asymptotic_optimum(gamma_r: float, g: float) -> OptimumResult:
    """Closed-form optimum for the branch selected by ``gamma_r`` against ``g^(2/3)``.

    The returned ``V_opt`` is the asymptotic value, not ``v0`` at ``mu_opt``.
    """
    _check_gamma(gamma_r)
    if gamma_r >= g ** (2 / 3):
        d = -(g ** (2 / 3))
        return OptimumResult(1 + d, d, 0.75 * g ** (4 / 3), Regime.LARGE_GAMMA)
    d = -math.sqrt(g) * (2 * gamma_r) ** 0.25
    return OptimumResult(1 + d, d, g * math.sqrt(gamma_r / 2), Regime.SMALL_GAMMA)


def direct_scan_optimum(gamma_r: float, g: float, tol: float = 1e-10) -> OptimumResult:
    """Golden-section minimum of the full ``v0`` over ``mu`` in ``(0, 1)``."""
    _check_gamma(gamma_r)
    mus = 1 - np.logspace(math.log10(EDGE), 0, 4001)[::-1][1:]
    mus = mus[mus > 0]
    vals = _v0_quiet(mus, gamma_r, g)
    i = int(np.argmin(vals))
    i = min(max(i, 1), len(mus) - 2)
    res = optimize.minimize_scalar(
        lambda m: float(_v0_quiet(m, gamma_r, g)),
        bracket=(mus[i - 1], mus[i], mus[i + 1]),
        method="golden",
        tol=tol,
    )
    return _optimum(res.x, gamma_r, g, Regime.DIRECT_SCAN)


def optimal_drive(gamma_r: float, g: float, method: str = "DirectScan") -> OptimumResult:
    """Optimum by ``"DirectScan"`` (authoritative), ``"QuinticNumeric"`` or ``"Asymptotic"``."""
    methods = {
        "DirectScan": direct_scan_optimum,
        "QuinticNumeric": quintic_optimum,
        "Asymptotic": asymptotic_optimum,
    }
    if method not in methods:
        raise ValueError(f"method must be one of {sorted(methods)}")
    return methods[method](gamma_r, g)


# --- tabulation ------------------------------------------------------------


def tabulate_spectrum(path, mu: float, gamma_r: float, g: float, omega, rep="positive-p") -> np.ndarray:
    """Write ``V(W)`` on ``omega`` in the estimator CSV layout; returns ``V``."""
    omega = np.asarray(omega, dtype=float)
    V = nonlinear_spectrum(mu, gamma_r, g, omega, rep)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["omega", "V", "stderr", "imag_residual"])
        for o, v in zip(omega, V):
            w.writerow([repr(float(o)), repr(float(v)), "nan", "0.0"])
    return V
