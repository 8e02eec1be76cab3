"""Parameters, unit scalings and classical steady states of the degenerate OPO.

All simulator and analytic code works in units where the signal amplitude
decay rate is one: time is ``tau = gamma1 * t`` and frequencies are measured
in units of ``gamma1``.  The physics is then fixed by three numbers,
``(g, mu, gamma_r)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np


class ParameterError(ValueError):
    """Raised for physically invalid parameter sets."""


class WeakCouplingWarning(UserWarning):
    """The nonlinearity is large enough that the small-g expansion is doubtful."""


@dataclass(frozen=True)
class PhysicalParams:
    """Rates and drive in physical units.

    Thermal occupations are carried so that the zero-temperature restriction
    is explicit; nonzero values are rejected.
    """

    gamma1: float
    gamma2: float
    chi: float
    drive: float
    nbar1: float = 0.0
    nbar2: float = 0.0

    def __post_init__(self):
        for name in ("gamma1", "gamma2", "chi"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ParameterError(f"{name} must be positive and finite, got {v!r}")
        if not (self.drive >= 0 and math.isfinite(self.drive)):
            raise ParameterError(f"drive must be non-negative, got {self.drive!r}")
        if self.nbar1 != 0 or self.nbar2 != 0:
            raise ParameterError("thermal occupations other than zero are not supported")


@dataclass(frozen=True)
class ScaledParams:
    """Dimensionless nonlinearity ``g``, drive ``mu = E/E_c`` and ``gamma_r = gamma2/gamma1``.

    Derived quantities (``n_c``, ``i_c``, ``e_c``, ``chi``, ``drive``) are
    expressed in ``gamma1 = 1`` units.
    """

    g: float
    mu: float
    gamma_r: float
    n_c: float = field(init=False)
    i_c: float = field(init=False)
    e_c: float = field(init=False)

    def __post_init__(self):
        if not (self.g > 0 and math.isfinite(self.g)):
            raise ParameterError(f"g must be positive and finite, got {self.g!r}")
        if not (self.gamma_r > 0 and math.isfinite(self.gamma_r)):
            raise ParameterError(f"gamma_r must be positive, got {self.gamma_r!r}")
        if not (self.mu >= 0 and math.isfinite(self.mu)):
            raise ParameterError(f"mu must be non-negative, got {self.mu!r}")
        if self.g > 0.1:
            warnings.warn(
                f"g = {self.g:g} > 0.1: nonlinear corrections are not small",
                WeakCouplingWarning,
                stacklevel=3,
            )
        n_c = 1.0 / (2.0 * self.g**2 * self.gamma_r)
        object.__setattr__(self, "n_c", n_c)
        object.__setattr__(self, "i_c", n_c * self.gamma_r / 2.0)
        object.__setattr__(self, "e_c", self.gamma_r / self.chi)

    @classmethod
    def from_g2(cls, g2: float, mu: float, gamma_r: float) -> "ScaledParams":
        if not g2 > 0:
            raise ParameterError(f"g^2 must be positive, got {g2!r}")
        return cls(math.sqrt(g2), mu, gamma_r)

    @property
    def g2(self) -> float:
        return self.g**2

    @property
    def chi(self) -> float:
        """Coupling in ``gamma1`` units, ``g * sqrt(2 gamma_r)``."""
        return self.g * math.sqrt(2.0 * self.gamma_r)

    @property
    def drive(self) -> float:
        """Pump drive ``E/gamma1 = mu * E_c``."""
        return self.mu * math.sqrt(self.gamma_r / 2.0) / self.g

    @property
    def pump_amplitude(self) -> float:
        """Below-threshold classical pump amplitude ``E / gamma2``."""
        return self.drive / self.gamma_r

    def with_mu(self, mu: float) -> "ScaledParams":
        return ScaledParams(self.g, mu, self.gamma_r)


def scale_params(p: PhysicalParams) -> ScaledParams:
    g = p.chi / math.sqrt(2.0 * p.gamma1 * p.gamma2)
    mu = p.chi * p.drive / (p.gamma1 * p.gamma2)
    return ScaledParams(g, mu, p.gamma2 / p.gamma1)


def unscale_params(s: ScaledParams, gamma1: float = 1.0) -> PhysicalParams:
    """Inverse of :func:`scale_params` at a chosen ``gamma1``."""
    gamma2 = s.gamma_r * gamma1
    chi = s.g * math.sqrt(2.0 * gamma1 * gamma2)
    drive = s.mu * gamma1 * gamma2 / chi
    return PhysicalParams(gamma1, gamma2, chi, drive)


def critical_drive(p: PhysicalParams) -> float:
    return p.gamma1 * p.gamma2 / p.chi


def threshold_photon_number(p: PhysicalParams) -> float:
    """Pump photon number at threshold, ``E_c^2 / gamma2^2``."""
    return critical_drive(p) ** 2 / p.gamma2**2


def threshold_input_flux(p: PhysicalParams) -> float:
    """Input photon flux at threshold, ``E_c^2 / (2 gamma2)``."""
    return critical_drive(p) ** 2 / (2.0 * p.gamma2)


@dataclass(frozen=True)
class ClassicalState:
    """Noise-free steady state.  ``branch`` is ``"below"``, ``"above+"`` or ``"above-"``."""

    alpha1: complex
    alpha2: complex
    branch: str

    @property
    def above_threshold(self) -> bool:
        return self.branch != "below"

    def as_phase_state(self, representation) -> np.ndarray:
        """Column state vector for :mod:`opo_squeeze.dynamics` (one trajectory)."""
        from .dynamics import Representation

        rep = Representation(representation)
        if rep is Representation.POSITIVE_P:
            comps = [self.alpha1, np.conj(self.alpha1), self.alpha2, np.conj(self.alpha2)]
        else:
            comps = [self.alpha1, self.alpha2]
        return np.array(comps, dtype=complex).reshape(-1, 1)


def classical_steady_state(s: ScaledParams) -> list[ClassicalState]:
    """Steady states of the classical equations (one below threshold, two above)."""
    e = s.drive
    e_c = s.e_c
    if s.mu < 1.0:
        return [ClassicalState(0j, complex(e / s.gamma_r), "below")]
    a1 = math.sqrt(2.0 * (e - e_c) / s.chi)
    a2 = complex(1.0 / s.chi)
    return [ClassicalState(complex(a1), a2, "above+"), ClassicalState(complex(-a1), a2, "above-")]
