"""Drift and noise terms of the positive-P and truncated-Wigner OPO equations.

Phase-space states are complex arrays with the component index first and any
number of trailing (trajectory) axes:

* positive-P: ``(alpha1, alpha1+, alpha2, alpha2+)``, shape ``(4, ...)``
* truncated Wigner: ``(alpha1, alpha2)``, shape ``(2, ...)``

Noise increments are ``(2, ...)`` arrays: real Wiener increments for
positive-P, complex ones with ``<dw dw*> = dtau`` for Wigner.  Time is
dimensionless (``gamma1 = 1``).
"""

from __future__ import annotations

import enum

import numpy as np

from .model import ScaledParams


class Representation(str, enum.Enum):
    POSITIVE_P = "positive-p"
    WIGNER = "wigner"

    @property
    def n_components(self) -> int:
        return 4 if self is Representation.POSITIVE_P else 2

    @property
    def ordering(self) -> str:
        """Operator ordering reproduced by c-number averages."""
        return "normal" if self is Representation.POSITIVE_P else "symmetric"


class LinearizationMode(str, enum.Enum):
    FULL = "full"
    LINEARIZED = "linearized"


def _check_shape(rep: Representation, state: np.ndarray) -> None:
    if state.shape[0] != rep.n_components:
        raise ValueError(
            f"{rep.value} state needs {rep.n_components} components, got shape {state.shape}"
        )


def drift(rep, mode, state: np.ndarray, s: ScaledParams) -> np.ndarray:
    """Deterministic part of ``d(state)/dtau``."""
    rep = Representation(rep)
    mode = LinearizationMode(mode)
    _check_shape(rep, state)
    chi = s.chi
    gr = s.gamma_r
    e = s.drive
    out = np.empty_like(state, dtype=complex)
    if rep is Representation.POSITIVE_P:
        a1, a1p, a2, a2p = state
    else:
        a1, a2 = state
        a1p, a2p = np.conj(a1), np.conj(a2)

    if mode is LinearizationMode.FULL:
        d1 = -a1 + chi * a1p * a2
        d2 = e - gr * a2 - 0.5 * chi * a1 * a1
        if rep is Representation.POSITIVE_P:
            out[0] = d1
            out[1] = -a1p + chi * a1 * a2p
            out[2] = d2
            out[3] = e - gr * a2p - 0.5 * chi * a1p * a1p
        else:
            out[0] = d1
            out[1] = d2
        return out

    # first order in fluctuations about the below-threshold steady state
    pump = s.pump_amplitude
    if rep is Representation.POSITIVE_P:
        out[0] = -a1 + (chi * pump) * a1p
        out[1] = -a1p + (chi * pump) * a1
        out[2] = -gr * (a2 - pump)
        out[3] = -gr * (a2p - pump)
    else:
        out[0] = -a1 + (chi * pump) * a1p
        out[1] = -gr * (a2 - pump)
    return out


def noise_increment(rep, mode, state: np.ndarray, s: ScaledParams, w: np.ndarray) -> np.ndarray:
    """Stochastic part of ``d(state)`` for the increments ``w``.

    Positive-P signal noise is ``sqrt(chi * alpha2) dw1`` (principal branch)
    and the pump rows are noiseless.  Wigner noise is additive.
    """
    rep = Representation(rep)
    mode = LinearizationMode(mode)
    _check_shape(rep, state)
    out = np.zeros_like(state, dtype=complex)
    if rep is Representation.POSITIVE_P:
        if mode is LinearizationMode.FULL:
            out[0] = np.sqrt(s.chi * state[2]) * w[0]
            out[1] = np.sqrt(s.chi * state[3]) * w[1]
        else:
            amp = np.sqrt(s.chi * s.pump_amplitude)
            out[0] = amp * w[0]
            out[1] = amp * w[1]
    else:
        out[0] = w[0]
        out[1] = np.sqrt(s.gamma_r) * w[1]
    return out


def ito_correction(rep, mode, state: np.ndarray, s: ScaledParams) -> np.ndarray:
    """Drift correction between Ito and Stratonovich forms.

    ``0.5 * sum_{j,k} B_jk d(B_ik)/d(state_j)`` with the diffusion matrix ``B``.
    The positive-P signal amplitude depends only on the noiseless pump rows
    and the Wigner noise is constant, so this is zero; it is evaluated
    explicitly rather than assumed.
    """
    rep = Representation(rep)
    mode = LinearizationMode(mode)
    _check_shape(rep, state)
    out = np.zeros_like(state, dtype=complex)
    if rep is Representation.POSITIVE_P and mode is LinearizationMode.FULL:
        chi = s.chi
        # B[0,0] = sqrt(chi a2), B[1,1] = sqrt(chi a2+); B[2,:] = B[3,:] = 0
        b = np.zeros((4, 2) + state.shape[1:], dtype=complex)
        b[0, 0] = np.sqrt(chi * state[2])
        b[1, 1] = np.sqrt(chi * state[3])
        # d B[0,0] / d a2 and d B[1,1] / d a2+
        db = np.zeros((4, 4, 2) + state.shape[1:], dtype=complex)  # [i, j, k]
        with np.errstate(divide="ignore", invalid="ignore"):
            db[0, 2, 0] = np.where(b[0, 0] != 0, 0.5 * chi / b[0, 0], 0)
            db[1, 3, 1] = np.where(b[1, 1] != 0, 0.5 * chi / b[1, 1], 0)
        for i in range(4):
            out[i] = 0.5 * np.einsum("jk...,jk...->...", b, db[i])
    return out


def quadratures(rep, state: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """``(x1, y1, x2, y2)`` with ``x = a + a+`` and ``y = (a - a+)/i``.

    Positive-P quadratures are complex in general; Wigner ones are real.
    """
    rep = Representation(rep)
    _check_shape(rep, state)
    if rep is Representation.POSITIVE_P:
        a1, a1p, a2, a2p = state
        return a1 + a1p, -1j * (a1 - a1p), a2 + a2p, -1j * (a2 - a2p)
    a1, a2 = state
    return 2.0 * a1.real, 2.0 * a1.imag, 2.0 * a2.real, 2.0 * a2.imag
