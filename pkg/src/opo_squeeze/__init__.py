"""Squeezing limits of the degenerate optical parametric oscillator.

Stochastic phase-space simulation (positive-P and truncated Wigner),
spectrum and moment estimators, and closed-form perturbative results.
"""

__version__ = "0.1.0"
