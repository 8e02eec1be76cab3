"""Moments and output squeezing spectra from trajectory ensembles.

Estimators are accumulators: ``add`` a record (or a block of records), ``merge``
partial accumulators, and read ``result()``.  Sums are kept per error batch
(trajectory index ``i`` goes to batch ``i * n_batches // n_traj``), so results
do not depend on the order blocks arrive in, and standard errors come from
the spread of the batch means.

Spectrum normalisation: with ``F(W) = int_0^T q(t) exp(iWt) dt`` over the
analysis window ``T``,

* positive-P: ``V(W) = 1 + 2 gamma_out <F(W) F(-W)> / T`` (normally ordered,
  complex trajectories, no conjugation);
* Wigner: the output quadrature is rebuilt per bin as
  ``sqrt(2 gamma_out) q - xi_in`` with ``xi_in`` the binned input noise, and
  ``V(W) = <|F_out(W)|^2> / T``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable

import numpy as np

from .dynamics import Representation
from .integrator import MIN_BINS, PairedRecord, TrajectoryRecord

N_BATCHES = 10


class EstimatorError(ValueError):
    pass


@dataclass(frozen=True)
class QuadratureSelector:
    """Mode ``j`` and homodyne angle ``theta``; ``theta = 0`` is x, ``pi/2`` is y."""

    j: int = 1
    theta: float = math.pi / 2

    def __post_init__(self):
        if self.j not in (1, 2):
            raise EstimatorError("mode index must be 1 or 2")
        object.__setattr__(self, "theta", float(self.theta) % (2 * math.pi))


X_QUADRATURE = QuadratureSelector(1, 0.0)
Y_QUADRATURE = QuadratureSelector(1, math.pi / 2)


def _batch_ids(index: np.ndarray, n_traj: int, n_batches: int) -> np.ndarray:
    return (np.asarray(index, dtype=np.int64) * n_batches) // n_traj


def _member(rec, member: str) -> TrajectoryRecord:
    if isinstance(rec, PairedRecord):
        return getattr(rec, member)
    if member == "linear":
        raise EstimatorError("record is not paired")
    return rec


def _batch_stats(means: np.ndarray, counts: np.ndarray):
    """Mean-of-batches standard error; None when a batch is empty."""
    if (counts == 0).any() or len(counts) < N_BATCHES:
        return None
    return np.std(means, axis=0, ddof=1) / math.sqrt(len(counts))


# --- moments ---------------------------------------------------------------

MOMENT_NAMES = ("x1x1", "y1y1", "x2", "y2", "x1y1y2", "x1", "y1", "x1y1")


@dataclass
class MomentSet:
    """Time-and-ensemble averaged c-number moments.

    ``ordering`` is ``"normal"`` (positive-P) or ``"symmetric"`` (Wigner).
    ``stderr`` is ``None`` when fewer than ten error batches are populated.
    """

    ordering: str
    values: dict
    stderr: dict | None
    imag: dict
    n_traj: int
    n_divergent: int = 0

    @property
    def y1_squared(self) -> float:
        """Operator moment ``<y1^2>`` (commutator restored for normal ordering)."""
        v = self.values["y1y1"]
        return 1.0 + v if self.ordering == "normal" else v

    @property
    def y1_squared_offset(self) -> float:
        """``<y1^2> - 1/2``: the form quoted for near-threshold runs."""
        return self.y1_squared - 0.5

    @property
    def y1_squared_stderr(self) -> float | None:
        return None if self.stderr is None else self.stderr["y1y1"]

    def to_json(self) -> str:
        return json.dumps(
            {
                "schema": "opo-squeeze/moments/1",
                "ordering": self.ordering,
                "n_traj": self.n_traj,
                "n_divergent": self.n_divergent,
                "values": self.values,
                "stderr": self.stderr,
                "imag": self.imag,
                "y1_squared": self.y1_squared,
                "y1_squared_minus_half": self.y1_squared_offset,
            },
            indent=2,
        )


class MomentAccumulator:
    def __init__(self, n_traj: int, n_batches: int = N_BATCHES, member: str = "nonlinear"):
        self.n_traj = n_traj
        self.n_batches = n_batches
        self.member = member
        self.rep: Representation | None = None
        self.counts = np.zeros(n_batches, dtype=np.int64)
        self.sums = {k: np.zeros(n_batches, dtype=complex) for k in MOMENT_NAMES}
        self.n_divergent = 0

    def add(self, rec) -> None:
        r = _member(rec, self.member)
        self.rep = r.rep
        ok = ~r.divergent
        self.n_divergent += int((~ok).sum())
        bid = _batch_ids(r.index[ok], self.n_traj, self.n_batches)
        np.add.at(self.counts, bid, 1)
        for k in MOMENT_NAMES:
            np.add.at(self.sums[k], bid, r.moments[k][ok])

    def merge(self, other: "MomentAccumulator") -> None:
        if other.rep is not None:
            self.rep = other.rep
        self.counts += other.counts
        self.n_divergent += other.n_divergent
        for k in MOMENT_NAMES:
            self.sums[k] += other.sums[k]

    def result(self) -> MomentSet:
        if self.rep is None:
            raise EstimatorError("no trajectories accumulated")
        total = self.counts.sum()
        values, imag, errs = {}, {}, {}
        with np.errstate(invalid="ignore", divide="ignore"):
            for k in MOMENT_NAMES:
                mean = self.sums[k].sum() / total
                values[k] = float(mean.real)
                imag[k] = float(mean.imag)
                errs[k] = _batch_stats((self.sums[k] / self.counts).real, self.counts)
        stderr = None if any(v is None for v in errs.values()) else {k: float(v) for k, v in errs.items()}
        return MomentSet(self.rep.ordering, values, stderr, imag, int(total), self.n_divergent)


def estimate_moments(ensemble: Iterable, rep=None, member: str = "nonlinear") -> MomentSet:
    """Moments of an in-memory ensemble (records or paired records)."""
    recs = list(ensemble)
    acc = MomentAccumulator(_count(recs), member=member)
    for r in recs:
        acc.add(r)
    out = acc.result()
    if rep is not None and Representation(rep).ordering != out.ordering:
        raise EstimatorError("ensemble representation does not match")
    return out


@dataclass
class TripleEstimate:
    value: float
    stderr: float | None
    imag: float
    ordering: str


def estimate_triple(ensemble: Iterable, rep=None, member: str = "nonlinear") -> TripleEstimate:
    """Steady-state ``<x1 y1 y2>`` (c-number average, physical amplitude units)."""
    m = estimate_moments(ensemble, rep, member)
    err = None if m.stderr is None else m.stderr["x1y1y2"]
    return TripleEstimate(m.values["x1y1y2"], err, m.imag["x1y1y2"], m.ordering)


def _count(recs) -> int:
    n = 0
    for r in recs:
        n = max(n, int(np.max(_member(r, "nonlinear").index)) + 1)
    return n


# --- spectra ---------------------------------------------------------------


@dataclass
class SpectrumEstimate:
    """External spectral variance on a symmetric frequency grid (shot noise = 1)."""

    omega: np.ndarray
    V: np.ndarray
    stderr: np.ndarray | None
    imag_residual: np.ndarray
    window: float
    n_traj: int
    kind: str = "V"
    n_divergent: int = 0

    def at(self, omega: float) -> int:
        """Index of the grid frequency closest to ``omega``."""
        return int(np.argmin(np.abs(self.omega - omega)))

    def value_at(self, omega: float) -> float:
        return float(self.V[self.at(omega)])

    def stderr_at(self, omega: float) -> float:
        return float(self.stderr[self.at(omega)])

    def band(self, omega_max: float) -> np.ndarray:
        return np.abs(self.omega) <= omega_max + 1e-12

    def to_csv(self, path, extra: dict | None = None) -> None:
        """Columns ``omega, V, stderr, imag_residual`` plus any ``extra`` columns."""
        extra = extra or {}
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["omega", self.kind, "stderr", "imag_residual", *extra])
            err = self.stderr if self.stderr is not None else np.full_like(self.V, np.nan)
            for i in range(len(self.omega)):
                w.writerow(
                    [repr(float(self.omega[i])), repr(float(self.V[i])), repr(float(err[i])),
                     repr(float(self.imag_residual[i])), *(repr(float(v[i])) for v in extra.values())]
                )


def _output_series(r: TrajectoryRecord, sel: QuadratureSelector, gamma_out: float) -> np.ndarray:
    """Per-bin measured quadrature (Wigner) or scaled intracavity quadrature (+P)."""
    if sel.j == 1:
        x, y = r.x1, r.y1
        ch = 0
    else:
        if r.x2 is None:
            raise EstimatorError("pump quadratures were not recorded (use record_pump)")
        x, y = r.x2, r.y2
        ch = 1
    c, s_ = math.cos(sel.theta), math.sin(sel.theta)
    q = c * x + s_ * y
    out = math.sqrt(2.0 * gamma_out) * q
    if r.rep is Representation.WIGNER:
        if r.noise is None:
            raise EstimatorError("Wigner spectra need the recorded noise sums")
        dw = r.noise[:, :, ch]
        # input quadratures xi_x = sqrt2 Re(dw)/dtau, xi_y = sqrt2 Im(dw)/dtau
        xi = math.sqrt(2.0) * (c * dw.real + s_ * dw.imag) / r.bin_duration
        out = out - xi
    return out


class _SpectrumBase:
    def __init__(self, n_traj, sel, omega_max, n_batches, gamma_out):
        self.n_traj = n_traj
        self.sel = sel
        self.omega_max = omega_max
        self.n_batches = n_batches
        self.gamma_out = gamma_out
        self.rep = None
        self.window = None
        self.h = None
        self.K = None
        self.counts = np.zeros(n_batches, dtype=np.int64)
        self.n_divergent = 0

    def _setup(self, r: TrajectoryRecord):
        if r.n_bins < MIN_BINS:
            raise EstimatorError(f"analysis window has {r.n_bins} bins, need {MIN_BINS}")
        if self.window is None:
            self.rep = r.rep
            self.h = r.bin_duration
            self.window = r.window
            wmax = self.omega_max if self.omega_max is not None else math.pi / (4 * self.h)
            self.K = int(math.floor(wmax * self.window / (2 * math.pi) + 1e-9))
            self.K = min(self.K, r.n_bins // 2 - 1)
            self._alloc()
        elif r.rep is not self.rep or abs(r.window - self.window) > 1e-9:
            raise EstimatorError("records with different representation or window")

    def _transform(self, out: np.ndarray):
        """``(F0, F_k, F_-k)`` for k = 1..K; F0 is not mean-subtracted."""
        f0 = self.h * out.sum(axis=1)
        centred = out - out.mean(axis=1, keepdims=True)
        F = self.h * np.fft.fft(centred, axis=1)
        # exp(+i W_k t_n) = fft index -k
        K = self.K
        fpos = F[:, -1 : -K - 1 : -1]
        fneg = F[:, 1 : K + 1]
        return f0, fpos, fneg

    def _merge_common(self, other):
        if other.window is None:
            return False
        if self.window is None:
            self.rep, self.h, self.window, self.K = other.rep, other.h, other.window, other.K
            self._alloc()
        self.counts += other.counts
        self.n_divergent += other.n_divergent
        return True

    def omegas(self) -> np.ndarray:
        k = np.arange(1, self.K + 1)
        w = 2 * math.pi * k / self.window
        return np.concatenate([-w[::-1], [0.0], w])

    def _assemble(self, pk_batches, cov0_batches, base, kind):
        """Combine per-batch mean products into V on the symmetric grid."""
        T = self.window
        counts = self.counts
        total = counts.sum()
        if total == 0:
            raise EstimatorError("no trajectories accumulated")
        pk = pk_batches.sum(axis=0) / total
        with np.errstate(invalid="ignore", divide="ignore"):
            pk_b = pk_batches / counts[:, None]
        v_pos = base + pk.real / T
        im_pos = pk.imag / T
        v0 = base + cov0_batches[1].real / T
        im0 = cov0_batches[1].imag / T
        err_pos = _batch_stats(pk_b.real / T, counts)
        err0 = _batch_stats(cov0_batches[0].real / T, counts)
        sym = lambda pos, zero: np.concatenate([pos[::-1], [zero], pos])
        V = sym(v_pos, v0)
        err = None if err_pos is None or err0 is None else sym(err_pos, err0)
        return SpectrumEstimate(self.omegas(), V, err, sym(im_pos, im0), T, int(total), kind, self.n_divergent)


class SpectrumAccumulator(_SpectrumBase):
    """Output spectrum ``V(W)`` for the selected quadrature."""

    def __init__(self, n_traj, sel: QuadratureSelector = Y_QUADRATURE, omega_max=None,
                 n_batches=N_BATCHES, member="nonlinear", gamma_out=1.0):
        super().__init__(n_traj, sel, omega_max, n_batches, gamma_out)
        self.member = member

    def _alloc(self):
        nb = self.n_batches
        self.sum_p = np.zeros((nb, self.K), dtype=complex)
        self.sum_f0 = np.zeros(nb, dtype=complex)
        self.sum_f0sq = np.zeros(nb, dtype=complex)

    def add(self, rec) -> None:
        r = _member(rec, self.member)
        self._setup(r)
        ok = ~r.divergent
        self.n_divergent += int((~ok).sum())
        bid = _batch_ids(r.index[ok], self.n_traj, self.n_batches)
        f0, fp, fn = self._transform(_output_series(r, self.sel, self.gamma_out)[ok])
        np.add.at(self.counts, bid, 1)
        np.add.at(self.sum_p, bid, fp * fn)
        np.add.at(self.sum_f0, bid, f0)
        np.add.at(self.sum_f0sq, bid, f0 * f0)

    def merge(self, other: "SpectrumAccumulator") -> None:
        if self._merge_common(other):
            self.sum_p += other.sum_p
            self.sum_f0 += other.sum_f0
            self.sum_f0sq += other.sum_f0sq

    def result(self) -> SpectrumEstimate:
        total = self.counts.sum()
        if total == 0 or self.window is None:
            raise EstimatorError("no trajectories accumulated")
        m = self.sum_f0.sum() / total
        with np.errstate(invalid="ignore", divide="ignore"):
            cov_b = self.sum_f0sq / self.counts - m * m
        cov = self.sum_f0sq.sum() / total - m * m
        base = 1.0 if self.rep is Representation.POSITIVE_P else 0.0
        return self._assemble(self.sum_p, (cov_b, cov), base, "V")


class DeltaSpectrumAccumulator(_SpectrumBase):
    """``V_nonlinear - V_linear`` from paired runs sharing their noise.

    With ``d = F_nl - F_lin`` the product difference is
    ``d(W) F_lin(-W) + F_lin(W) d(-W) + d(W) d(-W)``, so the (large) linear
    part never enters and the sampling error is set by the small difference.
    """

    def __init__(self, n_traj, sel: QuadratureSelector = Y_QUADRATURE, omega_max=None,
                 n_batches=N_BATCHES, gamma_out=1.0):
        super().__init__(n_traj, sel, omega_max, n_batches, gamma_out)

    def _alloc(self):
        nb = self.n_batches
        self.sum_p = np.zeros((nb, self.K), dtype=complex)
        self.sum_d0 = np.zeros(nb, dtype=complex)
        self.sum_l0 = np.zeros(nb, dtype=complex)
        self.sum_x0 = np.zeros(nb, dtype=complex)

    def add(self, rec) -> None:
        if not isinstance(rec, PairedRecord):
            raise EstimatorError("delta spectrum needs paired records")
        nl, li = rec.nonlinear, rec.linear
        if not np.array_equal(nl.index, li.index):
            raise EstimatorError("paired records disagree on trajectory indices")
        self._setup(nl)
        ok = ~(nl.divergent | li.divergent)
        self.n_divergent += int((~ok).sum())
        bid = _batch_ids(nl.index[ok], self.n_traj, self.n_batches)
        lin_out = _output_series(li, self.sel, self.gamma_out)[ok]
        # the Wigner input-noise term is common to both and cancels in d
        c, s_ = math.cos(self.sel.theta), math.sin(self.sel.theta)
        if self.sel.j == 1:
            dq = c * (nl.x1 - li.x1) + s_ * (nl.y1 - li.y1)
        else:
            dq = c * (nl.x2 - li.x2) + s_ * (nl.y2 - li.y2)
        d_out = math.sqrt(2.0 * self.gamma_out) * dq[ok]
        l0, lp, ln = self._transform(lin_out)
        d0, dp, dn = self._transform(d_out)
        np.add.at(self.counts, bid, 1)
        np.add.at(self.sum_p, bid, dp * ln + lp * dn + dp * dn)
        np.add.at(self.sum_d0, bid, d0)
        np.add.at(self.sum_l0, bid, l0)
        np.add.at(self.sum_x0, bid, 2 * d0 * l0 + d0 * d0)

    def merge(self, other: "DeltaSpectrumAccumulator") -> None:
        if self._merge_common(other):
            self.sum_p += other.sum_p
            self.sum_d0 += other.sum_d0
            self.sum_l0 += other.sum_l0
            self.sum_x0 += other.sum_x0

    def result(self) -> SpectrumEstimate:
        total = self.counts.sum()
        if total == 0 or self.window is None:
            raise EstimatorError("no trajectories accumulated")
        md = self.sum_d0.sum() / total
        ml = self.sum_l0.sum() / total
        shift = 2 * md * ml + md * md
        with np.errstate(invalid="ignore", divide="ignore"):
            cov_b = self.sum_x0 / self.counts - shift
        cov = self.sum_x0.sum() / total - shift
        return self._assemble(self.sum_p, (cov_b, cov), 0.0, "dV")


def bin_response(omega, dtau: float, stride: int = 1):
    """Power response of one recorded bin to a signal at frequency ``omega``.

    A bin is the mean of ``stride`` step midpoints ``(x_n + x_{n+1}) / 2``, so
    the intracavity (normally ordered) part of a spectrum is seen multiplied
    by ``cos^2(W dtau / 2) * [sin(m W dtau / 2) / (m sin(W dtau / 2))]^2``.
    Multiply analytic curves by this before comparing at high frequency.
    """
    w = np.asarray(omega, dtype=float)
    half = 0.5 * w * dtau
    num = np.sin(stride * half)
    den = stride * np.sin(half)
    ratio = np.divide(num, den, out=np.ones_like(w), where=np.abs(den) > 1e-300)
    return np.cos(half) ** 2 * ratio**2


def estimate_output_spectrum(ensemble: Iterable, rep=None, sel: QuadratureSelector = Y_QUADRATURE,
                             omega_max=None, member="nonlinear", gamma_out=1.0) -> SpectrumEstimate:
    recs = list(ensemble)
    acc = SpectrumAccumulator(_count(recs), sel, omega_max, member=member, gamma_out=gamma_out)
    for r in recs:
        acc.add(r)
    if rep is not None and Representation(rep) is not acc.rep:
        raise EstimatorError("ensemble representation does not match")
    return acc.result()


def estimate_delta_spectrum(paired: Iterable, rep=None, sel: QuadratureSelector = Y_QUADRATURE,
                            omega_max=None, gamma_out=1.0) -> SpectrumEstimate:
    recs = list(paired)
    acc = DeltaSpectrumAccumulator(_count(recs), sel, omega_max, gamma_out=gamma_out)
    for r in recs:
        acc.add(r)
    if rep is not None and Representation(rep) is not acc.rep:
        raise EstimatorError("ensemble representation does not match")
    return acc.result()
