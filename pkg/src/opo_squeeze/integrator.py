"""Semi-implicit midpoint integration of trajectory ensembles.

Every trajectory owns a Philox stream keyed by ``(seed, trajectory index)``.
The stream is consumed in a fixed order (initial-condition normals, then per
step ``noise_substeps x channels`` normals), so a trajectory's output does not
depend on how trajectories are grouped into blocks or workers, and paired
linear/nonlinear runs see identical noise.

Trajectories are integrated in vectorised blocks; a :class:`TrajectoryRecord`
holds one block (one or more trajectories stacked along axis 0).
"""

from __future__ import annotations

import copy
import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .dynamics import LinearizationMode, Representation, drift, noise_increment, quadratures
from .model import ParameterError, ScaledParams

log = logging.getLogger(__name__)

DEFAULT_ITERATIONS = 4
MIN_BINS = 64
UNRELIABLE_FRACTION = 1e-3
MOMENT_KEYS = ("x1", "y1", "x2", "y2", "x1x1", "y1y1", "x1y1", "x1y1y2")


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class SimGrid:
    """Time grid.  ``tau_discard`` defaults to ``tau_max / 2``.

    ``noise_substeps`` draws each step's Wiener increment as a sum of that many
    finer increments, so that runs at ``dtau`` and ``dtau / m`` can share one
    Brownian path.
    """

    dtau: float = 0.1
    tau_max: float = 1000.0
    tau_discard: float | None = None
    sample_stride: int = 1
    noise_substeps: int = 1

    def __post_init__(self):
        if not self.dtau > 0:
            raise GridError(f"dtau must be positive, got {self.dtau}")
        if self.tau_discard is None:
            object.__setattr__(self, "tau_discard", self.tau_max / 2)
        if not 0 <= self.tau_discard < self.tau_max:
            raise GridError("need 0 <= tau_discard < tau_max")
        if self.sample_stride < 1 or self.noise_substeps < 1:
            raise GridError("sample_stride and noise_substeps must be >= 1")
        for name, tau in (("tau_max", self.tau_max), ("tau_discard", self.tau_discard)):
            n = tau / self.dtau
            if abs(n - round(n)) > 1e-6 * max(1.0, n):
                raise GridError(f"{name} = {tau} is not a whole number of steps of {self.dtau}")
        kept = self.n_steps - self.n_discard
        if kept % self.sample_stride:
            raise GridError("recorded steps are not a whole number of bins")
        if self.n_bins < MIN_BINS:
            raise GridError(f"only {self.n_bins} bins recorded, need at least {MIN_BINS}")

    @property
    def n_steps(self) -> int:
        return int(round(self.tau_max / self.dtau))

    @property
    def n_discard(self) -> int:
        return int(round(self.tau_discard / self.dtau))

    @property
    def n_bins(self) -> int:
        return (self.n_steps - self.n_discard) // self.sample_stride

    @property
    def bin_duration(self) -> float:
        return self.dtau * self.sample_stride

    @property
    def window(self) -> float:
        """Length of the recorded (analysis) window."""
        return self.n_bins * self.bin_duration


@dataclass(frozen=True)
class EnsembleSpec:
    n_traj: int
    seed: int
    rep: Representation = Representation.POSITIVE_P
    mode: LinearizationMode = LinearizationMode.FULL
    paired: bool = False
    iterations: int = DEFAULT_ITERATIONS
    record_pump: bool = False

    def __post_init__(self):
        object.__setattr__(self, "rep", Representation(self.rep))
        object.__setattr__(self, "mode", LinearizationMode(self.mode))
        if self.n_traj < 2:
            raise ParameterError("an ensemble needs at least 2 trajectories")
        if self.seed < 0:
            raise ParameterError("seed must be non-negative")
        if self.iterations < 1:
            raise ParameterError("need at least one midpoint iteration")

    @property
    def modes(self) -> tuple[LinearizationMode, ...]:
        if self.paired:
            return (LinearizationMode.FULL, LinearizationMode.LINEARIZED)
        return (self.mode,)


@dataclass
class TrajectoryRecord:
    """Binned output of a block of trajectories.

    ``x1, y1`` (and ``x2, y2`` if recorded) are bin averages of the midpoint
    states, shape ``(n, n_bins)``.  ``noise`` holds per-bin sums of the Wiener
    increments, shape ``(n, n_bins, 2)``.  ``moments`` maps the names in
    ``MOMENT_KEYS`` to per-trajectory time averages over the recorded window.
    """

    index: np.ndarray
    rep: Representation
    mode: LinearizationMode
    bin_duration: float
    tau_start: float
    x1: np.ndarray
    y1: np.ndarray
    noise: np.ndarray
    moments: dict
    initial: np.ndarray
    final: np.ndarray
    divergent: np.ndarray
    x2: np.ndarray | None = None
    y2: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.index)

    @property
    def n_bins(self) -> int:
        return self.x1.shape[1]

    @property
    def window(self) -> float:
        return self.n_bins * self.bin_duration

    def bin_times(self) -> np.ndarray:
        return self.tau_start + self.bin_duration * (np.arange(self.n_bins) + 0.5)

    def select(self, rows) -> "TrajectoryRecord":
        rows = np.atleast_1d(np.asarray(rows))
        pick = lambda a: None if a is None else a[rows]
        return TrajectoryRecord(
            index=self.index[rows],
            rep=self.rep,
            mode=self.mode,
            bin_duration=self.bin_duration,
            tau_start=self.tau_start,
            x1=self.x1[rows],
            y1=self.y1[rows],
            noise=self.noise[rows],
            moments={k: v[rows] for k, v in self.moments.items()},
            initial=self.initial[:, rows],
            final=self.final[:, rows],
            divergent=self.divergent[rows],
            x2=pick(self.x2),
            y2=pick(self.y2),
        )

    def split(self) -> list["TrajectoryRecord"]:
        return [self.select(i) for i in range(len(self))]

    def equals(self, other: "TrajectoryRecord") -> bool:
        """Bitwise equality of all recorded data."""
        arrays = ("index", "x1", "y1", "noise", "initial", "final", "divergent", "x2", "y2")
        for name in arrays:
            a, b = getattr(self, name), getattr(other, name)
            if (a is None) != (b is None):
                return False
            if a is not None and not np.array_equal(a, b, equal_nan=True):
                return False
        return all(np.array_equal(self.moments[k], other.moments[k], equal_nan=True) for k in MOMENT_KEYS)


@dataclass
class PairedRecord:
    """Full and linearized runs driven by identical noise."""

    nonlinear: TrajectoryRecord
    linear: TrajectoryRecord

    def __len__(self) -> int:
        return len(self.nonlinear)


# --- random streams -------------------------------------------------------


def trajectory_generator(seed: int, index: int) -> np.random.Generator:
    """Counter-based (Philox) generator for one trajectory."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(int(index),))))


def _n_initial_normals(rep: Representation) -> int:
    return 1 if rep is Representation.POSITIVE_P else 4


def _channels(rep: Representation) -> int:
    """Real normals per substep: two real increments (+P) or two complex ones (Wigner)."""
    return 2 if rep is Representation.POSITIVE_P else 4


class NoiseStreams:
    """Per-trajectory generators for a block, drawn in lock-step."""

    def __init__(self, seed: int, indices: Sequence[int], rep: Representation):
        self.rep = rep
        self.gens = [trajectory_generator(seed, i) for i in indices]

    def initial_normals(self) -> np.ndarray:
        n = _n_initial_normals(self.rep)
        return np.stack([g.standard_normal(n) for g in self.gens], axis=-1)  # (n, B)

    def increments(self, n_steps: int, dtau: float, substeps: int) -> np.ndarray:
        """Wiener increments, shape ``(n_steps, 2, B)``."""
        ch = _channels(self.rep)
        z = np.stack([g.standard_normal((n_steps, substeps, ch)) for g in self.gens], axis=-1)
        z = z.sum(axis=1) if substeps > 1 else z[:, 0]
        z *= math.sqrt(dtau / substeps)
        if self.rep is Representation.POSITIVE_P:
            return z
        # complex increments with <dw dw*> = dtau: real and imaginary parts carry dtau/2 each
        w = (z[:, 0::2] + 1j * z[:, 1::2]) * math.sqrt(0.5)
        return w


def initial_state(rep: Representation, s: ScaledParams, normals: np.ndarray) -> np.ndarray:
    """Start near the linear steady state to shorten equilibration.

    Positive-P: ``x1`` Gaussian with the normally ordered variance
    ``mu/(1-mu)``, split evenly between ``alpha1`` and ``alpha1+``; pump at
    its classical value.  Wigner: ``x1``, ``y1`` with the symmetric variances
    ``1/(1-mu)``, ``1/(1+mu)``; pump classical plus vacuum noise.
    """
    mu = s.mu
    pump = s.pump_amplitude
    n = normals.shape[-1]
    if rep is Representation.POSITIVE_P:
        x1 = math.sqrt(mu / (1.0 - mu)) * normals[0]
        state = np.empty((4, n), dtype=complex)
        state[0] = state[1] = 0.5 * x1
        state[2] = state[3] = pump
        return state
    x1 = normals[0] / math.sqrt(1.0 - mu)
    y1 = normals[1] / math.sqrt(1.0 + mu)
    state = np.empty((2, n), dtype=complex)
    state[0] = 0.5 * (x1 + 1j * y1)
    state[1] = pump + 0.5 * (normals[2] + 1j * normals[3])
    return state


# --- stepping --------------------------------------------------------------


def midpoint_step(state, dtau, rep, mode, s, w, iterations=DEFAULT_ITERATIONS):
    """One semi-implicit step; returns ``(new_state, midpoint)``."""
    mid = state
    for _ in range(iterations):
        mid = state + 0.5 * (dtau * drift(rep, mode, mid, s) + noise_increment(rep, mode, mid, s, w))
    return 2.0 * mid - state, mid


def semi_implicit_step(state, dtau, rep, mode, s, w, iterations=DEFAULT_ITERATIONS):
    """Semi-implicit central-difference step.

    The midpoint ``m`` solves ``m = x + (dtau * A(m) + B(m) w) / 2`` by fixed
    point iteration started at ``x``; the step returns ``2 m - x``.
    """
    if not dtau > 0:
        raise GridError("dtau must be positive")
    return midpoint_step(state, dtau, rep, mode, s, w, iterations)[0]


class _Recorder:
    """Bin and moment accumulation for one block and one mode."""

    def __init__(self, rep, n_comp, n, grid: SimGrid, record_pump: bool):
        nb = grid.n_bins
        dtype = complex if rep is Representation.POSITIVE_P else float
        self.rep = rep
        self.grid = grid
        self.record_pump = record_pump
        self.x1 = np.empty((n, nb), dtype=dtype)
        self.y1 = np.empty((n, nb), dtype=dtype)
        self.x2 = np.empty((n, nb), dtype=dtype) if record_pump else None
        self.y2 = np.empty((n, nb), dtype=dtype) if record_pump else None
        ndtype = float if rep is Representation.POSITIVE_P else complex
        self.noise = np.zeros((n, nb, 2), dtype=ndtype)
        self.mid_sum = np.zeros((n_comp, n), dtype=complex)
        self.moments = {k: np.zeros(n, dtype=complex) for k in MOMENT_KEYS}
        self.count = 0
        self.in_bin = 0
        self.bin = 0

    def add(self, new, mid, w):
        self.mid_sum += mid
        self.noise[:, self.bin, :] += w.T
        x1, y1, x2, y2 = quadratures(self.rep, new)
        m = self.moments
        m["x1"] += x1
        m["y1"] += y1
        m["x2"] += x2
        m["y2"] += y2
        m["x1x1"] += x1 * x1
        m["y1y1"] += y1 * y1
        x1y1 = x1 * y1
        m["x1y1"] += x1y1
        m["x1y1y2"] += x1y1 * y2
        self.count += 1
        self.in_bin += 1
        if self.in_bin == self.grid.sample_stride:
            q = quadratures(self.rep, self.mid_sum / self.in_bin)
            b = self.bin
            self.x1[:, b] = q[0]
            self.y1[:, b] = q[1]
            if self.record_pump:
                self.x2[:, b] = q[2]
                self.y2[:, b] = q[3]
            self.mid_sum[...] = 0
            self.in_bin = 0
            self.bin += 1

    def finish(self, indices, mode, initial, final, divergent) -> TrajectoryRecord:
        moments = {k: v / self.count for k, v in self.moments.items()}
        if self.rep is Representation.WIGNER:
            moments = {k: v.real.copy() for k, v in moments.items()}
        return TrajectoryRecord(
            index=np.asarray(indices, dtype=np.int64),
            rep=self.rep,
            mode=mode,
            bin_duration=self.grid.bin_duration,
            tau_start=self.grid.n_discard * self.grid.dtau,
            x1=self.x1,
            y1=self.y1,
            noise=self.noise,
            moments=moments,
            initial=initial,
            final=final,
            divergent=divergent,
            x2=self.x2,
            y2=self.y2,
        )


STEP_CHUNK = 256


def simulate_block(spec: EnsembleSpec, grid: SimGrid, s: ScaledParams, indices: Sequence[int]):
    """Integrate trajectories ``indices``; returns a record, or a :class:`PairedRecord`."""
    rep = spec.rep
    if s.mu >= 1.0:
        raise ParameterError("trajectory simulation is only supported below threshold (mu < 1)")
    indices = np.asarray(indices, dtype=np.int64)
    n = len(indices)
    streams = NoiseStreams(spec.seed, indices, rep)
    init = initial_state(rep, s, streams.initial_normals())
    modes = spec.modes
    states = [init.copy() for _ in modes]
    recorders = [_Recorder(rep, rep.n_components, n, grid, spec.record_pump) for _ in modes]
    divergent = [np.zeros(n, dtype=bool) for _ in modes]

    step = 0
    with np.errstate(all="ignore"):
        while step < grid.n_steps:
            chunk = min(STEP_CHUNK, grid.n_steps - step)
            w_chunk = streams.increments(chunk, grid.dtau, grid.noise_substeps)
            for c in range(chunk):
                w = w_chunk[c]
                record = step >= grid.n_discard
                for k, mode in enumerate(modes):
                    new, mid = midpoint_step(states[k], grid.dtau, rep, mode, s, w, spec.iterations)
                    if record:
                        recorders[k].add(new, mid, w)
                    states[k] = new
                step += 1
            for k in range(len(modes)):
                divergent[k] |= ~np.isfinite(states[k]).all(axis=0)

    records = [
        recorders[k].finish(indices, mode, init, states[k], divergent[k]) for k, mode in enumerate(modes)
    ]
    if spec.paired:
        return PairedRecord(nonlinear=records[0], linear=records[1])
    return records[0]


def run_trajectory(spec: EnsembleSpec, grid: SimGrid, s: ScaledParams, trajectory_index: int):
    """A single trajectory (record with one row)."""
    return simulate_block(spec, grid, s, [trajectory_index])


def default_block_size(grid: SimGrid, spec: EnsembleSpec) -> int:
    """Blocks sized to keep the binned arrays near 200 MB."""
    per_traj = grid.n_bins * (64 if spec.record_pump else 48) * len(spec.modes)
    return int(max(16, min(2000, 2e8 // max(per_traj, 1))))


def _blocks(n_traj: int, block_size: int) -> list[range]:
    return [range(a, min(a + block_size, n_traj)) for a in range(0, n_traj, block_size)]


def iter_ensemble(spec: EnsembleSpec, grid: SimGrid, s: ScaledParams, block_size: int | None = None) -> Iterator:
    """Yield records block by block in trajectory-index order."""
    block_size = block_size or default_block_size(grid, spec)
    for block in _blocks(spec.n_traj, block_size):
        yield simulate_block(spec, grid, s, block)


@dataclass
class EnsembleStats:
    n_traj: int
    n_divergent: int = 0

    @property
    def divergent_fraction(self) -> float:
        return self.n_divergent / self.n_traj

    @property
    def reliable(self) -> bool:
        return self.divergent_fraction <= UNRELIABLE_FRACTION

    def add(self, rec) -> None:
        recs = [rec.nonlinear, rec.linear] if isinstance(rec, PairedRecord) else [rec]
        bad = np.zeros(len(recs[0]), dtype=bool)
        for r in recs:
            bad |= r.divergent
        self.n_divergent += int(bad.sum())


@dataclass
class EnsembleResult:
    spec: EnsembleSpec
    grid: SimGrid
    params: ScaledParams
    records: list = field(default_factory=list)
    stats: EnsembleStats | None = None

    @property
    def reliable(self) -> bool:
        return self.stats.reliable

    def trajectories(self) -> list:
        """One record (or paired record) per trajectory."""
        out = []
        for r in self.records:
            if isinstance(r, PairedRecord):
                out.extend(PairedRecord(a, b) for a, b in zip(r.nonlinear.split(), r.linear.split()))
            else:
                out.extend(r.split())
        return out

    @property
    def nonlinear(self) -> list[TrajectoryRecord]:
        return [r.nonlinear if isinstance(r, PairedRecord) else r for r in self.records]

    @property
    def linear(self) -> list[TrajectoryRecord]:
        return [r.linear for r in self.records if isinstance(r, PairedRecord)]


def _simulate_block_task(args):
    spec, grid, s, block = args
    return simulate_block(spec, grid, s, block)


def run_ensemble(spec, grid, s, workers: int = 1, block_size: int | None = None) -> EnsembleResult:
    """Run and keep every record in memory (use :func:`reduce_ensemble` for large runs)."""
    block_size = block_size or default_block_size(grid, spec)
    blocks = _blocks(spec.n_traj, block_size)
    tasks = [(spec, grid, s, b) for b in blocks]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            records = list(ex.map(_simulate_block_task, tasks))
    else:
        records = [_simulate_block_task(t) for t in tasks]
    stats = EnsembleStats(spec.n_traj)
    for r in records:
        stats.add(r)
    _warn_unreliable(stats)
    return EnsembleResult(spec, grid, s, records, stats)


def _warn_unreliable(stats: EnsembleStats) -> None:
    if stats.n_divergent:
        log.warning("%d of %d trajectories diverged", stats.n_divergent, stats.n_traj)
    if not stats.reliable:
        log.warning("ensemble unreliable: divergent fraction %.2g", stats.divergent_fraction)


def _reduce_block_task(args):
    spec, grid, s, block, accumulators = args
    rec = simulate_block(spec, grid, s, block)
    stats = EnsembleStats(0)
    stats.add(rec)
    for acc in accumulators:
        acc.add(rec)
    return accumulators, stats.n_divergent


def reduce_ensemble(
    spec: EnsembleSpec,
    grid: SimGrid,
    s: ScaledParams,
    accumulators: Sequence,
    workers: int = 1,
    block_size: int | None = None,
):
    """Stream the ensemble through ``accumulators`` without keeping records.

    Each block is fed to fresh copies of the (empty) accumulators, and the
    partial results are merged in block order, so the outcome is bitwise
    independent of ``workers``.  Returns ``(merged_accumulators, stats)``.
    """
    block_size = block_size or default_block_size(grid, spec)
    blocks = _blocks(spec.n_traj, block_size)
    tasks = [(spec, grid, s, b, copy.deepcopy(list(accumulators))) for b in blocks]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_reduce_block_task, tasks))
    else:
        parts = map(_reduce_block_task, tasks)
    merged = [copy.deepcopy(a) for a in accumulators]
    stats = EnsembleStats(spec.n_traj)
    for accs, n_div in parts:
        for m, a in zip(merged, accs):
            m.merge(a)
        stats.n_divergent += n_div
    _warn_unreliable(stats)
    return merged, stats


# --- raw dump --------------------------------------------------------------

DUMP_COLUMNS = ("trajectory", "tau", "x1_re", "x1_im", "y1_re", "y1_im", "noise1_re", "noise1_im", "noise2_re", "noise2_im")


def dump_record_csv(record: TrajectoryRecord, path) -> None:
    """One row per bin: trajectory index, bin-centre time, binned quadratures, noise sums."""
    tau = record.bin_times()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(DUMP_COLUMNS)
        for row, idx in enumerate(record.index):
            x1 = np.asarray(record.x1[row], dtype=complex)
            y1 = np.asarray(record.y1[row], dtype=complex)
            nz = np.asarray(record.noise[row], dtype=complex)
            for b in range(record.n_bins):
                vals = (tau[b], x1[b].real, x1[b].imag, y1[b].real, y1[b].imag,
                        nz[b, 0].real, nz[b, 0].imag, nz[b, 1].real, nz[b, 1].imag)
                w.writerow([int(idx), *(repr(float(v)) for v in vals)])
