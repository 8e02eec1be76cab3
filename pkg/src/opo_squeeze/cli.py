"""Command-line front end.

Subcommands: ``moments``, ``spectrum``, ``delta``, ``triple``, ``analytic``,
``optimize`` and ``reproduce``.  Every run writes its artifacts plus
``manifest.json`` (resolved configuration, sha256 checksums, divergent
trajectory count, wall time, version) into ``--out-dir``.  Feeding a manifest
back through ``--config`` reruns the same configuration.

Exit codes: 0 success, 2 configuration or domain error, 3 unreliable ensemble.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import math
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from . import analytic as A
from . import estimators as E
from .integrator import EnsembleSpec, GridError, SimGrid, reduce_ensemble
from .model import ParameterError, PhysicalParams, ScaledParams, scale_params
from .svg import Chart

log = logging.getLogger("opo_squeeze")

EXIT_OK, EXIT_CONFIG, EXIT_UNRELIABLE = 0, 2, 3
MANIFEST_SCHEMA = "opo-squeeze/manifest/1"
COMMANDS = ("moments", "spectrum", "delta", "triple", "analytic", "optimize", "reproduce")
PAPER_SCALE_TRAJ = 100_000


class ConfigError(ValueError):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class UnreliableEnsemble(RuntimeError):
    pass


# --- configuration ---------------------------------------------------------


@dataclasses.dataclass
class RunConfig:
    """Flat run configuration; see ``--help`` of each subcommand for the fields."""

    g2: float | None = None
    gamma1: float | None = None
    gamma2: float | None = None
    chi: float | None = None
    drive: float | None = None
    mu: float | None = None
    gamma_r: float | None = None
    representation: str = "positive-p"
    mode: str = "full"
    dtau: float = 0.1
    tau_max: float = 1000.0
    tau_discard: float | None = None
    sample_stride: int = 1
    noise_substeps: int = 1
    n_traj: int = 10_000
    seed: int = 0
    paired: bool = False
    record_pump: bool = False
    workers: int = 1
    block_size: int | None = None
    j: int = 1
    theta: float = math.pi / 2
    omega_max: float | None = None
    mu_values: list | None = None
    gamma_values: list | None = None
    omega_span: float = 10.0
    n_omega: int = 401
    overlay_analytic: bool = False
    paper_scale: bool = False
    out_dir: str = "out"
    formats: list = dataclasses.field(default_factory=lambda: ["csv", "json", "svg"])

    # -- construction

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        names = {f.name: f for f in dataclasses.fields(cls)}
        for k in d:
            if k not in names:
                raise ConfigError(k, "unknown field")
        cfg = cls(**d)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def validate(self) -> None:
        num = lambda name, v, allow_none=True: _check_number(name, v, allow_none)
        for name in ("g2", "gamma1", "gamma2", "chi", "drive", "mu", "gamma_r", "tau_discard", "omega_max"):
            num(name, getattr(self, name))
        for name in ("dtau", "tau_max", "theta", "omega_span"):
            num(name, getattr(self, name), False)
        for name in ("sample_stride", "noise_substeps", "n_traj", "seed", "workers", "j", "n_omega"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int):
                raise ConfigError(name, f"expected an integer, got {v!r}")
        if self.block_size is not None and (not isinstance(self.block_size, int) or self.block_size < 1):
            raise ConfigError("block_size", "expected a positive integer")
        for name in ("paired", "record_pump", "overlay_analytic", "paper_scale"):
            if not isinstance(getattr(self, name), bool):
                raise ConfigError(name, "expected true or false")
        if self.representation not in ("positive-p", "wigner"):
            raise ConfigError("representation", "must be 'positive-p' or 'wigner'")
        if self.mode not in ("full", "linearized"):
            raise ConfigError("mode", "must be 'full' or 'linearized'")
        if self.j not in (1, 2):
            raise ConfigError("j", "mode index must be 1 or 2")
        if self.workers < 1:
            raise ConfigError("workers", "must be at least 1")
        for name in ("mu_values", "gamma_values"):
            v = getattr(self, name)
            if v is not None:
                if not isinstance(v, list) or not v:
                    raise ConfigError(name, "expected a non-empty list of numbers")
                for i, x in enumerate(v):
                    num(f"{name}[{i}]", x, False)
        if not isinstance(self.formats, list) or any(f not in ("csv", "json", "svg") for f in self.formats):
            raise ConfigError("formats", "subset of ['csv', 'json', 'svg']")
        physical = [self.gamma1, self.gamma2, self.chi, self.drive]
        if self.g2 is not None and any(v is not None for v in physical):
            raise ConfigError("g2", "give either g2 or physical rates (gamma1, gamma2, chi, drive), not both")
        if self.g2 is None and any(v is not None for v in physical) and not all(v is not None for v in physical):
            missing = [n for n, v in zip(("gamma1", "gamma2", "chi", "drive"), physical) if v is None]
            raise ConfigError(missing[0], "physical rates need all of gamma1, gamma2, chi, drive")
        if any(v is not None for v in physical) and (self.mu is not None or self.gamma_r is not None):
            raise ConfigError("mu", "mu and gamma_r follow from the physical rates; do not give them too")

    # -- derived objects

    def params(self, mu: float | None = None, gamma_r: float | None = None) -> ScaledParams:
        try:
            if self.gamma1 is not None:
                s = scale_params(PhysicalParams(self.gamma1, self.gamma2, self.chi, self.drive))
            else:
                if self.g2 is None:
                    raise ConfigError("g2", "required (or give physical rates)")
                m = self.mu if mu is None else mu
                gr = self.gamma_r if gamma_r is None else gamma_r
                if m is None:
                    raise ConfigError("mu", "required")
                if gr is None:
                    raise ConfigError("gamma_r", "required")
                s = ScaledParams.from_g2(self.g2, m, gr)
        except ParameterError as exc:
            raise ConfigError("physics", str(exc)) from exc
        return s

    def grid(self) -> SimGrid:
        try:
            return SimGrid(self.dtau, self.tau_max, self.tau_discard, self.sample_stride, self.noise_substeps)
        except GridError as exc:
            raise ConfigError("grid", str(exc)) from exc

    def ensemble(self, paired: bool | None = None) -> EnsembleSpec:
        try:
            return EnsembleSpec(
                self.n_traj, self.seed, self.representation, self.mode,
                self.paired if paired is None else paired, record_pump=self.record_pump or self.j == 2,
            )
        except ParameterError as exc:
            raise ConfigError("ensemble", str(exc)) from exc

    def selector(self) -> E.QuadratureSelector:
        return E.QuadratureSelector(self.j, self.theta)


def _check_number(name, v, allow_none):
    if v is None and allow_none:
        return
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(name, f"expected a finite number, got {v!r}")


def load_config(path) -> dict:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError("--config", str(exc)) from exc
    if isinstance(data, dict) and data.get("schema") == MANIFEST_SCHEMA:
        data = data["config"]
    if not isinstance(data, dict):
        raise ConfigError("--config", "top level must be a JSON object")
    return data


# --- helpers ---------------------------------------------------------------


class Run:
    """Output directory bookkeeping for one command."""

    def __init__(self, cfg: RunConfig, command: str):
        self.cfg = cfg
        self.command = command
        self.out = Path(cfg.out_dir)
        try:
            self.out.mkdir(parents=True, exist_ok=True)
            probe = self.out / ".write-test"
            probe.write_text("")
            probe.unlink()
        except OSError as exc:
            raise ConfigError("out_dir", f"not writable: {exc}") from exc
        self.artifacts: list[Path] = []
        self.n_divergent = 0
        self.reliable = True
        self.summary: dict = {}
        self.t0 = time.perf_counter()

    def path(self, name: str) -> Path:
        p = self.out / name
        self.artifacts.append(p)
        return p

    def wants(self, fmt: str) -> bool:
        return fmt in self.cfg.formats

    def write_json(self, name: str, obj) -> None:
        self.path(name).write_text(json.dumps(obj, indent=2, default=_json_default) + "\n", encoding="utf-8")

    def chart(self, name: str, chart: Chart) -> None:
        if self.wants("svg"):
            chart.save(self.path(name))

    def note_stats(self, stats) -> None:
        self.n_divergent += stats.n_divergent
        self.reliable = self.reliable and stats.reliable

    def manifest(self) -> Path:
        checks = {}
        for p in self.artifacts:
            checks[p.name] = hashlib.sha256(p.read_bytes()).hexdigest()
        m = {
            "schema": MANIFEST_SCHEMA,
            "version": __version__,
            "command": self.command,
            "config": self.cfg.to_dict(),
            "artifacts": checks,
            "n_divergent": self.n_divergent,
            "reliable": self.reliable,
            "wall_time_s": time.perf_counter() - self.t0,
            "summary": self.summary,
        }
        path = self.out / "manifest.json"
        path.write_text(json.dumps(m, indent=2, default=_json_default) + "\n", encoding="utf-8")
        return path


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(type(o).__name__)


def _quiet_analytic(fn, *args, **kw):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", A.PerturbationWarning)
        return fn(*args, **kw)


def _simulate(run: Run, s: ScaledParams, accumulators, paired=None):
    cfg = run.cfg
    spec = cfg.ensemble(paired)
    log.info("simulating %d %s trajectories (mu=%g, gamma_r=%g, g^2=%g)", spec.n_traj, spec.rep.value,
             s.mu, s.gamma_r, s.g2)
    try:
        accs, stats = reduce_ensemble(spec, cfg.grid(), s, accumulators, cfg.workers, cfg.block_size)
    except ParameterError as exc:
        raise ConfigError("mu", str(exc)) from exc
    run.note_stats(stats)
    return accs


def _spectrum_analytic_columns(cfg: RunConfig, s: ScaledParams, omega, delta=False) -> dict:
    """Analytic curves on the estimator grid, where a closed form exists."""
    if s.mu >= 1 or cfg.j != 1:
        return {}
    cols = {}
    th = cfg.theta % (2 * math.pi)
    is_y = math.isclose(math.sin(th) ** 2, 1.0, abs_tol=1e-12)
    is_x = math.isclose(math.cos(th) ** 2, 1.0, abs_tol=1e-12)
    if is_y:
        lin = A.linear_spectrum(s.mu, omega, "y")[1]
        for rep in ("positive-p", "wigner"):
            V = _quiet_analytic(A.nonlinear_spectrum, s.mu, s.gamma_r, s.g, omega, rep)
            key = "P" if rep == "positive-p" else "W"
            cols[f"{'dV' if delta else 'V'}_analytic_{key}"] = V - lin if delta else V
        if delta:
            cols["dV_analytic_P_binned"] = cols["dV_analytic_P"] * E.bin_response(omega, cfg.dtau, cfg.sample_stride)
        if not delta:
            cols["V_linear"] = lin
    elif is_x and not delta:
        cols["V_linear"] = A.linear_spectrum(s.mu, omega, "x")[1]
    return cols


def _spectrum_chart(est: E.SpectrumEstimate, extra: dict, title: str, ylabel: str) -> Chart:
    c = Chart(title, "frequency (units of signal damping)", ylabel)
    c.add("simulation", est.omega, est.V, err=est.stderr)
    for (k, v), style in zip(extra.items(), ("dashed", "dashdot", "dotted")):
        c.add(k, est.omega, v, style)
    return c


# --- commands --------------------------------------------------------------


def cmd_moments(cfg: RunConfig, run: Run) -> None:
    s = cfg.params()
    (acc,) = _simulate(run, s, [E.MomentAccumulator(cfg.n_traj)])
    m = acc.result()
    out = json.loads(m.to_json())
    out["seed"] = cfg.seed
    if cfg.overlay_analytic and s.mu < 1:
        am = _quiet_analytic(A.nonlinear_moments, s.mu, s.gamma_r, s.g, cfg.representation)
        out["analytic"] = {"y1_squared": am.y1_squared, "y1_squared_minus_half": am.y1_squared_offset}
    run.summary = {"y1_squared": m.y1_squared, "stderr": m.y1_squared_stderr}
    run.write_json("moments.json", out)


def cmd_spectrum(cfg: RunConfig, run: Run) -> None:
    s = cfg.params()
    gamma_out = s.gamma_r if cfg.j == 2 else 1.0
    (acc,) = _simulate(run, s, [E.SpectrumAccumulator(cfg.n_traj, cfg.selector(), cfg.omega_max,
                                                      gamma_out=gamma_out)])
    est = acc.result()
    extra = _spectrum_analytic_columns(cfg, s, est.omega) if cfg.overlay_analytic else {}
    if run.wants("csv"):
        est.to_csv(run.path("spectrum.csv"), extra)
    run.chart("spectrum.svg", _spectrum_chart(est, extra, f"V, mu={s.mu:g}", "V"))
    i = est.at(0.0)
    run.summary = {"V0": est.V[i], "stderr0": None if est.stderr is None else est.stderr[i], "seed": cfg.seed}


def cmd_delta(cfg: RunConfig, run: Run) -> None:
    s = cfg.params()
    gamma_out = s.gamma_r if cfg.j == 2 else 1.0
    (acc,) = _simulate(run, s, [E.DeltaSpectrumAccumulator(cfg.n_traj, cfg.selector(), cfg.omega_max,
                                                           gamma_out=gamma_out)], paired=True)
    est = acc.result()
    extra = _spectrum_analytic_columns(cfg, s, est.omega, delta=True) if cfg.overlay_analytic else {}
    if run.wants("csv"):
        est.to_csv(run.path("delta.csv"), extra)
    run.chart("delta.svg", _spectrum_chart(est, extra, f"nonlinear correction, mu={s.mu:g}", "dV"))
    i = est.at(0.0)
    run.summary = {"dV0": est.V[i], "stderr0": None if est.stderr is None else est.stderr[i], "seed": cfg.seed}


def cmd_triple(cfg: RunConfig, run: Run) -> None:
    s = cfg.params()
    cfg.record_pump = True
    (acc,) = _simulate(run, s, [E.MomentAccumulator(cfg.n_traj)])
    m = acc.result()
    err = None if m.stderr is None else m.stderr["x1y1y2"]
    out = {"ordering": m.ordering, "x1y1y2": m.values["x1y1y2"], "stderr": err,
           "imag": m.imag["x1y1y2"], "n_traj": m.n_traj, "seed": cfg.seed}
    if s.mu < 1:
        k = A.pump_scale(s.g, s.gamma_r)
        out["analytic"] = {
            "scaled": A.triple_correlation(s.mu, s.gamma_r, cfg.representation),
            "physical": k * A.triple_correlation(s.mu, s.gamma_r, cfg.representation),
        }
        if cfg.representation == "wigner":
            out["analytic"]["physical_112_only"] = k * A.triple_correlation(s.mu, s.gamma_r, "wigner", "112")
    run.summary = {"x1y1y2": out["x1y1y2"], "stderr": err}
    run.write_json("triple.json", out)


def _omega_grid(cfg: RunConfig) -> np.ndarray:
    return np.linspace(-cfg.omega_span, cfg.omega_span, cfg.n_omega)


def cmd_analytic(cfg: RunConfig, run: Run) -> None:
    if cfg.g2 is None:
        raise ConfigError("g2", "required")
    if cfg.gamma_r is None:
        raise ConfigError("gamma_r", "required")
    mus = cfg.mu_values or ([cfg.mu] if cfg.mu is not None else None)
    if not mus:
        raise ConfigError("mu_values", "give mu or mu_values")
    g = math.sqrt(cfg.g2)
    w = _omega_grid(cfg)
    chart = Chart(f"V, g^2={cfg.g2:g}, gamma_r={cfg.gamma_r:g}", "frequency", "V", logy=True)
    v0s = {}
    for mu in mus:
        try:
            V = _quiet_analytic(A.nonlinear_spectrum, mu, cfg.gamma_r, g, w, cfg.representation)
        except A.DomainError as exc:
            raise ConfigError("mu_values", str(exc)) from exc
        if run.wants("csv"):
            _quiet_analytic(A.tabulate_spectrum, run.path(f"analytic_mu{mu:g}.csv"), mu, cfg.gamma_r, g, w,
                            cfg.representation)
        chart.add(f"mu={mu:g}", w, V)
        v0s[f"{mu:g}"] = float(_quiet_analytic(A.nonlinear_spectrum, mu, cfg.gamma_r, g, 0.0, cfg.representation))
    run.chart("analytic.svg", chart)
    run.summary = {"V0": v0s}


def cmd_optimize(cfg: RunConfig, run: Run) -> None:
    if cfg.g2 is None:
        raise ConfigError("g2", "required")
    gammas = cfg.gamma_values or ([cfg.gamma_r] if cfg.gamma_r is not None else None)
    if not gammas:
        raise ConfigError("gamma_values", "give gamma_r or gamma_values")
    g = math.sqrt(cfg.g2)
    out = []
    for gr in gammas:
        row = {"gamma_r": gr, "g2": cfg.g2}
        for method in ("DirectScan", "QuinticNumeric", "Asymptotic"):
            try:
                row[method] = A.optimal_drive(gr, g, method).as_dict()
            except (A.SolverError, A.DomainError) as exc:
                row[method] = {"error": str(exc)}
        out.append(row)
    run.write_json("optimum.json", {"schema": "opo-squeeze/optimum/1", "results": out})
    run.summary = {"mu_opt": [r["DirectScan"].get("mu_opt") for r in out],
                   "V_opt": [r["DirectScan"].get("V_opt") for r in out]}


# --- reproduction targets --------------------------------------------------


def _check(name, value, lo, hi, reference=None, stderr=None) -> dict:
    ok = bool(lo <= value <= hi)
    return {"quantity": name, "value": value, "stderr": stderr, "accepted_range": [lo, hi],
            "reference": reference, "passed": ok}


def _mu_axis(top=0.999, n=400):
    return np.linspace(0.0, top, n)


def _write_table(run: Run, name: str, columns: dict) -> None:
    if not run.wants("csv"):
        return
    keys = list(columns)
    rows = np.column_stack([np.asarray(columns[k], float) for k in keys])
    with open(run.path(name), "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(keys) + "\n")
        for r in rows:
            fh.write(",".join(repr(float(v)) for v in r) + "\n")


def rep_sqmom(cfg: RunConfig, run: Run) -> list:
    g, gr = math.sqrt(1e-3), 0.5
    mu = _mu_axis()
    y = np.array([_quiet_analytic(A.nonlinear_moments, m, gr, g).y1_squared for m in mu])
    _write_table(run, "sqmom.csv", {"mu": mu, "y1_squared": y, "linear": 1 / (1 + mu)})
    run.chart("sqmom.svg", Chart("<y1^2>, g^2=0.001, gamma_r=0.5", "mu", "<y1^2>")
              .add("O(g^2)", mu, y).add("linear", mu, 1 / (1 + mu), "dashed"))
    i = int(np.argmin(y))
    return [_check("minimum lies below threshold", float(mu[i]), 0.9, 0.999)]


def rep_nlsqmom(cfg: RunConfig, run: Run) -> list:
    g = math.sqrt(1e-3)
    mu = _mu_axis(0.99)
    cols = {"mu": mu}
    chart = Chart("nonlinear moment correction, g^2=0.001", "mu", "correction", logy=True)
    for gr in (0.1, 1.0, 10.0):
        for rep, style in (("positive-p", "solid"), ("wigner", "dashed")):
            c = np.array([_quiet_analytic(A.nonlinear_moments, m, gr, g, rep).correction for m in mu])
            cols[f"{rep}_gamma{gr:g}"] = c
            chart.add(f"{rep} gamma_r={gr:g}", mu, c, style)
    _write_table(run, "nlsqmom.csv", cols)
    run.chart("nlsqmom.svg", chart)
    at = lambda gr: cols[f"positive-p_gamma{gr:g}"][-1]
    return [_check("smallest gamma_r gives smallest correction near threshold",
                   float(at(0.1) < at(1.0) < at(10.0)), 1, 1)]


def rep_totalspec(cfg: RunConfig, run: Run) -> list:
    g, gr = math.sqrt(1e-3), 0.5
    w = np.linspace(-5, 5, 401)
    cols = {"omega": w}
    chart = Chart("V, g^2=0.001, gamma_r=0.5", "frequency", "V", logy=True)
    v0 = []
    for mu in (0.1, 0.3, 0.5, 0.7, 0.9):
        V = A.nonlinear_spectrum(mu, gr, g, w)
        cols[f"mu{mu:g}"] = V
        chart.add(f"mu={mu:g}", w, V)
        v0.append(float(A.v0(mu, gr, g)))
    _write_table(run, "totalspec.csv", cols)
    run.chart("totalspec.svg", chart)
    return [_check("V(0) decreases with mu", float(all(np.diff(v0) < 0)), 1, 1)]


def rep_nlspec(cfg: RunConfig, run: Run) -> list:
    g, gr = math.sqrt(1e-3), 0.5
    w = np.linspace(-5, 5, 401)
    cols = {"omega": w}
    chart = Chart("nonlinear part of V, g^2=0.001, gamma_r=0.5", "frequency", "dV")
    for mu in (0.5, 0.7, 0.9, 0.95):
        d = A.nonlinear_spectrum(mu, gr, g, w) - A.linear_spectrum(mu, w)[1]
        cols[f"mu{mu:g}"] = d
        chart.add(f"mu={mu:g}", w, d)
    _write_table(run, "nlspec.csv", cols)
    run.chart("nlspec.svg", chart)
    return [_check("largest correction at mu=0.95, zero frequency", float(np.argmax(cols["mu0.95"]) == 200), 1, 1)]


def rep_nl2pwspec(cfg: RunConfig, run: Run) -> list:
    g = math.sqrt(1e-3)
    mu = _mu_axis(0.99)
    cols = {"mu": mu}
    chart = Chart("zero-frequency nonlinear correction, g^2=0.001", "mu", "dV(0)", logy=True)
    for gr in (0.01, 0.1, 1.0, 10.0, 100.0):
        for rep, style in (("positive-p", "solid"), ("wigner", "dashed")):
            d = np.array([_quiet_analytic(A.nonlinear_spectrum, m, gr, g, 0.0, rep) for m in mu])
            d = d - A.linear_spectrum(mu, 0.0)[1]
            cols[f"{rep}_gamma{gr:g}"] = d
            chart.add(f"{rep} gamma_r={gr:g}", mu, d, style)
    _write_table(run, "nl2pwspec.csv", cols)
    run.chart("nl2pwspec.svg", chart)
    near = [cols[f"positive-p_gamma{gr:g}"][-1] for gr in (0.01, 0.1, 1.0, 10.0, 100.0)]
    return [_check("smallest gamma_r gives smallest correction", float(near[0] == min(near)), 1, 1)]


def rep_opt2dpspec(cfg: RunConfig, run: Run) -> list:
    g = math.sqrt(1e-3)
    mu = _mu_axis(0.999, 800)
    cols = {"mu": mu}
    chart = Chart("V(0) against drive, g^2=0.001", "mu", "V(0)", logy=True)
    best = {}
    for gr in (0.001, 0.01, 0.1, 1.0, 10.0):
        v = _quiet_analytic(A.v0, mu, gr, g)
        cols[f"gamma{gr:g}"] = v
        chart.add(f"gamma_r={gr:g}", mu, v)
        best[gr] = A.direct_scan_optimum(gr, g).V_opt
    _write_table(run, "opt2dpspec.csv", cols)
    run.chart("opt2dpspec.svg", chart)
    run.write_json("opt2dpspec_optima.json", {f"{k:g}": v for k, v in best.items()})
    vals = [best[k] for k in sorted(best)]
    return [_check("optimum improves as gamma_r decreases", float(all(np.diff(vals) > 0)), 1, 1)]


def rep_tot2dp01spec(cfg: RunConfig, run: Run) -> list:
    g, gr = math.sqrt(1e-3), 0.01
    w = np.linspace(-1, 1, 801)
    cols = {"omega": w}
    chart = Chart("V, g^2=0.001, gamma_r=0.01", "frequency", "V", logy=True)
    curv = {}
    for mu in (0.9, 0.93, 0.96):
        V = A.nonlinear_spectrum(mu, gr, g, w)
        cols[f"mu{mu:g}"] = V
        chart.add(f"mu={mu:g}", w, V)
        h = 1e-3
        curv[mu] = float((A.nonlinear_spectrum(mu, gr, g, h) - 2 * A.v0(mu, gr, g) + A.nonlinear_spectrum(mu, gr, g, -h)) / h**2)
    _write_table(run, "tot2dp01spec.csv", cols)
    run.chart("tot2dp01spec.svg", chart)
    return [_check("local minimum at zero frequency for mu=0.90 (curvature)", curv[0.9], 0, math.inf),
            _check("local maximum at zero frequency for mu=0.96 (curvature)", curv[0.96], -math.inf, 0)]


def _sim_defaults(cfg: RunConfig, n_desk: int, tau_desk: float, n_paper: int, tau_paper: float, user: set):
    c = dataclasses.replace(cfg)
    if "n_traj" not in user:
        c.n_traj = n_paper if cfg.paper_scale else n_desk
    if "tau_max" not in user:
        c.tau_max = tau_paper if cfg.paper_scale else tau_desk
    return c


def _paired_run(cfg, run, s, omega_max):
    n = cfg.n_traj
    accs = [E.DeltaSpectrumAccumulator(n, E.Y_QUADRATURE, omega_max), E.MomentAccumulator(n)]
    d, m = _simulate(run, s, accs, paired=True)
    return d.result(), m.result()


def rep_otsim9(cfg: RunConfig, run: Run, user=frozenset()) -> list:
    c = _sim_defaults(cfg, 10_000, 1000.0, PAPER_SCALE_TRAJ, 1000.0, user)
    c.representation = "positive-p"
    run.cfg = c
    s = ScaledParams.from_g2(1e-3, 0.9, 0.5)
    est, m = _paired_run(c, run, s, 5.0)
    extra = _spectrum_analytic_columns(dataclasses.replace(c, j=1, theta=math.pi / 2), s, est.omega, delta=True)
    if run.wants("csv"):
        est.to_csv(run.path("otsim9.csv"), extra)
    run.chart("otsim9.svg", _spectrum_chart(est, extra, "nonlinear correction, g^2=0.001, gamma_r=0.5, mu=0.9", "dV"))
    i = est.at(0.0)
    checks = [_check("dV(0)", float(est.V[i]), 3.4e-3, 4.1e-3, 3.75e-3, _f(est.stderr, i))]
    checks.append(_moment_check(m))
    return checks


def _f(arr, i):
    return None if arr is None else float(arr[i])


def _moment_check(m: E.MomentSet) -> dict:
    err = m.y1_squared_stderr or 0.0
    ref = 0.0271
    return _check("<y1^2> - 1/2", m.y1_squared_offset, ref - 3 * err, ref + 3 * err, ref, err)


def rep_optsim01(cfg: RunConfig, run: Run, user=frozenset()) -> list:
    c = _sim_defaults(cfg, 10_000, 2000.0, 10_000, 2000.0, user)
    c.representation = "positive-p"
    run.cfg = c
    s = ScaledParams.from_g2(1e-3, 0.93, 0.01)
    est, _ = _paired_run(c, run, s, 5.0)
    extra = _spectrum_analytic_columns(dataclasses.replace(c, j=1, theta=math.pi / 2), s, est.omega, delta=True)
    if run.wants("csv"):
        est.to_csv(run.path("optsim01.csv"), extra)
    run.chart("optsim01.svg", _spectrum_chart(est, extra, "nonlinear correction, g^2=0.001, gamma_r=0.01, mu=0.93", "dV"))
    # ten-batch errors are t-distributed with 9 degrees of freedom: P(|t| <= 3) = 0.985
    z = np.abs(est.V - extra["dV_analytic_P_binned"]) / est.stderr
    return [_check("fraction of |W|<=5 bins within 3 standard errors of the binned analytic curve",
                   float(np.mean(z <= 3)), 0.95, 1.0)]


def rep_moment(cfg: RunConfig, run: Run, user=frozenset()) -> list:
    c = _sim_defaults(cfg, 10_000, 1000.0, PAPER_SCALE_TRAJ, 1000.0, user)
    c.representation = "positive-p"
    run.cfg = c
    s = ScaledParams.from_g2(1e-3, 0.9, 0.5)
    am = A.nonlinear_moments(0.9, 0.5, s.g)
    (acc,) = _simulate(run, s, [E.MomentAccumulator(c.n_traj)])
    m = acc.result()
    run.write_json("moment.json", {"analytic": {"y1_squared": am.y1_squared, "y1_squared_minus_half": am.y1_squared_offset},
                                    "simulated": json.loads(m.to_json())})
    return [_check("analytic <y1^2> - 1/2", am.y1_squared_offset, 0.0271, 0.0273, 0.0272), _moment_check(m)]


def rep_v0(cfg: RunConfig, run: Run) -> list:
    v = A.v0(0.9, 1.0, math.sqrt(1e-3))
    run.write_json("v0.json", {"mu": 0.9, "gamma_r": 1.0, "g2": 1e-3, "V0": v, "dB": -10 * math.log10(v)})
    return [_check("V(0) at mu=0.9, gamma_r=1", v, 0.0069, 0.0073, 0.0071)]


def rep_optimum(cfg: RunConfig, run: Run) -> list:
    g = math.sqrt(1e-3)
    r = A.direct_scan_optimum(0.01, g)
    run.write_json("optimum.json", {"DirectScan": r.as_dict(), "Asymptotic": A.asymptotic_optimum(0.01, g).as_dict(),
                                    "QuinticNumeric": A.quintic_optimum(0.01, g).as_dict(),
                                    "dB": -10 * math.log10(r.V_opt)})
    return [_check("mu_opt at gamma_r=0.01", r.mu_opt, 0.92, 0.94, 0.93),
            _check("V_opt at gamma_r=0.01", r.V_opt, 2.0e-3, 2.4e-3, 2.2e-3)]


REPRODUCE = {
    "fig-Sqmom": (rep_sqmom, False),
    "fig-NLSqmom": (rep_nlsqmom, False),
    "fig-TOTALSPEC": (rep_totalspec, False),
    "fig-NLSPEC": (rep_nlspec, False),
    "fig-NL2PWSPEC": (rep_nl2pwspec, False),
    "fig-OPT2DPSPEC": (rep_opt2dpspec, False),
    "fig-TOT2dp01spec": (rep_tot2dp01spec, False),
    "fig-OTSIM9": (rep_otsim9, True),
    "fig-OPTSIM01": (rep_optsim01, True),
    "moment-0272": (rep_moment, True),
    "v0-0071": (rep_v0, False),
    "optimum-093": (rep_optimum, False),
}


def cmd_reproduce(cfg: RunConfig, run: Run, target: str, user: set) -> None:
    if target not in REPRODUCE:
        raise ConfigError("target", f"unknown id {target!r}; choose from {', '.join(REPRODUCE)}")
    fn, simulated = REPRODUCE[target]
    checks = fn(cfg, run, user) if simulated else fn(cfg, run)
    run.write_json("comparison.json", {"target": target, "checks": checks})
    run.summary = {"target": target, "passed": all(c["passed"] for c in checks)}
    for c in checks:
        print(f"{'PASS' if c['passed'] else 'FAIL'}  {target}: {c['quantity']} = {c['value']:.6g}")


# --- argument parsing ------------------------------------------------------

FLAG_FIELDS = {
    "g2": float, "gamma1": float, "gamma2": float, "chi": float, "drive": float, "mu": float, "gamma_r": float,
    "representation": str, "mode": str, "dtau": float, "tau_max": float, "tau_discard": float,
    "sample_stride": int, "noise_substeps": int, "n_traj": int, "seed": int, "workers": int, "block_size": int,
    "j": int, "theta": float, "omega_max": float, "omega_span": float, "n_omega": int, "out_dir": str,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="opo-squeeze", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        if name == "reproduce":
            sp.add_argument("target", help="one of: " + ", ".join(REPRODUCE))
        sp.add_argument("--config", help="JSON config (or a manifest from a previous run)")
        for field, typ in FLAG_FIELDS.items():
            sp.add_argument("--" + field.replace("_", "-"), dest=field, type=typ, default=None)
        sp.add_argument("--paired", action="store_const", const=True, default=None)
        sp.add_argument("--record-pump", dest="record_pump", action="store_const", const=True, default=None)
        sp.add_argument("--paper-scale", dest="paper_scale", action="store_const", const=True, default=None)
        sp.add_argument("--overlay-analytic", dest="overlay_analytic", action="store_const", const=True,
                        default=None)
        sp.add_argument("--mu-values", dest="mu_values", type=float, nargs="+", default=None)
        sp.add_argument("--gamma-values", dest="gamma_values", type=float, nargs="+", default=None)
        sp.add_argument("--formats", nargs="+", default=None)
        sp.add_argument("-v", "--verbose", action="store_true")
    return p


def resolve_config(args) -> tuple[RunConfig, set]:
    data = load_config(args.config) if args.config else {}
    user = set(data)
    keys = list(FLAG_FIELDS) + ["paired", "record_pump", "paper_scale", "overlay_analytic", "mu_values",
                                "gamma_values", "formats"]
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            data[k] = v
            user.add(k)
    if data.get("paper_scale") and "n_traj" not in user and args.command != "reproduce":
        data["n_traj"] = PAPER_SCALE_TRAJ
    return RunConfig.from_dict(data), user


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg, user = resolve_config(args)
        run = Run(cfg, args.command)
        if args.command == "reproduce":
            cmd_reproduce(cfg, run, args.target, user)
        else:
            globals()["cmd_" + args.command](cfg, run)
        run.manifest()
    except (ConfigError, A.DomainError, E.EstimatorError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if not run.reliable:
        print(f"unreliable ensemble: {run.n_divergent} divergent trajectories", file=sys.stderr)
        return EXIT_UNRELIABLE
    if run.summary:
        print(json.dumps(run.summary, default=_json_default))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
