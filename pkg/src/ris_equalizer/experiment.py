"""Seeded Monte Carlo comparison of PSO against the benchmark schemes.

Seeding: run ``r`` of a study owns ``SeedSequence(master_seed, spawn_key=(r, s))``
with one sub-stream ``s`` per purpose (positions, channel, PSO starts, random
phases).  The axis value never enters the key, so every axis point and every
scheme sees the same draws for a given run (common random numbers), and
adding runs never perturbs existing ones.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import baselines, isi, pso
from .channel import (ConfigurationError, PathLossParams, ScenarioConfig, SvFadingParams,
                      assemble_channels, build_geometry)

SCHEMES = ("pso", "rps", "dps", "non_ris", "remark1")
AXES = ("L", "sqrtN", "Gamma")
CSV_COLUMNS = ("seed", "scheme", "axis", "axis_value", "eta_linear", "eta_db",
               "iterations", "converged", "wall_time_s")

_POSITIONS, _CHANNEL, _PSO, _RPS = range(4)
_FIXED_POSITIONS_RUN = 2**32  # positions key when users stay put across runs


@dataclass(frozen=True)
class ExperimentConfig:
    K: int = 4
    M: int = 10
    N: int = 100
    a: float = 0.02
    carrier_hz: float = 5.9e9
    Gamma: float = 1.0
    alpha: float = 2.0
    G_dB: float = -43.0
    G_prime_dB: float = -43.0
    T: float = 1e-3
    D: float = 50.0
    bs_height: float = 25.0
    ris_height: float = 25.0
    square_side: float = 100.0
    bs_to_square: float = 100.0
    bs_ris_horizontal: float = 100.0
    grid: bool = True
    far_field: bool = True
    fading: bool = True
    redraw_positions: bool = True
    ris_delay_scale: float | None = None  # meters per symbol; None: all at +1
    L: int = 60
    cluster_rate: float = 0.25
    ray_rate: float = 1.0
    cluster_decay: float = 16.0
    ray_decay: float = 8.0
    window: int = isi.DEFAULT_WINDOW
    runs: int = 300
    master_seed: int = 0
    sigma: float = 0.01
    step_eta: float = 1e-2
    step_mu: float = 1e-2
    step_theta: float | None = None
    max_outer_iters: int = 5000
    check_every: int = 200
    num_restarts: int = 0
    init_mode: str = "uniform-random"
    quant_bits: int = 2
    schemes: tuple[str, ...] = ("pso", "rps", "dps", "non_ris")
    axis: str | None = None
    values: tuple[float, ...] = ()
    workers: int = 1
    record_timing: bool = False

    def __post_init__(self):
        object.__setattr__(self, "schemes", tuple(self.schemes))
        object.__setattr__(self, "values", tuple(self.values))
        self.validate()

    def validate(self) -> None:
        if self.K < 1:
            raise ConfigurationError("K: must be >= 1")
        if self.N < 1:
            raise ConfigurationError("N: must be >= 1")
        if not 0.0 <= self.Gamma <= 1.0:
            raise ConfigurationError("Gamma: must lie in [0, 1]")
        if self.grid and math.isqrt(self.N) ** 2 != self.N:
            raise ConfigurationError(f"N: {self.N} is not a perfect square (grid=true)")
        if self.runs < 1:
            raise ConfigurationError("runs: must be >= 1")
        if self.workers < 1:
            raise ConfigurationError("workers: must be >= 1")
        if self.T <= 0:
            raise ConfigurationError("T: must be positive")
        bad = [s for s in self.schemes if s not in SCHEMES]
        if bad or not self.schemes:
            raise ConfigurationError(f"schemes: unknown {bad}; choose from {SCHEMES}")
        if self.axis is not None and self.axis not in AXES:
            raise ConfigurationError(f"axis: must be one of {AXES}")
        if self.axis is not None and not self.values:
            raise ConfigurationError("values: an axis needs at least one value")
        if self.ris_delay_scale is not None and self.ris_delay_scale <= 0:
            raise ConfigurationError("ris_delay_scale: must be positive")
        for point in self.points():
            if "remark1" in point.schemes and point.N % 2:
                raise ConfigurationError(f"schemes: remark1 needs even N, got {point.N}")
            point.scenario().validate()
            point.path_loss()
            point.sv()
            point.pso_config()

    def points(self) -> list["ExperimentConfig"]:
        """The config at each axis value (itself when there is no axis)."""
        if self.axis is None:
            return [self]
        return [self.at(v) for v in self.values]

    def at(self, value) -> "ExperimentConfig":
        if self.axis == "L":
            changes = {"L": int(value)}
        elif self.axis == "sqrtN":
            changes = {"N": int(value) ** 2}
        else:
            changes = {"Gamma": float(value)}
        return dataclasses.replace(self, axis=None, values=(), **changes)

    def scenario(self) -> ScenarioConfig:
        return ScenarioConfig(
            num_users=self.K, num_bs_antennas=self.M, num_elements=self.N,
            element_size=self.a, bs_height=self.bs_height, ris_height=self.ris_height,
            square_side=self.square_side, bs_to_square=self.bs_to_square,
            bs_ris_horizontal=self.bs_ris_horizontal, ris_offset=self.D, grid=self.grid,
        )

    def path_loss(self) -> PathLossParams:
        return PathLossParams.from_db(self.G_dB, self.G_prime_dB, self.alpha)

    def sv(self) -> SvFadingParams:
        return SvFadingParams(self.cluster_rate, self.ray_rate, self.cluster_decay,
                              self.ray_decay, self.L)

    def pso_config(self) -> pso.PsoConfig:
        return pso.PsoConfig(
            step_eta=self.step_eta, step_mu=self.step_mu, step_theta=self.step_theta,
            sigma=self.sigma, max_outer_iters=self.max_outer_iters,
            num_restarts=self.num_restarts, init_mode=self.init_mode,
            check_every=self.check_every,
        )

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["schemes"] = list(self.schemes)
        d["values"] = list(self.values)
        return d


def config_from_dict(raw: dict) -> ExperimentConfig:
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigurationError(f"unknown config key(s): {', '.join(unknown)}")
    try:
        return ExperimentConfig(**raw)
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from exc


def load_config(path) -> ExperimentConfig:
    """Read a JSON config; missing keys take the defaults."""
    text = Path(path).read_text(encoding="utf-8")
    raw = json.loads(text) if text.strip() else {}
    if not isinstance(raw, dict):
        raise ConfigurationError("config file must hold a JSON object")
    return config_from_dict(raw)


@dataclass
class RunResult:
    seed: int
    scheme: str
    eta: float
    user_isi_power: list[float]
    iterations: int = 0
    converged: bool = True
    wall_time_s: float = 0.0
    axis: str | None = None
    axis_value: float | None = None

    @property
    def eta_db(self) -> float:
        return 10 * math.log10(self.eta) if self.eta > 0 else -math.inf


@dataclass
class SweepSummary:
    axis: str | None
    axis_value: float | None
    scheme: str
    runs: int
    mean_eta_linear: float
    std_eta_linear: float
    eta_db_of_mean: float
    mean_eta_db: float
    std_eta_db: float


def _stream(cfg: ExperimentConfig, seed: int, purpose: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence(cfg.master_seed, spawn_key=(seed, purpose)))


def draw_channels(cfg: ExperimentConfig, seed: int):
    """Channel realization for run ``seed`` (unnormalized)."""
    pos_run = seed if cfg.redraw_positions else _FIXED_POSITIONS_RUN
    geom = build_geometry(cfg.scenario(), _stream(cfg, pos_run, _POSITIONS))
    scale = math.inf if cfg.ris_delay_scale is None else cfg.ris_delay_scale
    return assemble_channels(geom, cfg.path_loss(), cfg.sv(), cfg.Gamma,
                             _stream(cfg, seed, _CHANNEL), T=cfg.T, fading=cfg.fading,
                             far_field=cfg.far_field, ris_delay_scale=scale)


def run_schemes(cfg: ExperimentConfig, seed: int, schemes=None) -> list[RunResult]:
    """All requested schemes on one shared, peak-normalized realization."""
    schemes = cfg.schemes if schemes is None else tuple(schemes)
    ch = isi.normalize_peak_power(draw_channels(cfg, seed))
    dec = isi.decompose_channels(ch, cfg.window)
    N = ch.num_elements
    solution: dict[str, tuple] = {}

    def solve():
        if not solution:
            t0 = time.perf_counter()
            sol = pso.optimize_decomposition(dec, cfg.pso_config(), _stream(cfg, seed, _PSO))
            solution["pso"] = (sol, time.perf_counter() - t0)
        return solution["pso"]

    out = []
    for scheme in schemes:
        iterations, converged = 0, True
        t0 = time.perf_counter()
        if scheme == "pso":
            sol, elapsed = solve()
            theta, iterations, converged = sol.theta, sol.iterations, sol.converged
            t0 = time.perf_counter() - elapsed
        elif scheme == "dps":
            sol, _ = solve()
            t0 = time.perf_counter()
            theta = baselines.quantize_phases(sol.theta, baselines.QuantizerSpec(cfg.quant_bits))
            iterations, converged = sol.iterations, sol.converged
        elif scheme == "rps":
            theta = baselines.random_phases(N, _stream(cfg, seed, _RPS))
        elif scheme == "remark1":
            theta = baselines.remark1_phases(N)
        elif scheme == "non_ris":
            theta = None
        else:
            raise ValueError(f"unknown scheme {scheme!r}")
        if theta is None:
            eta, per_user = isi.max_isi_power(
                isi.decompose_channels(ch.without_ris(), cfg.window), np.zeros(N))
        else:
            eta, per_user = isi.max_isi_power(dec, theta)
        out.append(RunResult(seed, scheme, eta, per_user.tolist(), iterations, converged,
                             time.perf_counter() - t0))
    return out


def run_single(cfg: ExperimentConfig, seed: int, scheme: str) -> RunResult:
    return run_schemes(cfg, seed, (scheme,))[0]


def _task(args):
    cfg, seed, axis, value = args
    results = run_schemes(cfg, seed)
    for r in results:
        r.axis, r.axis_value = axis, value
    return results


def summarize(results: list[RunResult]) -> list[SweepSummary]:
    groups: dict[tuple, list[float]] = {}
    for r in results:
        groups.setdefault((r.axis, r.axis_value, r.scheme), []).append(r.eta)
    out = []
    for (axis, value, scheme), etas in groups.items():
        eta = np.asarray(etas)
        mean = float(eta.mean())
        with np.errstate(divide="ignore"):
            db = 10 * np.log10(eta)
        out.append(SweepSummary(
            axis, value, scheme, eta.size, mean,
            float(eta.std(ddof=1)) if eta.size > 1 else 0.0,
            10 * math.log10(mean) if mean > 0 else -math.inf,
            float(db.mean()),
            float(db.std(ddof=1)) if eta.size > 1 and np.all(np.isfinite(db)) else math.nan,
        ))
    return out


def run_monte_carlo(cfg: ExperimentConfig, workers: int | None = None):
    """Every run x scheme x axis value; order-independent of ``workers``."""
    workers = cfg.workers if workers is None else workers
    tasks = []
    for point, value in zip(cfg.points(), cfg.values or (None,)):
        tasks.extend((point, seed, cfg.axis, value) for seed in range(cfg.runs))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_task, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
    else:
        chunks = [_task(t) for t in tasks]
    results = [r for chunk in chunks for r in chunk]
    return results, summarize(results)


def _num(x) -> str:
    if x is None or (isinstance(x, float) and not math.isfinite(x)):
        return ""
    return repr(float(x)) if isinstance(x, float) else str(x)


def results_csv(results: list[RunResult], record_timing: bool = False) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in results:
        w.writerow([
            r.seed, r.scheme, r.axis or "", _num(r.axis_value), _num(r.eta), _num(r.eta_db),
            r.iterations, str(r.converged).lower(),
            _num(r.wall_time_s) if record_timing else "",
        ])
    return buf.getvalue()


def summary_csv(summaries: list[SweepSummary]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    names = [f.name for f in dataclasses.fields(SweepSummary)]
    w.writerow(names)
    for s in summaries:
        w.writerow([_num(getattr(s, n)) if n not in ("axis", "scheme") else (getattr(s, n) or "")
                    for n in names])
    return buf.getvalue()


def _finite_or_none(x):
    return x if x is None or math.isfinite(x) else None


def results_json(results: list[RunResult], cfg: ExperimentConfig,
                 record_timing: bool = False) -> str:
    rows = []
    for r in results:
        rows.append({
            "seed": r.seed, "scheme": r.scheme, "axis": r.axis, "axis_value": r.axis_value,
            "eta_linear": r.eta, "eta_db": _finite_or_none(r.eta_db),
            "user_isi_power": r.user_isi_power, "iterations": r.iterations,
            "converged": r.converged,
            "wall_time_s": r.wall_time_s if record_timing else None,
        })
    return json.dumps({"config": cfg.to_dict(), "results": rows}, indent=2) + "\n"


def emit_results(results: list[RunResult], fmt: str, path, cfg: ExperimentConfig | None = None,
                 record_timing: bool = False) -> Path:
    """Write run-level results as CSV or JSON (UTF-8, trailing newline)."""
    path = Path(path)
    if fmt == "csv":
        text = results_csv(results, record_timing)
    elif fmt == "json":
        text = results_json(results, cfg or ExperimentConfig(), record_timing)
    else:
        raise ValueError(f"unknown format {fmt!r}")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path


def write_study(cfg: ExperimentConfig, results, summaries, out_dir, fmt: str = "csv") -> Path:
    """Results, summary table and the effective config under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    emit_results(results, fmt, out / f"results.{fmt}", cfg, cfg.record_timing)
    (out / "summary.csv").write_text(summary_csv(summaries), encoding="utf-8")
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2) + "\n",
                                     encoding="utf-8")
    return out


def default_out_dir() -> str:
    return os.environ.get("RIS_EQUALIZER_OUT", "results")


@dataclass
class GradcheckTrial:
    max_rel_error: float
    worst_user: int
    worst_element: int


@dataclass
class GradcheckReport:
    trials: list[GradcheckTrial] = field(default_factory=list)
    tolerance: float = 1e-4

    @property
    def max_rel_error(self) -> float:
        return max((t.max_rel_error for t in self.trials), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def fd_gradient(f, theta, h=1e-6) -> np.ndarray:
    g = np.empty(theta.size)
    for n in range(theta.size):
        e = np.zeros(theta.size)
        e[n] = h
        g[n] = (f(theta + e) - f(theta - e)) / (2 * h)
    return g


def gradient_error(dec: isi.IsiDecomposition, state: pso.OptimizerState,
                   h: float = 1e-6) -> GradcheckTrial:
    """Analytic vs central-difference gradient, per user term.

    The error of user k is ``max_n |g_kn - fd_kn| / max_n |fd_kn|``; a user
    whose gradient vanishes identically counts as exact.
    """
    worst = GradcheckTrial(0.0, 0, 0)
    for k in range(dec.num_users):
        mu = np.zeros(dec.num_users)
        mu[k] = state.mu[k]
        single = pso.OptimizerState(state.theta, state.eta, mu)
        g = pso.grad_theta_all(dec, single)
        fd = fd_gradient(lambda th: mu[k] * isi.isi_powers(dec, th)[k], state.theta, h)
        err = np.abs(g - fd)
        denom = np.abs(fd).max()
        rel = 0.0 if err.max() == 0 else err.max() / max(denom, np.finfo(float).tiny)
        if rel > worst.max_rel_error:
            worst = GradcheckTrial(float(rel), k, int(np.argmax(err)))
    return worst


def gradcheck(cfg: ExperimentConfig, trials: int = 100, h: float = 1e-6,
              tolerance: float = 1e-4) -> GradcheckReport:
    """Random channel and optimizer state per trial, compared to finite differences."""
    if trials < 1:
        raise ConfigurationError("trials: must be >= 1")
    report = GradcheckReport(tolerance=tolerance)
    for t in range(trials):
        ch = isi.normalize_peak_power(draw_channels(cfg, t))
        dec = isi.decompose_channels(ch, cfg.window)
        rng = _stream(cfg, t, _PSO)
        state = pso.OptimizerState(rng.uniform(0, 2 * np.pi, dec.num_elements),
                                   float(rng.uniform()), rng.uniform(0, 1, dec.num_users))
        report.trials.append(gradient_error(dec, state, h))
    return report


def grid_search_two(dec: isi.IsiDecomposition, step: float = 0.01) -> float:
    """Exhaustive worst-user ISI minimum for N = 2 on a square phase mesh."""
    if dec.num_elements != 2:
        raise ValueError("grid oracle is limited to N = 2")
    grid = np.arange(0.0, 2 * np.pi, step)
    e = np.exp(-1j * grid)
    best = math.inf
    for e1 in e:
        I = (dec.C - dec.y0)[:, None] + dec.B[:, :1] * e1 + dec.B[:, 1:2] * e[None, :]
        best = min(best, float(np.max(np.abs(I) ** 2, axis=0).min()))
    return best


@dataclass
class OracleReport:
    pso_eta: list[float]
    grid_eta: list[float]
    tolerance: float = 1e-2
    required: float = 0.9

    @property
    def hits(self) -> int:
        return sum(p <= g + self.tolerance for p, g in zip(self.pso_eta, self.grid_eta))

    @property
    def passed(self) -> bool:
        return self.hits >= math.ceil(self.required * len(self.pso_eta))


def oracle_instance(cfg: ExperimentConfig, draw: int) -> isi.IsiDecomposition:
    """One K=1, N=2 peak-normalized random channel with a strong surface."""
    from .channel import random_channel_set

    rng = _stream(cfg, draw, _CHANNEL)
    ch = random_channel_set(1, 2, cfg.L, rng, ris_scale=1.0, max_ris_delay=1, sv=cfg.sv())
    return isi.decompose_channels(isi.normalize_peak_power(ch), cfg.window)


def oracle(cfg: ExperimentConfig, draws: int = 20, grid_step: float = 0.01,
           restarts: int = 8) -> OracleReport:
    pcfg = dataclasses.replace(cfg.pso_config(), num_restarts=restarts)
    pso_eta, grid_eta = [], []
    for d in range(draws):
        dec = oracle_instance(cfg, d)
        pso_eta.append(pso.optimize_decomposition(dec, pcfg, _stream(cfg, d, _PSO)).eta)
        grid_eta.append(grid_search_two(dec, grid_step))
    return OracleReport(pso_eta, grid_eta)
