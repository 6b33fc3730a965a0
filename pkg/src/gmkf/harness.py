"""Monte Carlo experiment harness: trajectory generation, per-separation
experiments, and full sweeps.

Every run owns the RNG substream seeded by (master seed, index of c in the
ascending sweep grid, run index), so results do not depend on worker count
or completion order; aggregation reduces preallocated per-run arrays in run
order. Runs whose readout filter diverged are excluded from that filter's
aggregate only and reported in the diverged_runs column.
"""

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._backend import resolve_backend, simulate_run
from .bounds import unconditional_mse_mc
from .exceptions import ConfigError
from .mixtures import kl_vs_moment_matched, sample
from .scenarios import ScenarioConfig, build_system


@dataclass(eq=False)
class Trajectory:
    """One synthetic state/measurement history with the generating labels."""

    states: np.ndarray
    measurements: np.ndarray
    active_process_labels: np.ndarray
    active_measurement_labels: np.ndarray

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=np.float64))
        self.measurements = np.atleast_2d(
            np.asarray(self.measurements, dtype=np.float64)
        )
        self.active_process_labels = np.asarray(
            self.active_process_labels, dtype=np.int64
        )
        self.active_measurement_labels = np.asarray(
            self.active_measurement_labels, dtype=np.int64
        )
        n = self.states.shape[0]
        if not (
            self.measurements.shape[0]
            == self.active_process_labels.shape[0]
            == self.active_measurement_labels.shape[0]
            == n
        ):
            raise ConfigError("trajectory fields disagree on the number of steps")

    @property
    def steps(self) -> int:
        return self.states.shape[0]


def generate_trajectory(model, steps, rng, x0=None) -> Trajectory:
    """Propagate the system forward, recording which clusters fired.

    Noise is drawn in two fixed batches (process first, then measurement) so
    a given generator state always produces the same trajectory. The step-k
    measurement observes the step-k state.
    """
    steps = int(steps)
    if steps < 1:
        raise ConfigError(f"steps must be at least 1, got {steps}")
    if x0 is None:
        x0 = np.zeros(model.n_x)
    x = np.atleast_1d(np.asarray(x0, dtype=np.float64))
    if x.shape != (model.n_x,):
        raise ConfigError(f"x0 shape {x.shape}, expected ({model.n_x},)")
    vs, li = sample(model.process_noise, rng, size=steps)
    ws, lj = sample(model.measurement_noise, rng, size=steps)
    states = np.empty((steps, model.n_x))
    for k in range(steps):
        x = model.F @ x + vs[k]
        states[k] = x
    measurements = states @ model.H.T + ws
    return Trajectory(states, measurements, li, lj)


def _db(x: float) -> float:
    """Decibel twin of a linear value; zero maps to -inf, NaN stays NaN."""
    if x > 0.0:
        return 10.0 * math.log10(x)
    if x == 0.0:
        return -math.inf
    return math.nan


@dataclass
class SweepRow:
    """One sweep point: empirical MSEs with confidence half-widths, analytic
    bounds, and the decibel twins. Field order is the report column order."""

    c: float
    kl_nats: float
    mse_gsf: float
    ci_gsf: float
    mse_gsfr: float
    ci_gsfr: float
    mse_matched: float
    ci_matched: float
    mse_lmmse: float
    ci_lmmse: float
    lb: float
    ub_gsfr: float
    ub_lmmse: float
    ub_combined: float
    diverged_runs: int
    mse_gsf_db: float = field(init=False)
    mse_gsfr_db: float = field(init=False)
    mse_matched_db: float = field(init=False)
    mse_lmmse_db: float = field(init=False)
    lb_db: float = field(init=False)
    ub_gsfr_db: float = field(init=False)
    ub_lmmse_db: float = field(init=False)
    ub_combined_db: float = field(init=False)

    def __post_init__(self):
        self.mse_gsf_db = _db(self.mse_gsf)
        self.mse_gsfr_db = _db(self.mse_gsfr)
        self.mse_matched_db = _db(self.mse_matched)
        self.mse_lmmse_db = _db(self.mse_lmmse)
        self.lb_db = _db(self.lb)
        self.ub_gsfr_db = _db(self.ub_gsfr)
        self.ub_lmmse_db = _db(self.ub_lmmse)
        self.ub_combined_db = _db(self.ub_combined)


@dataclass(eq=False)
class SweepReport:
    """All sweep rows (ascending c) plus what produced them."""

    config: ScenarioConfig
    backend: str
    rows: list

    def __post_init__(self):
        cs = [row.c for row in self.rows]
        if cs != sorted(cs):
            raise ConfigError("sweep rows must be ordered by increasing c")


def _run_block(cfg, c, c_index, start, stop, backend):
    """Simulate runs [start, stop) of one sweep point; picklable worker."""
    model = build_system(cfg, c)
    n = stop - start
    win_err2 = np.empty((n, 4))
    win_bounds = np.empty((n, 3))
    diverged = np.zeros(n, dtype=bool)
    for r, run_index in enumerate(range(start, stop)):
        rng = np.random.default_rng([cfg.master_seed, c_index, run_index])
        traj = generate_trajectory(model, cfg.steps, rng, cfg.x0)
        res = simulate_run(
            model,
            cfg.x0,
            cfg.P0,
            traj.states,
            traj.measurements,
            traj.active_process_labels,
            traj.active_measurement_labels,
            cfg.window_start,
            cfg.feedback,
            backend,
        )
        win_err2[r] = res.win_err2
        win_bounds[r] = res.win_bounds
        diverged[r] = res.diverged
    return start, win_err2, win_bounds, diverged


def run_experiment(
    cfg: ScenarioConfig,
    c: float,
    c_index: int = 0,
    workers: int = 1,
    backend=None,
) -> SweepRow:
    """All runs of one sweep point, reduced to a SweepRow."""
    backend = resolve_backend(backend)
    workers = max(1, int(workers))
    runs = cfg.runs
    win_err2 = np.empty((runs, 4))
    win_bounds = np.empty((runs, 3))
    diverged = np.zeros(runs, dtype=bool)

    n_blocks = min(workers, runs)
    edges = np.linspace(0, runs, n_blocks + 1).astype(int)
    blocks = [
        (int(edges[b]), int(edges[b + 1]))
        for b in range(n_blocks)
        if edges[b] < edges[b + 1]
    ]
    if workers == 1:
        results = [
            _run_block(cfg, c, c_index, start, stop, backend)
            for start, stop in blocks
        ]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(_run_block, cfg, c, c_index, start, stop, backend)
                for start, stop in blocks
            ]
            results = [f.result() for f in futures]
    for start, e2, wb, dv in results:
        n = e2.shape[0]
        win_err2[start : start + n] = e2
        win_bounds[start : start + n] = wb
        diverged[start : start + n] = dv

    mse_gsf, ci_gsf = unconditional_mse_mc(win_err2[:, 0])
    kept = win_err2[~diverged, 1]
    if kept.shape[0] >= 2:
        mse_gsfr, ci_gsfr = unconditional_mse_mc(kept)
    else:
        mse_gsfr, ci_gsfr = math.nan, math.nan
    mse_matched, ci_matched = unconditional_mse_mc(win_err2[:, 2])
    mse_lmmse, ci_lmmse = unconditional_mse_mc(win_err2[:, 3])
    lb = float(np.mean(win_bounds[:, 0]))
    ub_gsfr = float(np.mean(win_bounds[:, 1]))
    ub_lmmse = float(np.mean(win_bounds[:, 2]))

    model = build_system(cfg, c)
    kl = kl_vs_moment_matched(model.measurement_noise)

    return SweepRow(
        c=float(c),
        kl_nats=float(kl),
        mse_gsf=mse_gsf,
        ci_gsf=ci_gsf,
        mse_gsfr=mse_gsfr,
        ci_gsfr=ci_gsfr,
        mse_matched=mse_matched,
        ci_matched=ci_matched,
        mse_lmmse=mse_lmmse,
        ci_lmmse=ci_lmmse,
        lb=lb,
        ub_gsfr=ub_gsfr,
        ub_lmmse=ub_lmmse,
        ub_combined=min(ub_gsfr, ub_lmmse),
        diverged_runs=int(np.sum(diverged)),
    )


def sweep(cfg: ScenarioConfig, workers: int = 1, backend=None) -> SweepReport:
    """run_experiment at every configured c, ascending."""
    backend = resolve_backend(backend)
    cs = sorted(cfg.c_measurement)
    rows = [
        run_experiment(cfg, c, c_index, workers, backend)
        for c_index, c in enumerate(cs)
    ]
    return SweepReport(config=cfg, backend=backend, rows=rows)
