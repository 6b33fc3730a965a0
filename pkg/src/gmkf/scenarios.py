"""Benchmark scenarios: three five-cluster noise generators driving a
constant-velocity tracker with position measurements.

Each scenario scales the cluster means of a fixed univariate mixture by a
separation parameter c while keeping every cluster variance at 1, so c alone
controls how non-Gaussian the noise is. The process noise embeds the same
generator into the two-dimensional state through the rank-one driving vector
[dt, 1]; the measurement noise uses the generator directly.
"""

import json
from dataclasses import dataclass, field, fields

import numpy as np

from .exceptions import ConfigError
from .filters import SystemModel
from .mixtures import GaussianComponent, GaussianMixture

# weights, cluster means; all cluster variances are 1
MODEL_TABLE = {
    1: ((0.2, 0.2, 0.2, 0.2, 0.2), (-50.0, -30.0, 0.0, 30.0, 50.0)),
    2: ((0.1, 0.1, 0.6, 0.1, 0.1), (-50.0, -30.0, 0.0, 30.0, 50.0)),
    3: ((0.5, 0.1, 0.1, 0.1, 0.2), (-50.0, 10.0, 30.0, 50.0, 80.0)),
}

DEFAULT_DT = 0.1080
DEFAULT_C_GRID = tuple(float(v) for v in np.geomspace(0.02, 2.5, 16))

_FEEDBACK_MODES = ("shared-bank", "hard-decision")


def scalar_mixture(model_id: int, c: float) -> GaussianMixture:
    """Univariate noise generator: Table means scaled by c, unit variances."""
    if model_id not in MODEL_TABLE:
        raise ConfigError(f"unknown model_id {model_id!r}, expected one of 1, 2, 3")
    if not c > 0.0:
        raise ConfigError(f"separation scale must be positive, got {c!r}")
    weights, means = MODEL_TABLE[model_id]
    comps = tuple(
        GaussianComponent(np.array([c * m]), np.array([[1.0]])) for m in means
    )
    return GaussianMixture(np.array(weights), comps)


@dataclass(eq=False)
class ScenarioConfig:
    """Everything needed to reproduce one experiment, JSON-mirrorable.

    c_measurement holds the sweep values for the measurement-noise separation;
    c_process stays fixed (scaling it too would blow up the state magnitude
    and with it every error curve). The steady-state window is the trailing
    window_fraction of each run, which drops the initial-covariance transient.
    """

    model_id: int = 1
    c_process: float = 1.0
    c_measurement: tuple = DEFAULT_C_GRID
    dt: float = DEFAULT_DT
    steps: int = 100
    runs: int = 300
    master_seed: int = 0
    window_fraction: float = 0.5
    feedback: str = "shared-bank"
    x0: np.ndarray = field(default_factory=lambda: np.zeros(2))
    P0: np.ndarray = field(default_factory=lambda: np.eye(2))

    def __post_init__(self):
        if self.model_id not in MODEL_TABLE:
            raise ConfigError(
                f"unknown model_id {self.model_id!r}, expected one of 1, 2, 3"
            )
        self.c_measurement = tuple(float(c) for c in np.atleast_1d(self.c_measurement))
        if len(self.c_measurement) == 0:
            raise ConfigError("c_measurement must hold at least one value")
        if any(not c > 0.0 for c in self.c_measurement):
            raise ConfigError("all c_measurement values must be positive")
        if not self.c_process > 0.0:
            raise ConfigError(f"c_process must be positive, got {self.c_process!r}")
        if not self.dt > 0.0:
            raise ConfigError(f"dt must be positive, got {self.dt!r}")
        self.steps = int(self.steps)
        self.runs = int(self.runs)
        if self.steps < 2:
            raise ConfigError(f"steps must be at least 2, got {self.steps}")
        if self.runs < 2:
            raise ConfigError(f"runs must be at least 2, got {self.runs}")
        self.master_seed = int(self.master_seed)
        if not 0 <= self.master_seed < 2**64:
            raise ConfigError("master_seed must fit in an unsigned 64-bit integer")
        if not 0.0 < self.window_fraction <= 1.0:
            raise ConfigError(
                f"window_fraction must be in (0, 1], got {self.window_fraction!r}"
            )
        if self.feedback not in _FEEDBACK_MODES:
            raise ConfigError(
                f"feedback must be one of {_FEEDBACK_MODES}, got {self.feedback!r}"
            )
        self.x0 = np.atleast_1d(np.array(self.x0, dtype=np.float64))
        self.P0 = np.atleast_2d(np.array(self.P0, dtype=np.float64))
        if self.x0.shape != (2,):
            raise ConfigError(f"x0 must be a 2-vector, got shape {self.x0.shape}")
        if self.P0.shape != (2, 2):
            raise ConfigError(f"P0 must be 2x2, got shape {self.P0.shape}")

    @property
    def window_start(self) -> int:
        """First step index inside the steady-state window."""
        return self.steps - int(round(self.steps * self.window_fraction))

    def to_dict(self) -> dict:
        return {
            "model_id": self.model_id,
            "c_process": self.c_process,
            "c_measurement": list(self.c_measurement),
            "dt": self.dt,
            "steps": self.steps,
            "runs": self.runs,
            "master_seed": self.master_seed,
            "window_fraction": self.window_fraction,
            "feedback": self.feedback,
            "x0": self.x0.tolist(),
            "P0": self.P0.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        if not isinstance(d, dict):
            raise ConfigError(f"scenario config must be an object, got {type(d).__name__}")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown scenario config keys: {', '.join(unknown)}")
        return cls(**d)


def load_scenario(path) -> ScenarioConfig:
    """Read a ScenarioConfig from a JSON file; any malformation is ConfigError."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read scenario config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in scenario config {path}: {exc}") from exc
    return ScenarioConfig.from_dict(doc)


def build_system(cfg: ScenarioConfig, c: float) -> SystemModel:
    """Constant-velocity tracking system at measurement separation c.

    The process noise pushes a scalar acceleration-like draw through [dt, 1],
    giving each cluster the rank-one covariance outer([dt, 1]) and mean
    c_process * m_i * [dt, 1]; the measurement noise is the univariate
    generator scaled by c.
    """
    if not c > 0.0:
        raise ConfigError(f"separation scale must be positive, got {c!r}")
    dt = cfg.dt
    F = np.array([[1.0, dt], [0.0, 1.0]])
    H = np.array([[1.0, 0.0]])
    drive = np.array([dt, 1.0])
    Q = np.outer(drive, drive)
    weights, means = MODEL_TABLE[cfg.model_id]
    process = GaussianMixture(
        np.array(weights),
        tuple(
            GaussianComponent(cfg.c_process * m * drive, Q.copy()) for m in means
        ),
    )
    return SystemModel(
        F=F,
        H=H,
        dt=dt,
        process_noise=process,
        measurement_noise=scalar_mixture(cfg.model_id, c),
    )
