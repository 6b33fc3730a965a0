"""Backend selection and the per-run simulation entry point.

Two interchangeable backends run the whole-trajectory loop: a compiled
kernel (built from _cyloop.pyx at install time) and a pure composition of
the library step functions. Selection order: an explicit `backend=`
argument, then the GMKF_BACKEND environment variable, then "compiled" when
the extension imported and "pure" otherwise. The kernel only handles
two-dimensional states with scalar measurements; anything else falls back
to the pure path automatically.
"""

import os
from typing import NamedTuple

import numpy as np

from ..exceptions import ConfigError, NumericsError
from .. import filters as _filters
from . import pyloop

try:
    from . import _cyloop
except ImportError:  # extension not built; the pure path covers everything
    _cyloop = None

_CHOICES = ("auto", "compiled", "pure")


def available_backends() -> tuple:
    return ("compiled", "pure") if _cyloop is not None else ("pure",)


def resolve_backend(name=None) -> str:
    """Map an explicit name or the GMKF_BACKEND variable to a backend."""
    choice = name if name is not None else os.environ.get("GMKF_BACKEND", "auto")
    choice = (choice or "auto").strip().lower()
    if choice not in _CHOICES:
        raise ConfigError(
            f"unknown backend {choice!r}, expected one of {', '.join(_CHOICES)}"
        )
    if choice == "compiled" and _cyloop is None:
        raise ConfigError("compiled backend requested but the extension is not built")
    if choice == "auto":
        return "compiled" if _cyloop is not None else "pure"
    return choice


class RunResult(NamedTuple):
    """Per-step and window-aggregated outputs of one simulated run.

    err2 is (steps, 4) squared error norms per filter in the column order
    (full bank, max-weight readout, oracle, moment-matched Kalman); bounds
    is (steps, 3) with (lower bound, readout upper bound, Kalman trace),
    NaN before the window. win_err2 and win_bounds are means over the
    window; win_err2[1] is NaN when the readout filter diverged.
    """

    err2: np.ndarray
    bounds: np.ndarray
    win_err2: np.ndarray
    win_bounds: np.ndarray
    diverged: bool
    backend: str


def _kernel_args(model, x0, P0, states, measurements, labels_i, labels_j):
    pn = model.process_noise
    mn = model.measurement_noise
    c_v = pn.n_components
    qv = np.empty((c_v, 3))
    qv[:, 0] = pn.covs[:, 0, 0]
    qv[:, 1] = pn.covs[:, 0, 1]
    qv[:, 2] = pn.covs[:, 1, 1]
    pw = np.outer(pn.weights, mn.weights).reshape(-1)
    pw = pw / np.sum(pw)
    with np.errstate(divide="ignore"):
        logpw = np.where(pw > 0.0, np.log(pw), -np.inf)
    pmm = model.process_mm
    mmm = model.measurement_mm
    q_mm = np.array([pmm.cov[0, 0], pmm.cov[0, 1], pmm.cov[1, 1]])
    P0 = np.asarray(P0, dtype=np.float64)
    return dict(
        f_flat=np.ascontiguousarray(model.F, dtype=np.float64).reshape(-1),
        h0=float(model.H[0, 0]),
        h1=float(model.H[0, 1]),
        uv=np.ascontiguousarray(pn.means, dtype=np.float64),
        qv=qv,
        bw=np.ascontiguousarray(mn.means[:, 0], dtype=np.float64),
        rw=np.ascontiguousarray(mn.covs[:, 0, 0], dtype=np.float64),
        pw=pw,
        logpw=logpw,
        u_mm=np.ascontiguousarray(pmm.mean, dtype=np.float64),
        q_mm=q_mm,
        b_mm=float(mmm.mean[0]),
        r_mm=float(mmm.cov[0, 0]),
        states=np.ascontiguousarray(states, dtype=np.float64),
        zmeas=np.ascontiguousarray(measurements[:, 0], dtype=np.float64),
        li=np.ascontiguousarray(labels_i, dtype=np.int64),
        lj=np.ascontiguousarray(labels_j, dtype=np.int64),
        x0=np.ascontiguousarray(x0, dtype=np.float64),
        p0=np.array([P0[0, 0], P0[0, 1], P0[1, 1]]),
    )


def simulate_run(
    model,
    x0,
    P0,
    states,
    measurements,
    labels_i,
    labels_j,
    window_start,
    feedback="shared-bank",
    backend=None,
) -> RunResult:
    """Run the four filters and per-step bounds over one trajectory.

    The readout filter counts as diverged when any of its window-step
    squared errors is non-finite or exceeds 1e12 times the mean squared
    state norm; its window mean is then NaN and callers exclude the run
    from that filter's aggregate only.
    """
    if feedback not in ("shared-bank", "hard-decision"):
        raise ConfigError(f"unknown feedback mode {feedback!r}")
    states = np.asarray(states, dtype=np.float64)
    measurements = np.asarray(measurements, dtype=np.float64)
    if measurements.ndim == 1:
        measurements = measurements[:, None]
    steps = states.shape[0]
    if not 0 <= window_start < steps:
        raise ConfigError(
            f"window_start {window_start} outside [0, {steps})"
        )
    name = resolve_backend(backend)
    if name == "compiled" and (model.n_x != 2 or model.n_z != 1):
        name = "pure"
    err2 = np.empty((steps, 4))
    bounds = np.empty((steps, 3))
    if name == "compiled":
        code = _cyloop.run_trajectory(
            **_kernel_args(
                model, x0, P0, states, measurements, labels_i, labels_j
            ),
            window_start=int(window_start),
            hard=(feedback == "hard-decision"),
            sign=float(_filters._INNOVATION_SIGN),
            err2_out=err2,
            bounds_out=bounds,
        )
        if code != 0:
            raise NumericsError(_cyloop.ERROR_MESSAGES[code])
    else:
        pyloop.run_trajectory(
            model,
            x0,
            P0,
            states,
            measurements,
            labels_i,
            labels_j,
            window_start,
            feedback,
            err2,
            bounds,
        )

    win = slice(window_start, steps)
    win_err2 = err2[win].mean(axis=0)
    win_bounds = bounds[win].mean(axis=0)
    thresh2 = 1e12 * float(np.mean(np.sum(states * states, axis=1)))
    if thresh2 == 0.0:
        thresh2 = 1e12
    g = err2[win, 1]
    diverged = bool(np.any(~np.isfinite(g)) or np.any(g > thresh2))
    if diverged:
        win_err2[1] = np.nan
    return RunResult(err2, bounds, win_err2, win_bounds, diverged, name)
