"""Whole-trajectory loop built from the library step functions.

This is the reference backend: it composes gsf_step, gsf_r_step,
matched_step, lmmse_step, and evaluate_bounds exactly as a user of the
public API would, one step at a time. The compiled backend must agree with
it to floating-point noise; the test suite holds both to 1e-9 relative.
"""

import numpy as np

from ..bounds import evaluate_bounds
from ..exceptions import NumericsError
from ..filters import FilterState, gsf_r_step, gsf_step, lmmse_step, matched_step


def run_trajectory(
    model,
    x0,
    P0,
    states,
    measurements,
    labels_i,
    labels_j,
    window_start,
    feedback,
    err2_out,
    bounds_out,
):
    """Run the four filters over one trajectory, filling per-step outputs.

    err2_out (steps, 4) receives squared error norms per step in the column
    order (full bank, max-weight readout, oracle, moment-matched Kalman).
    bounds_out (steps, 3) receives (lower bound, readout upper bound, Kalman
    trace) inside the steady-state window and NaN before it. If the readout
    filter's own recursion fails numerically under hard-decision feedback,
    its remaining errors are set to infinity and the other filters continue.
    """
    steps = states.shape[0]
    priors = np.outer(
        model.process_noise.weights, model.measurement_noise.weights
    ).reshape(-1)
    hard = feedback == "hard-decision"
    gsf = FilterState(x0, P0)
    gsfr = FilterState(x0, P0)
    matched = FilterState(x0, P0)
    lmmse = FilterState(x0, P0)
    gsfr_dead = False
    for k in range(steps):
        z = measurements[k]
        x_true = states[k]
        lmmse = lmmse_step(model, lmmse, z)
        out = gsf_step(model, gsf, z)
        gsf = out.combined
        if k >= window_start:
            rec = evaluate_bounds(out.bank, priors, lmmse.P)
            bounds_out[k, 0] = rec.lb
            bounds_out[k, 1] = rec.ub_gsfr
            bounds_out[k, 2] = rec.ub_lmmse
        else:
            bounds_out[k, 0] = np.nan
            bounds_out[k, 1] = np.nan
            bounds_out[k, 2] = np.nan
        if hard:
            if gsfr_dead:
                err2_out[k, 1] = np.inf
            else:
                try:
                    gsfr = gsf_r_step(model, gsfr, z, feedback).selected
                except NumericsError:
                    gsfr_dead = True
                    err2_out[k, 1] = np.inf
                else:
                    d = gsfr.x_hat - x_true
                    err2_out[k, 1] = float(d @ d)
        else:
            d = out.selected.x_hat - x_true
            err2_out[k, 1] = float(d @ d)
        matched = matched_step(
            model, matched, z, int(labels_i[k]), int(labels_j[k])
        )
        d = gsf.x_hat - x_true
        err2_out[k, 0] = float(d @ d)
        d = matched.x_hat - x_true
        err2_out[k, 2] = float(d @ d)
        d = lmmse.x_hat - x_true
        err2_out[k, 3] = float(d @ d)
