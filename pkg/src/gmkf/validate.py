"""Cross-implementation invariant suite behind `gmkf validate`.

Four groups: single-mode equivalence (all four filters must coincide when
every noise is a plain Gaussian, checked against an explicitly spelled-out
conjugate update), the analytic readout bound against its Monte Carlo twin
on randomized banks, the bound sandwich on a small sweep, and determinism
under reseeding and worker counts. The groups are deliberately redundant
with the unit tests: they run on the installed package, on every available
backend, without test infrastructure.
"""

import numpy as np

from ._backend import available_backends, simulate_run
from .bounds import (
    evaluate_bounds,
    gsf_r_upper_bound,
    gsf_r_upper_bound_mc,
    lower_bound,
)
from .filters import FilterState, SystemModel, gsf_step, lmmse_step, matched_step
from .harness import generate_trajectory, run_experiment
from .mixtures import GaussianComponent, GaussianMixture
from .scenarios import ScenarioConfig


def _gaussian_model(F, H, u, Q, b, R) -> SystemModel:
    return SystemModel(
        F=F,
        H=H,
        dt=1.0,
        process_noise=GaussianMixture(
            np.array([1.0]), (GaussianComponent(np.asarray(u), np.asarray(Q)),)
        ),
        measurement_noise=GaussianMixture(
            np.array([1.0]), (GaussianComponent(np.array([b]), np.array([[R]])),)
        ),
    )


def _check_conjugate_oracle() -> None:
    """One bank update against the conjugate Gaussian posterior, written out
    in scalar arithmetic so no library code is shared with the quantity under
    test. A broken innovation update cannot pass this."""
    f00, f01, f10, f11 = 1.0, 0.25, 0.0, 1.0
    q00, q01, q11 = 0.5, 0.1, 0.4
    p00, p01, p11 = 1.5, 0.2, 0.9
    x0, x1 = 0.7, -1.2
    u0, u1 = 0.2, -0.1
    # z chosen away from the predicted measurement (0.9) so the residual
    # term is exercised with a nonzero value
    b, r, z = 0.3, 0.8, 1.7

    xp0 = f00 * x0 + f01 * x1 + u0
    xp1 = f10 * x0 + f11 * x1 + u1
    fp00 = f00 * p00 + f01 * p01
    fp01 = f00 * p01 + f01 * p11
    fp10 = f10 * p00 + f11 * p01
    fp11 = f10 * p01 + f11 * p11
    pp00 = q00 + fp00 * f00 + fp01 * f01
    pp01 = q01 + fp00 * f10 + fp01 * f11
    pp11 = q11 + fp10 * f10 + fp11 * f11
    s = pp00 + r
    w0 = pp00 / s
    w1 = pp01 / s
    resid = z - (xp0 + b)
    want_x0 = xp0 + w0 * resid
    want_x1 = xp1 + w1 * resid
    want_p00 = pp00 - s * w0 * w0
    want_p11 = pp11 - s * w1 * w1

    model = _gaussian_model(
        F=np.array([[f00, f01], [f10, f11]]),
        H=np.array([[1.0, 0.0]]),
        u=[u0, u1],
        Q=[[q00, q01], [q01, q11]],
        b=b,
        R=r,
    )
    out = gsf_step(model, FilterState([x0, x1], [[p00, p01], [p01, p11]]), np.array([z]))
    got = out.combined
    if not (
        abs(got.x_hat[0] - want_x0) < 1e-12
        and abs(got.x_hat[1] - want_x1) < 1e-12
        and abs(got.P[0, 0] - want_p00) < 1e-12
        and abs(got.P[1, 1] - want_p11) < 1e-12
    ):
        raise AssertionError(
            f"conjugate posterior mismatch: got mean ({got.x_hat[0]!r}, "
            f"{got.x_hat[1]!r}), want ({want_x0!r}, {want_x1!r})"
        )


def _group_single_mode() -> str:
    _check_conjugate_oracle()

    rng = np.random.default_rng(2024)
    model = _gaussian_model(
        F=np.array([[1.0, 0.3], [0.0, 1.0]]),
        H=np.array([[1.0, 0.0]]),
        u=[0.1, -0.2],
        Q=[[0.6, 0.15], [0.15, 0.5]],
        b=0.4,
        R=1.3,
    )
    steps = 80
    x0 = np.zeros(2)
    P0 = np.eye(2)
    traj = generate_trajectory(model, steps, rng, x0)

    # library-level: the four recursions coincide state by state
    gsf = FilterState(x0, P0)
    matched = FilterState(x0, P0)
    lmmse = FilterState(x0, P0)
    max_dev = 0.0
    max_bound_gap = 0.0
    for k in range(steps):
        z = traj.measurements[k]
        out = gsf_step(model, gsf, z)
        gsf = out.combined
        sel = out.selected
        matched = matched_step(model, matched, z, 0, 0)
        lmmse = lmmse_step(model, lmmse, z)
        for other in (sel, matched, lmmse):
            max_dev = max(max_dev, float(np.max(np.abs(gsf.x_hat - other.x_hat))))
        rec = evaluate_bounds(out.bank, [1.0], lmmse.P)
        max_bound_gap = max(
            max_bound_gap,
            abs(rec.ub_gsfr - rec.lb),
            abs(rec.ub_lmmse - rec.lb),
        )
    if max_dev > 1e-12:
        raise AssertionError(f"filters deviate by {max_dev:.3e} on a single-mode model")
    if max_bound_gap > 1e-9:
        raise AssertionError(f"bounds split by {max_bound_gap:.3e} on a single-mode model")

    # backend-level: identical error columns through each backend
    for backend in available_backends():
        res = simulate_run(
            model,
            x0,
            P0,
            traj.states,
            traj.measurements,
            traj.active_process_labels,
            traj.active_measurement_labels,
            steps // 2,
            "shared-bank",
            backend,
        )
        scale = max(1.0, float(np.max(res.err2)))
        spread = float(np.max(res.err2.max(axis=1) - res.err2.min(axis=1)))
        if spread > 1e-12 * scale:
            raise AssertionError(
                f"{backend} backend: filter errors differ by {spread:.3e} "
                "on a single-mode model"
            )
        w = res.bounds[steps // 2 :]
        gap = float(np.max(np.abs(w - w[:, :1])))
        if gap > 1e-9:
            raise AssertionError(
                f"{backend} backend: bounds split by {gap:.3e} on a single-mode model"
            )
    return f"max deviation {max_dev:.2e}, max bound gap {max_bound_gap:.2e}"


def _random_scalar_bank(rng):
    """A bank update of a randomized well-conditioned two-mode-each system."""
    c_v = int(rng.integers(1, 4))
    c_w = int(rng.integers(1, 4))
    F = np.eye(2) + 0.3 * rng.standard_normal((2, 2))
    H = np.array([[1.0, 0.5 * rng.standard_normal()]])
    pcomps = []
    for _ in range(c_v):
        A = rng.standard_normal((2, 2))
        pcomps.append(
            GaussianComponent(3.0 * rng.standard_normal(2), A @ A.T + 0.3 * np.eye(2))
        )
    mcomps = [
        GaussianComponent(
            4.0 * rng.standard_normal(1), np.array([[0.2 + 2.0 * rng.random()]])
        )
        for _ in range(c_w)
    ]
    model = SystemModel(
        F=F,
        H=H,
        dt=1.0,
        process_noise=GaussianMixture(rng.dirichlet(np.ones(c_v)), tuple(pcomps)),
        measurement_noise=GaussianMixture(rng.dirichlet(np.ones(c_w)), tuple(mcomps)),
    )
    B = rng.standard_normal((2, 2))
    prev = FilterState(rng.standard_normal(2), B @ B.T + 0.5 * np.eye(2))
    z = np.atleast_1d(5.0 * rng.standard_normal())
    out = gsf_step(model, prev, z)
    priors = np.outer(
        model.process_noise.weights, model.measurement_noise.weights
    ).reshape(-1)
    return out.bank, priors


def _group_bound_oracle() -> str:
    rng = np.random.default_rng(77)
    worst = 0.0
    for _ in range(8):
        bank, priors = _random_scalar_bank(rng)
        analytic = gsf_r_upper_bound(bank, priors)
        mc, se = gsf_r_upper_bound_mc(bank, priors, n_samples=200_000, rng=rng)
        dev = abs(analytic - mc) / max(se, 1e-12)
        worst = max(worst, dev)
        if dev > 5.0:
            raise AssertionError(
                f"analytic bound {analytic!r} vs Monte Carlo {mc!r} "
                f"({dev:.1f} standard errors)"
            )
        lb = lower_bound(bank, priors)
        if analytic < lb - 1e-9 * max(1.0, lb):
            raise AssertionError(f"upper bound {analytic!r} below lower bound {lb!r}")
    return f"8 randomized banks, worst deviation {worst:.2f} standard errors"


def _group_sandwich() -> str:
    cfg = ScenarioConfig(
        model_id=1, runs=48, steps=60, c_measurement=(0.25, 1.0), master_seed=11
    )
    details = []
    for c_index, c in enumerate(cfg.c_measurement):
        row = run_experiment(cfg, c, c_index)
        if not (
            row.lb - 3.0 * row.ci_gsf <= row.mse_gsf <= row.ub_combined + 3.0 * row.ci_gsf
        ):
            raise AssertionError(
                f"c={c}: empirical MSE {row.mse_gsf!r} outside "
                f"[{row.lb!r}, {row.ub_combined!r}] with ci {row.ci_gsf!r}"
            )
        if row.mse_matched > row.mse_gsf + 3.0 * (row.ci_matched + row.ci_gsf):
            raise AssertionError(f"c={c}: oracle filter beaten by the full bank")
        details.append(f"c={c}: {row.lb:.0f} <= {row.mse_gsf:.0f} <= {row.ub_combined:.0f}")
    return "; ".join(details)


def _group_determinism(workers: int) -> str:
    cfg = ScenarioConfig(
        model_id=2, runs=16, steps=50, c_measurement=(0.8,), master_seed=5
    )
    a = run_experiment(cfg, 0.8, 0, workers=1)
    b = run_experiment(cfg, 0.8, 0, workers=1)
    if a != b:
        raise AssertionError("identical seeds produced different rows")
    many = max(2, workers)
    c = run_experiment(cfg, 0.8, 0, workers=many)
    if a != c:
        raise AssertionError(f"1-worker and {many}-worker rows differ")
    return f"reseeded and {many}-worker rows identical"


def run_validation(workers: int = 1) -> list:
    """Run every invariant group; returns (name, passed, detail) triples."""
    groups = (
        ("single-mode-equivalence", _group_single_mode),
        ("readout-bound-mutual-oracle", _group_bound_oracle),
        ("bound-sandwich", _group_sandwich),
        ("determinism-and-workers", lambda: _group_determinism(workers)),
    )
    results = []
    for name, fn in groups:
        try:
            detail = fn()
        except Exception as exc:
            results.append((name, False, str(exc)))
        else:
            results.append((name, True, detail))
    return results
