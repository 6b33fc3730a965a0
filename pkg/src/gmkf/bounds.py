"""Analytic bounds on the minimum mean-square estimation error of the
collapsed mixture filter, evaluated on a single bank update.

The lower bound is the prior-weighted trace of the per-mode posterior
covariances (the error the oracle filter attains on average). The first upper
bound is the unconditional MSE of the max-weight readout filter, assembled in
closed form for scalar measurements: the measurement line is partitioned into
intervals on which one mode's prior-weighted density dominates, and the
assembly integrates the per-mode posterior means over those intervals using
truncated Gaussian moments. The second upper bound is the trace of the
moment-matched Kalman covariance. Every analytic quantity here has a Monte
Carlo twin used as a mutual oracle in the test suite.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erfc

from .exceptions import ConfigError, NumericsError
from .filters import ModeBank

_SQRT1_2 = math.sqrt(0.5)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _flat_priors(bank: ModeBank, priors) -> np.ndarray:
    pw = np.asarray(priors, dtype=np.float64).reshape(-1)
    if pw.shape[0] != bank.n_modes:
        raise ConfigError(f"{pw.shape[0]} priors for {bank.n_modes} modes")
    if np.any(pw < 0.0):
        raise ConfigError("mode priors must be nonnegative")
    total = float(np.sum(pw))
    if abs(total - 1.0) > 1e-6:
        raise ConfigError(f"mode priors sum to {total!r}, not 1")
    return pw / total


def _scalar_bank_views(bank: ModeBank):
    """Flattened (mode-major) views for the scalar-measurement analytic path."""
    if bank.n_z != 1:
        raise ConfigError("analytic path supports scalar measurements only")
    m = bank.n_modes
    z_hat = bank.z_pred.reshape(m)
    s = bank.S.reshape(m)
    if np.any(s <= 0.0):
        raise NumericsError("innovation variance must be positive")
    gain = bank.gain.reshape(m, bank.n_x)
    x_pred = np.repeat(bank.x_pred, bank.c_w, axis=0)
    return z_hat, s, gain, x_pred


def lower_bound(bank: ModeBank, priors) -> float:
    """Prior-weighted average of tr(P_post) over the bank modes."""
    pw = _flat_priors(bank, priors)
    traces = np.trace(bank.P_post, axis1=2, axis2=3).reshape(-1)
    return float(pw @ traces)


def trace_m1_m2(bank: ModeBank, priors) -> tuple[float, float]:
    """Traces of the two closed-form terms of the selection-filter MSE.

    The first equals lower_bound. The second is the prior-weighted second
    moment of the per-mode posterior means, taken about the origin:
    sum of priors times (|x_pred_i|^2 + tr(W S W^T)).
    """
    pw = _flat_priors(bank, priors)
    tr_m1 = float(pw @ np.trace(bank.P_post, axis1=2, axis2=3).reshape(-1))
    x_pred = np.repeat(bank.x_pred, bank.c_w, axis=0)
    gain = bank.gain.reshape(bank.n_modes, bank.n_x, bank.n_z)
    s = bank.S.reshape(bank.n_modes, bank.n_z, bank.n_z)
    wsw = np.einsum("mab,mbc,mdc->mad", gain, s, gain)
    tr_m2 = float(
        pw @ (np.sum(x_pred * x_pred, axis=1) + np.trace(wsw, axis1=1, axis2=2))
    )
    return tr_m1, tr_m2


@dataclass(eq=False)
class RegionDecomposition:
    """Partition of the measurement line by the winning (max weighted-density)
    mode.

    boundaries are the kept interval endpoints in increasing order; owners[e]
    is the flat mode index (i * c_w + j) winning on the e-th open interval, so
    there is one more owner than boundary. pair_boundaries records every real
    crossing of each mode pair's weighted log-densities, keyed by flat index
    pair, before ownership pruning. tie_flag reports that some interval had
    two or more modes with exactly equal scores (resolved to the
    lexicographically smallest).
    """

    boundaries: np.ndarray
    owners: np.ndarray
    c_w: int
    pair_boundaries: dict = field(default_factory=dict)
    tie_flag: bool = False

    @property
    def n_intervals(self) -> int:
        return self.owners.shape[0]

    def owner_at(self, z: float) -> tuple[int, int]:
        e = int(np.searchsorted(self.boundaries, z))
        return divmod(int(self.owners[e]), self.c_w)

    def intervals_for(self, i: int, j: int) -> list[tuple[float, float]]:
        flat = i * self.c_w + j
        edges = np.concatenate(([-np.inf], self.boundaries, [np.inf]))
        return [
            (float(edges[e]), float(edges[e + 1]))
            for e in range(self.n_intervals)
            if self.owners[e] == flat
        ]


def _score_coefficients(z_hat, s, pw):
    """Quadratic coefficients of log(prior * N(z; z_hat, S)) per mode."""
    with np.errstate(divide="ignore"):
        log_pw = np.log(pw)
    c2 = -0.5 / s
    c1 = z_hat / s
    c0 = log_pw - 0.5 * np.log(2.0 * math.pi * s) - z_hat * z_hat / (2.0 * s)
    return c0, c1, c2


def mode_scores(bank: ModeBank, priors, z) -> np.ndarray:
    """log(prior * N(z; z_hat, S)) for every mode, at scalar z or a batch."""
    pw = _flat_priors(bank, priors)
    z_hat, s, _, _ = _scalar_bank_views(bank)
    c0, c1, c2 = _score_coefficients(z_hat, s, pw)
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 0:
        return c0 + c1 * float(z) + c2 * float(z) ** 2
    return c0[None, :] + c1[None, :] * z[:, None] + c2[None, :] * z[:, None] ** 2


def regions_1d(bank: ModeBank, priors) -> RegionDecomposition:
    """Partition the measurement line by the mode with maximal weighted density.

    Candidate boundaries are the real crossings of each pair of weighted
    log-densities (a quadratic equation per pair, linear when the variances
    agree). Each open interval between consecutive candidates is assigned by
    evaluating all scores at an interior point, then intervals with the same
    winner are merged. Modes with zero prior never own an interval.
    """
    pw = _flat_priors(bank, priors)
    z_hat, s, _, _ = _scalar_bank_views(bank)
    m = z_hat.shape[0]
    c0, c1, c2 = _score_coefficients(z_hat, s, pw)
    active = pw > 0.0

    pair_boundaries: dict[tuple[int, int], tuple[float, ...]] = {}
    tie = False
    cands: list[float] = []
    idx_a, idx_b = np.triu_indices(m, k=1)
    for a, b in zip(idx_a, idx_b):
        if not (active[a] and active[b]):
            continue
        alpha = c2[a] - c2[b]
        beta = c1[a] - c1[b]
        gamma = c0[a] - c0[b]
        roots: tuple[float, ...]
        if alpha == 0.0:
            if beta == 0.0:
                roots = ()
                if gamma == 0.0:
                    tie = True
            else:
                roots = (-gamma / beta,)
        else:
            disc = beta * beta - 4.0 * alpha * gamma
            if disc <= 0.0:
                roots = ()
            else:
                q = -0.5 * (beta + math.copysign(math.sqrt(disc), beta))
                if q == 0.0:
                    roots = (0.0, -beta / alpha)
                else:
                    roots = (q / alpha, gamma / q)
        roots = tuple(r for r in roots if math.isfinite(r))
        pair_boundaries[(int(a), int(b))] = roots
        cands.extend(roots)

    cands_arr = np.sort(np.asarray(cands, dtype=np.float64))
    edges = np.concatenate(([-np.inf], cands_arr, [np.inf]))
    mids = np.empty(edges.shape[0] - 1)
    if cands_arr.shape[0] == 0:
        mids[0] = float(pw @ z_hat)
    else:
        mids[0] = cands_arr[0] - 1.0
        mids[-1] = cands_arr[-1] + 1.0
        mids[1:-1] = 0.5 * (cands_arr[:-1] + cands_arr[1:])

    scores = c0[None, :] + c1[None, :] * mids[:, None] + c2[None, :] * mids[:, None] ** 2
    winners = np.argmax(scores, axis=1)
    best = scores[np.arange(scores.shape[0]), winners]
    if np.any(np.sum(scores == best[:, None], axis=1) > 1):
        tie = True

    # Merge adjacent intervals with one winner; drop zero-width intervals.
    kept_bounds: list[float] = []
    kept_owners: list[int] = [int(winners[0])]
    for e in range(1, mids.shape[0]):
        if edges[e] == edges[e + 1]:
            continue
        w = int(winners[e])
        if w != kept_owners[-1]:
            kept_bounds.append(float(edges[e]))
            kept_owners.append(w)
    return RegionDecomposition(
        boundaries=np.asarray(kept_bounds, dtype=np.float64),
        owners=np.asarray(kept_owners, dtype=np.int64),
        c_w=bank.c_w,
        pair_boundaries=pair_boundaries,
        tie_flag=tie,
    )


@dataclass(eq=False)
class TruncatedMoments:
    """Unnormalized moments of a Gaussian over an interval union.

    mass is the contained probability; z_tilde the plain integral of z times
    the density (not divided by mass); s_tilde the integral of
    (z - z_tilde)^2 times the density, about that unnormalized z_tilde. For
    the full line these reduce to (1, mean, variance).
    """

    mass: float
    z_tilde: float
    s_tilde: float
    mode: tuple[int, int] | None = None
    owner: tuple[int, int] | None = None


def _edge_tables(edges: np.ndarray, mu, sd):
    """Normal CDF, pdf, and t*pdf evaluated at standardized edges.

    edges may contain +-inf; mu and sd broadcast against the trailing axes.
    """
    t = (edges - mu) / sd
    cdf = 0.5 * erfc(-t * _SQRT1_2)
    finite = np.isfinite(t)
    tf = np.where(finite, t, 0.0)
    pdf = np.where(finite, np.exp(-0.5 * tf * tf) * _INV_SQRT_2PI, 0.0)
    tpdf = tf * pdf
    return cdf, pdf, tpdf


def _interval_raw_moments(lo, hi, mu: float, sd: float):
    """Raw moments (m0, m1, m2) of N(mu, sd^2) over each [lo, hi] interval."""
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    cdf_lo, pdf_lo, tpdf_lo = _edge_tables(lo, mu, sd)
    cdf_hi, pdf_hi, tpdf_hi = _edge_tables(hi, mu, sd)
    m0 = cdf_hi - cdf_lo
    m1 = mu * m0 + sd * (pdf_lo - pdf_hi)
    m2 = (
        mu * mu * m0
        + 2.0 * mu * sd * (pdf_lo - pdf_hi)
        + sd * sd * (m0 + tpdf_lo - tpdf_hi)
    )
    return m0, m1, m2


def truncated_moments_1d(comp_mean, comp_var, intervals) -> TruncatedMoments:
    """Mass and unnormalized first/second-central moments of a scalar Gaussian
    restricted to a union of disjoint intervals.

    Closed form from the error function and density values at the endpoints;
    endpoints may be +-inf. An empty interval list gives all zeros.
    """
    mu = float(np.asarray(comp_mean).reshape(()))
    var = float(np.asarray(comp_var).reshape(()))
    if var <= 0.0:
        raise ConfigError("component variance must be positive")
    iv = list(intervals)
    if not iv:
        return TruncatedMoments(0.0, 0.0, 0.0)
    lo = np.array([p[0] for p in iv], dtype=np.float64)
    hi = np.array([p[1] for p in iv], dtype=np.float64)
    if np.any(hi < lo):
        raise ConfigError("intervals must satisfy lo <= hi")
    m0, m1, m2 = _interval_raw_moments(lo, hi, mu, math.sqrt(var))
    mass = float(np.sum(m0))
    z_tilde = float(np.sum(m1))
    raw2 = float(np.sum(m2))
    s_tilde = raw2 - (2.0 - mass) * z_tilde * z_tilde
    return TruncatedMoments(mass, z_tilde, s_tilde)


def region_moment_tables(bank: ModeBank, priors, regions: RegionDecomposition):
    """Raw truncated moments of every mode's predictive Gaussian over every
    region.

    Returns (mass, m1, m2), each of shape (n_modes, n_modes), indexed
    [region owner, integrated mode]. Rows of modes that own no region are
    zero. Summing prior-weighted masses over both axes gives 1.
    """
    pw = _flat_priors(bank, priors)
    z_hat, s, _, _ = _scalar_bank_views(bank)
    m = z_hat.shape[0]
    sd = np.sqrt(s)
    edges = np.concatenate(([-np.inf], regions.boundaries, [np.inf]))
    cdf, pdf, tpdf = _edge_tables(edges[:, None], z_hat[None, :], sd[None, :])
    d0 = cdf[1:] - cdf[:-1]
    dpdf = pdf[:-1] - pdf[1:]
    d1 = z_hat[None, :] * d0 + sd[None, :] * dpdf
    d2 = (
        z_hat[None, :] ** 2 * d0
        + 2.0 * z_hat[None, :] * sd[None, :] * dpdf
        + s[None, :] * (d0 + tpdf[:-1] - tpdf[1:])
    )
    mass = np.zeros((m, m))
    m1 = np.zeros((m, m))
    m2 = np.zeros((m, m))
    np.add.at(mass, regions.owners, d0)
    np.add.at(m1, regions.owners, d1)
    np.add.at(m2, regions.owners, d2)
    return mass, m1, m2


def gsf_r_upper_bound(
    bank: ModeBank,
    priors,
    method: str = "analytic-1d",
    rng: np.random.Generator | None = None,
    n_samples: int = 100_000,
) -> float:
    """Unconditional MSE of the max-weight readout filter on this bank.

    The analytic path (scalar measurements) integrates the squared distance
    between each mode's posterior mean and the selected mode's posterior mean
    over the selection regions, using truncated Gaussian moments; it is exact
    up to the error-function evaluations. The monte-carlo path samples from
    the bank's predictive mixture and averages the readout error covariance
    trace; use gsf_r_upper_bound_mc directly for the standard error.
    """
    if method == "analytic-1d":
        return _gsf_r_upper_bound_analytic(bank, priors)
    if method == "monte-carlo":
        est, _ = gsf_r_upper_bound_mc(bank, priors, n_samples, rng)
        return est
    raise ConfigError(f"unknown method {method!r}")


def _gsf_r_upper_bound_analytic(bank: ModeBank, priors) -> float:
    pw = _flat_priors(bank, priors)
    z_hat, s, gain, x_pred = _scalar_bank_views(bank)

    # The assembled trace is invariant under a common shift of the predicted
    # means and under a common shift of (z_hat, z). Work in a centered frame
    # so the large position-scale terms cancel before, not after, summation.
    x_pred = x_pred - pw @ x_pred
    z_hat = z_hat - float(pw @ z_hat)

    shifted = ModeBank(
        x_pred=x_pred.reshape(bank.c_v, bank.c_w, bank.n_x)[:, 0, :],
        P_pred=bank.P_pred,
        z_pred=z_hat.reshape(bank.c_v, bank.c_w, 1),
        S=bank.S,
        gain=bank.gain,
        x_post=bank.x_post,
        P_post=bank.P_post,
        weights=bank.weights,
        log_weights_unnorm=bank.log_weights_unnorm,
    )
    regions = regions_1d(shifted, pw)
    mass, m1, m2 = region_moment_tables(shifted, pw, regions)

    xx = x_pred @ x_pred.T
    xw = x_pred @ gain.T  # xw[a, b] = x_pred_a . gain_b
    ww = gain @ gain.T
    tr_mr1, tr_mr3 = _assemble_traces(pw, z_hat, mass, m1, m2, xx, xw, ww)

    tr_m1 = float(pw @ np.trace(bank.P_post, axis1=2, axis2=3).reshape(-1))
    wsw = s * np.sum(gain * gain, axis=1)
    tr_m2_shifted = float(pw @ (np.sum(x_pred * x_pred, axis=1) + wsw))
    result = tr_m1 + tr_m2_shifted - 2.0 * tr_mr1 + tr_mr3
    if not math.isfinite(result):
        raise NumericsError("upper-bound assembly produced a non-finite value")
    return float(result)


def _assemble_traces(pw, z_hat, mass, m1, m2, xx, xw, ww):
    """Trace of the cross term E[x_hat . x_hat_selected] and of the selected
    second moment E[|x_hat_selected|^2], from the region moment tables.

    Moment tables are indexed [region owner o, integrated mode g]. Each mode's
    posterior mean is affine in z (x_pred plus gain times innovation), so the
    integrals reduce to the raw truncated moments against the dot products of
    the predicted means and gains.
    """
    z_o = z_hat[:, None]
    z_g = z_hat[None, :]
    cross = (
        mass * xx
        + (m1 - mass * z_o) * xw.T
        + (m1 - mass * z_g) * xw
        + (m2 - m1 * z_o - z_g * m1 + mass * z_g * z_o) * ww
    )
    tr_mr1 = float(np.sum(pw[None, :] * cross))
    diag_xx = np.diag(xx)[:, None]
    diag_xw = np.diag(xw)[:, None]
    diag_ww = np.diag(ww)[:, None]
    own = (
        mass * diag_xx
        + 2.0 * (m1 - mass * z_o) * diag_xw
        + (m2 - 2.0 * m1 * z_o + mass * z_o * z_o) * diag_ww
    )
    tr_mr3 = float(np.sum(pw[None, :] * own))
    return tr_mr1, tr_mr3


def gsf_r_upper_bound_mc(
    bank: ModeBank,
    priors,
    n_samples: int = 100_000,
    rng: np.random.Generator | None = None,
) -> tuple[float, float]:
    """Monte Carlo estimate of the readout-filter MSE, with standard error.

    Samples measurements from the bank's predictive mixture; for each sample
    the collapsed posterior trace plus the squared distance between the
    collapsed and the selected mean gives the readout error. Samples are
    processed in fixed-size chunks so results do not depend on how callers
    partition the work.
    """
    if rng is None:
        rng = np.random.default_rng()
    n = int(n_samples)
    if n < 2:
        raise ConfigError("need at least 2 samples for a standard error")
    pw = _flat_priors(bank, priors)
    z_hat, s, gain, x_pred = _scalar_bank_views(bank)
    x_pred = x_pred - pw @ x_pred
    z_hat = z_hat - float(pw @ z_hat)
    sd = np.sqrt(s)
    c0, c1, c2 = _score_coefficients(z_hat, s, pw)
    tr_post = np.trace(bank.P_post, axis1=2, axis2=3).reshape(-1)

    total = 0.0
    total_sq = 0.0
    chunk = 20_000
    done = 0
    while done < n:
        m = min(chunk, n - done)
        labels = rng.choice(pw.shape[0], size=m, p=pw)
        z = z_hat[labels] + sd[labels] * rng.standard_normal(m)
        scores = c0[None, :] + c1[None, :] * z[:, None] + c2[None, :] * z[:, None] ** 2
        peak = np.max(scores, axis=1, keepdims=True)
        mu = np.exp(scores - peak)
        mu /= np.sum(mu, axis=1, keepdims=True)
        innov = z[:, None] - z_hat[None, :]
        x_modes = x_pred[None, :, :] + gain[None, :, :] * innov[:, :, None]
        x_comb = np.einsum("nm,nmd->nd", mu, x_modes)
        spread = x_modes - x_comb[:, None, :]
        tr_pmmse = mu @ tr_post + np.einsum("nm,nmd,nmd->n", mu, spread, spread)
        sel = np.argmax(scores, axis=1)
        dev = x_comb - x_modes[np.arange(m), sel]
        vals = tr_pmmse + np.sum(dev * dev, axis=1)
        total += float(np.sum(vals))
        total_sq += float(np.sum(vals * vals))
        done += m
    mean = total / n
    var = max(total_sq / n - mean * mean, 0.0)
    return mean, math.sqrt(var / n)


def trace_m3_mc(
    bank: ModeBank,
    priors,
    n_samples: int = 100_000,
    rng: np.random.Generator | None = None,
) -> tuple[float, float]:
    """Monte Carlo estimate of the collapsed mean's second-moment trace.

    This term has no closed form (the mixture density appears in the weight
    denominators), so it is offered only as a diagnostic. Computed in the raw
    frame; for banks carrying large absolute positions the matching
    comparison term is trace_m1_m2's second output.
    """
    if rng is None:
        rng = np.random.default_rng()
    n = int(n_samples)
    if n < 2:
        raise ConfigError("need at least 2 samples for a standard error")
    pw = _flat_priors(bank, priors)
    z_hat, s, gain, x_pred = _scalar_bank_views(bank)
    sd = np.sqrt(s)
    c0, c1, c2 = _score_coefficients(z_hat, s, pw)
    total = 0.0
    total_sq = 0.0
    chunk = 20_000
    done = 0
    while done < n:
        m = min(chunk, n - done)
        labels = rng.choice(pw.shape[0], size=m, p=pw)
        z = z_hat[labels] + sd[labels] * rng.standard_normal(m)
        scores = c0[None, :] + c1[None, :] * z[:, None] + c2[None, :] * z[:, None] ** 2
        peak = np.max(scores, axis=1, keepdims=True)
        mu = np.exp(scores - peak)
        mu /= np.sum(mu, axis=1, keepdims=True)
        innov = z[:, None] - z_hat[None, :]
        x_modes = x_pred[None, :, :] + gain[None, :, :] * innov[:, :, None]
        x_comb = np.einsum("nm,nmd->nd", mu, x_modes)
        vals = np.sum(x_comb * x_comb, axis=1)
        total += float(np.sum(vals))
        total_sq += float(np.sum(vals * vals))
        done += m
    mean = total / n
    var = max(total_sq / n - mean * mean, 0.0)
    return mean, math.sqrt(var / n)


def lmmse_upper_bound(pK) -> float:
    """Trace of the moment-matched Kalman error covariance."""
    pK = np.atleast_2d(np.asarray(pK, dtype=np.float64))
    if pK.shape[0] != pK.shape[1]:
        raise ConfigError(f"covariance must be square, got {pK.shape}")
    return float(np.trace(pK))


def combined_upper_bound(ub_gsfr: float, ub_lmmse: float) -> float:
    """The tighter of the two upper bounds."""
    if not (math.isfinite(ub_gsfr) and math.isfinite(ub_lmmse)):
        raise ConfigError("both bounds must be finite")
    return min(ub_gsfr, ub_lmmse)


def unconditional_mse_mc(sq_errors) -> tuple[float, float]:
    """Mean squared error and 95% confidence half-width across runs.

    sq_errors holds per-run squared errors: shape (runs, steps) for window
    averages per run, or (runs,) when each run contributes one number. The
    confidence interval treats run means as the independent samples.
    """
    arr = np.asarray(sq_errors, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ConfigError(f"expected per-run errors, got shape {arr.shape}")
    runs = arr.shape[0]
    if runs < 2:
        raise ConfigError("need at least 2 runs")
    run_means = np.mean(arr, axis=1)
    mse = float(np.mean(run_means))
    ci95 = 1.96 * float(np.std(run_means, ddof=1)) / math.sqrt(runs)
    return mse, ci95


@dataclass(eq=False)
class BoundsRecord:
    """All analytic bounds for one step, plus the diagnostic term traces."""

    lb: float
    ub_gsfr: float
    ub_lmmse: float
    ub_combined: float
    tr_m1: float
    tr_m2: float


def evaluate_bounds(bank: ModeBank, priors, lmmse_P) -> BoundsRecord:
    """All analytic bounds for one bank update and one Kalman covariance.

    Raises NumericsError if the ordering lb <= ub_combined fails beyond
    floating-point tolerance; the bounds are analytic, so a violation means
    a broken assembly, not statistical noise.
    """
    tr_m1, tr_m2 = trace_m1_m2(bank, priors)
    ub_gsfr = _gsf_r_upper_bound_analytic(bank, priors)
    ub_lmmse = lmmse_upper_bound(lmmse_P)
    ub_combined = combined_upper_bound(ub_gsfr, ub_lmmse)
    if ub_combined < tr_m1 - 1e-9 * max(1.0, abs(tr_m1)):
        raise NumericsError(
            f"bound ordering violated: lb={tr_m1!r} > ub_combined={ub_combined!r}"
        )
    return BoundsRecord(tr_m1, ub_gsfr, ub_lmmse, ub_combined, tr_m1, tr_m2)
