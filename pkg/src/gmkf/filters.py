"""Mixture-noise state estimators for linear systems.

Four estimators share one mode-matched Kalman building block:

* gsf_step: the full bank of C_v x C_w mode-matched filters, collapsed to a
  single Gaussian each step through the posterior mode weights.
* gsf_r_step: the same bank, reporting the single maximum-weight component.
* matched_step: the oracle filter that is told the active noise clusters.
* lmmse_step: a plain Kalman filter on the moment-matched Gaussian noises.

Every update symmetrizes its covariance and clamps eigenvalues that are
negative by no more than 1e-8; anything worse raises NumericsError.
"""

import math
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np
from scipy.special import logsumexp

from .exceptions import ConfigError, NumericsError
from .mixtures import GaussianComponent, GaussianMixture, moment_match

_LOG_2PI = math.log(2.0 * math.pi)
_PSD_TOL = 1e-8

# Fault-injection hook used by the validation suite to prove the oracle tests
# can detect a broken update. The mode-matched innovation is multiplied by
# this factor; production value is 1.0 and nothing in the package changes it.
_INNOVATION_SIGN = 1.0


def symmetrize_floor(P: np.ndarray, tol: float = _PSD_TOL) -> np.ndarray:
    """Symmetrize P and clamp a slightly negative minimum eigenvalue to zero.

    Eigenvalues below -tol indicate a real defect and raise NumericsError.
    The clamp is rank-corrective (only the offending eigenvalue moves).
    """
    P = (P + P.T) / 2.0
    n = P.shape[0]
    if n == 1:
        lo = P[0, 0]
        if lo < -tol:
            raise NumericsError(f"covariance eigenvalue {lo:.3e} below -{tol:.0e}")
        if lo < 0.0:
            return np.zeros_like(P)
        return P
    if n == 2:
        a, b, c = P[0, 0], P[0, 1], P[1, 1]
        half_gap = math.hypot((a - c) / 2.0, b)
        lo = (a + c) / 2.0 - half_gap
        if lo < -tol:
            raise NumericsError(f"covariance eigenvalue {lo:.3e} below -{tol:.0e}")
        if lo < 0.0:
            if b != 0.0:
                v = np.array([b, lo - a])
                v /= math.hypot(v[0], v[1])
            else:
                v = np.array([1.0, 0.0]) if a <= c else np.array([0.0, 1.0])
            P = P - lo * np.outer(v, v)
        return P
    eigval, eigvec = np.linalg.eigh(P)
    if eigval[0] < -tol:
        raise NumericsError(f"covariance eigenvalue {eigval[0]:.3e} below -{tol:.0e}")
    if eigval[0] < 0.0:
        P = (eigvec * np.maximum(eigval, 0.0)) @ eigvec.T
        P = (P + P.T) / 2.0
    return P


@dataclass(eq=False)
class SystemModel:
    """Linear dynamics x' = F x + v and measurements z = H x + w, with v and w
    drawn from Gaussian mixtures."""

    F: np.ndarray
    H: np.ndarray
    dt: float
    process_noise: GaussianMixture
    measurement_noise: GaussianMixture

    def __post_init__(self):
        self.F = np.atleast_2d(np.array(self.F, dtype=np.float64))
        self.H = np.atleast_2d(np.array(self.H, dtype=np.float64))
        if self.F.shape[0] != self.F.shape[1]:
            raise ConfigError(f"F must be square, got {self.F.shape}")
        n_x = self.F.shape[0]
        if self.H.shape[1] != n_x:
            raise ConfigError(f"H {self.H.shape} does not act on {n_x}-dim states")
        if self.process_noise.dim != n_x:
            raise ConfigError("process noise dimension does not match F")
        if self.measurement_noise.dim != self.H.shape[0]:
            raise ConfigError("measurement noise dimension does not match H")

    @property
    def n_x(self) -> int:
        return self.F.shape[0]

    @property
    def n_z(self) -> int:
        return self.H.shape[0]

    @property
    def c_v(self) -> int:
        return self.process_noise.n_components

    @property
    def c_w(self) -> int:
        return self.measurement_noise.n_components

    @cached_property
    def log_mode_priors(self) -> np.ndarray:
        """log(W_i P_j) on the (c_v, c_w) mode grid; zero weights map to -inf."""
        with np.errstate(divide="ignore"):
            lw = np.log(self.process_noise.weights)
            lp = np.log(self.measurement_noise.weights)
        return lw[:, None] + lp[None, :]

    @cached_property
    def process_mm(self) -> GaussianComponent:
        return moment_match(self.process_noise)

    @cached_property
    def measurement_mm(self) -> GaussianComponent:
        return moment_match(self.measurement_noise)


@dataclass(eq=False)
class FilterState:
    """State estimate, error covariance, and step counter."""

    x_hat: np.ndarray
    P: np.ndarray
    k: int = 0

    def __post_init__(self):
        self.x_hat = np.atleast_1d(np.array(self.x_hat, dtype=np.float64))
        self.P = symmetrize_floor(np.atleast_2d(np.array(self.P, dtype=np.float64)))
        if self.P.shape != (self.x_hat.shape[0],) * 2:
            raise ConfigError(f"P {self.P.shape} does not match state {self.x_hat.shape}")


@dataclass(eq=False)
class ModeBank:
    """Per-mode quantities of one bank update, indexed [i, j].

    Predictions depend only on the process cluster i; everything else is per
    mode. log_weights_unnorm holds log(prior) + log-likelihood before the
    log-sum-exp normalization that produces weights.
    """

    x_pred: np.ndarray  # (c_v, n_x)
    P_pred: np.ndarray  # (c_v, n_x, n_x)
    z_pred: np.ndarray  # (c_v, c_w, n_z)
    S: np.ndarray  # (c_v, c_w, n_z, n_z)
    gain: np.ndarray  # (c_v, c_w, n_x, n_z)
    x_post: np.ndarray  # (c_v, c_w, n_x)
    P_post: np.ndarray  # (c_v, c_w, n_x, n_x)
    weights: np.ndarray  # (c_v, c_w)
    log_weights_unnorm: np.ndarray  # (c_v, c_w)

    @property
    def c_v(self) -> int:
        return self.x_pred.shape[0]

    @property
    def c_w(self) -> int:
        return self.z_pred.shape[1]

    @property
    def n_modes(self) -> int:
        return self.c_v * self.c_w

    @property
    def n_x(self) -> int:
        return self.x_pred.shape[1]

    @property
    def n_z(self) -> int:
        return self.z_pred.shape[2]


@dataclass(eq=False)
class GsfOutput:
    """One bank update: the bank, the collapsed estimate, and the argmax mode."""

    bank: ModeBank
    combined: FilterState
    argmax_mode: tuple[int, int]
    selected: FilterState


class ModeStep(NamedTuple):
    x_post: np.ndarray
    P_post: np.ndarray
    z_pred: np.ndarray
    S: np.ndarray
    gain: np.ndarray
    x_pred: np.ndarray
    P_pred: np.ndarray


def _check_z(model: SystemModel, z) -> np.ndarray:
    z = np.atleast_1d(np.asarray(z, dtype=np.float64))
    if z.shape != (model.n_z,):
        raise ConfigError(f"measurement shape {z.shape}, expected ({model.n_z},)")
    return z


def mode_matched_step(
    model: SystemModel, prev: FilterState, i: int, j: int, z
) -> ModeStep:
    """One Kalman update conditioned on process cluster i and measurement
    cluster j.

    Prediction uses cluster i's noise mean and covariance; the measurement
    update uses cluster j's offset and covariance. The predicted covariance
    depends only on i.
    """
    if not 0 <= i < model.c_v:
        raise ConfigError(f"process cluster {i} out of range [0, {model.c_v})")
    if not 0 <= j < model.c_w:
        raise ConfigError(f"measurement cluster {j} out of range [0, {model.c_w})")
    z = _check_z(model, z)
    x_pred = model.F @ prev.x_hat + model.process_noise.means[i]
    P_pred = model.process_noise.covs[i] + model.F @ prev.P @ model.F.T
    z_pred = model.H @ x_pred + model.measurement_noise.means[j]
    S = model.H @ P_pred @ model.H.T + model.measurement_noise.covs[j]
    try:
        np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        raise NumericsError(
            f"singular innovation covariance in mode ({i}, {j})"
        ) from None
    gain = np.linalg.solve(S, model.H @ P_pred).T
    x_post = x_pred + gain @ (_INNOVATION_SIGN * (z - z_pred))
    P_post = symmetrize_floor(P_pred - gain @ S @ gain.T)
    return ModeStep(x_post, P_post, z_pred, S, gain, x_pred, P_pred)


def posterior_weights(log_priors, log_likelihoods) -> np.ndarray:
    """Normalized mode weights from log priors and log likelihoods.

    Works in the log domain so likelihood ratios of hundreds of nats neither
    overflow nor collapse to NaN. Raises NumericsError if every mode
    underflows (total weight zero), which signals model/data mismatch.
    """
    log_priors = np.asarray(log_priors, dtype=np.float64)
    log_likelihoods = np.asarray(log_likelihoods, dtype=np.float64)
    if log_priors.shape != log_likelihoods.shape:
        raise ConfigError("log prior and log likelihood shapes differ")
    logw = log_priors + log_likelihoods
    total = logsumexp(logw)
    if not np.isfinite(total):
        raise NumericsError("all mode weights underflowed to zero")
    w = np.exp(logw - total)
    return w / np.sum(w)


def _log_gauss(dev: np.ndarray, S: np.ndarray) -> float:
    sign, logdet = np.linalg.slogdet(S)
    if sign <= 0:
        raise NumericsError("innovation covariance not positive definite")
    maha = float(dev @ np.linalg.solve(S, dev))
    return -0.5 * (dev.shape[0] * _LOG_2PI + logdet + maha)


def gsf_step(model: SystemModel, prev: FilterState, z) -> GsfOutput:
    """One collapsed bank update.

    All modes are run from the same previous collapsed state; the posterior
    mode weights then combine the bank into a single mean and covariance
    (which adds the spread of the mode means to the weighted covariances).
    Argmax ties go to the lexicographically smallest (i, j).
    """
    z = _check_z(model, z)
    c_v, c_w, n_x, n_z = model.c_v, model.c_w, model.n_x, model.n_z
    x_pred = np.empty((c_v, n_x))
    P_pred = np.empty((c_v, n_x, n_x))
    z_pred = np.empty((c_v, c_w, n_z))
    S = np.empty((c_v, c_w, n_z, n_z))
    gain = np.empty((c_v, c_w, n_x, n_z))
    x_post = np.empty((c_v, c_w, n_x))
    P_post = np.empty((c_v, c_w, n_x, n_x))
    log_lik = np.empty((c_v, c_w))
    for i in range(c_v):
        for j in range(c_w):
            st = mode_matched_step(model, prev, i, j, z)
            z_pred[i, j] = st.z_pred
            S[i, j] = st.S
            gain[i, j] = st.gain
            x_post[i, j] = st.x_post
            P_post[i, j] = st.P_post
            log_lik[i, j] = _log_gauss(z - st.z_pred, st.S)
        x_pred[i] = st.x_pred
        P_pred[i] = st.P_pred
    log_unnorm = model.log_mode_priors + log_lik
    mu = posterior_weights(model.log_mode_priors, log_lik)
    x_comb = np.einsum("ij,ijn->n", mu, x_post)
    second = np.einsum("ij,ijnm->nm", mu, P_post) + np.einsum(
        "ij,ijn,ijm->nm", mu, x_post, x_post
    )
    P_comb = symmetrize_floor(second - np.outer(x_comb, x_comb))
    flat = int(np.argmax(mu))
    imax, jmax = divmod(flat, c_w)
    bank = ModeBank(x_pred, P_pred, z_pred, S, gain, x_post, P_post, mu, log_unnorm)
    k = prev.k + 1
    return GsfOutput(
        bank=bank,
        combined=FilterState(x_comb, P_comb, k),
        argmax_mode=(imax, jmax),
        selected=FilterState(x_post[imax, jmax], P_post[imax, jmax], k),
    )


def gsf_r_step(
    model: SystemModel, prev_selected: FilterState, z, feedback: str = "shared-bank"
) -> GsfOutput:
    """Bank update whose reported output is the maximum-weight component.

    The feedback switch names what the caller must pass as prev_selected on
    the next step: in "shared-bank" mode the bank is run from the full
    filter's combined state (this filter is then just a readout of that
    bank); in "hard-decision" mode the bank recurses on its own previously
    selected component. The returned GsfOutput carries both the combined and
    the selected state either way.
    """
    if feedback not in ("shared-bank", "hard-decision"):
        raise ConfigError(f"unknown feedback mode {feedback!r}")
    return gsf_step(model, prev_selected, z)


def matched_step(
    model: SystemModel, prev: FilterState, z, true_i: int, true_j: int
) -> FilterState:
    """Oracle update conditioned on the generator's recorded active clusters."""
    st = mode_matched_step(model, prev, true_i, true_j, z)
    return FilterState(st.x_post, st.P_post, prev.k + 1)


def lmmse_step(model: SystemModel, prev: FilterState, z) -> FilterState:
    """Kalman update against the moment-matched Gaussian noise models.

    The covariance recursion never sees data, so its trace doubles as the
    analytic MSE of this filter.
    """
    z = _check_z(model, z)
    pn = model.process_mm
    mn = model.measurement_mm
    x_pred = model.F @ prev.x_hat + pn.mean
    P_pred = pn.cov + model.F @ prev.P @ model.F.T
    S = model.H @ P_pred @ model.H.T + mn.cov
    try:
        np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        raise NumericsError("singular moment-matched innovation covariance") from None
    HP = model.H @ P_pred
    gain = np.linalg.solve(S, HP).T
    x_post = x_pred + gain @ (z - (model.H @ x_pred + mn.mean))
    P_post = symmetrize_floor(P_pred - gain @ HP)
    return FilterState(x_post, P_post, prev.k + 1)
