"""Gaussian mixture primitives: components, mixtures, densities, sampling,
moment matching, and divergence from the moment-matched Gaussian.

Covariances are symmetrized on construction and eigenvalue-floored at zero;
asymmetry or negative eigenvalues beyond 1e-6 are treated as caller bugs and
raise ConfigError. Degenerate (rank-deficient) covariances are legal for
storage and sampling but have no density, so log_density raises NumericsError
when it meets one.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from .exceptions import ConfigError, NumericsError

_LOG_2PI = math.log(2.0 * math.pi)

# Construction-time tolerances. Anything worse than _REJECT_TOL is an error,
# anything inside it is floating-point dirt and is repaired silently.
_REJECT_TOL = 1e-6


def _as_matrix(cov) -> np.ndarray:
    cov = np.array(cov, dtype=np.float64)
    if cov.ndim == 0:
        cov = cov.reshape(1, 1)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ConfigError(f"covariance must be square, got shape {cov.shape}")
    return cov


def _symmetrize(cov: np.ndarray) -> np.ndarray:
    asym = np.max(np.abs(cov - cov.T)) if cov.size else 0.0
    if asym > _REJECT_TOL:
        raise ConfigError(f"covariance asymmetry {asym:.3e} exceeds {_REJECT_TOL:.0e}")
    return (cov + cov.T) / 2.0


def _floor_psd(cov: np.ndarray) -> np.ndarray:
    """Clamp tiny negative eigenvalues to zero; reject genuine indefiniteness."""
    eigval, eigvec = np.linalg.eigh(cov)
    if eigval[0] < -_REJECT_TOL:
        raise ConfigError(
            f"covariance has eigenvalue {eigval[0]:.3e}, not positive semidefinite"
        )
    if eigval[0] < 0.0:
        eigval = np.maximum(eigval, 0.0)
        cov = (eigvec * eigval) @ eigvec.T
        cov = (cov + cov.T) / 2.0
    return cov


@dataclass(eq=False)
class GaussianComponent:
    """A single Gaussian with mean vector and (possibly rank-deficient) covariance."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.atleast_1d(np.array(self.mean, dtype=np.float64))
        if self.mean.ndim != 1:
            raise ConfigError(f"mean must be a vector, got shape {self.mean.shape}")
        self.cov = _floor_psd(_symmetrize(_as_matrix(self.cov)))
        if self.cov.shape[0] != self.mean.shape[0]:
            raise ConfigError(
                f"mean dimension {self.mean.shape[0]} does not match "
                f"covariance {self.cov.shape}"
            )
        self._chol = None
        self._factor = None

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def chol(self) -> np.ndarray:
        """Lower Cholesky factor; NumericsError if the covariance is singular."""
        if self._chol is None:
            try:
                self._chol = np.linalg.cholesky(self.cov)
            except np.linalg.LinAlgError:
                raise NumericsError(
                    "covariance is singular or indefinite; no density exists"
                ) from None
        return self._chol

    def sampling_factor(self) -> np.ndarray:
        """Matrix L with L @ L.T == cov; valid for any PSD covariance."""
        if self._factor is None:
            eigval, eigvec = np.linalg.eigh(self.cov)
            self._factor = eigvec * np.sqrt(np.maximum(eigval, 0.0))
        return self._factor

    def log_density(self, x) -> np.ndarray | float:
        x = np.asarray(x, dtype=np.float64)
        scalar = x.ndim == 1
        pts = np.atleast_2d(x)
        if pts.shape[1] != self.dim:
            raise ConfigError(f"points have dimension {pts.shape[1]}, expected {self.dim}")
        chol = self.chol()
        dev = pts - self.mean
        sol = solve_triangular(chol, dev.T, lower=True)
        maha = np.sum(sol * sol, axis=0)
        logdet = 2.0 * np.sum(np.log(np.diag(chol)))
        out = -0.5 * (self.dim * _LOG_2PI + logdet + maha)
        return float(out[0]) if scalar else out


@dataclass(eq=False)
class GaussianMixture:
    """Finite Gaussian mixture; weights are renormalized exactly on construction."""

    weights: np.ndarray
    components: tuple[GaussianComponent, ...] = field(default_factory=tuple)

    def __post_init__(self):
        self.weights = np.atleast_1d(np.array(self.weights, dtype=np.float64))
        self.components = tuple(self.components)
        if self.weights.ndim != 1 or len(self.components) != self.weights.shape[0]:
            raise ConfigError(
                f"{self.weights.shape[0]} weights for {len(self.components)} components"
            )
        if self.weights.shape[0] == 0:
            raise ConfigError("mixture needs at least one component")
        if np.any(self.weights < 0.0):
            raise ConfigError("mixture weights must be nonnegative")
        total = float(np.sum(self.weights))
        if abs(total - 1.0) > _REJECT_TOL:
            raise ConfigError(f"mixture weights sum to {total!r}, not 1")
        self.weights = self.weights / total
        dims = {c.dim for c in self.components}
        if len(dims) != 1:
            raise ConfigError(f"components disagree on dimension: {sorted(dims)}")

    @property
    def dim(self) -> int:
        return self.components[0].dim

    @property
    def n_components(self) -> int:
        return len(self.components)

    @property
    def means(self) -> np.ndarray:
        return np.stack([c.mean for c in self.components])

    @property
    def covs(self) -> np.ndarray:
        return np.stack([c.cov for c in self.components])


def log_density(gm: GaussianMixture, x) -> np.ndarray | float:
    """Log density of the mixture at x, computed with log-sum-exp.

    Parameters
    ----------
    gm : GaussianMixture
        Mixture whose components must all be nonsingular.
    x : array_like
        Single point of shape (dim,) or a batch of shape (n, dim).

    Returns
    -------
    float or ndarray
        Log density at each point. Stable against underflow of individual
        component densities as long as at least one component contributes.
    """
    x = np.asarray(x, dtype=np.float64)
    scalar = x.ndim == 1
    pts = np.atleast_2d(x)
    comp_logs = np.stack([c.log_density(pts) for c in gm.components])
    with np.errstate(divide="ignore"):
        log_w = np.log(gm.weights)
    out = logsumexp(comp_logs + log_w[:, None], axis=0)
    return float(out[0]) if scalar else out


def sample(gm: GaussianMixture, rng: np.random.Generator, size: int | None = None):
    """Draw from the mixture; returns (points, labels).

    With size=None a single (point, label) pair comes back, otherwise arrays
    of shape (size, dim) and (size,). Labels index the component that
    generated each draw. Rank-deficient covariances are handled through an
    eigenvalue square-root factor.
    """
    n = 1 if size is None else int(size)
    if n < 0:
        raise ConfigError("sample size must be nonnegative")
    labels = rng.choice(gm.n_components, size=n, p=gm.weights)
    normals = rng.standard_normal((n, gm.dim))
    factors = np.stack([c.sampling_factor() for c in gm.components])
    pts = gm.means[labels] + np.einsum("nij,nj->ni", factors[labels], normals)
    if size is None:
        return pts[0], int(labels[0])
    return pts, labels


def moment_match(gm: GaussianMixture) -> GaussianComponent:
    """Single Gaussian with the mixture's exact mean and covariance.

    The covariance is the weighted within-component covariance plus the
    spread of the component means about the overall mean.
    """
    mean = gm.weights @ gm.means
    dev = gm.means - mean
    cov = np.einsum("k,kij->ij", gm.weights, gm.covs)
    cov = cov + np.einsum("k,ki,kj->ij", gm.weights, dev, dev)
    return GaussianComponent(mean, cov)


def mahalanobis(x, comp: GaussianComponent) -> float:
    """Mahalanobis distance of x from the component (requires nonsingular cov)."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if x.shape != comp.mean.shape:
        raise ConfigError(f"point shape {x.shape} does not match mean {comp.mean.shape}")
    sol = np.linalg.solve(comp.chol(), x - comp.mean)
    return float(np.sqrt(np.sum(sol * sol)))


def kl_vs_moment_matched(
    gm: GaussianMixture,
    rng: np.random.Generator | None = None,
    mc_samples: int = 2_000_000,
) -> float:
    """KL divergence from the mixture to its moment-matched Gaussian, in nats.

    Univariate mixtures are integrated by adaptive quadrature over the
    moment-matched mean plus or minus 12 standard deviations, with breakpoints
    at the component means so narrow, well-separated clusters are not missed.
    Multivariate mixtures fall back to Monte Carlo with mc_samples draws; use
    kl_vs_moment_matched_mc directly when the standard error is needed.
    """
    if gm.dim == 1:
        return _kl_quadrature_1d(gm)
    est, _ = kl_vs_moment_matched_mc(gm, mc_samples, rng)
    return est


def _kl_quadrature_1d(gm: GaussianMixture) -> float:
    matched = moment_match(gm)
    mu = float(matched.mean[0])
    var = float(matched.cov[0, 0])
    if var <= 0.0:
        raise NumericsError("moment-matched variance is zero; KL undefined")
    sd = math.sqrt(var)
    lo, hi = mu - 12.0 * sd, mu + 12.0 * sd

    def integrand(z):
        lp = log_density(gm, np.array([z]))
        lq = -0.5 * (_LOG_2PI + math.log(var) + (z - mu) ** 2 / var)
        return math.exp(lp) * (lp - lq)

    pts = sorted(float(m) for m in gm.means[:, 0] if lo < m < hi)
    val, _ = quad(integrand, lo, hi, points=pts or None, limit=500, epsabs=1e-4)
    return float(val)


def kl_vs_moment_matched_mc(
    gm: GaussianMixture,
    n_samples: int = 2_000_000,
    rng: np.random.Generator | None = None,
) -> tuple[float, float]:
    """Monte Carlo estimate of the KL to the moment-matched Gaussian.

    Returns (estimate, standard error). Works in any dimension but requires
    every component covariance, and the matched covariance, to be nonsingular.
    """
    if rng is None:
        rng = np.random.default_rng()
    n = int(n_samples)
    if n < 2:
        raise ConfigError("need at least 2 samples for a standard error")
    matched = moment_match(gm)
    total = 0.0
    total_sq = 0.0
    chunk = 200_000
    done = 0
    while done < n:
        m = min(chunk, n - done)
        pts, _ = sample(gm, rng, m)
        diff = log_density(gm, pts) - matched.log_density(pts)
        total += float(np.sum(diff))
        total_sq += float(np.sum(diff * diff))
        done += m
    mean = total / n
    var = max(total_sq / n - mean * mean, 0.0)
    return mean, math.sqrt(var / n)
