"""EM fitting of 2-D full-covariance Gaussian mixtures.

The stopping statistic is the hard-assignment log-likelihood
``sum_i ln(w_{m_i} g_{m_i}(z_i))`` with ``m_i`` the most responsible
component; iterations stop once it improves by less than ``epsilon``. The
ordinary (soft) marginal log-likelihood is recorded alongside it, since that
is the quantity EM actually ascends.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .modem import InputError, ParameterError

LOG_2PI = np.log(2 * np.pi)


class NumericError(ArithmeticError):
    """A covariance is not positive definite even after flooring."""


@dataclass(frozen=True)
class EmConfig:
    epsilon: float = 1.0
    max_iterations: int = 100
    covariance_floor: float = 1e-6

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ParameterError(f"epsilon must be > 0, got {self.epsilon}")
        if self.max_iterations < 1:
            raise ParameterError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if not self.covariance_floor > 0:
            raise ParameterError(f"covariance_floor must be > 0, got {self.covariance_floor}")


@dataclass
class GmmFit:
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    responsibilities: np.ndarray | None = None
    hard_assignments: np.ndarray | None = None
    loglik_trace: list[float] = field(default_factory=list)
    soft_loglik_trace: list[float] = field(default_factory=list)
    iterations: int = 0
    restarts: list[int] = field(default_factory=list)

    @property
    def n_components(self) -> int:
        return len(self.weights)

    @property
    def centroids(self) -> np.ndarray:
        """Component means as complex numbers."""
        return self.means[:, 0] + 1j * self.means[:, 1]

    def permuted(self, order) -> "GmmFit":
        """Same fit with components relabelled so new j is old ``order[j]``."""
        order = np.asarray(order)
        inverse = np.argsort(order)
        return replace(
            self,
            weights=self.weights[order].copy(),
            means=self.means[order].copy(),
            covariances=self.covariances[order].copy(),
            responsibilities=None if self.responsibilities is None
            else self.responsibilities[:, order].copy(),
            hard_assignments=None if self.hard_assignments is None
            else inverse[self.hard_assignments],
            loglik_trace=list(self.loglik_trace),
            soft_loglik_trace=list(self.soft_loglik_trace),
            restarts=list(self.restarts),
        )


def as_points(samples) -> np.ndarray:
    """Accept complex samples or an (N, 2) real array; return (N, 2) float."""
    a = np.asarray(samples)
    if np.iscomplexobj(a):
        a = a.ravel()
        return np.column_stack([a.real, a.imag])
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[1] != 2:
        raise InputError(f"expected complex samples or an (N, 2) array, got shape {a.shape}")
    return a


def _check_cov(covs: np.ndarray):
    a, b, d = covs[:, 0, 0], covs[:, 0, 1], covs[:, 1, 1]
    det = a * d - b * b
    if np.any(~np.isfinite(det)) or np.any(a <= 0) or np.any(det <= 0):
        raise NumericError("covariance is not positive definite")
    return a, b, d, det


def log_gaussian_pdf(z, means, covs) -> np.ndarray:
    """Log densities of every sample under every component, shape (N, M)."""
    z = as_points(z)
    means = np.asarray(means, dtype=float).reshape(-1, 2)
    covs = np.asarray(covs, dtype=float).reshape(-1, 2, 2)
    a, b, d, det = _check_cov(covs)
    dx = z[:, None, 0] - means[None, :, 0]
    dy = z[:, None, 1] - means[None, :, 1]
    # inverse of [[a, b], [b, d]] is [[d, -b], [-b, a]] / det
    maha = (d * dx * dx - 2 * b * dx * dy + a * dy * dy) / det
    return -0.5 * maha - LOG_2PI - 0.5 * np.log(det)


def gaussian_pdf(z, mean, cov) -> float | np.ndarray:
    """Bivariate normal density at ``z`` (a 2-vector or an (N, 2) array)."""
    z_arr = np.asarray(z, dtype=float)
    single = z_arr.ndim == 1
    cov = np.asarray(cov, dtype=float)
    if not np.allclose(cov, cov.T):
        raise NumericError("covariance must be symmetric")
    out = np.exp(log_gaussian_pdf(np.atleast_2d(z_arr), mean, cov))[:, 0]
    return float(out[0]) if single else out


def log_joint(samples, weights, means, covs) -> np.ndarray:
    """ln(w_j g_j(z_i)), shape (N, M); -inf where a weight is zero."""
    with np.errstate(divide="ignore"):
        logw = np.log(np.asarray(weights, dtype=float))
    return log_gaussian_pdf(samples, means, covs) + logw[None, :]


def _normalize(lj: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    top = lj.max(axis=1)
    dead = ~np.isfinite(top)
    top = np.where(dead, 0.0, top)
    with np.errstate(invalid="ignore"):
        shifted = np.exp(lj - top[:, None])
    total = shifted.sum(axis=1)
    resp = shifted / np.where(dead, 1.0, total)[:, None]
    # every component underflowed for these samples: spread uniformly
    resp[dead] = 1.0 / lj.shape[1]
    log_mix = np.where(dead, -np.inf, top + np.log(np.where(dead, 1.0, total)))
    return resp, log_mix


def e_step(samples, weights, means, covs) -> np.ndarray:
    """Responsibilities w_j g_j(z_i) / sum_k w_k g_k(z_i)."""
    resp, _ = _normalize(log_joint(samples, weights, means, covs))
    return resp


def m_step(samples, responsibilities, covariance_floor: float = 1e-6, sample_loglik=None,
           return_restarted: bool = False):
    """Weighted-average updates of weights, means and covariances.

    Covariance eigenvalues are clipped from below at ``covariance_floor``;
    that is the exact maximiser of the M-step objective over covariances
    bounded below by ``covariance_floor * I``, so EM keeps its ascent property.
    A component whose total responsibility falls below 1e-8 * N is restarted
    at the sample with the lowest mixture likelihood (``sample_loglik``), with
    identity covariance and weight 1/M before renormalisation.
    """
    z = as_points(samples)
    resp = np.asarray(responsibilities, dtype=float)
    n, m = resp.shape
    if z.shape[0] != n:
        raise InputError("responsibilities do not match the number of samples")
    mass = resp.sum(axis=0)
    weights = mass / mass.sum()
    safe = np.where(mass > 0, mass, 1.0)
    means = (resp.T @ z) / safe[:, None]
    covs = np.empty((m, 2, 2))
    for j in range(m):
        dz = z - means[j]
        covs[j] = (resp[:, j, None] * dz).T @ dz / safe[j]
    covs = floor_covariances(covs, covariance_floor)

    dead = np.flatnonzero(mass < 1e-8 * n)
    if dead.size:
        if sample_loglik is None:
            sample_loglik = -np.sum((z - z.mean(axis=0)) ** 2, axis=1)
        worst = np.argsort(np.asarray(sample_loglik), kind="stable")
        for j, i in zip(dead, worst):
            means[j] = z[i]
            covs[j] = np.eye(2)
            weights[j] = 1.0 / m
        weights = weights / weights.sum()
    if return_restarted:
        return weights, means, covs, dead
    return weights, means, covs


def floor_covariances(covs, floor: float) -> np.ndarray:
    covs = np.asarray(covs, dtype=float)
    covs = 0.5 * (covs + np.swapaxes(covs, -1, -2))
    vals, vecs = np.linalg.eigh(covs)
    if np.all(vals >= floor):
        return covs
    vals = np.maximum(vals, floor)
    return (vecs * vals[..., None, :]) @ np.swapaxes(vecs, -1, -2)


def hard_assign(lj: np.ndarray) -> np.ndarray:
    return np.argmax(lj, axis=1)


def hard_loglik(samples, weights, means, covs) -> float:
    """Sum over samples of ln(w g) for the component each sample is assigned to."""
    lj = log_joint(samples, weights, means, covs)
    best = lj[np.arange(lj.shape[0]), hard_assign(lj)]
    # floor keeps a fully underflowed sample from turning the sum into -inf
    return float(np.sum(np.maximum(best, -1e300)))


def soft_loglik(samples, weights, means, covs) -> float:
    _, log_mix = _normalize(log_joint(samples, weights, means, covs))
    return float(np.sum(log_mix))


def sector_orientation(samples, m: int) -> float:
    """Start angle of the first sector so that sectors straddle the clusters.

    Uses the phase of the m-th power moment about the centroid: for m points
    spread evenly on a circle at angles t0 + 2 pi k / m, sum z^m points along
    m * t0, so sector k is centred on t0 + 2 pi k / m.
    """
    if m == 1:
        return 0.0
    z = as_points(samples)
    c = z.mean(axis=0)
    w = (z[:, 0] - c[0]) + 1j * (z[:, 1] - c[1])
    moment = np.sum(w ** m)
    return float(np.angle(moment) / m - np.pi / m)


def init_by_sectors(samples, m: int, offset: float | None = None) -> GmmFit:
    """Initial fit from m equal angular sectors around the sample centroid.

    Each initial mean is the mean of the samples in its sector; an empty
    sector gets centroid + unit vector along its bisector. Covariances start
    at the identity and weights at 1/m. ``offset`` is the start angle of
    sector 0; by default it is chosen by :func:`sector_orientation`.
    """
    z = as_points(samples)
    n = z.shape[0]
    if m < 1:
        raise ParameterError("need at least one component")
    if n < m:
        raise InputError(f"{n} samples cannot seed {m} components")
    c = z.mean(axis=0)
    if offset is None:
        offset = sector_orientation(z, m)
    width = 2 * np.pi / m
    ang = np.mod(np.arctan2(z[:, 1] - c[1], z[:, 0] - c[0]) - offset, 2 * np.pi)
    sector = np.minimum((ang // width).astype(int), m - 1)
    means = np.empty((m, 2))
    for j in range(m):
        sel = sector == j
        if sel.any():
            means[j] = z[sel].mean(axis=0)
        else:
            bis = offset + (j + 0.5) * width
            means[j] = c + np.array([np.cos(bis), np.sin(bis)])
    return GmmFit(weights=np.full(m, 1.0 / m), means=means,
                  covariances=np.tile(np.eye(2), (m, 1, 1)))


def init_from_points(points, covariance: float = 1.0) -> GmmFit:
    """Initial fit centred on given complex points, equal weights."""
    p = np.asarray(points, dtype=complex).ravel()
    m = p.size
    return GmmFit(weights=np.full(m, 1.0 / m),
                  means=np.column_stack([p.real, p.imag]),
                  covariances=np.tile(covariance * np.eye(2), (m, 1, 1)))


def fit(samples, m: int, config: EmConfig | None = None, init: GmmFit | None = None) -> GmmFit:
    """Fit an m-component mixture by EM.

    Starts from ``init`` (default: :func:`init_by_sectors`) and alternates
    M- and E-steps until the hard log-likelihood gains less than
    ``config.epsilon`` or ``config.max_iterations`` is reached.
    """
    config = config or EmConfig()
    z = as_points(samples)
    if z.shape[0] < m:
        raise InputError(f"{z.shape[0]} samples cannot fit {m} components")
    if init is None:
        init = init_by_sectors(z, m)
    elif init.n_components != m:
        raise InputError("initial fit has the wrong number of components")
    weights = np.array(init.weights, dtype=float)
    means = np.array(init.means, dtype=float)
    covs = np.array(init.covariances, dtype=float)

    lj = log_joint(z, weights, means, covs)
    resp, log_mix = _normalize(lj)
    assign = hard_assign(lj)
    hard = [float(np.sum(np.maximum(lj[np.arange(len(z)), assign], -1e300)))]
    soft = [float(log_mix.sum())]

    t = 0
    restarts = []
    while t < config.max_iterations:
        t += 1
        weights, means, covs, dead = m_step(z, resp, config.covariance_floor, log_mix,
                                            return_restarted=True)
        lj = log_joint(z, weights, means, covs)
        resp, log_mix = _normalize(lj)
        assign = hard_assign(lj)
        hard.append(float(np.sum(np.maximum(lj[np.arange(len(z)), assign], -1e300))))
        soft.append(float(log_mix.sum()))
        if dead.size:
            # a restart is not an EM step; never stop right after one
            restarts.append(t)
            continue
        if hard[-1] - hard[-2] < config.epsilon:
            break

    return GmmFit(weights=weights, means=means, covariances=covs,
                  responsibilities=resp, hard_assignments=assign,
                  loglik_trace=hard, soft_loglik_trace=soft, iterations=t,
                  restarts=restarts)
