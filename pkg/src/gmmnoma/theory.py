"""Closed-form predictors for the clustering receiver.

Covers the EM centroid-error bound and its sample-size condition, the phase
mismatch the bound implies for QPSK, and the resulting single-user and
two-user SER approximations. All logarithms are natural.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import erfc

from .channel import ChannelState, mixture_centers
from .modem import ParameterError

# Fitted once by scripts/calibrate_c3.py to the single-user N=500 Monte Carlo
# curve of configs/single_user.toml and frozen.
DEFAULT_C3 = 2.562e-05

_PHASE_CAP = math.nextafter(math.pi / 4, 0.0)


class DegenerateGeometryError(ValueError):
    """Two mixture centroids coincide."""


def q_function(z):
    """Standard normal upper tail, Q(z) = erfc(z / sqrt 2) / 2."""
    out = 0.5 * erfc(np.asarray(z, dtype=float) / math.sqrt(2.0))
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class TheoryParams:
    kappa: float
    r_min: float
    r_max: float
    m: int = 4
    n: int = 500
    d: int = 2
    c0: float = 1.0
    c1: float = 1.0
    c2: float = 1.0
    c3: float = DEFAULT_C3

    def __post_init__(self):
        if not 0 < self.kappa <= 1.0 / self.m + 1e-15:
            raise ParameterError(f"kappa must lie in (0, 1/m], got {self.kappa}")
        if not 0 <= self.r_min <= self.r_max:
            raise ParameterError("need 0 <= r_min <= r_max")
        if self.d < 1 or self.n < 2:
            raise ParameterError("need d >= 1 and n >= 2")
        if min(self.c0, self.c1, self.c2, self.c3) <= 0:
            raise ParameterError("universal constants must be positive")

    @property
    def c2_hat(self) -> float:
        return self.c2 * math.log(self.m * (2 * self.r_max + math.sqrt(self.d)))

    @property
    def c3_hat(self) -> float:
        return self.c3 * math.log(self.m * (3 * self.r_max ** 2 + math.sqrt(self.d)))


def _rate(c_hat: float, m: int, d: int, n: float) -> float:
    return math.sqrt(c_hat * m * d * math.log(n) / n)


def em_error_limit(params: TheoryParams) -> float:
    """Radius of the ball around each true centre once the 2^-t term has died out."""
    p = params
    return 3 * p.r_max / p.kappa * _rate(p.c3_hat, p.m, p.d, p.n)


def em_error_bound(params: TheoryParams, t: int, init_error: float) -> float:
    """Bound on max_i ||mu_i^(t) - mu_i*|| after t EM iterations."""
    if t < 0:
        raise ParameterError("t must be >= 0")
    return math.ldexp(init_error, -int(t)) + em_error_limit(params)


def check_sample_size(params: TheoryParams, init_error: float) -> bool:
    """Whether n is large enough for the EM bound to apply (inclusive)."""
    p = params
    lhs = math.log(p.n) / p.n
    rhs = min(p.kappa ** 2 / (144 * p.c2_hat * p.m * p.d),
              p.kappa ** 2 * init_error ** 2 / (9 * p.c3_hat * p.r_max ** 2 * p.m * p.d))
    return lhs <= rhs


@dataclass(frozen=True)
class FromRmax:
    r_max: float


@dataclass(frozen=True)
class FromSnr:
    snr: float


def phase_mismatch(m: int, d: int, n: float, c3: float,
                   source: Union[FromRmax, FromSnr]) -> float:
    """Worst-case centroid phase error arctan(6m sqrt(C3hat m d log n / n)).

    ``FromRmax`` uses C3hat = c3 log(m(3 r_max^2 + sqrt d)); ``FromSnr`` uses
    c3 log(m(12 snr + sqrt d)). The result is clamped to [0, pi/4), beyond
    which the SER formulas stop being meaningful.
    """
    if n < 2:
        raise ParameterError("n must be >= 2")
    if isinstance(source, FromRmax):
        inner = 3 * source.r_max ** 2
    elif isinstance(source, FromSnr):
        inner = 12 * source.snr
    else:
        raise TypeError(f"unknown source {source!r}")
    c3_hat = c3 * math.log(m * (inner + math.sqrt(d)))
    phi = math.atan(6 * m * _rate(c3_hat, m, d, n))
    return min(max(phi, 0.0), _PHASE_CAP)


def qpsk_ser_with_phase(snr, phi):
    """QPSK SER with a static phase reference error phi."""
    a = np.sqrt(2 * np.asarray(snr, dtype=float))
    out = q_function(a * np.sin(np.pi / 4 - phi)) + q_function(a * np.sin(np.pi / 4 + phi))
    return float(out) if np.ndim(out) == 0 else out


def ser_single_user(snr: float, n: float, m: int = 4, d: int = 2, c3: float = DEFAULT_C3,
                    phi: float | None = None) -> float:
    """Approximate SER of the clustering receiver for one QPSK user."""
    if snr < 0:
        raise ParameterError("snr must be >= 0")
    if phi is None:
        phi = phase_mismatch(m, d, n, c3, FromSnr(snr))
    return qpsk_ser_with_phase(snr, phi)


def ser_noma_two_user(snr1: float, snr2: float, n: float, c3: float = DEFAULT_C3,
                      m: int = 4, d: int = 2, phis: tuple[float, float] | None = None):
    """Approximate per-user SERs (strong user 1, weak user 2) under SIC."""
    if snr2 < 0 or snr1 < snr2:
        raise ParameterError("need snr1 >= snr2 >= 0 (user 1 is detected first)")
    if phis is None:
        phis = (phase_mismatch(m, d, n, c3, FromSnr(snr1)),
                phase_mismatch(m, d, n, c3, FromSnr(snr2)))
    phi1, phi2 = phis
    s_plus = math.sqrt(2 * snr1) + math.sqrt(2 * snr2)
    s_minus = math.sqrt(2 * snr1) - math.sqrt(2 * snr2)
    lo, hi = math.sin(math.pi / 4 - phi1), math.sin(math.pi / 4 + phi1)
    p1 = 0.25 * (q_function(s_plus * lo) + q_function(s_plus * hi)
                 + q_function(s_minus * lo) + q_function(s_minus * hi))
    p2 = qpsk_ser_with_phase(snr2, phi2)
    return p1, p2


def ser_noma_reference(snr1: float, snr2: float) -> float:
    """Full-CSI strong-user SER Q(sqrt g1 + sqrt g2) + Q(sqrt g1 - sqrt g2)."""
    if snr1 < 0 or snr2 < 0:
        raise ParameterError("SNRs must be >= 0")
    a, b = math.sqrt(snr1), math.sqrt(snr2)
    return q_function(a + b) + q_function(a - b)


def centroid_geometry(states: Sequence[ChannelState], constellations):
    """(r_min, r_max, kappa) of the noise-free received mixture."""
    centers, _ = mixture_centers(states, constellations)
    if centers.size < 2:
        raise DegenerateGeometryError("need at least two centroids")
    diff = np.abs(centers[:, None] - centers[None, :])
    iu = np.triu_indices(centers.size, k=1)
    pair = diff[iu]
    r_min, r_max = float(pair.min()), float(pair.max())
    scale = max(r_max, 1.0)
    if r_min <= 1e-12 * scale:
        raise DegenerateGeometryError("coincident centroids")
    return r_min, r_max, 1.0 / centers.size


def calibrate_c3(snrs, n: float, empirical, bounds=(1e-9, 1.0), m: int = 4, d: int = 2) -> float:
    """Least-squares fit of c3 in log-SER space to measured single-user SERs.

    ``snrs`` are linear SNRs, ``empirical`` the matching clustering-receiver
    SERs (all > 0). The search runs over log10(c3) within ``bounds``.
    """
    g = np.asarray(snrs, dtype=float)
    p = np.asarray(empirical, dtype=float)
    if g.shape != p.shape or g.size == 0:
        raise ParameterError("snrs and empirical SERs must match and be non-empty")
    if np.any(p <= 0) or np.any(p >= 1):
        raise ParameterError("empirical SERs must lie in (0, 1)")
    lo, hi = np.log10(bounds[0]), np.log10(bounds[1])

    def cost(log_c3):
        pred = [ser_single_user(x, n, m, d, 10.0 ** log_c3) for x in g]
        return float(np.sum((np.log(pred) - np.log(p)) ** 2))

    res = minimize_scalar(cost, bounds=(lo, hi), method="bounded", options={"xatol": 1e-6})
    return float(10.0 ** res.x)
