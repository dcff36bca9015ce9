"""Flat-fading uplink channel: y_n = sum_i sqrt(P_i) h_i x_{i,n} + w_n.

Received samples are complex numpy arrays; ``to_iq`` gives the (N, 2)
real view used by the mixture-fitting code.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .modem import InputError, ParameterError


@dataclass(frozen=True)
class ChannelState:
    gain: complex
    power: float

    @property
    def snr(self) -> float:
        return self.power * abs(self.gain) ** 2

    @property
    def effective_gain(self) -> complex:
        """sqrt(P) * h, the complex scale seen by this user's symbols."""
        return np.sqrt(self.power) * complex(self.gain)


@dataclass(frozen=True)
class FixedSnr:
    snr: float


@dataclass(frozen=True)
class Rayleigh:
    power: float
    power_control: bool = False


ChannelSpec = Union[FixedSnr, Rayleigh]


def db_to_linear(db):
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


def draw_channel(spec: ChannelSpec, rng: np.random.Generator) -> ChannelState:
    """Draw one channel realization.

    ``FixedSnr`` keeps the SNR exact and only randomizes the phase (uniform on
    [0, 2pi)); ``Rayleigh`` draws h ~ CN(0, 1) so that E[snr] = power. With
    ``power_control`` the transmitter inverts |h|, so the received SNR equals
    ``power`` exactly and only the fading phase remains.
    """
    if isinstance(spec, FixedSnr):
        if spec.snr < 0:
            raise ParameterError(f"negative SNR {spec.snr}")
        theta = rng.uniform(0.0, 2 * np.pi)
        return ChannelState(gain=complex(np.exp(1j * theta)), power=float(spec.snr))
    if isinstance(spec, Rayleigh):
        if spec.power < 0:
            raise ParameterError(f"negative power {spec.power}")
        h = (rng.standard_normal() + 1j * rng.standard_normal()) / np.sqrt(2.0)
        if spec.power_control:
            return ChannelState(gain=complex(h), power=float(spec.power) / abs(h) ** 2)
        return ChannelState(gain=complex(h), power=float(spec.power))
    raise TypeError(f"unknown channel spec {spec!r}")


def complex_noise(n: int, variance: float, rng: np.random.Generator) -> np.ndarray:
    """Circular CN(0, variance) samples (variance/2 per real dimension)."""
    scale = np.sqrt(variance / 2.0)
    return scale * (rng.standard_normal(n) + 1j * rng.standard_normal(n))


def transmit(symbols_per_user, states: Sequence[ChannelState], noise_variance: float,
             rng: np.random.Generator) -> np.ndarray:
    """Superimpose the users' scaled symbol streams and add AWGN."""
    streams = [np.asarray(s, dtype=complex) for s in symbols_per_user]
    if len(streams) != len(states):
        raise InputError(f"{len(streams)} symbol streams for {len(states)} channels")
    if not streams:
        raise InputError("need at least one user")
    n = streams[0].size
    if any(s.ndim != 1 or s.size != n for s in streams):
        raise InputError("all users must send the same number of symbols")
    if noise_variance < 0:
        raise ParameterError(f"negative noise variance {noise_variance}")
    y = np.zeros(n, dtype=complex)
    for s, st in zip(streams, states):
        y += st.effective_gain * s
    if noise_variance > 0:
        y += complex_noise(n, noise_variance, rng)
    return y


def to_iq(y) -> np.ndarray:
    y = np.asarray(y, dtype=complex).ravel()
    return np.column_stack([y.real, y.imag])


def from_iq(z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    return z[:, 0] + 1j * z[:, 1]


def sample_mixture(weights, means, covariances, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` points from a 2-D Gaussian mixture; returns an (n, 2) array."""
    w = np.asarray(weights, dtype=float)
    mu = np.asarray(means, dtype=float).reshape(len(w), -1)
    cov = np.asarray(covariances, dtype=float).reshape(len(w), mu.shape[1], mu.shape[1])
    if np.any(w < 0) or not np.isclose(w.sum(), 1.0, atol=1e-9):
        raise ParameterError("mixture weights must be nonnegative and sum to 1")
    chol = []
    for c in cov:
        if not np.allclose(c, c.T):
            raise ParameterError("covariance must be symmetric")
        try:
            chol.append(np.linalg.cholesky(c))
        except np.linalg.LinAlgError:
            raise ParameterError("covariance must be positive definite") from None
    labels = rng.choice(len(w), size=n, p=w / w.sum())
    eps = rng.standard_normal((n, mu.shape[1]))
    out = np.empty((n, mu.shape[1]))
    for j, L in enumerate(chol):
        sel = labels == j
        out[sel] = mu[j] + eps[sel] @ L.T
    return out


def mixture_centers(states: Sequence[ChannelState], constellations) -> tuple[np.ndarray, np.ndarray]:
    """All noise-free superposition points, with the symbol tuple of each.

    Tuples are enumerated lexicographically (user 1 slowest).
    """
    if not isinstance(constellations, (list, tuple)):
        constellations = [constellations] * len(states)
    tuples = np.array(list(itertools.product(*[range(c.order) for c in constellations])),
                      dtype=np.int64).reshape(-1, len(states))
    centers = np.zeros(len(tuples), dtype=complex)
    for u, (st, c) in enumerate(zip(states, constellations)):
        centers += st.effective_gain * c.points[tuples[:, u]]
    return centers, tuples
