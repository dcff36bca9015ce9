"""Clustering-based SIC receivers and maximum-likelihood baselines.

Each SIC stage clusters the current residual into M groups, reads the
channel gain and rotation (modulo the constellation's symmetry) off the
centroids, settles the remaining rotational ambiguity with a handful of
pilots, demaps, and subtracts the reconstructed user from the residual.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import hadamard
from scipy.optimize import minimize_scalar

from . import gmm
from .channel import ChannelState, mixture_centers
from .gmm import EmConfig, GmmFit
from .modem import Constellation, InputError, demap

# joint-detection limits: users per constellation size
MLD_MAX_USERS = {4: 5, 16: 3}


class DegenerateFitError(ValueError):
    """A fitted centroid sits at the origin, so its phase is undefined."""


class PilotError(ValueError):
    """Pilots are missing or carry no energy."""


class CapabilityError(ValueError):
    """Exhaustive joint detection would be too large."""


@dataclass(frozen=True)
class Pilots:
    """Known symbols a user sends at given positions of the block."""
    symbols: np.ndarray
    positions: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.symbols, dtype=complex).ravel()
        p = np.asarray(self.positions, dtype=np.int64).ravel()
        if s.size != p.size:
            raise InputError("pilot symbols and positions differ in length")
        object.__setattr__(self, "symbols", s)
        object.__setattr__(self, "positions", p)

    def __len__(self):
        return self.symbols.size


@dataclass(frozen=True)
class ChannelEstimate:
    gain_magnitude: float
    phase: float
    candidate_phases: tuple[float, ...]

    @property
    def gain(self) -> complex:
        return self.gain_magnitude * np.exp(1j * self.phase)


@dataclass
class DetectionReport:
    per_user_symbols: list[np.ndarray]
    per_user_estimates: list[ChannelEstimate]
    per_user_ser: list[float] | None = None
    detected_user_count: int = 0
    residual_power_trace: list[float] = field(default_factory=list)
    fits: list[GmmFit] = field(default_factory=list)


def _as_list(constellations, k: int) -> list[Constellation]:
    if isinstance(constellations, Constellation):
        return [constellations] * k
    out = list(constellations)
    if len(out) != k:
        raise InputError(f"{len(out)} constellations for {k} users")
    return out


def _wrap(a):
    """Wrap angles to [-pi, pi)."""
    return np.mod(np.asarray(a) + np.pi, 2 * np.pi) - np.pi


def estimate_phase_and_gain(fit_or_centroids, c: Constellation) -> tuple[float, float]:
    """Rotation (modulo the constellation symmetry) and gain from cluster centroids.

    PSK: each centroid is paired with the nominal point nearest in angle and
    the signed offsets are averaged on the circle of period 2pi/r (r the
    rotational symmetry order), so offsets straddling the sector edge do not
    cancel. The gain is mean |centroid| / mean |nominal point|.

    QAM: the rotation minimising sum_j min_k |mu_j - g e^{i phi} s_k|^2 over
    one symmetry sector, by grid search plus local refinement; the gain is
    then refit by least squares on the resulting pairing.

    The returned phase lies in [-pi/r, pi/r).
    """
    if isinstance(fit_or_centroids, GmmFit):
        mu = fit_or_centroids.centroids
    else:
        mu = np.asarray(fit_or_centroids, dtype=complex).ravel()
    mags = np.abs(mu)
    scale = max(mags.max(initial=0.0), 1.0)
    if np.any(mags <= 1e-12 * scale):
        raise DegenerateFitError("a centroid sits at the origin")
    r = c.rotational_symmetry_order
    if c.is_psk:
        nominal = np.angle(c.points)
        off = _wrap(np.angle(mu)[:, None] - nominal[None, :])
        nearest = np.argmin(np.abs(off), axis=1)
        offsets = off[np.arange(mu.size), nearest]
        phase = float(_wrap(np.angle(np.sum(np.exp(1j * r * offsets)))) / r)
        gain = float(mags.mean() / np.abs(c.points).mean())
        return phase, gain
    return _align_template(mu, c)


def _template_cost(mu, c, phase, gain):
    ref = gain * np.exp(1j * phase) * c.points
    return np.sum(np.min(np.abs(mu[:, None] - ref[None, :]) ** 2, axis=1))


def _align_template(mu: np.ndarray, c: Constellation) -> tuple[float, float]:
    r = c.rotational_symmetry_order
    sector = 2 * np.pi / r
    gain = float(np.abs(mu).mean() / np.abs(c.points).mean())
    grid = -sector / 2 + sector * np.arange(720) / 720
    for _ in range(2):
        costs = [_template_cost(mu, c, p, gain) for p in grid]
        best = grid[int(np.argmin(costs))]
        step = sector / 720
        res = minimize_scalar(lambda p: _template_cost(mu, c, p, gain),
                              bounds=(best - step, best + step), method="bounded",
                              options={"xatol": 1e-10})
        phase = float(res.x)
        ref = np.exp(1j * phase) * c.points
        pair = np.argmin(np.abs(mu[:, None] - gain * ref[None, :]), axis=1)
        gain = float(np.sum(np.real(np.conj(ref[pair]) * mu)) / np.sum(np.abs(ref[pair]) ** 2))
    phase = float(_wrap(phase * r) / r)
    return phase, gain


def candidate_phases(phase: float, c: Constellation) -> tuple[float, ...]:
    r = c.rotational_symmetry_order
    return tuple(float(phase + 2 * np.pi * k / r) for k in range(r))


def mmse_channel(pilot_tx, pilot_rx) -> complex:
    """(x^H x + 1)^-1 x^H y for unit-variance noise."""
    x = np.asarray(pilot_tx, dtype=complex).ravel()
    y = np.asarray(pilot_rx, dtype=complex).ravel()
    if x.size == 0 or x.size != y.size:
        raise PilotError("need matching, non-empty pilot sequences")
    energy = float(np.vdot(x, x).real)
    if energy <= 0:
        raise PilotError("pilots carry no energy")
    return complex(np.vdot(x, y) / (energy + 1.0))


def resolve_ambiguity(candidates: Sequence[float], pilot_tx, pilot_rx) -> tuple[float, int]:
    """Pick the candidate phase closest to the MMSE pilot estimate.

    Returns (phase, index). Equal angular distances go to the lower index.
    """
    h = mmse_channel(pilot_tx, pilot_rx)
    cand = np.asarray(candidates, dtype=float)
    dist = np.abs(_wrap(cand - np.angle(h)))
    k = int(np.flatnonzero(dist <= dist.min() + 1e-12)[0])
    return float(cand[k]), k


def _initial_fit(residual: np.ndarray, c: Constellation) -> GmmFit:
    if c.is_psk:
        return gmm.init_by_sectors(residual, c.order)
    # no useful angular sectors for QAM: seed at a coarsely aligned template
    # (rotation from the 4th-power moment, scale from the RMS amplitude)
    rot = (np.angle(np.sum(residual ** 4) / np.sum(c.points ** 4))) / 4
    g = np.sqrt(np.mean(np.abs(residual) ** 2))
    return gmm.init_from_points(g * np.exp(1j * rot) * c.points)


def sic_stage(residual: np.ndarray, c: Constellation, pilots: Pilots, config: EmConfig):
    """One SIC round: returns (symbol indices, estimate, fit, new residual)."""
    fit = gmm.fit(residual, c.order, config, init=_initial_fit(residual, c))
    offset, gain = estimate_phase_and_gain(fit, c)
    cands = candidate_phases(offset, c)
    if len(pilots) == 0:
        raise PilotError("no pilots for ambiguity resolution")
    phase, _ = resolve_ambiguity(cands, pilots.symbols, residual[pilots.positions])
    idx = demap(residual, c, gain, phase)
    est = ChannelEstimate(gain_magnitude=gain, phase=phase, candidate_phases=cands)
    return idx, est, fit, residual - est.gain * c.points[idx]


def payload_mask(n: int, pilots: Pilots) -> np.ndarray:
    mask = np.ones(n, dtype=bool)
    mask[pilots.positions] = False
    return mask


def symbol_error_rate(detected, truth) -> float:
    detected = np.asarray(detected)
    truth = np.asarray(truth)
    if detected.size == 0:
        return 0.0
    return float(np.mean(detected != truth))


def gmm_sic_detect(received, k: int, constellations, pilots: Sequence[Pilots],
                   config: EmConfig | None = None, truth=None) -> DetectionReport:
    """Blind SIC detection of ``k`` users, strongest first.

    ``pilots[u]`` belongs to the u-th strongest user. Reported symbols cover
    each user's payload (the block minus that user's own pilot slots);
    ``truth`` (full-block symbol indices per user) adds per-user SERs.
    """
    config = config or EmConfig()
    y = np.asarray(received, dtype=complex).ravel()
    cons = _as_list(constellations, k)
    if len(pilots) != k:
        raise InputError(f"{len(pilots)} pilot sets for {k} users")
    if truth is not None and (len(truth) != k or any(len(t) != y.size for t in truth)):
        raise InputError("truth must hold one full-length index sequence per user")
    residual = y.copy()
    symbols, estimates, fits, trace = [], [], [], []
    for u in range(k):
        idx, est, fit, residual = sic_stage(residual, cons[u], pilots[u], config)
        mask = payload_mask(y.size, pilots[u])
        symbols.append(idx[mask])
        estimates.append(est)
        fits.append(fit)
        trace.append(float(np.mean(np.abs(residual) ** 2)))
    ser = None
    if truth is not None:
        ser = [symbol_error_rate(s, np.asarray(t)[payload_mask(y.size, p)])
               for s, t, p in zip(symbols, truth, pilots)]
    return DetectionReport(per_user_symbols=symbols, per_user_estimates=estimates,
                           per_user_ser=ser, detected_user_count=k,
                           residual_power_trace=trace, fits=fits)


def _check_mld_size(cons: list[Constellation]):
    k = len(cons)
    for c in cons:
        if k > MLD_MAX_USERS.get(c.order, 0):
            raise CapabilityError(f"joint detection of {k} users with {c.name} is not supported")


def mld_full_csi(received, states: Sequence[ChannelState], constellations,
                 chunk: int = 4096) -> list[np.ndarray]:
    """Exhaustive joint minimum-distance detection with known channels.

    Returns one full-block index sequence per user. Ties go to the
    lexicographically smallest symbol tuple.
    """
    y = np.asarray(received, dtype=complex).ravel()
    cons = _as_list(constellations, len(states))
    _check_mld_size(cons)
    centers, tuples = mixture_centers(states, cons)
    best = np.empty(y.size, dtype=np.int64)
    rows = max(1, chunk * 64 // max(len(centers), 1))
    for start in range(0, y.size, rows):
        block = y[start:start + rows]
        best[start:start + rows] = np.argmin(np.abs(block[:, None] - centers[None, :]) ** 2, axis=1)
    return [tuples[best, u] for u in range(len(states))]


def ls_channel(pilot_tx, pilot_rx) -> complex:
    x = np.asarray(pilot_tx, dtype=complex).ravel()
    y = np.asarray(pilot_rx, dtype=complex).ravel()
    if x.size == 0 or x.size != y.size:
        raise PilotError("need matching, non-empty pilot sequences")
    energy = float(np.vdot(x, x).real)
    if energy <= 0:
        raise PilotError("pilots carry no energy")
    return complex(np.vdot(x, y) / energy)


def mld_pilot_csi(received, pilots: Sequence[Pilots], constellations):
    """Joint ML detection using least-squares channel estimates from pilots.

    The gains of all users are fitted jointly over the union of pilot slots,
    a user contributing a zero column entry wherever it sends data. With
    disjoint slots this is per-user LS with the others treated as noise.
    Returns (per-user full-block indices, per-user estimated ChannelStates).
    """
    y = np.asarray(received, dtype=complex).ravel()
    if any(len(p) == 0 for p in pilots):
        raise PilotError("every user needs at least one pilot")
    slots = np.unique(np.concatenate([p.positions for p in pilots]))
    x = np.zeros((slots.size, len(pilots)), dtype=complex)
    for u, p in enumerate(pilots):
        x[np.searchsorted(slots, p.positions), u] = p.symbols
    if np.linalg.matrix_rank(x) < len(pilots):
        raise PilotError("pilot matrix is rank deficient; channels are not identifiable")
    gains = np.linalg.lstsq(x, y[slots], rcond=None)[0]
    states = [ChannelState(gain=complex(g), power=1.0) for g in gains]
    return mld_full_csi(y, states, constellations), states


def pilot_sequences(k: int, length: int, c: Constellation, layout: str = "shared") -> list[Pilots]:
    """Pilots for ``k`` users.

    ``shared``: every user sends ``length`` pilots in slots 0..length-1, drawn
    as +-s0 from the rows of a Hadamard matrix (orthogonal whenever ``length``
    is a power of two and >= k; user 1 sends s0 throughout).
    ``orthogonal``: user u owns slots u*length .. (u+1)*length-1 and sends s0.
    """
    if length < 1 or k < 1:
        raise PilotError("need k >= 1 and at least one pilot")
    s0 = c.points[0]
    if layout == "shared":
        size = 1 << max(k - 1, length - 1, 0).bit_length()
        signs = hadamard(size)[:k, :length]
        pos = np.arange(length)
        return [Pilots(s0 * signs[u], pos) for u in range(k)]
    if layout == "orthogonal":
        return [Pilots(np.full(length, s0), u * length + np.arange(length)) for u in range(k)]
    raise PilotError(f"unknown pilot layout {layout!r}")


def grant_free_detect(received, noise_power: float, constellation: Constellation,
                      pilots: Pilots, config: EmConfig | None = None, max_users: int = 8,
                      margin: float = 0.1, refine: bool = True) -> DetectionReport:
    """SIC with an unknown number of users.

    Keeps peeling off the strongest remaining user while the residual power
    exceeds ``noise_power * (1 + margin)``, for at most ``max_users`` rounds.
    All users share one pilot preamble (``pilots``), so each round resolves
    its rotation against whatever pilot energy is left in the residual.

    With ``refine`` the gains of all users found so far are re-fitted jointly
    by least squares on their detected symbols before the residual is formed.
    Otherwise the per-stage gain error of a strong user leaves a term of order
    (weaker power) / N behind, which the power test mistakes for another user.
    """
    if not noise_power > 0:
        raise ValueError("noise_power must be positive")
    if max_users < 1:
        raise ValueError("max_users must be >= 1")
    config = config or EmConfig()
    residual = np.asarray(received, dtype=complex).ravel().copy()
    power = float(np.mean(np.abs(residual) ** 2))
    trace = [power]
    symbols, estimates, fits = [], [], []
    y = residual.copy()
    mask = payload_mask(residual.size, pilots)
    full = []
    while power > noise_power * (1 + margin) and len(symbols) < max_users:
        try:
            idx, est, fit, residual = sic_stage(residual, constellation, pilots, config)
        except (DegenerateFitError, gmm.NumericError):
            break
        symbols.append(idx[mask])
        estimates.append(est)
        fits.append(fit)
        full.append(constellation.points[idx])
        if refine:
            basis = np.column_stack(full)
            gains = np.linalg.lstsq(basis, y, rcond=None)[0]
            residual = y - basis @ gains
            estimates = [ChannelEstimate(float(abs(g)), float(np.angle(g)), e.candidate_phases)
                         for g, e in zip(gains, estimates)]
        power = float(np.mean(np.abs(residual) ** 2))
        trace.append(power)
    return DetectionReport(per_user_symbols=symbols, per_user_estimates=estimates,
                           detected_user_count=len(symbols), residual_power_trace=trace,
                           fits=fits)
