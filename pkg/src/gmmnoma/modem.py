"""Constellations, Gray bit mapping and minimum-distance demapping.

Symbol index ``j`` of every constellation is the integer value of its Gray
bit label (most significant bit first), so ``gray_map[j]`` is simply the
binary expansion of ``j``.

QPSK labels: 00 -> pi/4, 01 -> 3pi/4, 11 -> 5pi/4, 10 -> 7pi/4.
16-QAM labels: bits (b0 b1) pick the in-phase level and (b2 b3) the
quadrature level, each with the per-axis Gray code
00 -> -3, 01 -> -1, 11 -> +1, 10 -> +3, scaled by 1/sqrt(10).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_AXIS_GRAY_LEVELS = {(0, 0): -3.0, (0, 1): -1.0, (1, 1): 1.0, (1, 0): 3.0}
_QPSK_PHASES = {(0, 0): 1, (0, 1): 3, (1, 1): 5, (1, 0): 7}  # in units of pi/4


class ConfigurationError(ValueError):
    """Unsupported or inconsistent configuration."""


class InputError(ValueError):
    """Malformed input data (ragged lengths, wrong shapes)."""


class ParameterError(ValueError):
    """A numeric parameter is outside its valid range."""


def _bits_of(index: int, width: int) -> tuple[int, ...]:
    return tuple((index >> (width - 1 - b)) & 1 for b in range(width))


@dataclass(frozen=True, eq=False)
class Constellation:
    name: str
    points: np.ndarray
    bits_per_symbol: int
    rotational_symmetry_order: int = 4
    gray_map: tuple[tuple[int, ...], ...] = field(init=False)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=complex)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(
            self, "gray_map",
            tuple(_bits_of(j, self.bits_per_symbol) for j in range(len(pts))))

    @property
    def order(self) -> int:
        return len(self.points)

    @property
    def is_psk(self) -> bool:
        return self.name.endswith("PSK")

    def __repr__(self):
        return f"Constellation({self.name})"


def build_constellation(order: int, scheme: str = "PSK") -> Constellation:
    """Build a unit-average-energy Gray-coded QPSK or square 16-QAM set."""
    scheme = scheme.upper()
    if order == 4 and scheme in ("PSK", "QAM"):
        # 4-QAM and QPSK are the same point set
        pts = np.empty(4, dtype=complex)
        for j in range(4):
            pts[j] = np.exp(1j * np.pi / 4 * _QPSK_PHASES[_bits_of(j, 2)])
        return Constellation("QPSK", pts, 2)
    if order == 16 and scheme == "QAM":
        pts = np.empty(16, dtype=complex)
        for j in range(16):
            b = _bits_of(j, 4)
            pts[j] = _AXIS_GRAY_LEVELS[b[:2]] + 1j * _AXIS_GRAY_LEVELS[b[2:]]
        return Constellation("16QAM", pts / np.sqrt(10.0), 4)
    raise ConfigurationError(f"unsupported constellation: order={order}, scheme={scheme}")


def constellation_by_name(name: str) -> Constellation:
    key = name.upper().replace("-", "")
    if key in ("QPSK", "4PSK", "4QAM"):
        return build_constellation(4, "PSK")
    if key == "16QAM":
        return build_constellation(16, "QAM")
    raise ConfigurationError(f"unknown modulation {name!r}")


def bits_to_indices(bits, c: Constellation) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.int64).ravel()
    k = c.bits_per_symbol
    if bits.size % k:
        raise InputError(f"{bits.size} bits is not a multiple of {k}")
    if bits.size and not np.isin(bits, (0, 1)).all():
        raise InputError("bits must be 0 or 1")
    weights = 1 << np.arange(k - 1, -1, -1)
    return bits.reshape(-1, k) @ weights


def indices_to_bits(indices, c: Constellation) -> np.ndarray:
    idx = np.asarray(indices, dtype=np.int64).ravel()
    k = c.bits_per_symbol
    return ((idx[:, None] >> np.arange(k - 1, -1, -1)) & 1).ravel()


def modulate(bits, c: Constellation) -> np.ndarray:
    """Map a flat bit sequence to complex symbols via the Gray labels."""
    return c.points[bits_to_indices(bits, c)]


def demap(y, c: Constellation, gain: float, phase: float) -> np.ndarray:
    """Nearest reference point after scaling by ``gain`` and rotating by ``phase``.

    Works on a scalar or an array of complex samples and returns symbol
    indices of the same shape. Ties resolve to the lowest index.
    """
    if not gain > 0:
        raise ParameterError(f"gain must be positive, got {gain}")
    y = np.asarray(y, dtype=complex)
    ref = gain * np.exp(1j * phase) * c.points
    d2 = np.abs(y[..., None] - ref) ** 2
    return np.argmin(d2, axis=-1)
