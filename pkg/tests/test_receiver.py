import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gmmnoma import receiver
from gmmnoma.channel import ChannelState, FixedSnr, complex_noise, draw_channel, transmit
from gmmnoma.gmm import EmConfig, GmmFit
from gmmnoma.modem import InputError, build_constellation, demap
from gmmnoma.receiver import (CapabilityError, DegenerateFitError, Pilots, PilotError,
                              candidate_phases, estimate_phase_and_gain, gmm_sic_detect,
                              grant_free_detect, mld_full_csi, mld_pilot_csi, mmse_channel,
                              pilot_sequences, resolve_ambiguity)

QPSK = build_constellation(4)
QAM16 = build_constellation(16, "QAM")


def _block(states, cons, n, rng, pilots=None, noise=1.0):
    k = len(states)
    idx = [rng.integers(0, c.order, n) for c in cons]
    if pilots is not None:
        for u, p in enumerate(pilots):
            idx[u][p.positions] = np.argmin(np.abs(p.symbols[:, None] - cons[u].points), axis=1)
    y = transmit([cons[u].points[idx[u]] for u in range(k)], states, noise, rng)
    return y, idx


# --- phase and gain from centroids -------------------------------------------

def test_phase_gain_exact_centroids():
    mu = 2.5 * QPSK.points
    phase, gain = estimate_phase_and_gain(mu, QPSK)
    assert abs(phase) < 1e-12 and gain == pytest.approx(2.5)
    phase, gain = estimate_phase_and_gain(mu * np.exp(0.1j), QPSK)
    assert phase == pytest.approx(0.1, abs=1e-12) and gain == pytest.approx(2.5)


def test_phase_gain_wraps_across_sector_edge():
    # offsets of +-pi/4 - tiny straddle the symmetry edge and must not cancel
    mu = 2.0 * QPSK.points * np.exp(1j * (np.pi / 4 - 1e-3))
    mu[0] *= np.exp(2e-3j)
    phase, _ = estimate_phase_and_gain(mu, QPSK)
    assert abs(abs(phase) - np.pi / 4) < 2e-3


def test_phase_gain_noisy_centroids():
    rng = np.random.default_rng(7)
    for _ in range(200):
        rot = rng.uniform(-np.pi / 4, np.pi / 4)
        mu = 3 * QPSK.points * np.exp(1j * rot) + 0.05 * (rng.normal(size=4) + 1j * rng.normal(size=4))
        phase, gain = estimate_phase_and_gain(mu, QPSK)
        err = np.angle(np.exp(4j * (phase - rot))) / 4
        assert abs(err) < 0.05
        assert gain == pytest.approx(3.0, rel=0.05)


def test_phase_gain_from_fit_and_degenerate():
    fit = GmmFit(weights=np.full(4, 0.25), means=np.column_stack([QPSK.points.real,
                                                                   QPSK.points.imag]) * 2,
                 covariances=np.tile(np.eye(2), (4, 1, 1)))
    assert estimate_phase_and_gain(fit, QPSK)[1] == pytest.approx(2.0)
    with pytest.raises(DegenerateFitError):
        estimate_phase_and_gain(np.array([1, 1j, 0, -1j]), QPSK)


def test_qam_alignment():
    rng = np.random.default_rng(8)
    for _ in range(20):
        rot = rng.uniform(-np.pi / 4, np.pi / 4)
        mu = 4 * QAM16.points * np.exp(1j * rot)
        mu = rng.permutation(mu + 0.02 * (rng.normal(size=16) + 1j * rng.normal(size=16)))
        phase, gain = estimate_phase_and_gain(mu, QAM16)
        assert abs(np.angle(np.exp(4j * (phase - rot))) / 4) < 0.01
        assert gain == pytest.approx(4.0, rel=0.01)


@given(st.floats(-10, 10))
def test_candidates_spacing(phase):
    for c in (QPSK, QAM16):
        cands = candidate_phases(phase, c)
        assert len(cands) == c.rotational_symmetry_order
        gaps = np.diff(cands)
        assert np.allclose(gaps, 2 * np.pi / c.rotational_symmetry_order, atol=1e-9)


# --- ambiguity resolution ----------------------------------------------------

def test_mmse_noise_free_half_gain():
    h = 0.8 * np.exp(1.2j)
    s = QPSK.points[[2]]
    assert mmse_channel(s, h * s) == pytest.approx(h / 2)
    with pytest.raises(PilotError):
        mmse_channel([], [])
    with pytest.raises(PilotError):
        mmse_channel([0.0], [1.0])


def test_resolve_picks_nearest_and_ties_low():
    cands = candidate_phases(0.1, QPSK)
    s = QPSK.points[[0]]
    for k, c in enumerate(cands):
        phase, idx = resolve_ambiguity(cands, s, 3 * np.exp(1j * c) * s)
        assert idx == k and phase == c
    # pilot phase exactly midway between candidates 0 and 1
    cands = (0.0, np.pi / 2, np.pi, 3 * np.pi / 2)
    _, idx = resolve_ambiguity(cands, [1.0], [np.exp(1j * np.pi / 4)])
    assert idx == 0


def test_resolve_two_pilots_10db():
    rng = np.random.default_rng(10)
    g = np.sqrt(10.0)
    s = QPSK.points[[0, 0]]
    ok = 0
    for _ in range(10_000):
        theta = rng.uniform(0, 2 * np.pi)
        y = g * np.exp(1j * theta) * s + complex_noise(2, 1.0, rng)
        cands = candidate_phases(theta + rng.uniform(-0.05, 0.05), QPSK)
        _, k = resolve_ambiguity(cands, s, y)
        ok += np.abs(np.angle(np.exp(1j * (cands[k] - theta)))) < np.pi / 4
    assert ok / 10_000 >= 0.99


# --- pilots ------------------------------------------------------------------

def test_pilot_sequences_shared_orthogonal_rows():
    ps = pilot_sequences(2, 2, QPSK)
    s0 = QPSK.points[0]
    assert np.allclose(ps[0].symbols, [s0, s0])
    assert np.allclose(ps[1].symbols, [s0, -s0])
    assert abs(np.vdot(ps[0].symbols, ps[1].symbols)) < 1e-12
    ps = pilot_sequences(3, 4, QPSK)
    gram = np.array([[np.vdot(a.symbols, b.symbols) for b in ps] for a in ps])
    assert np.allclose(gram, 4 * np.eye(3))
    # every pilot is a constellation point
    for c in (QPSK, QAM16):
        for p in pilot_sequences(3, 3, c):
            assert np.all(np.min(np.abs(p.symbols[:, None] - c.points), axis=1) < 1e-12)


def test_pilot_sequences_orthogonal_slots():
    ps = pilot_sequences(3, 2, QPSK, "orthogonal")
    assert [p.positions.tolist() for p in ps] == [[0, 1], [2, 3], [4, 5]]
    with pytest.raises(PilotError):
        pilot_sequences(2, 0, QPSK)
    with pytest.raises(PilotError):
        pilot_sequences(2, 2, QPSK, "random")


def test_pilots_length_mismatch():
    with pytest.raises(InputError):
        Pilots(np.ones(2), np.arange(3))


# --- SIC receiver ------------------------------------------------------------

def test_sic_noise_free_two_users():
    rng = np.random.default_rng(1)
    states = [ChannelState(np.exp(0.3j), 10 ** 1.6), ChannelState(np.exp(-1.1j), 10 ** 0.7)]
    pilots = pilot_sequences(2, 2, QPSK)
    y, idx = _block(states, [QPSK, QPSK], 100, rng, pilots, noise=0.0)
    rep = gmm_sic_detect(y, 2, QPSK, pilots, truth=idx)
    assert rep.per_user_ser == [0.0, 0.0]
    assert all(len(s) == 98 for s in rep.per_user_symbols)
    # after removing user 1 the residual is user 2 up to the finite-block gain estimate
    assert rep.residual_power_trace[0] == pytest.approx(states[1].snr, rel=0.02)
    assert rep.residual_power_trace[1] < 1e-2 * states[1].snr
    for est in rep.per_user_estimates:
        assert est.phase in est.candidate_phases


def test_sic_single_user_matches_mld():
    rng = np.random.default_rng(2)
    pilots = pilot_sequences(1, 2, QPSK)
    mask = receiver.payload_mask(500, pilots[0])
    e_gmm = e_mld = 0
    for _ in range(200):
        s = draw_channel(FixedSnr(10 ** 0.8), rng)
        y, idx = _block([s], [QPSK], 500, rng, pilots)
        e_gmm += np.sum(gmm_sic_detect(y, 1, QPSK, pilots).per_user_symbols[0] != idx[0][mask])
        e_mld += np.sum(mld_full_csi(y, [s], QPSK)[0][mask] != idx[0][mask])
    assert abs(e_gmm / e_mld - 1) < 0.2


def test_sic_equal_powers_degrades_gracefully():
    rng = np.random.default_rng(3)
    states = [ChannelState(1.0, 10.0), ChannelState(np.exp(0.4j), 10.0)]
    pilots = pilot_sequences(2, 2, QPSK)
    y, idx = _block(states, [QPSK, QPSK], 300, rng, pilots)
    rep = gmm_sic_detect(y, 2, QPSK, pilots, truth=idx)
    assert all(0 <= s <= 1 for s in rep.per_user_ser)


def test_sic_mixed_modulation_noise_free():
    rng = np.random.default_rng(4)
    states = [ChannelState(np.exp(0.2j), 10 ** 2.3), ChannelState(np.exp(2.0j), 10 ** 0.8)]
    cons = [QAM16, QPSK]
    pilots = [pilot_sequences(2, 2, c)[u] for u, c in enumerate(cons)]
    y, idx = _block(states, cons, 500, rng, pilots, noise=0.0)
    rep = gmm_sic_detect(y, 2, cons, pilots, truth=idx)
    assert rep.per_user_ser == [0.0, 0.0]


def test_sic_input_errors():
    y = np.zeros(50, dtype=complex)
    with pytest.raises(InputError):
        gmm_sic_detect(y, 2, QPSK, pilot_sequences(1, 2, QPSK))
    with pytest.raises(InputError):
        gmm_sic_detect(y, 1, QPSK, pilot_sequences(1, 2, QPSK), truth=[np.zeros(10)])


# --- MLD baselines -----------------------------------------------------------

def test_mld_noise_free_and_single_user():
    rng = np.random.default_rng(5)
    states = [ChannelState(np.exp(0.5j), 40.0), ChannelState(np.exp(2.5j), 5.0)]
    y, idx = _block(states, [QPSK, QPSK], 200, rng, noise=0.0)
    out = mld_full_csi(y, states, QPSK)
    assert all(np.array_equal(a, b) for a, b in zip(out, idx))
    y1, _ = _block(states[:1], [QPSK], 300, rng)
    ref = demap(y1, QPSK, np.sqrt(40.0), 0.5)
    assert np.array_equal(mld_full_csi(y1, states[:1], QPSK)[0], ref)


def test_mld_matches_bruteforce():
    rng = np.random.default_rng(6)
    states = [ChannelState(np.exp(0.9j), 12.0), ChannelState(np.exp(-0.2j), 3.0)]
    y, _ = _block(states, [QPSK, QPSK], 1000, rng)
    out = mld_full_csi(y, states, QPSK, chunk=7)
    g = [s.effective_gain for s in states]
    for n in range(0, 1000, 7):
        best = min(itertools.product(range(4), range(4)),
                   key=lambda t: abs(y[n] - g[0] * QPSK.points[t[0]] - g[1] * QPSK.points[t[1]]))
        assert (out[0][n], out[1][n]) == best


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 2 * np.pi), st.integers(0, 2 ** 31))
def test_mld_rotation_invariance(theta, seed):
    rng = np.random.default_rng(seed)
    states = [ChannelState(np.exp(0.9j), 12.0), ChannelState(np.exp(-0.2j), 3.0)]
    y, _ = _block(states, [QPSK, QPSK], 50, rng)
    rot = np.exp(1j * theta)
    rstates = [ChannelState(s.gain * rot, s.power) for s in states]
    a = mld_full_csi(y, states, QPSK)
    b = mld_full_csi(y * rot, rstates, QPSK)
    centers = np.array([states[0].effective_gain * p + states[1].effective_gain * q
                        for p in QPSK.points for q in QPSK.points])
    for n in np.flatnonzero((a[0] != b[0]) | (a[1] != b[1])):
        d = np.sort(np.abs(y[n] - centers))
        assert d[1] - d[0] < 1e-9  # only near-ties may flip


def test_mld_capability_cap():
    y = np.zeros(4, dtype=complex)
    with pytest.raises(CapabilityError):
        mld_full_csi(y, [ChannelState(1.0, 1.0)] * 6, QPSK)
    with pytest.raises(CapabilityError):
        mld_full_csi(y, [ChannelState(1.0, 1.0)] * 4, QAM16)


def test_mld_pilot_noise_free_and_errors():
    rng = np.random.default_rng(9)
    s = [ChannelState(np.exp(1.3j), 20.0)]
    for p in (1, 3, 8):
        pil = pilot_sequences(1, p, QPSK)
        y, idx = _block(s, [QPSK], 100, rng, pil, noise=0.0)
        out, est = mld_pilot_csi(y, pil, QPSK)
        assert np.array_equal(out[0], idx[0])
        assert est[0].effective_gain == pytest.approx(s[0].effective_gain)
    with pytest.raises(PilotError):
        mld_pilot_csi(np.zeros(10), [Pilots(np.array([]), np.array([]))], QPSK)
    with pytest.raises(PilotError):
        mld_pilot_csi(np.zeros(10), pilot_sequences(2, 1, QPSK), QPSK)


def test_mld_pilot_disjoint_slots_is_per_user_ls():
    rng = np.random.default_rng(11)
    states = [ChannelState(np.exp(0.2j), 30.0), ChannelState(np.exp(1.0j), 4.0)]
    pil = pilot_sequences(2, 3, QPSK, "orthogonal")
    y, _ = _block(states, [QPSK, QPSK], 60, rng, pil)
    _, est = mld_pilot_csi(y, pil, QPSK)
    for e, p in zip(est, pil):
        assert e.gain == pytest.approx(receiver.ls_channel(p.symbols, y[p.positions]))


def test_mld_pilot_more_pilots_help():
    rng = np.random.default_rng(12)
    err = {2: 0, 8: 0}
    states = [ChannelState(1.0, 10 ** 1.3), ChannelState(1.0, 10 ** 0.4)]
    for _ in range(2000):
        st_ = [ChannelState(np.exp(1j * rng.uniform(0, 6.3)), s.power) for s in states]
        idx = [rng.integers(0, 4, 100) for _ in range(2)]
        w = complex_noise(100, 1.0, rng)
        for p in err:
            pil = pilot_sequences(2, p, QPSK)
            ii = [i.copy() for i in idx]
            for u in range(2):
                ii[u][pil[u].positions] = np.argmin(np.abs(pil[u].symbols[:, None] - QPSK.points),
                                                    axis=1)
            y = sum(s.effective_gain * QPSK.points[i] for s, i in zip(st_, ii)) + w
            out, _ = mld_pilot_csi(y, pil, QPSK)
            err[p] += np.sum(out[0][8:] != ii[0][8:])
    assert err[8] <= err[2]


# --- grant-free --------------------------------------------------------------

def test_grant_free_pure_noise():
    pre = Pilots(np.full(3, QPSK.points[0]), np.arange(3))
    counts = []
    for seed in range(40):
        y = complex_noise(500, 1.0, np.random.default_rng(seed))
        counts.append(grant_free_detect(y, 1.0, QPSK, pre).detected_user_count)
    assert np.mean(np.array(counts) == 0) >= 0.9


def test_grant_free_single_user():
    pre = Pilots(np.full(3, QPSK.points[0]), np.arange(3))
    rng = np.random.default_rng(13)
    s = [draw_channel(FixedSnr(10 ** 1.5), rng)]
    y, idx = _block(s, [QPSK], 500, rng, [pre])
    rep = grant_free_detect(y, 1.0, QPSK, pre, EmConfig(epsilon=5))
    assert rep.detected_user_count == 1
    assert np.mean(rep.per_user_symbols[0] != idx[0][3:]) < 1e-2
    assert len(rep.residual_power_trace) == 2


def test_grant_free_cap():
    pre = Pilots(np.full(3, QPSK.points[0]), np.arange(3))
    y = complex_noise(300, 50.0, np.random.default_rng(0))
    rep = grant_free_detect(y, 1.0, QPSK, pre, max_users=3)
    assert rep.detected_user_count == 3
    assert len(rep.residual_power_trace) == 4
    with pytest.raises(ValueError):
        grant_free_detect(y, 0.0, QPSK, pre)
    with pytest.raises(ValueError):
        grant_free_detect(y, 1.0, QPSK, pre, max_users=0)


def test_grant_free_separated_users():
    pre = Pilots(np.full(3, QPSK.points[0]), np.arange(3))
    ok = 0
    for seed in range(30):
        rng = np.random.default_rng(seed)
        states = [draw_channel(FixedSnr(10 ** (db / 10)), rng) for db in (30, 20, 10)]
        y, _ = _block(states, [QPSK] * 3, 500, rng, [pre] * 3)
        ok += grant_free_detect(y, 1.0, QPSK, pre, EmConfig(epsilon=5)).detected_user_count == 3
    assert ok >= 27
