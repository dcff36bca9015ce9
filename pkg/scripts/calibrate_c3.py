"""Fit the c3 constant of the phase-mismatch model to single-user Monte Carlo.

Runs configs/single_user.toml, fits c3 so that the single-user prediction
tracks the measured clustering-receiver SER (log-SER least squares), and
prints the value to paste into theory.DEFAULT_C3.

    python3 scripts/calibrate_c3.py [--config PATH] [--trials T]
"""
import argparse
from pathlib import Path

import numpy as np

from gmmnoma import harness, theory
from gmmnoma.channel import db_to_linear

ROOT = Path(__file__).resolve().parents[1]


def measure(cfg):
    rows = [r for r in harness.run_experiment(cfg) if r.receiver == "gmm"]
    snrs = db_to_linear([r.snr_db_user1 for r in rows])
    return np.asarray(snrs), np.array([r.ser_empirical for r in rows]), rows


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default=str(ROOT / "configs" / "single_user.toml"))
    ap.add_argument("--trials", type=int)
    args = ap.parse_args()
    cfg = harness.load_config(args.config)
    if args.trials:
        cfg.trials = args.trials
    snrs, ser, rows = measure(cfg)
    c3 = theory.calibrate_c3(snrs, cfg.blocklength, ser)
    print(f"c3 = {c3:.4g}  (current default {theory.DEFAULT_C3:.4g})")
    for g, p in zip(snrs, ser):
        pred = theory.ser_single_user(g, cfg.blocklength, c3=c3)
        phi = theory.phase_mismatch(4, 2, cfg.blocklength, c3, theory.FromSnr(g))
        print(f"gamma={10 * np.log10(g):5.1f} dB  empirical={p:.5f}  predicted={pred:.5f}  "
              f"phi={phi:.4f} rad  2Q(sqrt g)={2 * theory.q_function(np.sqrt(g)):.5f}")


if __name__ == "__main__":
    main()
