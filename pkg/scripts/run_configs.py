"""Run shipped experiment configs and write one CSV per config.

    python3 scripts/run_configs.py [CONFIG ...] [--outdir results] [--workers W]

With no CONFIG arguments every file in configs/ is run.
"""
import argparse
import time
from pathlib import Path

from gmmnoma import harness

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("configs", nargs="*")
    ap.add_argument("--outdir", default=str(ROOT / "results"))
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    paths = [Path(p) for p in args.configs] or sorted((ROOT / "configs").glob("*.toml"))
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    for path in paths:
        cfg = harness.load_config(path)
        cfg.workers = args.workers
        t0 = time.perf_counter()
        rows = harness.run_experiment(cfg)
        dest = out / (path.stem + ".csv")
        harness.emit_csv(rows, dest)
        print(f"{path.name}: {len(rows)} rows in {time.perf_counter() - t0:.1f} s -> {dest}")


if __name__ == "__main__":
    main()
