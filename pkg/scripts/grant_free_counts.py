"""Break grant-free user-count accuracy down by the number of active users.

    python3 scripts/grant_free_counts.py [--config configs/grant_free.toml] [--trials T]
"""
import argparse
from collections import Counter
from pathlib import Path

from gmmnoma import harness

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default=str(ROOT / "configs" / "grant_free.toml"))
    ap.add_argument("--trials", type=int)
    args = ap.parse_args()
    cfg = harness.load_config(args.config)
    if args.trials:
        cfg.trials = args.trials
    for point, p1 in enumerate(cfg.snr_db):
        res = harness._run_point((cfg, point, p1))
        gf = [r["grant_free"] for r in res]
        thr = {name: sum(r[name]["correct"] for r in res) / sum(r[name]["sent"] for r in res)
               for name in cfg.receivers}
        table = Counter((r["active"], r["found"]) for r in gf)
        by_k = ", ".join(
            f"K={k}: {sum(v for (a, f), v in table.items() if a == k and f == k)}"
            f"/{sum(v for (a, _), v in table.items() if a == k)}"
            for k in range(cfg.active_users_min, cfg.active_users_max + 1))
        over = sum(v for (a, f), v in table.items() if f > a)
        under = sum(v for (a, f), v in table.items() if f < a)
        ratio = thr["grant_free"] / thr["mld_full"] if "mld_full" in thr else float("nan")
        print(f"P1={p1:5.1f} dB  count ok {sum(r['count_ok'] for r in gf) / len(gf):.3f} "
              f"({by_k}; over {over}, under {under})  throughput ratio {ratio:.3f}")


if __name__ == "__main__":
    main()
