"""M1-M6 gamma and 10-fold CV on simulated samples, one line per seed."""

import argparse
import json

from tailcombo.simstudy import SimConfig, cv_ordering, run_m1_m6


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3, 4, 5])
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", default=None, help="write all rows as JSON here")
    args = ap.parse_args()
    table = {}
    for seed in args.seeds:
        rows = run_m1_m6(SimConfig(seed=seed), workers=args.workers)
        table[seed] = rows
        cells = "  ".join(f"{r['model']} {r['gamma']:.4f}/{r['cv']:.4f}" for r in rows)
        print(f"seed {seed}: {cells}  order {' < '.join(cv_ordering(rows))}", flush=True)
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(table, fh, indent=2)


if __name__ == "__main__":
    main()
