"""Print analytic and measured multiply counts of canonical vs CSP attention blocks.

    python3 scripts/complexity_sweep.py --d-model 64 --heads 4 --out sweep.csv
"""
import argparse
import csv

from tcct import complexity as C
from tcct.cli import DEFAULT_SWEEP


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--lengths", type=int, nargs="+", default=list(DEFAULT_SWEEP))
    ap.add_argument("--d-model", type=int, default=64)
    ap.add_argument("--heads", type=int, default=4)
    ap.add_argument("--out")
    args = ap.parse_args()

    rows = C.sweep(args.lengths, args.d_model, args.heads)
    print(f"{'L':>5} {'canonical':>12} {'csp':>12} {'ratio':>7} | {'measured can.':>13} {'measured csp':>12} {'ratio':>7}")
    for r in rows:
        print(f"{r['L']:>5} {r['canonical_analytic']:>12} {r['csp_analytic']:>12} {r['analytic_ratio']:>7.4f} | "
              f"{r['canonical_empirical']:>13} {r['csp_empirical']:>12} {r['empirical_ratio']:>7.4f}")
    p = rows[0]
    print(f"params per block: canonical {p['canonical_params']}, csp {p['csp_params']} "
          f"({p['csp_params'] / p['canonical_params']:.4f})")
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)


if __name__ == "__main__":
    main()
