"""Run every variant over a pred_len grid through the CLI pipeline and print a summary table.

Desk-scale by default; expect a few minutes per variant with the full epoch budget.

    python3 scripts/variant_grid.py --out runs/grid --pred-len 24 48 --repeats 2
"""
import argparse
from pathlib import Path

from tcct.cli import ExperimentSpec, run
from tcct.model import VARIANTS


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="runs/grid")
    ap.add_argument("--variants", nargs="+", default=list(VARIANTS))
    ap.add_argument("--pred-len", type=int, nargs="+", default=[24, 48])
    ap.add_argument("--input-len", type=int, default=96)
    ap.add_argument("--repeats", type=int, default=2)
    ap.add_argument("--epochs", type=int, default=6)
    ap.add_argument("--data")
    args = ap.parse_args()

    table = {}
    for name in args.variants:
        spec = ExperimentSpec(variant=name, data=args.data, input_len=args.input_len,
                              pred_lens=tuple(args.pred_len), repeats=args.repeats, epochs=args.epochs)
        manifest = run(spec, Path(args.out) / name)
        table[name] = {r["pred_len"]: (r["mean_mse"], r["msd"]) for r in manifest["results"]}
        print(f"done {name}", flush=True)
    print(f"{'variant':<10}" + "".join(f"{'T=' + str(p):>22}" for p in args.pred_len))
    for name, cells in table.items():
        print(f"{name:<10}" + "".join(f"{cells[p][0]:>13.4f} ±{cells[p][1]:<7.4f}" for p in args.pred_len))


if __name__ == "__main__":
    main()
