"""Train one variant on synthetic sine-mix data and compare with the last-value baseline.

    python3 scripts/smoke_training.py --variant TCCT_III --seed 0
"""
import argparse
import logging
import time

from tcct.data import WindowSpec, make_windows, split_by_time, synth_series, zscore
from tcct.model import VARIANTS, build_model
from tcct.train import TrainConfig, evaluate, mse, naive_last_value, train


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--variant", default="TCCT_III", choices=sorted(VARIANTS))
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--length", type=int, default=2000)
    ap.add_argument("--input-len", type=int, default=96)
    ap.add_argument("--pred-len", type=int, default=24)
    ap.add_argument("--d-model", type=int, default=16)
    ap.add_argument("--heads", type=int, default=2)
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")

    train_f, val_f, test_f = split_by_time(synth_series("sine_mix", args.length, 3, seed=0))
    train_f, state = zscore(train_f)
    segs = [train_f, zscore(val_f, state)[0], zscore(test_f, state)[0]]
    tr, va, te = (make_windows(s, WindowSpec(args.input_len, args.pred_len)) for s in segs)
    _, y, _, _ = te.arrays()
    print(f"windows train/val/test: {len(tr)}/{len(va)}/{len(te)}")
    print(f"naive last value  mse {mse(y, naive_last_value(te)):.4f}")

    model = build_model(args.variant, input_len=args.input_len, pred_len=args.pred_len, n_series=3,
                        d_model=args.d_model, heads=args.heads, seed=args.seed)
    print(f"untrained         mse {evaluate(model, te)[0]:.4f}")
    t0 = time.perf_counter()
    model, history = train(model, tr, va, TrainConfig(seed=args.seed))
    took = time.perf_counter() - t0
    test_mse, test_mae = evaluate(model, te)
    print(f"{args.variant:<17} mse {test_mse:.4f} mae {test_mae:.4f} ({len(history)} epochs, {took:.0f}s)")


if __name__ == "__main__":
    main()
