"""Receptive span of dilated causal vs canonical connectors after n distilling stages."""
import argparse

from tcct.connectors import ConnectorConfig, conv_only_span, impulse_trace_span, receptive_span, stage_geometries


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--max-stages", type=int, default=4)
    ap.add_argument("--kernel", type=int, default=3)
    args = ap.parse_args()
    dil = ConnectorConfig(args.kernel, "dilated_causal")
    can = ConnectorConfig(args.kernel, "canonical_conv")
    print(f"{'stages':>6} {'dilated':>8} {'canonical':>9} {'ratio':>6} {'traced ok':>9} {'conv taps':>10}")
    for n in range(args.max_stages + 1):
        gd, gc = stage_geometries(dil, n), stage_geometries(can, n)
        d, c = receptive_span(gd), receptive_span(gc)
        ok = d == impulse_trace_span(gd) and c == impulse_trace_span(gc)
        print(f"{n:>6} {d:>8} {c:>9} {d / c:>6.3f} {str(ok):>9} {conv_only_span(gd):>4}/{conv_only_span(gc):<4}")


if __name__ == "__main__":
    main()
