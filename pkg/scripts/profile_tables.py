#!/usr/bin/env python3
"""Print parameter/FLOP tables for the NCAE against the published comparison costs."""
import argparse

from ncae import profiler
from ncae.models import NCAE, BottleneckAE


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seq-len", type=int, default=30)
    p.add_argument("--layers", action="store_true", help="also print the per-layer breakdown")
    args = p.parse_args()

    rows = profiler.profile_table(seq_len=args.seq_len)
    ratios = profiler.cost_ratios(profiler.flops(NCAE(kernel=3, seq_len=args.seq_len), args.seq_len))
    print(profiler.format_tables(rows, ratios))
    print(f"\nsequence length implied by the published NCAE rows: {profiler.derive_seq_len()}")

    base = profiler.flops(BottleneckAE(kernel=3, seq_len=args.seq_len), args.seq_len)
    print(f"bottleneck baseline (k=3): {base.params:,} params, {base.mflops:.3f} MFLOPs")
    if args.layers:
        for name, model in (("NCAE", NCAE(kernel=3, seq_len=args.seq_len)),
                            ("bottleneck", BottleneckAE(kernel=3, seq_len=args.seq_len))):
            print(f"\n{name}")
            for layer, n_params, f in profiler.flops(model, args.seq_len).layers:
                print(f"  {layer:<16}{n_params:>12,}{f:>14,}")


if __name__ == "__main__":
    main()
