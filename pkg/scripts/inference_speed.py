#!/usr/bin/env python3
"""Per-sequence forward-pass time of the NCAE and the bottleneck baseline at several batch sizes."""
import argparse

from ncae.pipeline import inference_speed


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("-n", type=int, default=1000, help="sequences per measurement")
    p.add_argument("--batch-sizes", type=int, nargs="+", default=[1, 16, 64])
    p.add_argument("--kernel", type=int, default=3)
    args = p.parse_args()

    print(f"{'batch':>6}{'ncae ms':>10}{'baseline ms':>13}{'ratio':>8}")
    for bs in args.batch_sizes:
        a, b = inference_speed("ncae", "bottleneck", n=args.n, batch_size=bs, kernel=args.kernel)
        print(f"{bs:>6}{a * 1e3:>10.3f}{b * 1e3:>13.3f}{b / a:>8.2f}")


if __name__ == "__main__":
    main()
