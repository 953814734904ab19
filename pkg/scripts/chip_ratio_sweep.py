#!/usr/bin/env python3
"""Tile-count economics of coarse scale profiles.

For a square region, prints how many tiles a coarse window costs
relative to a fine window: the squared window ratio, minus edge effects.
Running a second classifier at a 10x coarser scale costs about 1% extra
tiles, which is why dual-scale ensembles are nearly free.

Usage:
    python scripts/chip_ratio_sweep.py --extent-km 20 --fine-m 200
"""

import argparse

from overtile.multiscale import chip_count_ratio
from overtile.tiler import TileSpec, plan_tiles


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--extent-km", type=float, default=20.0)
    parser.add_argument("--fine-m", type=float, default=200.0)
    parser.add_argument("--coarse-m", default="500,1000,2000,5000")
    parser.add_argument("--window-px", type=int, default=416)
    parser.add_argument("--overlap", type=float, default=0.15)
    args = parser.parse_args()

    spec = TileSpec(window=args.window_px, overlap_frac=args.overlap)
    extent_m = args.extent_km * 1000.0

    def tiles_for(window_m: float) -> int:
        extent_px = round(extent_m * spec.window / window_m)
        return len(plan_tiles(extent_px, extent_px, spec))

    fine_tiles = tiles_for(args.fine_m)
    print(f"{args.extent_km:g} km square, fine window {args.fine_m:g} m "
          f"-> {fine_tiles} tiles\n")
    print(f"{'coarse (m)':>10} {'tiles':>8} {'ratio':>9} {'extra cost':>11}")
    for coarse_m in (float(v) for v in args.coarse_m.split(",")):
        ratio = chip_count_ratio(extent_m, args.fine_m, coarse_m, spec)
        print(f"{coarse_m:>10g} {tiles_for(coarse_m):>8} {ratio:>9.5f} "
              f"{100 * ratio:>10.2f}%")


if __name__ == "__main__":
    main()
