"""Sweep texel budgets (and optionally primitive counts) on a tiled-plane scene.

Reproduces the quality-vs-texels trend at desk scale: held-out PSNR grows with
the texel budget at a fixed primitive count, and a textured model dominates the
untextured one at every count. Emits a tidy CSV via the CLI sweep command.

Usage: python scripts/texel_sweep.py --out sweep.csv
"""

import argparse
import sys
import tempfile
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from texsplat.cli import main as cli


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", default="sweep.csv")
    parser.add_argument("--gaussians", default="64")
    parser.add_argument("--texels", default="0,1000,10000,100000")
    parser.add_argument("--iters", type=int, default=300)
    parser.add_argument("--size", type=int, default=128)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--dataset", help="reuse an existing synth dataset directory")
    args = parser.parse_args()

    if args.dataset:
        dataset = args.dataset
    else:
        dataset = tempfile.mkdtemp(prefix="texsplat_sweep_")
        code = cli(["--seed", str(args.seed), "synth", "--kind", "grid",
                    "--count", "64", "--views", "10", "--heldout", "2",
                    "--size", str(args.size), "--out", dataset])
        if code != 0:
            sys.exit(code)
        print(f"dataset written to {dataset}")

    sys.exit(cli([
        "--seed", str(args.seed), "sweep", dataset,
        "--gaussians", args.gaussians, "--texels", args.texels,
        "--iters", str(args.iters), "--out", args.out,
    ]))


if __name__ == "__main__":
    main()
