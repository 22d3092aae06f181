"""End-to-end desk experiment: collect data, train the three models, benchmark all controllers.

    PYTHONPATH=src python3 scripts/desk_pipeline.py --out runs/desk --epochs 2000 --seed 0

Every step goes through the ``helmkeeper`` command line, so the output directory holds exactly the
artifacts a user would get by running the subcommands by hand.
"""
import argparse
import sys
from pathlib import Path

from helmkeeper.cli import EXIT_OK, main


def step(argv):
    print("$ helmkeeper " + " ".join(argv), flush=True)
    code = main(argv)
    if code != EXIT_OK:
        sys.exit(code)


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/desk")
    ap.add_argument("--epochs", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()
    out = Path(args.out)
    seed = ["--seed", str(args.seed)]
    step(["collect", "--out", str(out / "data"), *seed])
    for kind in ("nnsem", "hybrid", "sd"):
        step(["train", "--data", str(out / "data" / "manifest.json"), "--kind", kind, "--epochs", str(args.epochs),
              "--out", str(out / "models"), *seed])
    step(["bench", "--models", str(out / "models"), "--out", str(out / "bench"), "--jobs", str(args.jobs), *seed])
