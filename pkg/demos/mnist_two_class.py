"""Even-vs-odd MNIST with a 101-101 binary MLP: BP against BinaryNet.

Trains both models for 50 epochs (about 70 min for BP and 3 min for
BinaryNet on one CPU core), then writes the local energy profile of each
point-wise solution and the per-layer overlaps of the BP marginals.  The
artifacts land in runs/crit6 and runs/crit11, where the acceptance tests
read them.

    DEEPMP_DATA=/path/to/data python demos/mnist_two_class.py [--epochs 50]
"""

import argparse
import csv
from pathlib import Path

from deepmp.cli import main

ROOT = Path(__file__).resolve().parent.parent / "runs"


def last_epoch(path):
    with open(path) as f:
        rows = list(csv.DictReader(f))
    return rows[-1]


def run(args):
    common = ["train", "--dataset", "mnist2", "--arch", "101,101", "--batch-size", "128",
              "--epochs", str(args.epochs), "--seed", str(args.seed)]
    # BP with per-layer tempering: hidden layers slowly polarize, the readout does not
    bp = ["--algo", "bp", "--rho", "1.0001,1.0001,0.9", "--alpha", "0.8", "--epsilon", "1"]
    bn = ["--algo", "binarynet", "--lr", "10"]
    for out, extra in ((ROOT / "crit6", bp), (ROOT / "crit11", bn)):
        if not (out / "metrics.csv").exists() or args.force:
            assert main(common + extra + ["--out", str(out)]) == 0
        row = last_epoch(out / "metrics.csv")
        print(f"{row['algo']:10s} epoch {row['epoch']}: test {100 * float(row['test_err']):.2f}%"
              f"  bayes {row['bayes_test_err']}")

    # flatness of the two point-wise solutions on the training set
    main(["local-energy", str(ROOT / "crit6" / "checkpoint.bin"), str(ROOT / "crit11" / "checkpoint.bin"),
          "--label", "bp", "--label", "binarynet", "--p-max", "0.2", "--n-p", "9",
          "--out", str(ROOT / "local_energy")])
    main(["evaluate", str(ROOT / "crit6" / "checkpoint.bin"), "--overlaps", str(ROOT / "crit6" / "overlaps.csv")])
    main(["plot", str(ROOT / "crit6" / "metrics.csv"), str(ROOT / "crit11" / "metrics.csv"),
          "--y", "test_err", "--layer", "0", "--out", str(ROOT / "test_err.svg")])
    main(["plot", str(ROOT / "local_energy" / "bp.csv"), str(ROOT / "local_energy" / "binarynet.csv"),
          "--x", "p", "--y", "delta_e", "--out", str(ROOT / "local_energy.svg")])


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--epochs", type=int, default=50)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--force", action="store_true", help="retrain even if artifacts exist")
    run(ap.parse_args())
