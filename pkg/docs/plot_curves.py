"""Plot the CSV plot-data written by ``stdic metrics`` / ``stdic reproduce``.

Usage: python docs/plot_curves.py OUT_DIR

Needs matplotlib, which is not a dependency of the package.
"""

import csv
import sys
from pathlib import Path

import matplotlib.pyplot as plt


def read(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], [[float(v) for v in r] for r in rows[1:]]


def main(out):
    metrics = Path(out) / "metrics"
    plots = sorted(metrics.glob("plot_*.csv"))
    if not plots:
        sys.exit(f"no plot_*.csv under {metrics}")
    fig, ax = plt.subplots(figsize=(8, 4.5))
    for path in plots:
        header, rows = read(path)
        ax.plot([r[0] for r in rows], [r[1] for r in rows], lw=1,
                label=path.stem.removeprefix("plot_"))
    ax.set_xlabel(header[0])
    ax.set_ylabel(header[1] + " (px)")
    ax.legend(fontsize=7, ncol=2)
    fig.tight_layout()
    fig.savefig(metrics / "errors.png", dpi=150)
    print(metrics / "errors.png")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "stdic_out")
