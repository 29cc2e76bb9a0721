#!/usr/bin/env python3
"""Render the CSVs written by run_experiments.py as PNG bar and strip charts.

Needs matplotlib (``pip install -e .[plot]``).
"""

import argparse
import csv
import sys
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def bar_chart(path: Path, out: Path) -> None:
    rows = read_rows(path)
    names = [r["player"] for r in rows]
    values = [float(r["mean_attribution"]) for r in rows]
    fig, ax = plt.subplots(figsize=(6, 0.35 * len(names) + 1))
    ax.barh(names[::-1], values[::-1], color=["tab:red" if v > 0 else "tab:blue" for v in values[::-1]])
    ax.axvline(0, color="black", lw=0.8)
    ax.set_xlabel("mean attribution")
    ax.set_title(path.stem.replace("_bar", ""))
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)


def strip_chart(path: Path, out: Path) -> None:
    by_player = defaultdict(list)
    for r in read_rows(path):
        by_player[r["player"]].append(float(r["attribution"]))
    names = list(by_player)
    fig, ax = plt.subplots(figsize=(6, 0.35 * len(names) + 1))
    for y, name in enumerate(reversed(names)):
        vals = by_player[name]
        ax.scatter(vals, [y] * len(vals), s=6, alpha=0.4)
    ax.set_yticks(range(len(names)), list(reversed(names)))
    ax.axvline(0, color="black", lw=0.8)
    ax.set_xlabel("attribution")
    ax.set_title(path.stem.replace("_scatter", ""))
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("dir", nargs="?", default="runs/experiments")
    args = ap.parse_args()
    root = Path(args.dir)
    made = 0
    for path in sorted(root.glob("batch_*_bar.csv")):
        bar_chart(path, path.with_suffix(".png"))
        made += 1
    for path in sorted(root.glob("batch_*_scatter.csv")):
        strip_chart(path, path.with_suffix(".png"))
        made += 1
    print(f"wrote {made} figures to {root}")
    return 0 if made else 1


if __name__ == "__main__":
    sys.exit(main())
