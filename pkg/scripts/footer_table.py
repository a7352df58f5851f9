"""Print advantage / gap / closed-gap rows for published or measured baseline, method and oracle cells.

Cells are read from a JSON file {scenario: {"baseline": [2D, 3D, 2D+3D], "method": [...], "oracle": [...]}}.
With no file, the cells of the three benchmark scenarios are used.
"""
import argparse
import json
from pathlib import Path

from lionxa.metrics import domain_stats

DEFAULT = {
    "nuscenes-usa-sg": {"baseline": [53.4, 46.5, 61.3], "method": [58.0, 63.4, 68.9], "oracle": [66.4, 63.8, 71.6]},
    "lidarseg-usa-sg": {"baseline": [58.4, 62.8, 68.2], "method": [67.2, 69.7, 72.8], "oracle": [75.4, 76.0, 79.6]},
    "kitti-to-lidarseg": {"baseline": [47.6, 54.9, 61.5], "method": [51.9, 70.7, 71.3],
                          "oracle": [75.4, 76.0, 79.6]},
}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("cells", nargs="?", help="JSON file of cells")
    args = ap.parse_args()
    cells = json.loads(Path(args.cells).read_text()) if args.cells else DEFAULT
    print(f"{'scenario':20s} {'row':10s} {'2D':>7s} {'3D':>7s} {'2D+3D':>7s}")
    for scen, rows in cells.items():
        stats = [domain_stats(b, m, o) for b, m, o in zip(rows["baseline"], rows["method"], rows["oracle"])]
        for k, name in enumerate(("advantage", "gap", "closed")):
            print(f"{scen:20s} {name:10s} " + " ".join(f"{s[k]:7.1f}" for s in stats))


if __name__ == "__main__":
    main()
