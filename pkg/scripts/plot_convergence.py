"""Log-log error plots from study CSVs.

    python scripts/plot_convergence.py results/poisson_n1.csv [more.csv ...] -o conv.png
"""
import argparse
import csv
import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

NORMS = ("L2", "H1", "H2", "energy")


def read(path):
    with open(path) as fh:
        rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
    return rows


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("csv", nargs="+")
    ap.add_argument("-o", "--output", default="convergence.png")
    args = ap.parse_args()
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for path in args.csv:
        rows = read(path)
        h = [float(r["h"]) for r in rows]
        last = rows[-1]
        label0 = f"{last['study']} n={last['n']} k={last['k']}"
        for norm in NORMS:
            e = [float(r[norm]) for r in rows]
            if all(math.isnan(v) for v in e):
                continue
            rate = last.get(f"rate_{norm}", "")
            tag = f" ({float(rate):.2f})" if rate not in ("", "nan") else ""
            ax.loglog(h, e, "o-", label=f"{label0} {norm}{tag}")
    ax.set_xlabel("h")
    ax.set_ylabel("error")
    ax.invert_xaxis()
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(args.output, dpi=150)
    print("wrote", args.output)


if __name__ == "__main__":
    main()
