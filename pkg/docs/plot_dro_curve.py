"""Plot a ``validate-<seed>.csv`` curve.

    python docs/plot_dro_curve.py out/validate-0.csv [--s-debiased 0.1353] [-o curve.png]

Needs matplotlib, which the package itself does not depend on.
"""

import argparse
import csv

import matplotlib.pyplot as plt


def read_curve(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {k: [float(r[k]) for r in rows] for k in rows[0]}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("csv")
    ap.add_argument("--s-debiased", type=float)
    ap.add_argument("-o", "--output", default="dro_curve.png")
    args = ap.parse_args()
    c = read_curve(args.csv)

    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.errorbar(c["r"], c["slope_pga"], yerr=[2 * s for s in c["stderr"]], marker="o",
                capsize=3, label="ascent slope")
    ax.plot(c["r"], c["slope_push"], marker="s", ls="--", label="push slope")
    if args.s_debiased is not None:
        ax.axhline(args.s_debiased, color="k", lw=0.8, label="sensitivity estimate")
    ax.set_xlabel("radius r")
    ax.set_ylabel("(phi(r) - phi(0)) / r")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(args.output, dpi=150)


if __name__ == "__main__":
    main()
