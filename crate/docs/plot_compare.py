"""Plot one component of compare.csv: MC mean with a ±2 stderr band, ODE and ILP.

    python docs/plot_compare.py out/compare.csv a1 [figure.png]
"""

import csv
import sys

import matplotlib.pyplot as plt


def main():
    if len(sys.argv) < 3:
        sys.exit(__doc__)
    path, label = sys.argv[1], sys.argv[2]
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    if f"mean_{label}" not in rows[0]:
        sys.exit(f"no component {label!r} in {path}")

    col = lambda name: [float(r[name]) for r in rows]
    t = col("time")
    mean, se = col(f"mean_{label}"), col(f"stderr_{label}")

    fig, ax = plt.subplots(figsize=(7, 4))
    ax.fill_between(t, [m - 2 * s for m, s in zip(mean, se)], [m + 2 * s for m, s in zip(mean, se)],
                    color="0.85", label="MC ±2 se")
    ax.plot(t, mean, "k.", label="MC mean")
    ax.plot(t, col(f"ode_{label}"), "b--", label="ODE")
    ax.plot(t, col(f"ilp_{label}"), "r-", label="ILP")
    ax.set_xlabel("t")
    ax.set_ylabel(label)
    ax.legend()
    fig.tight_layout()
    if len(sys.argv) > 3:
        fig.savefig(sys.argv[3], dpi=150)
    else:
        plt.show()


if __name__ == "__main__":
    main()
