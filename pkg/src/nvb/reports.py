"""Plot-ready CSV writers and matplotlib figure rendering for experiment runs.

Figures are written as PNG with pinned metadata so identical runs produce
byte-identical files.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

_PNG_META = {"Software": "nvb"}


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None or v == "":
        return ""
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def write_csv(path, header, rows):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def render_gap_vs_p(path, ps, medians, lows, highs):
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    ax.fill_between(ps, lows, highs, alpha=0.25, color="tab:blue", label="IQR")
    ax.plot(ps, medians, "o-", color="tab:blue", label="median gap / p")
    ax.set_xlabel("p")
    ax.set_ylabel("(log Z - value) / p")
    ax.set_xscale("log")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)


def render_ap_vs_limit(path, ps, aps, limit_value):
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    ax.plot(ps, aps, "o-", color="tab:orange", label="value / p")
    ax.axhline(limit_value, color="k", ls="--", lw=1, label="limit")
    ax.set_xlabel("p")
    ax.set_ylabel("optimized value / p")
    ax.set_xscale("log")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)


def render_lln_diffs(path, ps, diffs_xt, diffs_x2):
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    ax.plot(ps, diffs_xt, "o-", label="zeta = x*t")
    ax.plot(ps, diffs_x2, "s-", label="zeta = x^2")
    ax.set_xlabel("p")
    ax.set_ylabel("|chain avg - prediction|")
    ax.set_xscale("log")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)
