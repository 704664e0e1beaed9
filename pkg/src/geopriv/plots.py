"""Matplotlib figures for the report outputs.

Figures are written next to the delimited reports; rendering is
deterministic (fixed metadata, no timestamps) so repeated runs produce
byte-identical files.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

_SAVE_KWARGS = {"dpi": 130, "format": "png", "metadata": {"Software": "geopriv"}}


def plot_tradeoff(rows, path, parameter_label: str = "scaling factor c (m)") -> None:
    """Privacy-utility chart: anonymity and detection quality vs parameter."""
    params = [r.parameter for r in rows]
    fig, (ax_k, ax_u) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)

    ax_k.plot(params, [r.median_k for r in rows], marker="o", color="#1f77b4", label="median k")
    ax_k.plot(
        params,
        [r.frac_k_ge_target for r in rows],
        marker="s",
        color="#9467bd",
        label="fraction k >= target",
    )
    ax_k.set_ylabel("anonymity")
    ax_k.legend(loc="best", fontsize=9)
    ax_k.grid(True, alpha=0.3)

    ax_u.plot(params, [r.recall for r in rows], marker="o", color="#d62728", label="recall")
    ax_u.plot(params, [r.precision for r in rows], marker="s", color="#2ca02c", label="precision")
    ax_u.plot(params, [r.f1 for r in rows], marker="^", color="#7f7f7f", label="F1")
    ax_u.set_ylim(-0.05, 1.05)
    ax_u.set_xlabel(parameter_label)
    ax_u.set_ylabel("exposure detection")
    ax_u.legend(loc="best", fontsize=9)
    ax_u.grid(True, alpha=0.3)

    if min(params) > 0 and max(params) / min(params) >= 16:
        ax_u.set_xscale("log")

    fig.suptitle("Privacy-utility tradeoff")
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)


def plot_k_distribution(report, path) -> None:
    """Histogram of per-point k with the target marked."""
    ks = report.ks
    fig, ax = plt.subplots(figsize=(7, 4))
    upper = max(ks) + 1
    bins = min(40, upper)
    ax.hist(ks, bins=bins, range=(0.5, upper + 0.5), color="#1f77b4", alpha=0.8)
    ax.axvline(
        report.k_target,
        color="#d62728",
        linestyle="--",
        label=f"k target = {report.k_target}",
    )
    ax.set_xlabel("k (candidate locations in buffer)")
    ax.set_ylabel("points")
    ax.set_title(
        f"k-anonymity distribution ({report.mechanism}, coverage {report.coverage:g})"
    )
    ax.legend(loc="best", fontsize=9)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)
