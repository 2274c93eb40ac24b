"""Matplotlib figures for the report directories (PNG, headless backend)."""
from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_SOURCE_COLORS = {0: "#555555", 1: "#1f77b4", 2: "#d62728"}


def _save(fig, path):
    fig.tight_layout()
    # fixed metadata keeps the bytes reproducible
    fig.savefig(path, dpi=110, metadata={"Software": None})
    plt.close(fig)
    return path


def theta_vs_n(per_n: list, path, title: str = ""):
    fig, ax = plt.subplots(figsize=(6, 4))
    ns = [a["n"] for a in per_n]
    th = [a["theta_hat"] for a in per_n]
    se = [0.0 if a["theta_se"] is None or math.isnan(a["theta_se"]) else 2 * a["theta_se"]
          for a in per_n]
    ax.errorbar(ns, th, yerr=se, fmt="o-", capsize=3, label="estimate (±2 se)")
    inv_mean = [1.0 / a["mean_size"] for a in per_n]
    ax.plot(ns, inv_mean, "x", color="gray", label="1 / mean cluster size")
    oracle = per_n[0].get("oracle")
    if oracle:
        ax.axhline(oracle["theta"], color="k", ls="--", lw=1, label="limit")
        ax.axhline(1.0 / oracle["mean"], color="tab:red", ls=":", lw=1,
                   label="1 / limiting mean size")
    ax.set_xscale("log")
    ax.set_xlabel("n")
    ax.set_ylabel("extremal index")
    ax.set_title(title)
    ax.legend(fontsize=8)
    return _save(fig, path)


def pi_bars(agg: dict, path):
    rows = [r for r in agg["pi"] if isinstance(r["kappa"], int)]
    k = np.array([r["kappa"] for r in rows])
    p = np.array([r["pi_hat"] for r in rows])
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(k - 0.2, p, width=0.4, label="empirical")
    if all("oracle" in r for r in rows):
        ax.bar(k + 0.2, [r["oracle"] for r in rows], width=0.4, label="limit law")
    ax.set_xlabel("cluster size")
    ax.set_ylabel("probability")
    ax.set_title(f"n = {agg['n']}, q = {agg['q']}")
    ax.set_xticks(k)
    ax.legend(fontsize=8)
    return _save(fig, path)


def _scatter(ax, pts, tau, window, title):
    sel = (pts.t >= window[0]) & (pts.t <= window[1])
    src = pts.source[sel] if pts.source is not None else np.zeros(sel.sum(), int)
    colors = [_SOURCE_COLORS.get(int(s), "#555555") for s in src]
    ax.scatter(pts.t[sel], pts.y[sel], s=8, c=colors)
    ax.axhline(tau, color="tab:green", ls="--", lw=1)
    below = sel & (pts.y < tau)
    times, mult = np.unique(pts.t[below], return_counts=True)
    ax.plot(times, np.zeros_like(times), "kx", ms=5)
    for t, m in zip(times, mult):
        if m > 1:
            ax.annotate(str(m), (t, 0), textcoords="offset points", xytext=(0, 6),
                        ha="center", fontsize=7)
    ax.set_xlim(*window)
    ax.set_ylim(0, pts.y_max)
    ax.set_xlabel("t")
    ax.set_title(title, fontsize=10)


def points_panels(data, limit, tau, path, window, label: str = ""):
    """Data and simulated limit side by side, threshold line at tau."""
    panels = 2 if limit is not None else 1
    fig, axes = plt.subplots(1, panels, figsize=(5.5 * panels, 4), squeeze=False)
    _scatter(axes[0, 0], data, tau, window, f"{label}: data")
    axes[0, 0].set_ylabel("y")
    if limit is not None:
        _scatter(axes[0, 1], limit, tau, window, f"{label}: simulated limit")
    return _save(fig, path)


def escape_mass(rows: list, slope: float, expected, path, label: str = ""):
    fig, ax = plt.subplots(figsize=(6, 4))
    ok = [r for r in rows if r["zeta1_clusters"] > 0]
    ns = np.array([r["n"] for r in ok], dtype=float)
    ratio = np.array([r["zeta1_cluster_ratio"] for r in ok])
    ax.loglog(ns, ratio, "o", label="indifferent-point clusters per exceedance")
    if len(ok) >= 2 and math.isfinite(slope):
        c = np.exp(np.mean(np.log(ratio) - slope * np.log(ns)))
        ax.loglog(ns, c * ns ** slope, "-", label=f"fit, slope {slope:.3f}")
    if expected is not None and len(ok):
        c = ratio[0] / ns[0] ** expected
        ax.loglog(ns, c * ns ** expected, ":", color="k", label=f"slope {expected:.3f}")
    ax.set_xlabel("n")
    ax.set_title(label)
    ax.legend(fontsize=8)
    return _save(fig, path)
