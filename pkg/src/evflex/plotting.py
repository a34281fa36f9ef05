"""Figures for the report stage, rendered headless and byte-reproducibly."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# no software/date tags, fixed hash salt: identical data gives identical PNG bytes
_STYLE = {"svg.hashsalt": "evflex", "figure.dpi": 100, "font.size": 9}


def _save(fig, path: Path) -> Path:
    fig.savefig(path, format="png", metadata={"Software": None})
    plt.close(fig)
    return path


def plot_base_case(path, trace: dict, v_min: float) -> Path:
    """Per-period lowest voltage and substation-branch loading over scenarios.

    ``trace`` holds per-period columns ``min_v_{mean,min,max}`` and
    ``sub_loading_{mean,min,max}``.
    """
    t = np.asarray(trace["period"])
    with plt.rc_context(_STYLE):
        fig, (a1, a2) = plt.subplots(2, 1, figsize=(7, 5), sharex=True)
        for ax, key, lim, lab in ((a1, "min_v", v_min, "lowest voltage [pu]"),
                                  (a2, "sub_loading", 1.0, "substation branch current / cap")):
            ax.fill_between(t, trace[f"{key}_min"], trace[f"{key}_max"], color="C0", alpha=0.25, lw=0)
            ax.plot(t, trace[f"{key}_mean"], color="C0", lw=1.5)
            ax.axhline(lim, color="C3", ls="--", lw=1)
            ax.set_ylabel(lab)
            ax.grid(alpha=0.3)
        a2.set_xlabel("period [h]")
        a1.set_title("uncontrolled charging")
        fig.tight_layout()
        return _save(fig, path)


def plot_areas(path, area) -> Path:
    S = len(area.pool_ids)
    t = np.arange(area.periods)
    with plt.rc_context(_STYLE):
        fig, axes = plt.subplots(S, 1, figsize=(7, 1.8 * S + 0.6), sharex=True, squeeze=False)
        for s, ax in enumerate(axes[:, 0]):
            ax.fill_between(t, area.lower_kw[s], area.upper_kw[s], step="post", color="C2", alpha=0.35, lw=0)
            ax.step(t, area.lower_kw[s], where="post", color="C0", lw=1.2, label="reserve")
            ax.step(t, area.upper_kw[s], where="post", color="C2", lw=1.2, label="upper bound")
            ax.set_ylabel(f"pool {area.pool_ids[s]}\n[kW]")
            ax.grid(alpha=0.3)
        axes[0, 0].legend(loc="upper left", fontsize=8)
        axes[-1, 0].set_xlabel("period [h]")
        fig.tight_layout()
        return _save(fig, path)


def plot_validation(path, traces: dict, ecdfs: dict, v_min: float) -> Path:
    """Left: per-period lowest voltage band for one risk level.  Right: all-period
    eCDFs of the lowest voltage, one curve per risk level (``ecdfs[beta] = values``)."""
    with plt.rc_context(_STYLE):
        fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 3.6))
        t = np.asarray(traces["period"])
        a1.fill_between(t, traces["min_v_min"], traces["min_v_max"], color="C0", alpha=0.25, lw=0)
        a1.plot(t, traces["min_v_mean"], color="C0", lw=1.5)
        a1.axhline(v_min, color="C3", ls="--", lw=1)
        a1.set_xlabel("period [h]")
        a1.set_ylabel("lowest voltage [pu]")
        a1.grid(alpha=0.3)
        for k, (beta, vals) in enumerate(sorted(ecdfs.items())):
            v = np.sort(np.asarray(vals))
            a2.step(v, np.arange(1, v.size + 1) / v.size, where="post", color=f"C{k}", label=f"beta={beta:g}")
        a2.axvline(v_min, color="C3", ls="--", lw=1)
        a2.set_xlabel("lowest voltage over the day [pu]")
        a2.set_ylabel("eCDF")
        a2.legend(fontsize=8)
        a2.grid(alpha=0.3)
        fig.tight_layout()
        return _save(fig, path)


def plot_payments(path, totals: dict) -> Path:
    """Box plot of per-scenario pool payments, one box per risk level."""
    keys = sorted(totals)
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(5, 3.6))
        ax.boxplot([np.asarray(totals[k]) for k in keys], whis=(5, 95), showfliers=False)
        ax.set_xticks(np.arange(1, len(keys) + 1), [f"{k:g}" for k in keys])
        ax.set_xlabel("beta")
        ax.set_ylabel("total payment [currency]")
        ax.grid(alpha=0.3)
        fig.tight_layout()
        return _save(fig, path)
