"""Figures written next to the CSV/JSON reports."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
    "figure.dpi": 100,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
    "svg.hashsalt": "rdcim",
}


def _save(fig, path):
    # Fixed metadata keeps repeated runs byte-stable.
    fig.savefig(path, metadata={"Software": None} if str(path).endswith(".png") else None)
    plt.close(fig)
    return path


def plot_adder_trees(rows: list, reference: list, path):
    """Power and delay of characterized trees next to the reference values."""
    with plt.rc_context(RC):
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(7.0, 2.8))
        names = [r["Adder Tree Structure"] for r in rows]
        ref = {r["Adder Tree Structure"]: r for r in reference}
        x = np.arange(len(names))
        for ax, key, unit in ((ax1, "Power(uW)", "uW"), (ax2, "Delay (ns)", "ns")):
            ax.bar(x - 0.2, [r[key] for r in rows], 0.4, label="model")
            ax.bar(x + 0.2, [ref.get(n, {}).get(key, np.nan) for n in names], 0.4,
                   label="reference", alpha=0.6)
            ax.set_xticks(x, names, rotation=20, ha="right")
            ax.set_ylabel(f"{key.split('(')[0].strip()} ({unit})")
        ax1.legend()
        return _save(fig, path)


def plot_mapping(rows: list, path):
    """Banks used per layer, model vs reference (log scale)."""
    rows = [r for r in rows if r["Banks Used"] not in ("NA", "")]
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4.5, 2.8))
        x = np.arange(len(rows))
        ref = [float(r["Reference Banks"]) if r["Reference Banks"] != "" else np.nan for r in rows]
        ax.bar(x - 0.2, [r["Banks Used"] for r in rows], 0.4, label="model")
        ax.bar(x + 0.2, ref, 0.4, label="reference", alpha=0.6)
        ax.set_xticks(x, [r["Layer"] for r in rows])
        ax.set_yscale("log")
        ax.set_ylabel("banks used")
        ax.legend()
        return _save(fig, path)


def plot_margins(margins, per_corner: list, path):
    """Histogram of per-trial log sense margins."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4.5, 2.8))
        ax.hist(np.asarray(margins), bins=60, color="0.3")
        ax.axvline(0, color="C3", lw=1)
        ax.set_xlabel("ln margin to sense threshold")
        ax.set_ylabel("trials")
        ax.set_title(", ".join(f"{c['corner']}:{c.get('read_failures', c.get('mac_mismatches', 0))}"
                               for c in per_corner) + " failures")
        return _save(fig, path)


def plot_peripheral(breakdown: dict, path):
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4.0, 2.6))
        ax.barh(list(breakdown), list(breakdown.values()), color="C0")
        ax.set_xlabel("power (uW)")
        ax.invert_yaxis()
        return _save(fig, path)


def plot_layer_cycles(traces: list, path):
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4.5, 2.8))
        names = [t["layer"] for t in traces]
        done = [t["bank_cycles"] - t["skipped_cycles"] for t in traces]
        ax.bar(names, done, label="issued")
        ax.bar(names, [t["skipped_cycles"] for t in traces], bottom=done, label="zero-skipped")
        ax.set_yscale("log")
        ax.set_ylabel("bank cycles")
        ax.legend()
        return _save(fig, path)
