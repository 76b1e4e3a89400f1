"""Figures written next to the JSON/CSV reports."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def comm_bars(rows, path, title: str = "Online communication per op"):
    """Measured bits per op, with the target figure as a marker where one exists."""
    ops = [r["op"] for r in rows]
    measured = [r["bits"] for r in rows]
    expected = [r.get("expected_bits") for r in rows]
    fig, ax = plt.subplots(figsize=(max(6, 0.7 * len(ops)), 4))
    xs = np.arange(len(ops))
    ax.bar(xs, measured, color="#4c72b0", label="measured")
    ex = [(x, e) for x, e in zip(xs, expected) if e is not None]
    if ex:
        ax.scatter([x for x, _ in ex], [e for _, e in ex], color="#dd8452", marker="D", zorder=3, label="target")
    for x, r in zip(xs, rows):
        ax.annotate(f"{r['rounds']}r", (x, r["bits"]), ha="center", va="bottom", fontsize=8)
    ax.set_xticks(xs, ops, rotation=40, ha="right")
    ax.set_ylabel("bits")
    ax.set_yscale("log")
    ax.set_title(title)
    ax.legend()
    return _save(fig, path)


def encoder_breakdown(breakdown: dict, path):
    tags = sorted(breakdown)
    bits = [breakdown[t]["bits"] for t in tags]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.barh(tags, bits, color="#55a868")
    ax.set_xlabel("bits")
    ax.set_title("Encoder layer communication by kernel")
    return _save(fig, path)


def gelu_fit(x, exact, approx_vals, path, label: str = "segmented"):
    fig, (ax0, ax1) = plt.subplots(2, 1, figsize=(6, 5), sharex=True)
    ax0.plot(x, exact, label="GeLU", lw=1.5)
    ax0.plot(x, approx_vals, "--", label=label, lw=1.2)
    ax0.legend()
    ax1.plot(x, approx_vals - exact, color="#c44e52", lw=1)
    ax1.set_ylabel("error")
    ax1.set_xlabel("x")
    return _save(fig, path)


def period_errors(rows, path):
    periods = [r["period"] for r in rows]
    errs = [r["max_abs_err"] for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(periods, errs, "o-")
    ax.set_xlabel("period")
    ax.set_ylabel("max |fit - erf| on [-1.7, 1.7]")
    ax.set_yscale("log")
    return _save(fig, path)
