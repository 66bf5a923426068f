"""Matplotlib renderings saved next to the delimited reports."""

from __future__ import annotations

from pathlib import Path

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _phase_bands(ax, phase: np.ndarray) -> None:
    changes = np.flatnonzero(np.diff(phase)) + 0.5
    for x in changes:
        ax.axvline(x, color="gray", lw=0.8, ls="--", alpha=0.7)


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def variance_figure(vt, path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.2))
    t = np.arange(len(vt.phase))
    ax.semilogy(t, np.maximum(vt.var_undiscounted, 1e-12), label="undiscounted return")
    ax.semilogy(t, np.maximum(vt.var_bootstrapped, 1e-12), label="bootstrapped return")
    _phase_bands(ax, vt.phase)
    ax.set_xlabel("step")
    ax.set_ylabel("return variance")
    ax.legend(frameon=False, fontsize=8)
    ax.set_title(f"return variance over {vt.n_traces} traces")
    return _save(fig, path)


def value_return_figure(vr, path) -> Path:
    fig, axes = plt.subplots(2, 1, figsize=(6, 4.4), sharex=True,
                             height_ratios=[2, 1])
    t = np.arange(len(vr.phase))
    axes[0].plot(t, vr.mean_value, label="value prediction", color="tab:blue")
    axes[0].plot(t, vr.mean_return, label="discounted return", color="tab:green")
    axes[0].legend(frameon=False, fontsize=8)
    axes[0].set_ylabel("value")
    axes[1].fill_between(t, vr.diff - 2 * vr.diff_se, vr.diff + 2 * vr.diff_se,
                         color="gray", alpha=0.4)
    axes[1].plot(t, vr.diff, color="black", lw=1.0)
    axes[1].axhline(0.0, color="gray", lw=0.8)
    axes[1].set_ylabel("difference")
    axes[1].set_xlabel("step")
    for ax in axes:
        _phase_bands(ax, vr.phase)
    axes[0].set_title(f"value vs return over {vr.n_traces} traces")
    return _save(fig, path)


def snr_figure(reports, variances, path) -> Path:
    fig, ax = plt.subplots(figsize=(4.6, 3.2))
    snrs = [r.snr for r in reports]
    ax.plot(variances, snrs, marker="o")
    ax.set_xlabel("distractor reward variance")
    ax.set_ylabel("SNR")
    ax.set_title("policy-gradient SNR vs distractor variance")
    if min(snrs) > 0:
        ax.set_yscale("log")
    return _save(fig, path)


def occupancy_figure(rep, path) -> Path:
    fig, ax = plt.subplots(figsize=(4.2, 3.6))
    im = ax.imshow(rep.frequencies, cmap="viridis")
    fig.colorbar(im, ax=ax, shrink=0.8, label="visit frequency")
    ax.set_title(f"occupancy over {rep.n_traces} traces "
                 f"(touches {rep.touches_mean:.2f} ± {rep.touches_std:.2f})")
    return _save(fig, path)


def saliency_figure(grads: dict, alphas: dict, path) -> Path:
    steps = sorted(grads)
    cols = min(len(steps), 6)
    rows = (len(steps) + cols - 1) // cols
    fig, axes = plt.subplots(rows, cols, figsize=(2.2 * cols, 2.2 * rows),
                             squeeze=False)
    for i, t in enumerate(steps):
        ax = axes[i // cols][i % cols]
        ax.imshow(alphas[t], cmap="magma", vmin=0.0, vmax=1.0)
        ax.set_title(f"t={t}", fontsize=8)
        ax.set_xticks([])
        ax.set_yticks([])
    for j in range(len(steps), rows * cols):
        axes[j // cols][j % cols].axis("off")
    return _save(fig, path)


def learning_curve_figure(rows: list[dict], column: str, path, window: int = 50) -> Path:
    fig, ax = plt.subplots(figsize=(5.4, 3.2))
    xs = np.array([r["episodes"] for r in rows])
    ys = np.array([float(r[column]) for r in rows])
    if len(ys) >= window:
        kernel = np.ones(window) / window
        smooth = np.convolve(ys, kernel, mode="valid")
        ax.plot(xs[window - 1:], smooth, color="tab:red")
    ax.plot(xs, ys, alpha=0.25, color="tab:blue")
    ax.set_xlabel("episodes")
    ax.set_ylabel(column)
    return _save(fig, path)
