"""Matplotlib figures written next to the CSV outputs.

Uses the Agg backend and strips the software tag from the PNG metadata so a
rerun writes identical files.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_META = {"Software": None}


def _save(fig, path):
    fig.savefig(path, dpi=110, metadata=_META)
    plt.close(fig)


def plot_paint_panels(panels, path):
    """One row per painting frequency: RF spectrum, 1-D cut, 2-D map."""
    n = len(panels)
    fig, axes = plt.subplots(n, 3, figsize=(11, 2.6 * n), squeeze=False)
    for row, p in zip(axes, panels):
        ax_s, ax_1, ax_2 = row
        f, a = p["spectrum"]
        ax_s.vlines((f - p["center_frequency"]) / 1e6, 0, a, lw=0.8)
        ax_s.set_xlabel("f - f_c (MHz)")
        ax_s.set_ylabel("amplitude")
        ax_s.set_title(p["title"], fontsize=9, loc="left")
        x, comb, sweep = p["profile"]
        ax_1.plot(x * 1e6, comb / comb.max(), label="sideband comb")
        ax_1.plot(x * 1e6, sweep / sweep.max(), "--", lw=0.8, label="moving beam")
        ax_1.set_xlabel("x (um)")
        ax_1.set_ylabel("intensity (norm.)")
        ax_1.legend(fontsize=7, loc="upper right")
        gx, gy, img = p["map"]
        ax_2.imshow(img.T, origin="lower", aspect="auto", cmap="magma",
                    extent=(gx[0] * 1e6, gx[-1] * 1e6, gy[0] * 1e6, gy[-1] * 1e6))
        ax_2.set_xlabel("x (um)")
        ax_2.set_ylabel("z (um)")
    fig.tight_layout()
    _save(fig, path)


def plot_trajectory(traj, path):
    """Powers, strokes, depths, frequencies, populations and PSD versus time."""
    t = traj.times * 1e3
    col = traj.column
    fig, axes = plt.subplots(3, 2, figsize=(10, 8), sharex=True)
    ax = axes.ravel()
    ax[0].semilogy(t, col("P1_W"), label="P1")
    ax[0].semilogy(t, col("P2_W"), label="P2")
    ax[0].set_ylabel("power (W)")
    ax[1].plot(t, col("xs1_m") * 1e6, label="xs1")
    ax[1].plot(t, col("xs2_m") * 1e6, label="xs2")
    ax[1].set_ylabel("stroke (um)")
    ax[2].plot(t, col("depth0_uK"), label="m_F = 0")
    ax[2].plot(t, col("depthpm1_uK"), label="m_F = +-1")
    ax[2].set_ylabel("depth (uK)")
    for name in ("fx_Hz", "fy_Hz", "fz_Hz"):
        ax[3].semilogy(t, col(name), label=name[:2])
    ax[3].set_ylabel("frequency (Hz)")
    ax[4].semilogy(t, np.maximum(col("N_0"), 1e-3), label="m_F = 0")
    ax[4].semilogy(t, np.maximum(col("N_m1"), 1e-3), label="m_F = -1")
    ax[4].set_ylabel("atoms")
    ax[5].semilogy(t, np.maximum(col("psd"), 1e-9), label="PSD")
    ax[5].axhline(1.202, color="k", lw=0.6, ls=":")
    ax[5].set_ylabel("phase-space density")
    for a in ax:
        a.legend(fontsize=7)
    for a in axes[-1]:
        a.set_xlabel("t (ms)")
    fig.tight_layout()
    _save(fig, path)


def plot_convergence(record, path, baseline=None):
    gens = np.array([e.generation for e in record.evaluations])
    best = record.best_so_far()
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.scatter(gens, np.where(np.isfinite(record.objectives), record.objectives, np.nan), s=3, alpha=0.3)
    ax.step(gens, best, where="post", color="C1", label="best so far")
    if baseline is not None:
        ax.axhline(baseline, color="k", ls=":", lw=0.8, label="random median")
    ax.set_xlabel("generation")
    ax.set_ylabel("objective")
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)
