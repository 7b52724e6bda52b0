"""Figures for sweep results, rendered off-screen to image files."""

from __future__ import annotations

from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .harness import SweepRecord  # noqa: E402

# fixed metadata keeps repeated renders byte-identical
_PNG_META = {"Software": None}


def _save(fig, path) -> None:
    fig.savefig(path, dpi=120, metadata=_PNG_META)
    plt.close(fig)


def _col(records: Sequence[SweepRecord], name: str) -> np.ndarray:
    return np.array([np.nan if getattr(r, name) is None else getattr(r, name) for r in records], dtype=float)


def plot_speed_sweep(records: Sequence[SweepRecord], path) -> None:
    v = np.array([r.axis[0] for r in records])
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    ax1.loglog(v, _col(records, "peb"), "o-", label="PEB")
    ax1.loglog(v, _col(records, "peb_approx"), "--", label="PEB (diagonal approx.)")
    inf = _col(records, "peb_inf")
    if np.any(np.isfinite(inf)):
        ax1.axhline(inf[np.isfinite(inf)][0], color="k", ls=":", label="PEB (v -> inf)")
    ax1.set_xlabel("UE speed [m/s]")
    ax1.set_ylabel("PEB [m]")
    ax1.legend()
    ax1.grid(True, which="both", alpha=0.3)
    ax2.loglog(v, _col(records, "veb"), "s-", color="C3", label="VEB")
    ax2.loglog(v, _col(records, "veb_approx"), "--", color="C1", label="VEB (diagonal approx.)")
    ax2.set_xlabel("UE speed [m/s]")
    ax2.set_ylabel("VEB [m/s]")
    ax2.legend()
    ax2.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    _save(fig, path)


def plot_power_sweep(records: Sequence[SweepRecord], path) -> None:
    p = np.array([r.axis[0] for r in records])
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, label, style in (("peb", "PEB [m]", "C0-"), ("veb", "VEB [m/s]", "C3-"),
                               ("meb_agg", "MEB [m]", "C2-")):
        ax.semilogy(p, _col(records, name), style, label=label)
    for name, label, style in (("rmse_p", "PE [m]", "C0o"), ("rmse_v", "VE [m/s]", "C3s"),
                               ("rmse_map", "ME [m]", "C2^")):
        vals = _col(records, name)
        if np.any(np.isfinite(vals)):
            ax.semilogy(p, vals, style, mfc="none", label=label)
    ax.set_xlabel("Average transmit power [dBm]")
    ax.legend(ncol=2, fontsize=8)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    _save(fig, path)


def plot_heatmap(records: Sequence[SweepRecord], path, anchors=None) -> None:
    xs = np.unique([r.axis[0] for r in records])
    ys = np.unique([r.axis[1] for r in records])
    index = {(r.axis[0], r.axis[1]): r for r in records}
    fig, axes = plt.subplots(2, 2, figsize=(10, 7))
    for ax, name, label in zip(axes.ravel(), ("peb", "meb_agg", "ceb", "veb"),
                               ("PEB [m]", "MEB [m]", "CEB [m]", "VEB [m/s]")):
        grid = np.full((ys.size, xs.size), np.nan)
        for i, y in enumerate(ys):
            for j, x in enumerate(xs):
                r = index.get((x, y))
                if r is not None:
                    grid[i, j] = getattr(r, name)
        with np.errstate(divide="ignore", invalid="ignore"):
            img = np.log10(np.where(np.isfinite(grid) & (grid > 0), grid, np.nan))
        mesh = ax.pcolormesh(xs, ys, img, shading="nearest", cmap="viridis")
        fig.colorbar(mesh, ax=ax, label=f"log10 {label}")
        if anchors is not None:
            ax.plot(anchors[:, 0], anchors[:, 1], "r^", ms=6)
        ax.set_aspect("equal")
        ax.set_title(label)
    fig.tight_layout()
    _save(fig, path)
