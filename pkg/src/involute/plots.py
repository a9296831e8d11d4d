"""Figure rendering for the report path; every plot lands next to its CSV."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_training_curves(records, path, title: str = "") -> None:
    """Two panels: log10 MSE and the violation metric over epochs."""
    epochs = [r.epoch for r in records]
    loss = np.array([r.train_loss for r in records])
    vio = np.array([r.violation for r in records])
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.4))
    ax1.plot(epochs, np.log10(np.maximum(loss, 1e-300)), lw=1.0)
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("log10(MSE)")
    ax2.plot(epochs, vio, lw=1.0, color="tab:red")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("violation")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_contour(xs, ys, z_grid, path, title: str = "") -> None:
    fig, ax = plt.subplots(figsize=(4.4, 3.8))
    cs = ax.contourf(xs, ys, z_grid, levels=20, cmap="RdBu_r")
    fig.colorbar(cs, ax=ax, shrink=0.9)
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_hnn_report(t, trajectory, reference, energy, path, title: str = "") -> None:
    """Predicted vs exact coordinates, and the model energy along the orbit."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.4))
    ax1.plot(t, trajectory[:, 0], lw=1.0, label="q (model)")
    ax1.plot(t, reference[:, 0], lw=0.8, ls="--", label="q (exact)")
    ax1.set_xlabel("t")
    ax1.set_ylabel("coordinate")
    ax1.legend(fontsize=8)
    ax2.plot(t, energy, lw=1.0, color="tab:green")
    ax2.set_xlabel("t")
    ax2.set_ylabel("model energy")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_audit_plot(report, path) -> None:
    fig, ax = plt.subplots(figsize=(5.5, 3.4))
    ax.semilogy(report.grid_b, np.maximum(report.grid_residual, 1e-18), lw=0.8)
    for b in report.found:
        ax.axvline(b, color="tab:red", lw=0.8, ls=":")
    ax.set_xlabel("bias b")
    ax.set_ylabel("parity residual")
    ax.set_title(f"{report.kind} (p={report.parity:+d}): "
                 + ("UNSAFE" if report.unsafe else "safe on grid"))
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_cnn_curves(records, path, title: str = "") -> None:
    epochs = [r.epoch for r in records]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.4))
    ax1.plot(epochs, [r.train_loss for r in records], lw=1.0)
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("cross-entropy")
    ax2.plot(epochs, [r.violation for r in records], lw=1.0, color="tab:red")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("flip violation")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
