"""PNG figures for benchmark outputs (non-interactive Agg backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _profile_axes(ax, profile, l, sigma_y, key, label):
    v = profile.values[key] / sigma_y
    ok = np.isfinite(v)
    ax.loglog(profile.r[ok] / l, np.abs(v[ok]), "o-", ms=3, label=label)
    ax.set_xlabel("r / l")
    ax.grid(True, which="both", alpha=0.3)


def profile_figure(profile, l, sigma_y, path, key="sigma22", ylabel="sigma_22 / sigma_Y") -> Path:
    fig, ax = plt.subplots(figsize=(5, 4))
    _profile_axes(ax, profile, l, sigma_y, key, ylabel)
    ax.set_ylabel(ylabel)
    ax.set_title(f"theta = {np.rad2deg(profile.theta):.3f} deg")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def history_figure(rows, path) -> Path:
    strain = np.array([r["remote_strain"] for r in rows])
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.6))
    axes[0].plot(strain, [r["J_N_per_mm"] for r in rows], "-")
    axes[0].set_ylabel("J [N/mm]")
    axes[1].plot(strain, [r["delta_mm"] for r in rows], "-")
    axes[1].set_ylabel("opening [mm]")
    axes[2].plot(strain, [r["aspect_ratio"] for r in rows], "-", label="aspect ratio")
    axes[2].plot(strain, [r["taper_x"] for r in rows], "--", label="taper x")
    axes[2].legend()
    for ax in axes:
        ax.set_xlabel("remote strain")
        ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plate_figures(cfg, profile, rows, out_dir) -> list:
    from .benchmarks import length_scale

    out = Path(out_dir)
    files = [profile_figure(profile, length_scale(cfg), cfg.material.sigma_y, out / "profile_sigma22.png")]
    if rows:
        files.append(history_figure(rows, out / "history.png"))
    return files


def boundary_layer_figures(cfg, profile, rows, out_dir) -> list:
    from .benchmarks import length_scale

    out = Path(out_dir)
    return [
        profile_figure(profile, length_scale(cfg), cfg.material.sigma_y, out / "profile_sigma22.png"),
        profile_figure(profile, length_scale(cfg), cfg.material.sigma_y, out / "profile_sigmae.png", "sigma_e", "sigma_e / sigma_Y"),
    ]


def material_point_figure(rows, path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot([r["strain"] for r in rows], [r["stress"] for r in rows], "-")
    ax.set_xlabel("axial strain")
    ax.set_ylabel("axial stress [MPa]")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)
