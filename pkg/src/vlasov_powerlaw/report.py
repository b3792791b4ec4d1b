"""Matplotlib figures written next to the CSV output (Agg backend, no display)."""
from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["plot_run", "plot_sweep"]


def _envelope(t, e0, fit, p):
    c0 = fit.get("envelope_c0", float("nan"))
    if not math.isfinite(c0):
        return None
    if p <= 2:
        return e0 * np.exp(-c0 * t)
    return (e0 ** ((2 - p) / 2) + c0 * (p / 2 - 1) * t) ** (-2 / (p - 2))


def plot_run(data: dict, summary: dict, out_dir) -> list:
    """Energy/dissipation history and the decay-fit diagnostic for one run.

    ``data`` maps CSV column names to arrays.  Returns the written paths.
    """
    out = Path(out_dir)
    t = np.asarray(data["t"])
    e_mod = np.asarray(data["E_mod"])
    p = float(summary.get("p", 2.0))
    paths = []

    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    ax = axes[0]
    ax.semilogy(t, np.maximum(e_mod, 1e-300), label="E_mod")
    if "E_tot" in data:
        ax.semilogy(t, data["E_tot"], label="E_tot")
    fit = summary.get("fit", {})
    env = _envelope(t, e_mod[0], fit, p) if "error" not in fit else None
    if env is not None:
        ax.semilogy(t, 1.05 * env, "k--", lw=1, label="1.05 x envelope")
    ax.set_xlabel("t")
    ax.set_title(f"energies, p = {p:g}")
    ax.legend()
    ax = axes[1]
    for col in ("D", "D_visc", "D_drag"):
        if col in data:
            ax.semilogy(t, np.maximum(np.asarray(data[col]), 1e-300), label=col)
    ax.set_xlabel("t")
    ax.set_title("dissipation")
    ax.legend()
    fig.tight_layout()
    path = out / "energy.png"
    fig.savefig(path, dpi=110)
    plt.close(fig)
    paths.append(path)

    if "error" not in fit:
        t0, t1 = fit["window"]
        m = (t >= t0) & (t <= t1)
        fig, ax = plt.subplots(figsize=(5, 4))
        if fit["mode"] == "exponential":
            y = np.log(e_mod[m])
            ax.set_ylabel("log E_mod")
        else:
            y = e_mod[m] ** ((2 - p) / 2)
            ax.set_ylabel(f"E_mod^({(2 - p) / 2:g})")
        ax.plot(t[m], y, ".", ms=2, label="data")
        ax.plot(t[m], fit["intercept"] + fit["slope"] * t[m], "r-", lw=1,
                label=f"fit, R^2 = {fit['r2']:.4f}")
        ax.set_xlabel("t")
        ax.set_title(f"{fit['mode']} decay fit")
        ax.legend()
        fig.tight_layout()
        path = out / "decay_fit.png"
        fig.savefig(path, dpi=110)
        plt.close(fig)
        paths.append(path)
    return paths


def plot_sweep(runs: list, out_dir) -> Path:
    """Overlay ``E_mod / E_mod(0)`` for each ``(p, data)`` in ``runs``."""
    out = Path(out_dir)
    fig, ax = plt.subplots(figsize=(6, 4))
    for p, data in runs:
        e = np.asarray(data["E_mod"])
        ax.semilogy(data["t"], np.maximum(e / e[0], 1e-300), label=f"p = {p:g}")
    ax.set_xlabel("t")
    ax.set_ylabel("E_mod / E_mod(0)")
    ax.legend()
    fig.tight_layout()
    path = out / "sweep.png"
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path
