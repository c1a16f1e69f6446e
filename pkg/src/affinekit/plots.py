"""Figure rendering for the CLI report paths.

Each writer takes a result object and a target path and saves a single PNG
next to the delimited artifact it illustrates.
"""

from __future__ import annotations

import numpy as np
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .density import DensityField
from .ergodicity import DecayReport
from .montecarlo import PathEnsemble
from .spectral import TailBoundCert

_DPI = 150


def save_density_figure(fields: list[DensityField], path, labels=None, title="density"):
    fig, ax = plt.subplots(figsize=(7, 4.5))
    first = fields[0]
    if first.grid.ndim == 1:
        for k, fld in enumerate(fields):
            lbl = labels[k] if labels else None
            ax.plot(fld.grid.axis(0), fld.values, lw=1.4, label=lbl)
        ax.set_xlabel("y")
        ax.set_ylabel("value")
        if labels:
            ax.legend(frameon=False)
    elif first.grid.ndim == 2:
        mesh = ax.pcolormesh(
            first.grid.axis(0), first.grid.axis(1), first.values.T, shading="auto"
        )
        fig.colorbar(mesh, ax=ax)
        ax.set_xlabel("y1")
        ax.set_ylabel("y2")
    else:
        ax.text(0.5, 0.5, "d > 2: see the CSV artifact", ha="center", va="center")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path


def save_decay_figure(report: DecayReport, path):
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.semilogy(report.times, np.maximum(report.tv_values, 1e-16), "o", ms=4, label="measured TV")
    if np.isfinite(report.fitted_c):
        ax.semilogy(
            report.times,
            report.fitted_C * np.exp(-report.fitted_c * report.times),
            "-",
            lw=1.2,
            label=f"fit: C e^(-ct), c={report.fitted_c:.3f}",
        )
    ax.axhline(report.floor, color="gray", lw=0.8, ls=":", label="quadrature floor")
    ax.set_xlabel("t")
    ax.set_ylabel("total variation")
    ax.set_title(f"TV decay from x = {np.asarray(report.x).tolist()}")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path


def save_margin_figure(cert: TailBoundCert, path):
    fig, ax = plt.subplots(figsize=(7, 4.5))
    r = np.asarray(cert.shell_radii)
    s = np.asarray(cert.shell_log_max)
    if r.size:
        ax.semilogx(r, s, "o-", lw=1.2, label="shell max of envelope exponent")
        ax.axhline(np.log(cert.fitted_C), color="gray", lw=0.8, ls=":", label="log fitted C")
    ax.set_xlabel("||u||")
    ax.set_ylabel("Re phi + lambda log(1+||u_I||) + delta ||u_J||^2")
    status = "verified" if cert.verified else "NOT verified"
    ax.set_title(f"envelope exponent by radius shell ({status})")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path


def save_ensemble_figure(ens: PathEnsemble, path, axis: int = 0, overlay: DensityField | None = None):
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.hist(ens.terminal[:, axis], bins=80, density=True, alpha=0.6, label="terminal histogram")
    if overlay is not None:
        pts, marg = overlay.marginal(axis)
        ax.plot(pts, marg, lw=1.4, label="inverted density")
    ax.set_xlabel(f"x[{axis}]")
    ax.set_ylabel("density")
    ax.set_title(f"terminal marginal, N = {ens.n_paths}")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path
