"""Static SVG figures for the pipeline reports.

Output is byte-stable for identical inputs: the SVG id salt is fixed and
the date stamp is dropped.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from . import mixture  # noqa: E402

CORR_CMAP = "RdBu_r"
SERIES_PREFIX = "series-"

_STYLE = {
    "svg.hashsalt": "latentscope",
    "svg.fonttype": "path",
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
}


def _save(fig, path):
    with plt.rc_context(_STYLE):
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _figure(**kwargs):
    with plt.rc_context(_STYLE):
        return plt.subplots(**kwargs)


def loss_curves(report, path):
    """Reconstruction, KL and total loss per epoch on a log axis."""
    fig, ax = _figure(figsize=(6, 3.5))
    epochs = np.arange(1, len(report.recon) + 1)
    for name, values in (("reconstruction", report.recon), ("kl", report.kl), ("total", report.total)):
        values = np.asarray(values, dtype=np.float64)
        line, = ax.plot(epochs, np.maximum(values, 1e-300), label=name, linewidth=1.4)
        line.set_gid(SERIES_PREFIX + name)
    ax.set_yscale("log")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend(frameon=False)
    fig.tight_layout()
    _save(fig, path)


def mixture_overlays(latents, models, path, n_bins=40, labels=None):
    """Per-column histogram density with the fitted components and their sum."""
    latents = np.asarray(latents, dtype=np.float64)
    n_dims = latents.shape[1]
    cols = int(np.ceil(np.sqrt(n_dims)))
    rows = int(np.ceil(n_dims / cols))
    fig, axes = _figure(nrows=rows, ncols=cols, figsize=(2.4 * cols, 1.9 * rows), squeeze=False)
    for d, ax in enumerate(axes.ravel()):
        if d >= n_dims:
            ax.set_visible(False)
            continue
        x = latents[:, d]
        edges, heights = mixture.histogram_pdf(x, n_bins)
        ax.stairs(heights, edges, fill=True, alpha=0.35, color="0.5", label="histogram")
        model = models[d]
        pad = 0.1 * (edges[-1] - edges[0]) + 1e-12
        grid = np.linspace(edges[0] - pad, edges[-1] + pad, 300)
        for w, mu, var in zip(model.weights, model.means, model.variances):
            comp = w * np.exp(-0.5 * (grid - mu) ** 2 / var) / np.sqrt(2 * np.pi * var)
            ax.plot(grid, comp, linewidth=0.7, linestyle="--", color="tab:blue")
        ax.plot(grid, np.exp(mixture.log_density(model, grid)), linewidth=1.3, color="tab:red",
                label="mixture")
        label = labels[d] if labels else f"z{d}"
        ax.set_title(f"{label}  K={model.n_components}", fontsize=8)
        ax.tick_params(labelsize=6)
    fig.tight_layout()
    _save(fig, path)


def acceptance_bars(rates, path):
    rates = np.asarray(rates, dtype=np.float64)
    fig, ax = _figure(figsize=(6, 3))
    ax.bar(np.arange(rates.size), rates, color="tab:green")
    ax.set_ylim(0, 1)
    ax.set_xlabel("latent dimension")
    ax.set_ylabel("acceptance rate")
    fig.tight_layout()
    _save(fig, path)


def ks_bars(statistics, path):
    stats = np.asarray(statistics, dtype=np.float64)
    fig, ax = _figure(figsize=(6, 3))
    ax.bar(np.arange(stats.size), stats, color="tab:purple")
    ax.set_ylim(0, 1)
    ax.set_xlabel("latent dimension")
    ax.set_ylabel("KS statistic D")
    fig.tight_layout()
    _save(fig, path)


def corr_heatmap(corr, path):
    """Cell-per-entry heatmap on a fixed [-1, 1] colour scale.

    Returns the RGBA colour of every cell so callers can check the mapping.
    """
    corr = np.asarray(corr, dtype=np.float64)
    fig, ax = _figure(figsize=(4.6, 4))
    mesh = ax.pcolormesh(corr, cmap=CORR_CMAP, vmin=-1.0, vmax=1.0, edgecolors="none")
    ax.invert_yaxis()
    ax.set_aspect("equal")
    ax.grid(False)
    ax.set_xlabel("latent dimension")
    ax.set_ylabel("latent dimension")
    fig.colorbar(mesh, ax=ax, label="Pearson r")
    fig.tight_layout()
    colours = mesh.cmap(mesh.norm(corr))
    _save(fig, path)
    return colours
