"""Pipeline stages: each reads its inputs from the run directory and writes artifacts back.

Stages record the config, start/finish times and a SHA-256 per artifact in
``manifest.json``. Numeric artifacts are CSV at full double precision.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import hmc, mixture, plotting, signalgen, stats, vae
from .config import PipelineConfig
from .mixture import MixtureModel

log = logging.getLogger(__name__)

FLOAT_FMT = "%.17g"
STAGES = ("gen-data", "train", "fit-prior", "sample", "diagnose")


class MissingInputError(FileNotFoundError):
    """A stage was run before the stage that produces its inputs."""


class InputMismatchError(ValueError):
    """Inputs on disk disagree with each other or with the config."""


# -- csv helpers -------------------------------------------------------------

def write_matrix(path, matrix, header=None):
    matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    np.savetxt(path, matrix, fmt=FLOAT_FMT, delimiter=",",
               header=",".join(header) if header else "", comments="")


def read_matrix(path, header=False):
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"missing input {path.name}; run the stage that produces it first")
    data = np.loadtxt(path, delimiter=",", skiprows=1 if header else 0, ndmin=2)
    return data


def write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([FLOAT_FMT % v if isinstance(v, (float, np.floating)) else v for v in row])


def read_rows(path):
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"missing input {path.name}; run the stage that produces it first")
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# -- manifest ------------------------------------------------------------------

def _now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _record(out: Path, cfg: PipelineConfig, stage: str, started: str, artifacts):
    path = out / "manifest.json"
    manifest = json.loads(path.read_text()) if path.is_file() else {"stages": {}}
    manifest["config"] = cfg.snapshot()
    manifest["stages"][stage] = {
        "started": started,
        "finished": _now(),
        "artifacts": {Path(a).name: sha256(a) for a in artifacts},
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


# -- mixtures on disk -----------------------------------------------------------

def write_mixtures(path, models):
    rows = [(d, k, float(w), float(mu), float(var))
            for d, m in enumerate(models)
            for k, (w, mu, var) in enumerate(zip(m.weights, m.means, m.variances))]
    write_rows(path, ["dim", "k", "weight", "mean", "variance"], rows)


def read_mixtures(path):
    grouped: dict[int, list] = {}
    for row in read_rows(path):
        grouped.setdefault(int(row["dim"]), []).append(
            (float(row["weight"]), float(row["mean"]), float(row["variance"])))
    models = []
    for d in range(len(grouped)):
        if d not in grouped:
            raise InputMismatchError(f"mixture.csv has no rows for dimension {d}")
        w, mu, var = map(np.array, zip(*grouped[d]))
        models.append(MixtureModel(w / w.sum(), mu, var))
    return models


# -- stages -----------------------------------------------------------------------

def gen_data(cfg: PipelineConfig, out: Path):
    d = cfg["data"]
    masses = signalgen.mass_grid(d["m_min"], d["m_max"], d["m_step"])
    ds = signalgen.build_dataset(masses, cfg.detectors(), cfg.noise_spec(), d["signal_length"],
                                 d["f_min"], d["sample_rate"], d["amplitude"])
    write_matrix(out / "noisy.csv", ds.noisy)
    write_matrix(out / "clean.csv", ds.clean)
    write_rows(out / "meta.csv", ["row", "m1", "m2", "detector"],
               [(m["row"], float(m["m1"]), float(m["m2"]), m["detector"]) for m in ds.meta])
    log.info("generated %d rows of %d samples", len(ds), d["signal_length"])
    return [out / "noisy.csv", out / "clean.csv", out / "meta.csv"]


def _load_dataset(out: Path):
    noisy = read_matrix(out / "noisy.csv")
    clean = read_matrix(out / "clean.csv")
    meta = read_rows(out / "meta.csv")
    return signalgen.Dataset(noisy, clean, meta)


def train(cfg: PipelineConfig, out: Path):
    ds = _load_dataset(out)
    model_config = cfg.model_config()
    if ds.noisy.shape[1] != model_config.signal_length:
        raise InputMismatchError(f"data rows have {ds.noisy.shape[1]} samples but data.signal_length is "
                         f"{model_config.signal_length}")
    model, report = vae.train(ds, cfg.train_config(), model_config)
    model.save(out / "weights.lsnn")
    val = report.val_recon if report.val_recon else [float("nan")] * len(report)
    rows = [(e + 1, report.recon[e], report.kl[e], report.beta[e], report.total[e], val[e])
            for e in range(len(report))]
    write_rows(out / "train_report.csv", ["epoch", "recon", "kl", "beta", "total", "val_recon"], rows)
    plotting.loss_curves(report, out / "loss_curves.svg")
    return [out / "weights.lsnn", out / "train_report.csv", out / "loss_curves.svg"]


def _load_model(cfg: PipelineConfig, out: Path):
    path = out / "weights.lsnn"
    if not path.is_file():
        raise MissingInputError("missing input weights.lsnn; run the train stage first")
    return vae.VaeModel.load(path, cfg.model_config())


def fit_dimensions(latents, fit_cfg):
    """One independent mixture per latent column."""
    latents = np.asarray(latents, dtype=np.float64)
    return [mixture.fit(latents[:, d], fit_cfg) for d in range(latents.shape[1])]


def fit_prior(cfg: PipelineConfig, out: Path):
    ds = _load_dataset(out)
    model = _load_model(cfg, out)
    z_clean, _ = model.encode(ds.clean)
    z_noisy, _ = model.encode(ds.noisy)
    need = 2 * cfg["prior"]["max_components"]
    if len(z_clean) < need:
        raise InputMismatchError(f"{len(z_clean)} rows is too few to fit prior.max_components="
                                 f"{cfg['prior']['max_components']}; need at least {need}")
    models = fit_dimensions(z_clean, cfg.fit_config())
    header = [f"z{d}" for d in range(z_clean.shape[1])]
    write_matrix(out / "latents_clean.csv", z_clean, header)
    write_matrix(out / "latents_noisy.csv", z_noisy, header)
    write_mixtures(out / "mixture.csv", models)
    plotting.mixture_overlays(z_clean, models, out / "mixture_fits.svg", cfg["prior"]["hist_bins"])
    artifacts = [out / "latents_clean.csv", out / "latents_noisy.csv", out / "mixture.csv",
                 out / "mixture_fits.svg"]
    n_target = cfg["prior"]["target_sample"]
    if n_target:
        artifacts.append(_target_figure(ds.clean, n_target, cfg, out / "target_fit.svg"))
    return artifacts


def _target_figure(clean, n, cfg: PipelineConfig, path):
    """Reference only: one mixture over pooled clean strain values, never used for sampling."""
    values = clean.ravel()
    if values.size > n:
        values = np.random.default_rng([cfg.seed, 1]).choice(values, n, replace=False)
    model = mixture.fit(values, cfg.fit_config())
    plotting.mixture_overlays(values[:, None], [model], path, cfg["prior"]["hist_bins"], ["clean targets"])
    return path


def _targets(cfg: PipelineConfig, out: Path, n_dims: int):
    kind = cfg["hmc"]["target"]
    if kind == "standard_normal":
        return [MixtureModel.gaussian()] * n_dims
    if kind == "bimodal":
        return [MixtureModel.symmetric_pair(2.0, 0.25)] * n_dims
    models = read_mixtures(out / "mixture.csv")
    if len(models) != n_dims:
        raise InputMismatchError(f"mixture.csv covers {len(models)} dimensions but latents have {n_dims}")
    return models


def sample(cfg: PipelineConfig, out: Path):
    z_noisy = read_matrix(out / "latents_noisy.csv", header=True)
    models = _targets(cfg, out, z_noisy.shape[1])
    chains, rates = hmc.run_all_dimensions(z_noisy, models, cfg.hmc_config())
    posterior = np.column_stack([c.positions for c in chains])
    write_matrix(out / "posterior_samples.csv", posterior, [f"z{d}" for d in range(len(chains))])
    write_rows(out / "acceptance_rates.csv", ["dim", "rate", "n_proposals"],
               [(c.dim, c.acceptance_rate, c.n_proposals) for c in chains])
    plotting.acceptance_bars(rates, out / "acceptance_rates.svg")
    return [out / "posterior_samples.csv", out / "acceptance_rates.csv", out / "acceptance_rates.svg"]


def null_control(models, n: int, seed: int):
    """KS between two independent i.i.d. draws from each fitted mixture."""
    results = []
    for d, model in enumerate(models):
        a = mixture.sample(model, n, seed=[seed, d, 0])
        b = mixture.sample(model, n, seed=[seed, d, 1])
        results.append(stats.ks_two_sample(a, b))
    return results


def _ks_rows(results):
    return [(d, r.statistic, r.p_value, r.n1, r.n2) for d, r in enumerate(results)]


def diagnose(cfg: PipelineConfig, out: Path):
    z_noisy = read_matrix(out / "latents_noisy.csv", header=True)
    if cfg["report"]["self_compare"]:
        posterior = z_noisy
    else:
        posterior = read_matrix(out / "posterior_samples.csv", header=True)
    results = stats.ks_report(z_noisy, posterior)
    corr = stats.pearson_matrix(z_noisy)
    null = null_control(_targets(cfg, out, z_noisy.shape[1]), cfg["report"]["null_samples"], cfg.seed)

    ks_header = ["dim", "D", "p", "n1", "n2"]
    write_rows(out / "ks_report.csv", ks_header, _ks_rows(results))
    write_rows(out / "null_control.csv", ks_header, _ks_rows(null))
    write_matrix(out / "corr_matrix.csv", corr)
    plotting.ks_bars([r.statistic for r in results], out / "ks_statistics.svg")
    plotting.corr_heatmap(corr, out / "corr_heatmap.svg")

    s, ns = stats.summarize(results), stats.summarize(null)
    off = corr[~np.eye(corr.shape[0], dtype=bool)]
    lines = [
        f"latent dimensions: {len(results)}",
        f"encoder-noisy vs posterior: median D = {s['median_D']:.4f}, max D = {s['max_D']:.4f}, "
        f"min D = {s['min_D']:.4f}",
        f"null control (i.i.d. vs i.i.d.): median D = {ns['median_D']:.4f}, max D = {ns['max_D']:.4f}",
        f"dimensions with p < 0.05: {sum(r.p_value < 0.05 for r in results)}",
        f"max |off-diagonal Pearson r| = {np.abs(off).max() if off.size else 0.0:.4f}",
    ]
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    return [out / "ks_report.csv", out / "null_control.csv", out / "corr_matrix.csv",
            out / "ks_statistics.svg", out / "corr_heatmap.svg", out / "summary.txt"]


RUNNERS = {
    "gen-data": gen_data,
    "train": train,
    "fit-prior": fit_prior,
    "sample": sample,
    "diagnose": diagnose,
}


def run_stage(stage: str, cfg: PipelineConfig, out: Path | None = None):
    out = Path(out) if out is not None else cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    started = _now()
    artifacts = RUNNERS[stage](cfg, out)
    _record(out, cfg, stage, started, artifacts)
    return artifacts


def run_all(cfg: PipelineConfig, out: Path | None = None):
    produced = []
    for stage in STAGES:
        produced += run_stage(stage, cfg, out)
    return produced
