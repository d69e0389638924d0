"""INI-style pipeline configuration with typed, documented defaults.

Every key has a default, so an empty file is a valid config. Unknown
sections or keys are rejected so typos fail loudly instead of silently
falling back to a default.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from .hmc import HmcConfig
from .mixture import FitConfig
from .signalgen import DETECTORS, NoiseSpec
from .vae import BetaSchedule, ModelConfig, TrainConfig


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending ``section.key``."""


def _bool(raw: str) -> bool:
    value = raw.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _str_list(raw: str) -> list[str]:
    return [item.strip() for item in raw.split(",") if item.strip()]


# section -> key -> (parser, default, description)
SCHEMA: dict[str, dict[str, tuple]] = {
    "run": {
        "seed": (int, 0, "global seed for noise, training, fitting and sampling"),
        "out_dir": (str, "latentscope-run", "directory receiving every artifact"),
    },
    "data": {
        "m_min": (float, 25.0, "lightest component mass (solar masses)"),
        "m_max": (float, 33.5, "heaviest component mass (solar masses)"),
        "m_step": (float, 0.5, "mass grid spacing"),
        "detectors": (_str_list, ["H1", "L1", "V1"], "comma-separated detector ids"),
        "signal_length": (int, 256, "samples per row after zero-padding"),
        "f_min": (float, 40.0, "starting frequency of each chirp (Hz)"),
        "sample_rate": (float, 1024.0, "sampling rate (Hz)"),
        "amplitude": (float, 1.0, "chirp amplitude at f_min"),
        "psd_slope": (float, -1.0, "power-law slope of the noise PSD below the knee"),
        "psd_scale": (float, 2e-4, "one-sided PSD level above the knee; 0 disables noise"),
        "f_knee": (float, 60.0, "knee frequency of the noise PSD (Hz)"),
    },
    "model": {
        "latent_dim": (int, 16, "latent dimensions"),
        "channels": (int, 8, "convolution channels"),
        "kernel_size": (int, 5, "convolution kernel width"),
        "pool": (int, 2, "max-pool window"),
        "dropout": (float, 0.1, "encoder dropout rate"),
        "hidden": (int, 64, "dense hidden width"),
        "upsample_stride": (int, 2, "stride of each transposed convolution"),
        "prior_offset": (float, 1.0, "latent prior components sit at +/- this value"),
        "prior_variance": (float, 1.0, "variance of each latent prior component"),
    },
    "train": {
        "epochs": (int, 64, "training epochs"),
        "batch_size": (int, 32, "rows per SGD step"),
        "learning_rate": (float, 0.001, "SGD learning rate"),
        "clip_norm": (float, 1.0, "global gradient-norm clip"),
        "beta_min": (float, 0.0, "KL weight at epoch 0"),
        "beta_max": (float, 1e-3, "KL weight after warm-up"),
        "warmup_epochs": (int, 32, "epochs of linear KL warm-up"),
        "val_fraction": (float, 0.1, "held-out fraction of rows"),
    },
    "prior": {
        "max_components": (int, 10, "component cap per latent dimension"),
        "concentration": (float, 1e-3, "Dirichlet concentration on mixture weights"),
        "max_iters": (int, 1000, "coordinate-ascent iterations per run"),
        "tol": (float, 1e-9, "relative lower-bound tolerance"),
        "hist_bins": (int, 40, "histogram bins in the density figures"),
        "target_sample": (int, 2000, "clean-target values drawn for the reference fit figure; 0 skips it"),
    },
    "hmc": {
        "step_size": (float, 0.05, "leapfrog step size"),
        "n_leapfrog": (int, 20, "leapfrog steps per proposal"),
        "n_samples": (int, 2000, "posterior samples kept per dimension"),
        "burn_in": (int, 500, "discarded transitions per chain"),
        "n_chains": (int, 20, "chains per dimension, started at encoder latents"),
        "fd_step": (float, 1e-4, "finite-difference step for the score"),
        "gradient": (str, "fd", "score method: fd or analytic"),
        "target": (str, "fitted", "fitted, standard_normal or bimodal"),
    },
    "report": {
        "self_compare": (_bool, False, "compare noisy latents against themselves"),
        "null_samples": (int, 5000, "i.i.d. draws per side in the null control"),
    },
}

HMC_TARGETS = ("fitted", "standard_normal", "bimodal")


@dataclass
class PipelineConfig:
    values: dict = field(default_factory=lambda: {
        section: {key: spec[1] for key, spec in keys.items()} for section, keys in SCHEMA.items()
    })

    def __getitem__(self, section):
        return self.values[section]

    @property
    def seed(self) -> int:
        return self.values["run"]["seed"]

    @property
    def out_dir(self) -> Path:
        return Path(self.values["run"]["out_dir"])

    def snapshot(self) -> dict:
        """JSON-friendly copy of every resolved value."""
        return {s: dict(v) for s, v in self.values.items()}

    # -- typed views used by the pipeline stages ---------------------------

    def noise_spec(self) -> NoiseSpec:
        d = self["data"]
        return _build("data", NoiseSpec, psd_slope=d["psd_slope"], psd_scale=d["psd_scale"],
                      f_knee=d["f_knee"], seed=self.seed)

    def detectors(self):
        return [DETECTORS[name] for name in self["data"]["detectors"]]

    def model_config(self) -> ModelConfig:
        return _build("model", ModelConfig, signal_length=self["data"]["signal_length"], **self["model"])

    def train_config(self) -> TrainConfig:
        t = self["train"]
        beta = _build("train", BetaSchedule, beta_min=t["beta_min"], beta_max=t["beta_max"],
                      warmup_epochs=t["warmup_epochs"])
        return _build("train", TrainConfig, epochs=t["epochs"], batch_size=t["batch_size"],
                      learning_rate=t["learning_rate"], clip_norm=t["clip_norm"], beta=beta,
                      val_fraction=t["val_fraction"], seed=self.seed)

    def fit_config(self) -> FitConfig:
        p = {k: v for k, v in self["prior"].items() if k not in ("hist_bins", "target_sample")}
        return _build("prior", FitConfig, seed=self.seed, **p)

    def hmc_config(self) -> HmcConfig:
        h = {k: v for k, v in self["hmc"].items() if k != "target"}
        return _build("hmc", HmcConfig, seed=self.seed, **h)


def _build(section, cls, **kwargs):
    try:
        return cls(**kwargs)
    except ValueError as exc:
        msg = str(exc)
        raise ConfigError(msg if msg.startswith(section + ".") else f"[{section}] {msg}") from None


def _validate(cfg: PipelineConfig) -> None:
    d = cfg["data"]
    if d["m_step"] <= 0:
        raise ConfigError("data.m_step must be positive")
    if d["m_min"] <= 0:
        raise ConfigError("data.m_min must be positive")
    if d["m_max"] < d["m_min"]:
        raise ConfigError(f"data.m_max={d['m_max']} is below data.m_min={d['m_min']}: empty mass range")
    if not d["detectors"]:
        raise ConfigError("data.detectors is empty")
    unknown = [name for name in d["detectors"] if name not in DETECTORS]
    if unknown:
        raise ConfigError(f"data.detectors: unknown ids {unknown}; choose from {sorted(DETECTORS)}")
    if d["signal_length"] < 1:
        raise ConfigError("data.signal_length must be >= 1")
    if d["f_min"] <= 0 or d["f_min"] >= d["sample_rate"] / 2:
        raise ConfigError("data.f_min must lie in (0, sample_rate / 2)")
    if d["amplitude"] <= 0:
        raise ConfigError("data.amplitude must be positive")
    if not 0.0 <= cfg["train"]["val_fraction"] < 1.0:
        raise ConfigError("train.val_fraction must be in [0, 1)")
    if cfg["prior"]["hist_bins"] < 1:
        raise ConfigError("prior.hist_bins must be >= 1")
    if cfg["prior"]["target_sample"] < 0:
        raise ConfigError("prior.target_sample must be >= 0")
    if cfg["hmc"]["target"] not in HMC_TARGETS:
        raise ConfigError(f"hmc.target must be one of {HMC_TARGETS}")
    if cfg["report"]["null_samples"] < 1:
        raise ConfigError("report.null_samples must be >= 1")
    if cfg.seed < 0:
        raise ConfigError("run.seed must be non-negative")
    # building the typed views surfaces their own range checks
    cfg.noise_spec()
    cfg.model_config()
    cfg.train_config()
    cfg.fit_config()
    cfg.hmc_config()


def parse(text: str) -> PipelineConfig:
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unreadable config: {exc}") from None
    cfg = PipelineConfig()
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {section}.{key}")
            conv = SCHEMA[section][key][0]
            try:
                cfg.values[section][key] = conv(raw)
            except ValueError:
                raise ConfigError(f"{section}.{key}: cannot parse {raw!r}") from None
    _validate(cfg)
    return cfg


def load(path) -> PipelineConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse(path.read_text())


def default_text() -> str:
    """The full default config, one commented key per line."""
    lines = []
    for section, keys in SCHEMA.items():
        lines.append(f"[{section}]")
        for key, (_, default, doc) in keys.items():
            if isinstance(default, list):
                default = ",".join(default)
            elif isinstance(default, bool):
                default = str(default).lower()
            lines.append(f"# {doc}")
            lines.append(f"{key} = {default}")
        lines.append("")
    return "\n".join(lines)
