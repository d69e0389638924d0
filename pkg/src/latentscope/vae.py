"""Denoising convolutional VAE with a fixed mixture-of-Gaussians latent prior."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import mixture, nn
from .mixture import MixtureModel
from .signalgen import Dataset

log = logging.getLogger(__name__)

LOGVAR_CLAMP = 10.0
HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


@dataclass
class ModelConfig:
    signal_length: int = 256
    latent_dim: int = 16
    channels: int = 8
    kernel_size: int = 5
    pool: int = 2
    dropout: float = 0.1
    hidden: int = 64
    upsample_stride: int = 2
    prior_offset: float = 1.0
    prior_variance: float = 1.0

    def __post_init__(self):
        for name in ("signal_length", "latent_dim", "channels", "kernel_size", "pool", "hidden",
                     "upsample_stride"):
            if getattr(self, name) < 1:
                raise ValueError(f"model.{name} must be >= 1")
        if self.kernel_size > self.signal_length:
            raise ValueError("model.kernel_size exceeds signal_length")
        if self.prior_variance <= 0:
            raise ValueError("model.prior_variance must be positive")


@dataclass
class BetaSchedule:
    beta_min: float = 0.0
    beta_max: float = 1e-3
    warmup_epochs: int = 32

    def __post_init__(self):
        if self.beta_min < 0 or self.beta_max < self.beta_min:
            raise ValueError("need 0 <= beta_min <= beta_max")
        if self.warmup_epochs < 0:
            raise ValueError("warmup_epochs must be non-negative")


def beta_at(epoch: int, schedule: BetaSchedule) -> float:
    """Linear warm-up from beta_min to beta_max, constant afterwards."""
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    if epoch >= schedule.warmup_epochs:
        return schedule.beta_max
    frac = epoch / schedule.warmup_epochs
    return schedule.beta_min + (schedule.beta_max - schedule.beta_min) * frac


@dataclass
class TrainConfig:
    epochs: int = 64
    batch_size: int = 32
    learning_rate: float = 0.001
    clip_norm: float = 1.0
    beta: BetaSchedule = field(default_factory=BetaSchedule)
    val_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


@dataclass
class LatentCode:
    z_mean: np.ndarray
    z_log_var: np.ndarray
    z: np.ndarray


@dataclass
class TrainReport:
    recon: list = field(default_factory=list)
    kl: list = field(default_factory=list)
    beta: list = field(default_factory=list)
    total: list = field(default_factory=list)
    val_recon: list = field(default_factory=list)

    def __len__(self):
        return len(self.recon)


def reparameterize(z_mean, z_log_var, eps):
    z_mean, z_log_var, eps = (np.asarray(a, dtype=np.float64) for a in (z_mean, z_log_var, eps))
    if not (z_mean.shape == z_log_var.shape == eps.shape):
        raise ValueError("z_mean, z_log_var and eps must have equal shapes")
    return z_mean + np.exp(0.5 * z_log_var) * eps


def kl_term(code: LatentCode, prior: MixtureModel):
    """Single-sample estimate log q(z | mean, log_var) - log p(z), summed over dimensions.

    Batched codes (2-D) give one value per row.
    """
    z = np.asarray(code.z, dtype=np.float64)
    with np.errstate(invalid="ignore", over="ignore"):
        log_q = -HALF_LOG_2PI - 0.5 * code.z_log_var - 0.5 * (z - code.z_mean) ** 2 / np.exp(code.z_log_var)
        log_p = mixture.log_density(prior, z)
        out = np.sum(log_q - log_p, axis=-1)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite KL estimate")
    return out


def _decoder_seed_length(target, kernel, stride, n_up=2):
    """Smallest start length whose transposed-conv stack reaches ``target``."""
    length = 1
    while True:
        out = length
        for _ in range(n_up):
            out = (out - 1) * stride + kernel
        if out >= target:
            return length
        length += 1


class VaeModel:
    def __init__(self, config: ModelConfig | None = None, seed: int = 0):
        self.config = c = config or ModelConfig()
        rng = np.random.default_rng(seed)
        conv_len = c.signal_length - c.kernel_size + 1
        pooled = conv_len // c.pool
        if pooled < 1:
            raise ValueError("signal too short for the configured conv/pool sizes")
        self.encoder = nn.Sequential([
            nn.Conv1d(1, c.channels, c.kernel_size, rng=rng),
            nn.ReLU(),
            nn.MaxPool1d(c.pool),
            nn.Dropout(c.dropout),
            nn.Reshape((-1,)),
            nn.Dense(c.channels * pooled, c.hidden, rng=rng),
            nn.ReLU(),
            nn.Dense(c.hidden, 2 * c.latent_dim, rng=rng),
        ])
        seed_len = _decoder_seed_length(c.signal_length, c.kernel_size, c.upsample_stride)
        self.decoder = nn.Sequential([
            nn.Dense(c.latent_dim, c.hidden, rng=rng),
            nn.ReLU(),
            nn.Dense(c.hidden, c.channels * seed_len, rng=rng),
            nn.ReLU(),
            nn.Reshape((c.channels, seed_len)),
            nn.ConvTranspose1d(c.channels, c.channels, c.kernel_size, c.upsample_stride, rng=rng),
            nn.ReLU(),
            nn.ConvTranspose1d(c.channels, 1, c.kernel_size, c.upsample_stride, rng=rng),
            nn.Crop(c.signal_length),
            nn.Reshape((-1,)),
        ])
        self.prior = MixtureModel.symmetric_pair(c.prior_offset, c.prior_variance)
        self.seed = seed

    # -- parameters ---------------------------------------------------------

    def named_params(self):
        yield from self.encoder.named_params("encoder.")
        yield from self.decoder.named_params("decoder.")

    def parameters(self):
        return [value for _, _, _, value in self.named_params()]

    def gradients(self):
        return [layer.grads[name] for _, layer, name, _ in self.named_params()]

    def state_dict(self):
        state = {key: value for key, _, _, value in self.named_params()}
        state["prior.weights"] = self.prior.weights
        state["prior.means"] = self.prior.means
        state["prior.variances"] = self.prior.variances
        return state

    def load_state_dict(self, state):
        for key, layer, name, value in self.named_params():
            if key not in state:
                raise KeyError(f"missing tensor {key}")
            if state[key].shape != value.shape:
                raise ValueError(f"{key}: shape {state[key].shape} != {value.shape}")
            layer.params[name] = np.array(state[key], dtype=np.float64)
        if "prior.weights" in state:
            self.prior = MixtureModel(state["prior.weights"], state["prior.means"], state["prior.variances"])

    def save(self, path):
        nn.save_params(path, self.state_dict())

    @classmethod
    def load(cls, path, config: ModelConfig | None = None):
        model = cls(config)
        model.load_state_dict(nn.load_params(path))
        return model

    # -- forward passes -----------------------------------------------------

    def _check_input(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.config.signal_length:
            raise ValueError(f"expected signals of length {self.config.signal_length}, got shape {x.shape}")
        return x

    def _encode(self, x, training=False, rng=None):
        head = self.encoder.forward(x[:, None, :], training=training, rng=rng)
        d = self.config.latent_dim
        raw_log_var = head[:, d:]
        return head[:, :d], np.clip(raw_log_var, -LOGVAR_CLAMP, LOGVAR_CLAMP), raw_log_var

    def encode(self, x):
        """Deterministic (inference-mode) encoder; returns (z_mean, z_log_var)."""
        x = self._check_input(x)
        z_mean, z_log_var, _ = self._encode(x)
        return z_mean, z_log_var

    def decode(self, z):
        z = np.asarray(z, dtype=np.float64)
        if z.ndim == 1:
            z = z[None, :]
        if z.ndim != 2 or z.shape[1] != self.config.latent_dim:
            raise ValueError(f"expected latents of size {self.config.latent_dim}, got shape {z.shape}")
        return self.decoder.forward(z)

    def loss(self, noisy, clean, eps, beta, rng=None, training=True, backward=True):
        """Batch objective: per-signal summed squared error plus beta * KL, averaged over rows.

        Fills layer grads when ``backward``.

        ``eps`` is the standard-normal draw for the reparameterization and
        ``rng`` drives dropout. Returns (recon, kl, total).
        """
        noisy, clean = self._check_input(noisy), self._check_input(clean)
        n = noisy.shape[0]
        z_mean, z_log_var, raw_log_var = self._encode(noisy, training=training, rng=rng)
        sigma = np.exp(0.5 * z_log_var)
        z = z_mean + sigma * eps
        x_hat = self.decoder.forward(z, training=training, rng=rng)

        resid = x_hat - clean
        with np.errstate(over="ignore", invalid="ignore"):
            recon = float(np.sum(resid ** 2) / n)
        kl_rows = kl_term(LatentCode(z_mean, z_log_var, z), self.prior)
        kl = float(np.mean(kl_rows))
        total = recon + beta * kl
        if not np.isfinite(total):
            raise FloatingPointError(f"non-finite loss (recon={recon}, kl={kl})")
        if not backward:
            return recon, kl, total

        g_z = self.decoder.backward(2.0 * resid / n)
        score = mixture.grad_log_density_analytic(self.prior, z)
        # KL per element: -log(2pi)/2 - lv/2 - eps^2/2 - log p(mean + sigma * eps)
        g_z = g_z - beta * score / n
        g_mean = g_z
        g_log_var = g_z * 0.5 * sigma * eps - beta * 0.5 / n
        g_log_var = g_log_var * (np.abs(raw_log_var) < LOGVAR_CLAMP)
        self.encoder.backward(np.concatenate([g_mean, g_log_var], axis=1))
        return recon, kl, total


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def train(dataset: Dataset, config: TrainConfig | None = None,
          model_config: ModelConfig | None = None) -> tuple[VaeModel, TrainReport]:
    """SGD training of the denoising VAE: encoder sees noisy rows, loss targets clean rows."""
    from .signalgen import train_val_split

    config = config or TrainConfig()
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    model_config = model_config or ModelConfig(signal_length=dataset.noisy.shape[1])
    model = VaeModel(model_config, seed=config.seed)
    opt = nn.OptimizerConfig(config.learning_rate, config.clip_norm)
    train_rows, val_rows = train_val_split(len(dataset), config.val_fraction, config.seed)
    noisy, clean = dataset.noisy[train_rows], dataset.clean[train_rows]

    shuffle_ss, eps_ss, drop_ss, val_ss = np.random.SeedSequence(config.seed).spawn(4)
    shuffle_rng = np.random.default_rng(shuffle_ss)
    eps_rng = np.random.default_rng(eps_ss)
    drop_rng = np.random.default_rng(drop_ss)
    report = TrainReport()
    params = model.parameters()
    for epoch in range(config.epochs):
        beta = beta_at(epoch, config.beta)
        recon_sum = kl_sum = 0.0
        for rows in _batches(len(train_rows), config.batch_size, shuffle_rng):
            eps = eps_rng.standard_normal((rows.size, model_config.latent_dim))
            recon, kl, _ = model.loss(noisy[rows], clean[rows], eps, beta, rng=drop_rng)
            nn.sgd_step(params, model.gradients(), opt)
            recon_sum += recon * rows.size
            kl_sum += kl * rows.size
        recon_avg = recon_sum / len(train_rows)
        kl_avg = kl_sum / len(train_rows)
        report.recon.append(recon_avg)
        report.kl.append(kl_avg)
        report.beta.append(beta)
        report.total.append(recon_avg + beta * kl_avg)
        if val_rows.size:
            val_eps = np.random.default_rng(val_ss).standard_normal((val_rows.size, model_config.latent_dim))
            vr, _, _ = model.loss(dataset.noisy[val_rows], dataset.clean[val_rows], val_eps, beta,
                                  training=False, backward=False)
            report.val_recon.append(vr)
        log.info("epoch %d recon=%.6g kl=%.6g beta=%.3g", epoch, recon_avg, kl_avg, beta)
    return model, report
