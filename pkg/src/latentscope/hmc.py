"""Hamiltonian Monte Carlo over univariate mixture log-densities.

Unit mass; H(q, p) = -log pi(q) + p**2 / 2. Chains for one latent dimension
are advanced together as arrays, but every chain draws from its own stream
seeded by (seed, dimension, chain), so results do not depend on how chains
are batched or on how many worker threads run the dimensions.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import mixture
from .mixture import MixtureModel

log = logging.getLogger(__name__)


@dataclass
class HmcConfig:
    step_size: float = 0.05
    n_leapfrog: int = 20
    n_samples: int = 2000
    burn_in: int = 500
    n_chains: int = 20
    fd_step: float = 1e-4
    gradient: str = "fd"
    seed: int = 0

    def __post_init__(self):
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.n_leapfrog < 1:
            raise ValueError("n_leapfrog must be >= 1")
        if self.n_samples < 1 or self.n_chains < 1:
            raise ValueError("n_samples and n_chains must be >= 1")
        if self.burn_in < 0:
            raise ValueError("burn_in must be non-negative")
        if self.fd_step <= 0:
            raise ValueError("fd_step must be positive")
        if self.gradient not in ("fd", "analytic"):
            raise ValueError("gradient must be 'fd' or 'analytic'")


@dataclass
class Target:
    log_prob: Callable
    grad: Callable

    @classmethod
    def from_mixture(cls, model: MixtureModel, gradient: str = "fd", fd_step: float = 1e-4) -> "Target":
        if gradient == "fd":
            return cls(lambda q: mixture.log_density(model, q),
                       lambda q: mixture.grad_log_density_fd(model, q, fd_step))
        return cls(lambda q: mixture.log_density(model, q),
                   lambda q: mixture.grad_log_density_analytic(model, q))


@dataclass
class HmcChain:
    positions: np.ndarray
    accepted: np.ndarray
    dim: int = 0
    n_chains: int = 1

    @property
    def acceptance_rate(self) -> float:
        return float(np.count_nonzero(self.accepted)) / self.accepted.size

    @property
    def n_proposals(self) -> int:
        return int(self.accepted.size)


def hamiltonian(target: Target, q, p):
    return -np.asarray(target.log_prob(q)) + 0.5 * np.square(p)


def leapfrog(q, p, grad, step_size, n_steps):
    """``n_steps`` rounds of half-kick, drift, half-kick; returns (q, p).

    Works elementwise on arrays. Diverging trajectories come back non-finite
    rather than raising.
    """
    q = np.array(q, dtype=np.float64)
    p = np.array(p, dtype=np.float64)
    g = grad(q)
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(n_steps):
            p = p + 0.5 * step_size * g
            q = q + step_size * p
            g = grad(q)
            p = p + 0.5 * step_size * g
    return q, p


def hmc_step(q, target: Target, config: HmcConfig, rng):
    """One Metropolis-corrected HMC transition; returns (q_next, accepted)."""
    q = float(q)
    if not np.isfinite(q):
        raise ValueError("q must be finite")
    p = rng.standard_normal()
    log_u = np.log(rng.random())
    q_new, p_new = leapfrog(q, p, target.grad, config.step_size, config.n_leapfrog)
    with np.errstate(over="ignore", invalid="ignore"):
        delta = hamiltonian(target, q, p) - hamiltonian(target, q_new, p_new)
    accept = bool(np.isfinite(q_new) and np.isfinite(p_new) and np.isfinite(delta) and log_u < delta)
    return (float(q_new) if accept else q), accept


def _chain_streams(seed, dim, chain_ids):
    return [np.random.default_rng([seed, dim, int(c)]) for c in chain_ids]


def _run_chains(inits, target: Target, config: HmcConfig, per_chain: int, dim: int, chain_ids=None):
    """Advance one chain per init together. Returns (positions, accepted) of shape (chains, per_chain).

    Chain ``i`` draws from stream ``(seed, dim, chain_ids[i])``; ids default to 0..n-1.
    """
    q = np.asarray(inits, dtype=np.float64).copy()
    if not np.all(np.isfinite(q)):
        raise ValueError("initial positions must be finite")
    chain_ids = range(q.size) if chain_ids is None else chain_ids
    if len(chain_ids) != q.size:
        raise ValueError("one chain id per initial position required")
    n_steps = config.burn_in + per_chain
    streams = _chain_streams(config.seed, dim, chain_ids)
    momenta = np.stack([s.standard_normal(n_steps) for s in streams])
    log_u = np.log(np.stack([s.random(n_steps) for s in streams]))

    positions = np.empty((q.size, per_chain))
    accepted = np.empty((q.size, per_chain), dtype=bool)
    h_q = -np.asarray(target.log_prob(q))
    for t in range(n_steps):
        p = momenta[:, t]
        q_new, p_new = leapfrog(q, p, target.grad, config.step_size, config.n_leapfrog)
        with np.errstate(over="ignore", invalid="ignore"):
            h_new = -np.asarray(target.log_prob(q_new))
            delta = (h_q + 0.5 * p * p) - (h_new + 0.5 * p_new * p_new)
        ok = np.isfinite(q_new) & np.isfinite(p_new) & np.isfinite(delta) & (log_u[:, t] < delta)
        q = np.where(ok, q_new, q)
        h_q = np.where(ok, h_new, h_q)
        if t >= config.burn_in:
            positions[:, t - config.burn_in] = q
            accepted[:, t - config.burn_in] = ok
    return positions, accepted


def run_chain(init: float, model: MixtureModel, config: HmcConfig, dim: int = 0) -> HmcChain:
    """Single chain from ``init``; keeps ``n_samples`` post-burn-in positions (rejections repeat)."""
    target = Target.from_mixture(model, config.gradient, config.fd_step)
    positions, accepted = _run_chains([init], target, config, config.n_samples, dim)
    chain = HmcChain(positions[0], accepted[0], dim, 1)
    if chain.acceptance_rate == 0:
        log.warning("dimension %d: every HMC proposal was rejected", dim)
    return chain


def run_dimension(inits, model: MixtureModel, config: HmcConfig, dim: int = 0) -> HmcChain:
    """One chain per init, concatenated chain-major and truncated to ``n_samples``."""
    inits = np.atleast_1d(np.asarray(inits, dtype=np.float64))
    per_chain = -(-config.n_samples // inits.size)
    target = Target.from_mixture(model, config.gradient, config.fd_step)
    positions, accepted = _run_chains(inits, target, config, per_chain, dim)
    chain = HmcChain(positions.ravel()[:config.n_samples], accepted.ravel()[:config.n_samples],
                     dim, inits.size)
    if chain.acceptance_rate == 0:
        log.warning("dimension %d: every HMC proposal was rejected", dim)
    return chain


def select_inits(z_init, n_chains):
    """Evenly spaced rows of the encoder latents used as chain starting points."""
    z_init = np.asarray(z_init, dtype=np.float64)
    if z_init.shape[0] <= n_chains:
        return z_init
    rows = np.linspace(0, z_init.shape[0] - 1, n_chains).round().astype(int)
    return z_init[rows]


def worker_count() -> int:
    raw = os.environ.get("LATENTSCOPE_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValueError(f"LATENTSCOPE_THREADS must be an integer, got {raw!r}") from None


def run_all_dimensions(z_init, models, config: HmcConfig, workers: int | None = None):
    """Independent per-dimension samplers started from the encoder latents.

    ``z_init`` is (n, D); ``models`` holds one mixture per dimension.
    Returns (chains, acceptance_rates).
    """
    z_init = np.asarray(z_init, dtype=np.float64)
    if z_init.ndim == 1:
        z_init = z_init[:, None]
    if z_init.shape[1] != len(models):
        raise ValueError(f"{z_init.shape[1]} latent dimensions but {len(models)} mixture models")
    starts = select_inits(z_init, config.n_chains)
    workers = workers or worker_count()

    def one(d):
        return run_dimension(starts[:, d], models[d], config, dim=d)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chains = list(pool.map(one, range(len(models))))
    else:
        chains = [one(d) for d in range(len(models))]
    return chains, np.array([c.acceptance_rate for c in chains])
