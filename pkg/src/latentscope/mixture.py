"""Univariate Gaussian mixtures: Bayesian fitting, densities, scores, sampling."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import digamma, gammaln, logsumexp

log = logging.getLogger(__name__)

LOG_2PI = np.log(2.0 * np.pi)
PRUNE_WEIGHT = 1e-3
MIN_VARIANCE = 1e-12


class DegenerateFitError(ValueError):
    """Raised when the samples carry no spread to fit a variance to."""


@dataclass(frozen=True)
class MixtureModel:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=np.float64))
        mu = np.atleast_1d(np.asarray(self.means, dtype=np.float64))
        var = np.atleast_1d(np.asarray(self.variances, dtype=np.float64))
        if not (w.shape == mu.shape == var.shape) or w.ndim != 1 or w.size == 0:
            raise ValueError("weights, means and variances must be equal-length 1-D arrays")
        if w.size > 10:
            raise ValueError(f"at most 10 components allowed, got {w.size}")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must lie on the probability simplex")
        if np.any(var <= 0) or not np.all(np.isfinite(var)) or not np.all(np.isfinite(mu)):
            raise ValueError("variances must be positive and parameters finite")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "variances", var)
        with np.errstate(divide="ignore"):
            # per-component constant reused by every density evaluation
            object.__setattr__(self, "_log_norm", np.log(w) - 0.5 * (LOG_2PI + np.log(var)))

    @property
    def n_components(self) -> int:
        return self.weights.size

    @classmethod
    def gaussian(cls, mean: float = 0.0, variance: float = 1.0) -> "MixtureModel":
        return cls(np.array([1.0]), np.array([mean]), np.array([variance]))

    @classmethod
    def symmetric_pair(cls, offset: float, variance: float = 1.0) -> "MixtureModel":
        return cls(np.array([0.5, 0.5]), np.array([-offset, offset]), np.array([variance, variance]))


@dataclass
class FitConfig:
    max_components: int = 10
    concentration: float = 1e-3
    max_iters: int = 1000
    tol: float = 1e-9
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.max_components <= 10:
            raise ValueError("max_components must be in [1, 10]")
        if self.concentration <= 0:
            raise ValueError("concentration must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.tol <= 0:
            raise ValueError("tol must be positive")


@dataclass
class FitTrace:
    """Lower-bound history of every coordinate-ascent run made during a fit."""

    runs: list = field(default_factory=list)
    n_components: int = 0
    lower_bound: float = float("nan")


def _component_logpdf(x, means, variances):
    x = np.asarray(x, dtype=np.float64)[..., None]
    return -0.5 * (LOG_2PI + np.log(variances) + (x - means) ** 2 / variances)


def log_density(model: MixtureModel, x):
    """log sum_k w_k N(x; mu_k, var_k), stable for far tails."""
    x = np.asarray(x, dtype=np.float64)[..., None]
    lp = model._log_norm - 0.5 * (x - model.means) ** 2 / model.variances
    top = lp.max(axis=-1)
    with np.errstate(invalid="ignore"):
        out = top + np.log(np.exp(lp - top[..., None]).sum(axis=-1))
    # non-finite x: every component is -inf (or nan), pass that through
    out = np.where(np.isfinite(top), out, top)
    return out if np.ndim(out) else float(out)


def responsibilities(model: MixtureModel, x):
    with np.errstate(divide="ignore"):
        logw = np.log(model.weights)
    lp = _component_logpdf(x, model.means, model.variances) + logw
    return np.exp(lp - logsumexp(lp, axis=-1, keepdims=True))


def grad_log_density_analytic(model: MixtureModel, x):
    r = responsibilities(model, x)
    x = np.asarray(x, dtype=np.float64)[..., None]
    out = np.sum(r * (model.means - x) / model.variances, axis=-1)
    return out if np.ndim(out) else float(out)


def grad_log_density_fd(model: MixtureModel, x, h: float = 1e-4):
    """Central finite-difference score of the mixture log-density."""
    if h <= 0:
        raise ValueError("h must be positive")
    x = np.asarray(x, dtype=np.float64)
    out = (log_density(model, x + h) - log_density(model, x - h)) / (2.0 * h)
    return out if np.ndim(out) else float(out)


def sample(model: MixtureModel, n: int, seed=0) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    comp = rng.choice(model.n_components, size=n, p=model.weights)
    eps = rng.standard_normal(n)
    return model.means[comp] + np.sqrt(model.variances[comp]) * eps


def histogram_pdf(samples, n_bins: int):
    """Density-normalized histogram; returns (edges, heights)."""
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    samples = np.asarray(samples, dtype=np.float64).ravel()
    if samples.size == 0:
        raise ValueError("samples must be nonempty")
    lo, hi = samples.min(), samples.max()
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    edges = np.linspace(lo, hi, n_bins + 1)
    counts, _ = np.histogram(samples, bins=edges)
    widths = np.diff(edges)
    heights = counts / (counts.sum() * widths)
    return edges, heights


def _kmeanspp(x, k, rng):
    centers = [x[rng.integers(x.size)]]
    d2 = (x - centers[0]) ** 2
    for _ in range(1, k):
        total = d2.sum()
        idx = rng.integers(x.size) if total <= 0 else rng.choice(x.size, p=d2 / total)
        centers.append(x[idx])
        d2 = np.minimum(d2, (x - x[idx]) ** 2)
    return np.array(centers)


@dataclass
class _Posterior:
    alpha: np.ndarray
    beta: np.ndarray
    m: np.ndarray
    a: np.ndarray
    b: np.ndarray


def _m_step(x, r, prior):
    alpha0, beta0, m0, a0, b0 = prior
    nk = r.sum(axis=0) + 10 * np.finfo(float).eps
    xbar = (r * x[:, None]).sum(axis=0) / nk
    sk = (r * (x[:, None] - xbar) ** 2).sum(axis=0) / nk
    beta = beta0 + nk
    post = _Posterior(
        alpha=alpha0 + nk,
        beta=beta,
        m=(beta0 * m0 + nk * xbar) / beta,
        a=a0 + 0.5 * nk,
        b=b0 + 0.5 * (nk * sk + beta0 * nk * (xbar - m0) ** 2 / beta),
    )
    return post, nk, xbar, sk


def _log_rho(x, post):
    e_log_pi = digamma(post.alpha) - digamma(post.alpha.sum())
    e_log_lam = digamma(post.a) - np.log(post.b)
    e_lam = post.a / post.b
    quad = 1.0 / post.beta + e_lam * (x[:, None] - post.m) ** 2
    return e_log_pi + 0.5 * e_log_lam - 0.5 * LOG_2PI - 0.5 * quad


def _log_dirichlet_norm(alpha):
    return gammaln(alpha.sum()) - gammaln(alpha).sum()


def lower_bound(r, post, nk, xbar, sk, prior) -> float:
    """Variational lower bound for the univariate Normal-Gamma mixture."""
    alpha0, beta0, m0, a0, b0 = prior
    k = post.alpha.size
    e_log_pi = digamma(post.alpha) - digamma(post.alpha.sum())
    e_log_lam = digamma(post.a) - np.log(post.b)
    e_lam = post.a / post.b

    lik = 0.5 * np.sum(
        nk * (e_log_lam - 1.0 / post.beta - e_lam * sk - e_lam * (xbar - post.m) ** 2 - LOG_2PI)
    )
    p_z = np.sum(r * e_log_pi)
    p_pi = _log_dirichlet_norm(np.full(k, alpha0)) + (alpha0 - 1.0) * e_log_pi.sum()
    p_mu_lam = np.sum(
        0.5 * np.log(beta0 / (2 * np.pi))
        + 0.5 * e_log_lam
        - 0.5 * beta0 / post.beta
        - 0.5 * beta0 * e_lam * (post.m - m0) ** 2
        + a0 * np.log(b0)
        - gammaln(a0)
        + (a0 - 1.0) * e_log_lam
        - b0 * e_lam
    )
    q_z = np.sum(r * np.log(np.where(r > 0, r, 1.0)))
    q_pi = np.sum((post.alpha - 1.0) * e_log_pi) + _log_dirichlet_norm(post.alpha)
    q_mu_lam = np.sum(
        0.5 * e_log_lam
        + 0.5 * np.log(post.beta / (2 * np.pi))
        - 0.5
        - gammaln(post.a)
        + (post.a - 1.0) * digamma(post.a)
        + np.log(post.b)
        - post.a
    )
    return float(lik + p_z + p_pi + p_mu_lam - q_z - q_pi - q_mu_lam)


def _logsumexp_rows(a):
    top = a.max(axis=1, keepdims=True)
    return top + np.log(np.exp(a - top).sum(axis=1, keepdims=True))


def _run_vb(x, r, prior, config, trace):
    """Coordinate ascent from responsibilities ``r`` until the bound settles."""
    post, nk, xbar, sk = _m_step(x, r, prior)
    prev = lower_bound(r, post, nk, xbar, sk, prior)
    history = [prev]
    converged = False
    for it in range(1, config.max_iters + 1):
        lr = _log_rho(x, post)
        r = np.exp(lr - _logsumexp_rows(lr))
        post, nk, xbar, sk = _m_step(x, r, prior)
        cur = lower_bound(r, post, nk, xbar, sk, prior)
        history.append(cur)
        if cur < prev - 1e-9 * max(1.0, abs(prev)):
            raise AssertionError(f"lower bound decreased at iteration {it}: {prev!r} -> {cur!r}")
        if cur - prev <= config.tol * max(1.0, abs(prev)):
            converged = True
            break
        prev = cur
    trace.runs.append(history)
    return post, r, history[-1], converged


def _split(x, r, j, rng):
    """Split component ``j`` in two by seeded 2-means++ over its hard members."""
    members = np.flatnonzero(r.argmax(axis=1) == j)
    if members.size < 4:
        return None
    xs = x[members]
    centers = _kmeanspp(xs, 2, rng)
    if centers[0] == centers[1]:
        return None
    for _ in range(10):
        side = np.abs(xs - centers[1]) < np.abs(xs - centers[0])
        if side.all() or not side.any():
            return None
        centers = np.array([xs[~side].mean(), xs[side].mean()])
    out = np.concatenate([r, np.zeros((x.size, 1))], axis=1)
    out[members[side], -1] = out[members[side], j]
    out[members[side], j] = 0.0
    return out


def fit(samples, config: FitConfig | None = None, trace: FitTrace | None = None) -> MixtureModel:
    """Fit a Bayesian Gaussian mixture with at most ``config.max_components``.

    Variational inference under a Dirichlet(concentration) weight prior and
    Normal-Gamma component priors centred on the sample moments. Components
    are grown from one by splitting; a split is kept only when it raises the
    variational lower bound, so the evidence decides how many survive.
    Components whose expected weight falls below ``PRUNE_WEIGHT`` are dropped
    and the remaining weights renormalized. The returned model holds posterior
    mean weights and means, and ``1 / E[precision]`` as variances.
    """
    config = config or FitConfig()
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size < 2 * config.max_components:
        raise ValueError(
            f"need at least {2 * config.max_components} samples, got {x.size}"
        )
    if not np.all(np.isfinite(x)):
        raise ValueError("samples must be finite")
    data_var = float(np.var(x))
    if data_var < MIN_VARIANCE:
        raise DegenerateFitError(f"sample variance {data_var:.3g} is degenerate")
    trace = trace if trace is not None else FitTrace()

    # m0 and b0/a0 at the sample moments make K=1 reproduce the MLE exactly.
    a0 = 1.0
    prior = (config.concentration, 1.0, float(x.mean()), a0, a0 * data_var)
    rng = np.random.default_rng(config.seed)

    post, r, best, converged = _run_vb(x, np.ones((x.size, 1)), prior, config, trace)
    while r.shape[1] < config.max_components:
        candidates = []
        for j in np.argsort(-post.alpha, kind="stable"):
            r_split = _split(x, r, j, rng)
            if r_split is not None:
                candidates.append(_run_vb(x, r_split, prior, config, trace))
        if not candidates:
            break
        cand = max(candidates, key=lambda c: c[2])
        if cand[2] <= best + config.tol * max(1.0, abs(best)):
            break
        post, r, best, converged = cand
        weights = post.alpha / post.alpha.sum()
        if np.any(weights < PRUNE_WEIGHT):
            r = r[:, weights >= PRUNE_WEIGHT]
            r /= r.sum(axis=1, keepdims=True)
            post, r, best, converged = _run_vb(x, r, prior, config, trace)
            break
    if not converged:
        log.warning("mixture fit stopped at max_iters=%d before converging", config.max_iters)
    trace.n_components = r.shape[1]
    trace.lower_bound = best

    weights = post.alpha / post.alpha.sum()
    keep = weights >= PRUNE_WEIGHT
    weights = weights[keep] / weights[keep].sum()
    means = post.m[keep]
    variances = post.b[keep] / post.a[keep]
    order = np.argsort(means, kind="stable")
    return MixtureModel(weights[order], means[order], variances[order])
