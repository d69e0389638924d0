"""Two-sample KS tests per latent dimension and Pearson correlation of latents."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import kolmogorov

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class KsResult:
    statistic: float
    p_value: float
    n1: int
    n2: int


def ks_statistic(a, b) -> float:
    """sup |F_a - F_b| by a merged sweep over the pooled order statistics.

    The gap is only read after every copy of a tied value has been consumed
    from both samples, so ties never produce a spurious jump.
    """
    a = np.sort(np.asarray(a, dtype=np.float64).ravel())
    b = np.sort(np.asarray(b, dtype=np.float64).ravel())
    n1, n2 = a.size, b.size
    if n1 == 0 or n2 == 0:
        raise ValueError("both samples must be nonempty")
    i = j = 0
    best = 0.0
    while i < n1 and j < n2:
        x = a[i] if a[i] <= b[j] else b[j]
        while i < n1 and a[i] == x:
            i += 1
        while j < n2 and b[j] == x:
            j += 1
        best = max(best, abs(i / n1 - j / n2))
    # once either sample is exhausted the gap only shrinks toward zero
    best = max(best, abs(i / n1 - j / n2))
    return best


def ks_two_sample(a, b) -> KsResult:
    """Exact D with an asymptotic Kolmogorov p-value at effective size n1*n2/(n1+n2)."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    d = ks_statistic(a, b)
    n_eff = a.size * b.size / (a.size + b.size)
    p = float(kolmogorov(np.sqrt(n_eff) * d))
    return KsResult(d, min(max(p, 0.0), 1.0), a.size, b.size)


def ks_report(z_noisy, posterior):
    """One KS comparison per column, in column order."""
    z_noisy = np.atleast_2d(np.asarray(z_noisy, dtype=np.float64))
    posterior = np.atleast_2d(np.asarray(posterior, dtype=np.float64))
    if z_noisy.shape[1] != posterior.shape[1]:
        raise ValueError(f"dimension mismatch: {z_noisy.shape[1]} vs {posterior.shape[1]}")
    return [ks_two_sample(z_noisy[:, d], posterior[:, d]) for d in range(z_noisy.shape[1])]


def pearson_matrix(z):
    """Pearson correlations between columns.

    Zero-variance columns get 0 off the diagonal (logged) so one dead latent
    does not poison the whole matrix. The diagonal is always 1.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] < 2:
        raise ValueError("need a 2-D matrix with at least two rows")
    centred = z - z.mean(axis=0)
    norms = np.sqrt(np.sum(centred ** 2, axis=0))
    dead = norms <= 1e-300
    if dead.any():
        log.warning("zero-variance latent columns %s; their correlations are set to 0",
                    np.flatnonzero(dead).tolist())
    unit = np.where(dead, 0.0, centred / np.where(dead, 1.0, norms))
    corr = np.clip(unit.T @ unit, -1.0, 1.0)
    corr = 0.5 * (corr + corr.T)
    np.fill_diagonal(corr, 1.0)
    return corr


def summarize(results) -> dict:
    d = np.array([r.statistic for r in results])
    return {"median_D": float(np.median(d)), "max_D": float(d.max()), "min_D": float(d.min()),
            "mean_D": float(d.mean())}
