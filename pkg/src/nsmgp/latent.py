"""Latent input-dependent functions: log length-scale, log signal sd, L(t) entries.

Each latent function is represented by its values at the observed timestamps
and carries a GP prior ``GP(mean, RBF(amp, len))``. Values anywhere else are
obtained by noise-free GP interpolation (:func:`conditional_mean`).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DegenerateData
from .kernels import rbf_matrix
from .linalg import CholFactor, cholesky, mvn_logpdf


@dataclass(frozen=True)
class GpPrior:
    mean: float = 0.0
    amp: float = 1.0
    len: float = 0.1

    def __post_init__(self):
        if not (self.amp > 0 and self.len > 0):
            raise ValueError(f"GP prior needs amp > 0 and len > 0, got {self}")

    def cov(self, t1, t2=None) -> np.ndarray:
        return rbf_matrix(t1, t1 if t2 is None else t2, self.amp, self.len)


@dataclass(frozen=True)
class LatentProcess:
    """Values of one latent function at the knots of a time grid.

    ``kind`` is ``"loglen"``, ``"logsd"`` or ``("coreg", i, j)`` with ``i >= j``.
    """

    kind: object
    values: np.ndarray
    prior: GpPrior

    def __post_init__(self):
        values = np.array(self.values, dtype=float).ravel()
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        if isinstance(self.kind, tuple):
            _, i, j = self.kind
            if i < j:
                raise ValueError("coregionalization entries must be lower triangular (i >= j)")


@lru_cache(maxsize=64)
def _prior_factor_cached(key: bytes, mean: float, amp: float, len: float) -> CholFactor:
    times = np.frombuffer(key, dtype=float)
    return cholesky(rbf_matrix(times, times, amp, len))


def prior_factor(times, prior: GpPrior) -> CholFactor:
    """Cholesky factor of the prior covariance at ``times`` (cached)."""
    times = np.ascontiguousarray(times, dtype=float).ravel()
    return _prior_factor_cached(times.tobytes(), prior.mean, prior.amp, prior.len)


def prior_logpdf(p: LatentProcess, times) -> float:
    chol = prior_factor(times, p.prior)
    return mvn_logpdf(p.values, p.prior.mean, None, chol=chol)


def conditional_mean(p: LatentProcess, times, query) -> np.ndarray:
    """Noise-free GP interpolation of ``p.values`` to ``query`` times.

    Queries that coincide with a knot return the stored value exactly.
    """
    times = np.asarray(times, dtype=float).ravel()
    query = np.asarray(query, dtype=float).ravel()
    if times.size == 0:
        return np.full(query.shape, p.prior.mean)
    chol = prior_factor(times, p.prior)
    alpha = chol.solve(p.values - p.prior.mean)
    out = p.prior.mean + p.prior.cov(query, times) @ alpha
    pos = np.searchsorted(times, query)
    pos = np.clip(pos, 0, times.size - 1)
    hit = times[pos] == query
    out[hit] = p.values[pos[hit]]
    return out


def semivariogram(times, values, nbins: int = 15, max_lag=None):
    """Empirical semivariogram over equal-width lag bins on ``(0, max_lag]``.

    Returns ``(centers, gamma, counts)``; bins without pairs have NaN gamma.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if max_lag is None:
        max_lag = 0.5 * (times[-1] - times[0])
    i, j = np.triu_indices(times.size, k=1)
    lag = times[j] - times[i]
    sq = 0.5 * (values[j] - values[i]) ** 2
    edges = np.linspace(0.0, max_lag, nbins + 1)
    keep = lag <= max_lag
    idx = np.clip(np.digitize(lag[keep], edges[1:-1]), 0, nbins - 1)
    counts = np.bincount(idx, minlength=nbins)
    sums = np.bincount(idx, weights=sq[keep], minlength=nbins)
    with np.errstate(invalid="ignore", divide="ignore"):
        gamma = np.where(counts > 0, sums / counts, np.nan)
    return 0.5 * (edges[:-1] + edges[1:]), gamma, counts


def init_loglen_semivariogram(ep, nbins: int = 15, sill_fraction: float = 0.95) -> np.ndarray:
    """Initial log length-scale vector from the empirical semivariogram range.

    Per channel, the range is the first lag-bin centre where the semivariogram
    reaches ``sill_fraction`` of the channel variance (the last centre if it
    never does). Ranges are averaged over channels.
    """
    if ep.n_times < 4:
        raise DegenerateData(f"need at least 4 observations, got {ep.n_times}")
    ranges = []
    for m in range(ep.n_dims):
        present = ep.mask[:, m]
        t, y = ep.times[present], ep.obs[present, m]
        if t.size < 4:
            continue
        sill = float(np.var(y))
        if not sill > 1e-14 * max(1.0, float(np.mean(y * y))):
            continue
        centers, gamma, _ = semivariogram(t, y, nbins, max_lag=0.5 * (ep.times[-1] - ep.times[0]))
        reached = np.flatnonzero(gamma >= sill_fraction * sill)
        ranges.append(centers[reached[0]] if reached.size else centers[-1])
    if not ranges:
        raise DegenerateData("every channel is constant; semivariogram sill is zero")
    return np.full(ep.n_times, np.log(np.mean(ranges)))


def init_coreg_windowed(ep, w=None) -> np.ndarray:
    """Per-time Cholesky factors of windowed sample covariances.

    Uses rows with every channel present inside ``[t - w, t + w]``; when fewer
    than ``M + 1`` such rows exist, the ``M + 1`` nearest complete rows are used.
    Returns an ``(N, M, M)`` array of lower-triangular factors.
    """
    n, m = ep.n_times, ep.n_dims
    if w is None:
        w = 0.1 * (ep.times[-1] - ep.times[0])
    full = ep.mask.all(axis=1)
    tc, yc = ep.times[full], ep.obs[full]
    if tc.size < m + 1:
        raise DegenerateData(f"need at least {m + 1} fully observed rows, got {tc.size}")
    out = np.empty((n, m, m))
    for k, t in enumerate(ep.times):
        sel = np.abs(tc - t) <= w
        if sel.sum() < m + 1:
            sel = np.zeros(tc.size, dtype=bool)
            sel[np.argsort(np.abs(tc - t), kind="stable")[: m + 1]] = True
        cov = np.atleast_2d(np.cov(yc[sel], rowvar=False))
        out[k] = _safe_cholesky(cov)
    return out


def _safe_cholesky(cov) -> np.ndarray:
    scale = float(np.mean(np.diag(cov)))
    if not scale > 0:
        return np.zeros_like(cov)
    try:
        return cholesky(cov).lower
    except Exception:
        # rank-deficient beyond the jitter cap: factor a floored version
        w, u = np.linalg.eigh(cov)
        floor = 1e-4 * scale
        return cholesky((u * np.maximum(w, floor)) @ u.T).lower
