"""Predictive distribution at new times and hold-out scoring (RMSE, LPD)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, EmptyHoldout
from .kernels import cross_cov, gibbs_matrix, time_major_to_dim_major
from .linalg import cholesky, mvn_logpdf


@dataclass(frozen=True)
class PredictiveDist:
    """Gaussian over ``vec f*`` at ``query`` times, dimension-major."""

    mean: np.ndarray
    cov: np.ndarray
    query: np.ndarray
    n_dims: int
    noise_var: float = 0.0

    def mean_table(self) -> np.ndarray:
        return self.mean.reshape(self.n_dims, -1).T

    def sd_table(self) -> np.ndarray:
        return np.sqrt(np.maximum(np.diag(self.cov), 0.0)).reshape(self.n_dims, -1).T


def cross_cov_time_major(params, t_train, t_query, lat_train=None, lat_query=None) -> np.ndarray:
    """``cov(vec[f_1..f_N], f*)`` with both sides stacked time by time.

    Row block ``n`` is ``k(t_n, t*_q) L(t_n) L(t*_q)^T``, i.e. the stacked
    ``k(t*, t_n) L(t_n)`` blocks multiplied by ``L(t*_q)^T``.
    """
    lat_train = params.latent_at(t_train) if lat_train is None else lat_train
    lat_query = params.latent_at(t_query) if lat_query is None else lat_query
    k = gibbs_matrix(t_train, t_query, lat_train["len"], lat_query["len"])
    n, q, m = k.shape[0], k.shape[1], params.n_dims
    blocks = (np.reshape(lat_train["lfac"], (n * m, m)) @ np.reshape(lat_query["lfac"], (q * m, m)).T)
    blocks = blocks.reshape(n, m, q, m) * k[:, None, :, None]
    return blocks.reshape(n * m, q * m)


def predict(params, ep, query) -> PredictiveDist:
    """Exact predictive distribution of the latent ``f`` at ``query`` times.

    ``ep`` is the training episode whose times are the knots of ``params``;
    missing entries are dropped from the conditioning set.
    """
    query = np.asarray(query, dtype=float).ravel()
    m = params.n_dims
    lat_q = params.latent_at(query)
    k_star = cross_cov(params, query, query, lat_q, lat_q)
    k_star = 0.5 * (k_star + k_star.T)
    if ep.n_times == 0:
        return PredictiveDist(np.zeros(query.size * m), k_star, query, m, params.noise_var)

    t = params.times
    if ep.times.shape != t.shape or not np.array_equal(ep.times, t):
        raise DimensionMismatch("training episode times differ from the parameter knots")
    lat_t = params.latent_at(t)
    idx = ep.observed_index()
    kf = cross_cov(params, t, t, lat_t, lat_t)
    sigma = 0.5 * (kf + kf.T)[np.ix_(idx, idx)]
    sigma[np.diag_indices_from(sigma)] += params.noise_var
    chol = cholesky(sigma)

    # time-major cross covariance, permuted to dimension-major on both sides
    ktm = cross_cov_time_major(params, t, query, lat_t, lat_q)
    rows = time_major_to_dim_major(t.size, m)
    cols = time_major_to_dim_major(query.size, m)
    kx = ktm[np.ix_(rows, cols)][idx]

    y = ep.vec_y()[idx]
    mean = kx.T @ chol.solve(y)
    v = chol.half_solve(kx)
    cov = k_star - v.T @ v
    return PredictiveDist(mean, 0.5 * (cov + cov.T), query, m, params.noise_var)


def _scored(pred: PredictiveDist, truth):
    truth = np.asarray(truth, dtype=float)
    if truth.ndim == 1:
        truth = truth[:, None]
    if truth.shape != (pred.query.size, pred.n_dims):
        raise ValueError(f"truth has shape {truth.shape}, expected {(pred.query.size, pred.n_dims)}")
    vec = truth.T.ravel()
    sel = np.flatnonzero(np.isfinite(vec))
    if sel.size == 0:
        raise EmptyHoldout("no observed hold-out entries to score")
    return vec, sel


def rmse(pred: PredictiveDist, truth) -> float:
    """Root mean square error of the predictive mean over present hold-out entries."""
    vec, sel = _scored(pred, truth)
    return float(np.sqrt(np.mean((pred.mean[sel] - vec[sel]) ** 2)))


def lpd(pred: PredictiveDist, truth, noise_var: float | None = None) -> float:
    """Joint log density of the held-out observations per scored scalar.

    Observations are scored under ``N(mean, cov + noise_var I)``.
    """
    vec, sel = _scored(pred, truth)
    noise = pred.noise_var if noise_var is None else noise_var
    cov = pred.cov[np.ix_(sel, sel)] + noise * np.eye(sel.size)
    return mvn_logpdf(vec[sel], pred.mean[sel], cov) / sel.size
