"""Covariance functions and covariance-matrix assembly.

Three model classes share the same building blocks:

* ``SMGP``  - stationary, ``K^f = B (x) K_rbf``
* ``NMGP``  - separable nonstationary, ``K^f = B (x) K_ns`` with
  ``K_ns(t, t') = s(t) s(t') gibbs(t, t')``
* ``GNMGP`` - nonseparable, ``K^f(t, t', m, m') = gibbs(t, t') [L(t) L(t')^T]_{mm'}``

All scalar kernels broadcast over numpy arrays. Matrices indexed by
(time, output) use dimension-major order: entry ``(n, m)`` maps to row
``m * N + n``.
"""
from __future__ import annotations

from enum import Enum

import numpy as np

from .errors import DimensionMismatch


class ModelKind(str, Enum):
    SMGP = "SMGP"
    NMGP = "NMGP"
    GNMGP = "GNMGP"

    @classmethod
    def parse(cls, value) -> "ModelKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise ValueError(f"unknown model kind {value!r}; expected SMGP, NMGP or GNMGP") from None


def rbf(t, t2, amp, len):
    """Squared-exponential kernel ``amp^2 exp(-(t - t2)^2 / (2 len^2))``."""
    d = np.subtract(t, t2)
    return np.square(amp) * np.exp(-0.5 * np.square(d / len))


def gibbs(t, t2, l1, l2):
    """Gibbs kernel with length-scales ``l1 = ell(t)`` and ``l2 = ell(t2)``."""
    l1 = np.asarray(l1, dtype=float)
    l2 = np.asarray(l2, dtype=float)
    s = l1 * l1 + l2 * l2
    d = np.subtract(t, t2)
    return np.sqrt(2.0 * l1 * l2 / s) * np.exp(-np.square(d) / s)


def nmgp_k(t, t2, l1, l2, s1, s2):
    return np.multiply(s1, s2) * gibbs(t, t2, l1, l2)


def gnmgp_block(t, t2, L1, L2, kval):
    """Cross-covariance block ``kval * L1 @ L2.T`` between outputs at ``t`` and ``t2``."""
    L1 = np.atleast_2d(np.asarray(L1, dtype=float))
    L2 = np.atleast_2d(np.asarray(L2, dtype=float))
    if L1.shape != L2.shape or L1.shape[0] != L1.shape[1]:
        raise DimensionMismatch(f"incompatible coregionalization factors {L1.shape}, {L2.shape}")
    return kval * (L1 @ L2.T)


def rbf_matrix(t1, t2, amp, len):
    t1 = np.asarray(t1, dtype=float).ravel()
    t2 = np.asarray(t2, dtype=float).ravel()
    return rbf(t1[:, None], t2[None, :], amp, len)


def gibbs_matrix(t1, t2, len1, len2):
    """Gibbs kernel matrix for length-scale vectors aligned with ``t1`` and ``t2``."""
    t1 = np.asarray(t1, dtype=float).ravel()
    t2 = np.asarray(t2, dtype=float).ravel()
    return gibbs(t1[:, None], t2[None, :], np.asarray(len1)[:, None], np.asarray(len2)[None, :])


def gibbs_dlog_first(t1, t2, len1, len2, k=None):
    """Derivative of :func:`gibbs_matrix` with respect to ``log len1[i]`` (row-wise).

    Entry ``(i, j)`` is ``d k(t1_i, t2_j) / d log ell(t1_i)``.
    """
    t1 = np.asarray(t1, dtype=float).ravel()
    t2 = np.asarray(t2, dtype=float).ravel()
    a = np.square(np.asarray(len1, dtype=float))[:, None]
    b = np.square(np.asarray(len2, dtype=float))[None, :]
    s = a + b
    d2 = np.square(t1[:, None] - t2[None, :])
    if k is None:
        k = gibbs_matrix(t1, t2, len1, len2)
    return k * (0.5 - a / s + 2.0 * d2 * a / (s * s))


def tril_from_entries(entries, m: int) -> np.ndarray:
    """Lower-triangular ``m x m`` matrix from its row-major lower entries."""
    out = np.zeros((m, m))
    out[np.tril_indices(m)] = entries
    return out


def time_major_to_dim_major(n: int, m: int) -> np.ndarray:
    """Index permutation ``p`` with ``x_dim_major = x_time_major[p]``.

    Time-major order stacks ``f(t_1), f(t_2), ...``; dimension-major stacks
    ``f_1(t_1..t_N), f_2(t_1..t_N), ...``.
    """
    return np.arange(n * m).reshape(n, m).T.ravel()


def cross_cov(params, t1, t2, lat1=None, lat2=None) -> np.ndarray:
    """Covariance between ``vec f(t1)`` and ``vec f(t2)``, dimension-major on both sides.

    ``lat1``/``lat2`` hold latent values at ``t1``/``t2`` as produced by
    ``ModelParams.latent_at``; they are computed on demand when omitted.
    """
    t1 = np.asarray(t1, dtype=float).ravel()
    t2 = np.asarray(t2, dtype=float).ravel()
    lat1 = params.latent_at(t1) if lat1 is None else lat1
    lat2 = params.latent_at(t2) if lat2 is None else lat2
    k = gibbs_matrix(t1, t2, lat1["len"], lat2["len"])
    m = params.n_dims
    n1, n2 = t1.size, t2.size
    # prod[n, a, q, b] = [L(t1_n) L(t2_q)^T]_{ab}, one BLAS call
    prod = (np.reshape(lat1["lfac"], (n1 * m, m)) @ np.reshape(lat2["lfac"], (n2 * m, m)).T).reshape(n1, m, n2, m)
    prod *= k[:, None, :, None]
    return prod.transpose(1, 0, 3, 2).reshape(m * n1, m * n2)


def assemble_cov(params, times=None) -> np.ndarray:
    """Full ``(N*M) x (N*M)`` covariance of the latent ``vec f`` at ``times``.

    ``times`` defaults to the knots of ``params``. Separable kinds are built as
    Kronecker products; GNMGP from per-pair blocks. The result is symmetrized.
    """
    kind = ModelKind.parse(params.kind)
    if times is None:
        times = params.times
    times = np.asarray(times, dtype=float).ravel()
    if kind is ModelKind.GNMGP:
        kf = cross_cov(params, times, times)
    else:
        kf = np.kron(params.coreg_matrix(), time_kernel(params, times))
    return 0.5 * (kf + kf.T)


def time_kernel(params, times=None) -> np.ndarray:
    """The ``N x N`` temporal factor of a separable model."""
    kind = ModelKind.parse(params.kind)
    if kind is ModelKind.GNMGP:
        raise ValueError("GNMGP covariance has no separable time factor")
    if times is None:
        times = params.times
    lat = params.latent_at(times)
    if kind is ModelKind.SMGP:
        return rbf_matrix(times, times, params.amp, params.length)
    sd = lat["sd"]
    return sd[:, None] * sd[None, :] * gibbs_matrix(times, times, lat["len"], lat["len"])
