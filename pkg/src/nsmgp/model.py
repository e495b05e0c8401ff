"""Parameter containers, priors and the log marginal posterior with gradients.

The unconstrained parameter vector is laid out as::

    [log noise_var,
     SMGP : tril(L) entries, log length, log amplitude
     NMGP : tril(L) entries, loglen[0..N), logsd[0..N)
     GNMGP: L_ij(t)[0..N) for each (i, j) in row-major tril order, loglen[0..N)]
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import gammaln

from .errors import DimensionMismatch, NotPositiveDefinite
from .kernels import (
    ModelKind,
    assemble_cov,
    gibbs_dlog_first,
    gibbs_matrix,
    rbf_matrix,
    time_kernel,
)
from .latent import GpPrior, LatentProcess, conditional_mean, prior_factor, prior_logpdf
from .linalg import LOG_2PI, cholesky, kron_mvprod, mvn_logpdf, sym_eigen


@dataclass(frozen=True)
class PriorSpec:
    """Hyperpriors: IG(a, b) noise variance, N(0, c) constant L entries, GP latent priors."""

    ig_a: float = 1.0
    ig_b: float = 1.0
    coreg_var_c: float = 25.0
    loglen_prior: GpPrior = field(default_factory=lambda: GpPrior(0.0, 5.0, 0.1))
    logsd_prior: GpPrior = field(default_factory=lambda: GpPrior(0.0, 5.0, 0.1))
    coreg_prior: GpPrior = field(default_factory=lambda: GpPrior(0.0, 5.0, 0.1))

    def __post_init__(self):
        if not (self.ig_a > 0 and self.ig_b > 0 and self.coreg_var_c > 0):
            raise ValueError("ig_a, ig_b and coreg_var_c must be positive")


@dataclass(frozen=True)
class ModelParams:
    """Complete parameter state of one model.

    ``coreg`` is a constant lower-triangular ``M x M`` factor for SMGP/NMGP and
    an ``(N, M, M)`` stack of per-knot factors for GNMGP. ``loglen``/``logsd``
    are scalars for SMGP (log length-scale, log amplitude), length-``N``
    vectors for NMGP; GNMGP has ``logsd=None``.
    """

    kind: ModelKind
    times: np.ndarray
    noise_var: float
    coreg: np.ndarray
    loglen: object
    logsd: object = None
    priors: PriorSpec = field(default_factory=PriorSpec)

    def __post_init__(self):
        kind = ModelKind.parse(self.kind)
        object.__setattr__(self, "kind", kind)
        times = np.asarray(self.times, dtype=float).ravel()
        object.__setattr__(self, "times", times)
        if not self.noise_var > 0:
            raise ValueError(f"noise_var must be positive, got {self.noise_var}")
        coreg = np.array(self.coreg, dtype=float)
        n = times.size
        if kind is ModelKind.GNMGP:
            if coreg.ndim != 3 or coreg.shape[0] != n or coreg.shape[1] != coreg.shape[2]:
                raise DimensionMismatch(f"GNMGP coreg must be (N, M, M) with N={n}, got {coreg.shape}")
            coreg = np.tril(coreg)
            if self.logsd is not None:
                raise ValueError("GNMGP has no signal-sd process")
        else:
            coreg = np.atleast_2d(coreg)
            if coreg.shape[0] != coreg.shape[1]:
                raise DimensionMismatch(f"coreg must be square, got {coreg.shape}")
            coreg = np.tril(coreg)
        object.__setattr__(self, "coreg", coreg)
        if kind is ModelKind.SMGP:
            object.__setattr__(self, "loglen", float(self.loglen))
            object.__setattr__(self, "logsd", float(self.logsd))
        else:
            ll = np.array(self.loglen, dtype=float).ravel()
            if ll.size != n:
                raise DimensionMismatch(f"loglen has length {ll.size}, expected {n}")
            object.__setattr__(self, "loglen", ll)
            if kind is ModelKind.NMGP:
                ls = np.array(self.logsd, dtype=float).ravel()
                if ls.size != n:
                    raise DimensionMismatch(f"logsd has length {ls.size}, expected {n}")
                object.__setattr__(self, "logsd", ls)

    @property
    def n_dims(self) -> int:
        return self.coreg.shape[-1]

    @property
    def n_times(self) -> int:
        return self.times.size

    @property
    def length(self) -> float:
        return float(np.exp(self.loglen))

    @property
    def amp(self) -> float:
        return float(np.exp(self.logsd))

    def coreg_matrix(self) -> np.ndarray:
        """Constant ``B = L L^T`` of a separable model."""
        if self.kind is ModelKind.GNMGP:
            raise ValueError("GNMGP has a time-varying coregionalization; use latent_at")
        return self.coreg @ self.coreg.T

    def latent_processes(self) -> list[LatentProcess]:
        p = self.priors
        if self.kind is ModelKind.SMGP:
            return []
        out = [LatentProcess("loglen", self.loglen, p.loglen_prior)]
        if self.kind is ModelKind.NMGP:
            out.append(LatentProcess("logsd", self.logsd, p.logsd_prior))
        else:
            for i, j in zip(*np.tril_indices(self.n_dims)):
                out.append(LatentProcess(("coreg", int(i), int(j)), self.coreg[:, i, j], p.coreg_prior))
        return out

    def latent_at(self, t) -> dict:
        """Length-scales, signal sds and effective L factors at times ``t``.

        The effective factor ``lfac`` satisfies ``cov(f(t), f(t')) =
        gibbs(t, t') lfac(t) lfac(t')^T`` for every model kind.
        """
        t = np.asarray(t, dtype=float).ravel()
        m = self.n_dims
        if self.kind is ModelKind.SMGP:
            return {
                "len": np.full(t.size, self.length),
                "sd": np.full(t.size, self.amp),
                "lfac": np.broadcast_to(self.amp * self.coreg, (t.size, m, m)),
            }
        at_knots = t.shape == self.times.shape and np.array_equal(t, self.times)
        p = self.priors

        def interp(values, prior):
            if at_knots:
                return np.asarray(values)
            return conditional_mean(LatentProcess("tmp", values, prior), self.times, t)

        length = np.exp(interp(self.loglen, p.loglen_prior))
        if self.kind is ModelKind.NMGP:
            sd = np.exp(interp(self.logsd, p.logsd_prior))
            return {"len": length, "sd": sd, "lfac": sd[:, None, None] * self.coreg[None]}
        lfac = np.zeros((t.size, m, m))
        for i, j in zip(*np.tril_indices(m)):
            lfac[:, i, j] = interp(self.coreg[:, i, j], p.coreg_prior)
        return {"len": length, "sd": None, "lfac": lfac}

    # unconstrained vector ------------------------------------------------

    def to_vector(self) -> np.ndarray:
        parts = [[np.log(self.noise_var)]]
        tri = np.tril_indices(self.n_dims)
        if self.kind is ModelKind.SMGP:
            parts += [self.coreg[tri], [self.loglen, self.logsd]]
        elif self.kind is ModelKind.NMGP:
            parts += [self.coreg[tri], self.loglen, self.logsd]
        else:
            parts += [self.coreg[:, i, j] for i, j in zip(*tri)]
            parts.append(self.loglen)
        return np.concatenate([np.asarray(p, dtype=float).ravel() for p in parts])

    def from_vector(self, theta) -> "ModelParams":
        """New parameters of the same kind and shape from an unconstrained vector."""
        theta = np.asarray(theta, dtype=float).ravel()
        layout = param_layout(self.kind, self.n_times, self.n_dims)
        if theta.size != layout["size"]:
            raise DimensionMismatch(f"expected {layout['size']} parameters, got {theta.size}")
        m, n = self.n_dims, self.n_times
        tri = np.tril_indices(m)
        noise = float(np.exp(theta[0]))
        if self.kind is ModelKind.GNMGP:
            coreg = np.zeros((n, m, m))
            block = theta[layout["coreg"]].reshape(len(tri[0]), n)
            coreg[:, tri[0], tri[1]] = block.T
            return replace(self, noise_var=noise, coreg=coreg, loglen=theta[layout["loglen"]].copy())
        coreg = np.zeros((m, m))
        coreg[tri] = theta[layout["coreg"]]
        if self.kind is ModelKind.SMGP:
            return replace(self, noise_var=noise, coreg=coreg,
                           loglen=float(theta[layout["loglen"]][0]),
                           logsd=float(theta[layout["logsd"]][0]))
        return replace(self, noise_var=noise, coreg=coreg,
                       loglen=theta[layout["loglen"]].copy(), logsd=theta[layout["logsd"]].copy())


def param_layout(kind, n: int, m: int) -> dict:
    """Slices of each parameter block inside the unconstrained vector."""
    kind = ModelKind.parse(kind)
    ntri = m * (m + 1) // 2
    if kind is ModelKind.SMGP:
        sizes = [("noise", 1), ("coreg", ntri), ("loglen", 1), ("logsd", 1)]
    elif kind is ModelKind.NMGP:
        sizes = [("noise", 1), ("coreg", ntri), ("loglen", n), ("logsd", n)]
    else:
        sizes = [("noise", 1), ("coreg", ntri * n), ("loglen", n)]
    out, start = {}, 0
    for name, size in sizes:
        out[name] = slice(start, start + size)
        start += size
    out["size"] = start
    return out


# likelihood ----------------------------------------------------------------


def kron_fast_loglik(B, K, noise_var: float, y) -> float:
    """``log N(y | 0, B (x) K + noise_var I)`` from the eigendecompositions of B and K."""
    B = np.atleast_2d(np.asarray(B, dtype=float))
    K = np.atleast_2d(np.asarray(K, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if y.size != B.shape[0] * K.shape[0]:
        raise DimensionMismatch(f"y has length {y.size}, expected {B.shape[0] * K.shape[0]}")
    eb, ek = sym_eigen(B), sym_eigen(K)
    db = _clip_rounding(eb.eigvals)
    dk = _clip_rounding(ek.eigvals)
    d = np.outer(db, dk).ravel() + noise_var
    if np.any(d <= 0):
        raise NotPositiveDefinite("Kronecker spectrum plus noise is not positive")
    yt = kron_mvprod(eb.eigvecs.T, ek.eigvecs.T, y)
    return float(-0.5 * np.sum(yt * yt / d) - 0.5 * np.sum(np.log(d)) - 0.5 * y.size * LOG_2PI)


def _clip_rounding(w):
    tol = 1e-10 * max(float(np.max(np.abs(w))), 1e-300)
    if np.any(w < -tol):
        raise NotPositiveDefinite(f"Kronecker factor has eigenvalue {w.min():.3g}")
    return np.maximum(w, 0.0)


def _obs_cov(params: ModelParams, ep) -> tuple[np.ndarray, np.ndarray]:
    idx = ep.observed_index()
    kf = assemble_cov(params)
    sigma = kf[np.ix_(idx, idx)]
    sigma[np.diag_indices_from(sigma)] += params.noise_var
    return sigma, idx


def _check(params: ModelParams, ep):
    if ep.n_times != params.n_times or ep.n_dims != params.n_dims:
        raise DimensionMismatch(
            f"episode is {ep.n_times}x{ep.n_dims}, parameters are {params.n_times}x{params.n_dims}"
        )
    if not np.array_equal(ep.times, params.times):
        raise DimensionMismatch("episode times differ from parameter knots")


def log_likelihood(params: ModelParams, ep, use_kron: bool | None = None) -> float:
    """Log marginal likelihood of the observed entries of ``ep``."""
    _check(params, ep)
    separable = params.kind is not ModelKind.GNMGP
    if use_kron is None:
        use_kron = separable and ep.complete
    if use_kron:
        if not (separable and ep.complete):
            raise ValueError("Kronecker path needs a separable model and complete data")
        return kron_fast_loglik(params.coreg_matrix(), time_kernel(params), params.noise_var, ep.vec_y())
    sigma, idx = _obs_cov(params, ep)
    return mvn_logpdf(ep.vec_y()[idx], 0.0, sigma)


def log_prior(params: ModelParams, priors: PriorSpec, jacobian: bool = False) -> float:
    """Log prior density in the unconstrained parameterization."""
    v = np.log(params.noise_var)
    a, b = priors.ig_a, priors.ig_b
    lp = a * np.log(b) - gammaln(a) - (a + 1.0) * v - b / params.noise_var
    if jacobian:
        lp += v
    times = params.times
    if params.kind is not ModelKind.GNMGP:
        entries = params.coreg[np.tril_indices(params.n_dims)]
        c = priors.coreg_var_c
        lp += float(np.sum(-0.5 * entries**2 / c - 0.5 * np.log(2 * np.pi * c)))
    if params.kind is ModelKind.SMGP:
        for x, pr in ((params.loglen, priors.loglen_prior), (params.logsd, priors.logsd_prior)):
            lp += -0.5 * ((x - pr.mean) / pr.amp) ** 2 - 0.5 * np.log(2 * np.pi * pr.amp**2)
        return float(lp)
    lp += prior_logpdf(LatentProcess("loglen", params.loglen, priors.loglen_prior), times)
    if params.kind is ModelKind.NMGP:
        lp += prior_logpdf(LatentProcess("logsd", params.logsd, priors.logsd_prior), times)
    else:
        for i, j in zip(*np.tril_indices(params.n_dims)):
            lp += prior_logpdf(LatentProcess(("coreg", i, j), params.coreg[:, i, j], priors.coreg_prior), times)
    return float(lp)


def log_posterior(params: ModelParams, priors: PriorSpec, ep, jacobian: bool = False) -> float:
    """Unnormalized log marginal posterior.

    ``jacobian=True`` adds the log-Jacobian of the ``log noise_var`` transform
    (the density HMC samples); ``False`` gives the MAP objective.
    """
    return log_likelihood(params, ep) + log_prior(params, priors, jacobian)


# gradients -----------------------------------------------------------------


def _lik_weights(params: ModelParams, ep):
    """Full-size ``W = alpha alpha^T - Sigma^-1`` (zero rows/cols for missing entries)."""
    sigma, idx = _obs_cov(params, ep)
    chol = cholesky(sigma)
    y = ep.vec_y()[idx]
    inv = chol.inverse()
    alpha = inv @ y
    lik = float(-0.5 * (y @ alpha) - 0.5 * chol.logdet() - 0.5 * idx.size * LOG_2PI)
    w_obs = np.outer(alpha, alpha) - inv
    nm = params.n_times * params.n_dims
    if idx.size == nm:
        w = w_obs
    else:
        w = np.zeros((nm, nm))
        w[np.ix_(idx, idx)] = w_obs
    return lik, w, w_obs


def grad_log_likelihood(params: ModelParams, ep) -> tuple[float, np.ndarray]:
    """Log likelihood and its gradient with respect to the unconstrained vector.

    Uses ``d log N / d theta = 0.5 tr(W dSigma/dtheta)`` with
    ``W = alpha alpha^T - Sigma^-1``, evaluated block-wise per kernel.
    """
    _check(params, ep)
    n, m = params.n_times, params.n_dims
    lik, w, w_obs = _lik_weights(params, ep)
    wt = w.reshape(m, n, m, n)
    layout = param_layout(params.kind, n, m)
    g = np.zeros(layout["size"])
    g[0] = 0.5 * params.noise_var * np.trace(w_obs)
    tri = np.tril_indices(m)
    t = params.times

    if params.kind is ModelKind.GNMGP:
        lfac = params.coreg
        lens = np.exp(params.loglen)
        k = gibbs_matrix(t, t, lens, lens)
        # time-major view of W: wtm[n, a, q, b]
        wtm = wt.transpose(1, 0, 3, 2)
        flat = lfac.reshape(n * m, m)
        gl = ((wtm * k[:, None, :, None]).reshape(n * m, n * m) @ flat).reshape(n, m, m)
        g[layout["coreg"]] = gl[:, tri[0], tri[1]].T.ravel()
        prod = (flat @ flat.T).reshape(n, m, n, m)
        s = np.einsum("naqb,naqb->nq", wtm, prod)
        g[layout["loglen"]] = np.sum(s * gibbs_dlog_first(t, t, lens, lens, k), axis=1)
        return lik, g

    B = params.coreg_matrix()
    K = time_kernel(params)
    T = np.einsum("anbq,nq->ab", wt, K, optimize=True)
    g[layout["coreg"]] = (T @ params.coreg)[tri]
    S = np.einsum("anbq,ab->nq", wt, B, optimize=True)
    if params.kind is ModelKind.SMGP:
        d2 = (t[:, None] - t[None, :]) ** 2
        g[layout["loglen"]] = 0.5 * np.sum(S * K * d2) / params.length**2
        g[layout["logsd"]] = np.sum(S * K)
        return lik, g
    lens = np.exp(params.loglen)
    sd = np.exp(params.logsd)
    G = gibbs_matrix(t, t, lens, lens)
    g[layout["logsd"]] = np.sum(S * K, axis=1)
    g[layout["loglen"]] = np.sum(S * np.outer(sd, sd) * gibbs_dlog_first(t, t, lens, lens, G), axis=1)
    return lik, g


def grad_log_prior(params: ModelParams, priors: PriorSpec, jacobian: bool = False) -> np.ndarray:
    n, m = params.n_times, params.n_dims
    layout = param_layout(params.kind, n, m)
    g = np.zeros(layout["size"])
    g[0] = -(priors.ig_a + 1.0) + priors.ig_b / params.noise_var + (1.0 if jacobian else 0.0)
    tri = np.tril_indices(m)
    t = params.times

    def gp_grad(values, prior):
        return -prior_factor(t, prior).solve(np.asarray(values) - prior.mean)

    if params.kind is ModelKind.GNMGP:
        g[layout["coreg"]] = np.concatenate(
            [gp_grad(params.coreg[:, i, j], priors.coreg_prior) for i, j in zip(*tri)]
        )
        g[layout["loglen"]] = gp_grad(params.loglen, priors.loglen_prior)
        return g
    g[layout["coreg"]] = -params.coreg[tri] / priors.coreg_var_c
    if params.kind is ModelKind.SMGP:
        for name, x, pr in (("loglen", params.loglen, priors.loglen_prior),
                            ("logsd", params.logsd, priors.logsd_prior)):
            g[layout[name]] = -(x - pr.mean) / pr.amp**2
        return g
    g[layout["loglen"]] = gp_grad(params.loglen, priors.loglen_prior)
    g[layout["logsd"]] = gp_grad(params.logsd, priors.logsd_prior)
    return g


def grad_log_posterior(params: ModelParams, priors: PriorSpec, ep, jacobian: bool = False) -> np.ndarray:
    """Exact gradient of :func:`log_posterior` over the unconstrained vector."""
    return grad_log_likelihood(params, ep)[1] + grad_log_prior(params, priors, jacobian)


def value_and_grad(params: ModelParams, priors: PriorSpec, ep, jacobian: bool = False):
    """``(log_posterior, grad_log_posterior)`` sharing one factorization."""
    lik, g = grad_log_likelihood(params, ep)
    return lik + log_prior(params, priors, jacobian), g + grad_log_prior(params, priors, jacobian)

