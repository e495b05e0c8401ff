"""MAP estimation, Hamiltonian Monte Carlo and posterior summaries.

Both MAP and HMC run in *whitened* coordinates: every GP-distributed latent
block ``x`` is written as ``x = mu + chol(K_prior) z``. The map is linear, so
the posterior mode and the samples (mapped back) are those of the original
parameterization; it only removes the prior's ill-conditioning from the
geometry the optimizer and the integrator see.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateData, NonFinite, NotPositiveDefinite, ZeroVariance
from .kernels import ModelKind
from .latent import init_coreg_windowed, init_loglen_semivariogram, prior_factor
from .linalg import cholesky
from .model import ModelParams, PriorSpec, log_posterior, param_layout, value_and_grad

log = logging.getLogger(__name__)

OPTIMIZERS = ("gd", "adam")


@dataclass(frozen=True)
class MapConfig:
    learning_rate: float = 0.01
    max_iters: int = 2000
    grad_tol: float = 1e-4
    window_w: float | None = None
    restarts: int = 0
    seed: int = 0
    max_halvings: int = 40
    optimizer: str = "gd"

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {sorted(OPTIMIZERS)}, got {self.optimizer!r}")
        if self.max_iters < 0:
            raise ValueError("max_iters must be non-negative")
        if self.restarts < 0:
            raise ValueError("restarts must be non-negative")


@dataclass(frozen=True)
class HmcConfig:
    step_size: float = 0.4
    n_leapfrog: int = 10
    n_samples: int = 1000
    n_burnin: int = 500
    seed: int = 0

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if self.n_leapfrog < 1 or self.n_samples < 1 or self.n_burnin < 0:
            raise ValueError("n_leapfrog and n_samples must be >= 1, n_burnin >= 0")


@dataclass(frozen=True)
class PosteriorSample:
    params: ModelParams
    log_post: float
    accepted: bool


@dataclass
class MapResult:
    params: ModelParams
    log_post: float
    trace: list = field(default_factory=list)
    grad_norm: float = np.inf
    n_iters: int = 0
    converged: bool = False


def make_rng(seed) -> np.random.Generator:
    """PCG64 generator; the algorithm is fixed so runs are reproducible."""
    return np.random.Generator(np.random.PCG64(seed))


class Whitener:
    """Linear map between whitened ``z`` and the unconstrained parameter vector."""

    def __init__(self, template: ModelParams):
        self.template = template
        n, m, p = template.n_times, template.n_dims, template.priors
        layout = param_layout(template.kind, n, m)
        self.size = layout["size"]
        self.blocks = []
        if template.kind is ModelKind.SMGP:
            return
        starts = [(layout["loglen"].start, p.loglen_prior)]
        if template.kind is ModelKind.NMGP:
            starts.append((layout["logsd"].start, p.logsd_prior))
        else:
            c0 = layout["coreg"].start
            starts += [(c0 + k * n, p.coreg_prior) for k in range(m * (m + 1) // 2)]
        for start, prior in starts:
            self.blocks.append((slice(start, start + n), prior.mean, prior_factor(template.times, prior)))

    def to_theta(self, z):
        theta = np.array(z, dtype=float)
        for sl, mean, chol in self.blocks:
            theta[sl] = mean + chol.lower @ z[sl]
        return theta

    def to_z(self, theta):
        z = np.array(theta, dtype=float)
        for sl, mean, chol in self.blocks:
            z[sl] = chol.half_solve(theta[sl] - mean)
        return z

    def grad_z(self, g_theta):
        g = np.array(g_theta, dtype=float)
        for sl, _, chol in self.blocks:
            g[sl] = chol.lower.T @ g_theta[sl]
        return g

    def params(self, z) -> ModelParams:
        return self.template.from_vector(self.to_theta(z))


def _objective(whitener, priors, ep, jacobian):
    """``f(z, grad=True) -> (value, gradient or None)``; failures give ``-inf``."""

    def f(z, grad=True):
        try:
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                params = whitener.params(z)
                if not grad:
                    val = log_posterior(params, priors, ep, jacobian)
                    return (val if np.isfinite(val) else -np.inf), None
                val, g = value_and_grad(params, priors, ep, jacobian)
        except (NotPositiveDefinite, FloatingPointError, ValueError):
            return -np.inf, None
        if not np.isfinite(val) or not np.all(np.isfinite(g)):
            return -np.inf, None
        return val, whitener.grad_z(g)

    return f


def initial_params(ep, kind, priors: PriorSpec, window_w=None) -> ModelParams:
    """Data-driven starting point.

    Log length-scales come from the empirical semivariogram, L(t) from
    windowed sample covariances (their time-average for constant L), log
    signal sd is zero and the noise variance is 5% of the mean channel variance.
    """
    kind = ModelKind.parse(kind)
    if ep.n_times < 4:
        raise DegenerateData(f"need at least 4 observations, got {ep.n_times}")
    loglen = init_loglen_semivariogram(ep)
    lt = init_coreg_windowed(ep, window_w)
    chan_var = np.nanvar(ep.obs, axis=0)
    noise = 0.05 * float(np.mean(chan_var))
    if not noise > 0:
        raise DegenerateData("observations have zero variance")
    if kind is ModelKind.GNMGP:
        lt = lt.copy()
        for i, j in zip(*np.tril_indices(ep.n_dims)):
            lt[:, i, j] = smooth_to_prior(lt[:, i, j], ep.times, priors.coreg_prior)
        loglen = smooth_to_prior(loglen, ep.times, priors.loglen_prior)
        return ModelParams(kind, ep.times, noise, lt, loglen, None, priors)
    bmean = np.einsum("nij,nkj->ik", lt, lt) / ep.n_times
    lconst = cholesky(bmean).lower
    if kind is ModelKind.SMGP:
        return ModelParams(kind, ep.times, noise, lconst, float(loglen[0]), 0.0, priors)
    loglen = smooth_to_prior(loglen, ep.times, priors.loglen_prior)
    logsd = smooth_to_prior(np.zeros(ep.n_times), ep.times, priors.logsd_prior)
    return ModelParams(kind, ep.times, noise, lconst, loglen, logsd, priors)


def smooth_to_prior(values, times, prior, rel_noise: float = 1e-2) -> np.ndarray:
    """Kriging smoother ``mu + K (K + tau I)^-1 (x - mu)`` with ``tau = rel_noise * amp^2``.

    Rough heuristic estimates have huge density penalties under smooth GP
    priors; smoothing keeps the starting point inside the prior's support.
    """
    values = np.asarray(values, dtype=float)
    k = prior.cov(times)
    tau = rel_noise * prior.amp**2
    chol = cholesky(k + tau * np.eye(times.size))
    return prior.mean + k @ chol.solve(values - prior.mean)


def gradient_ascent(f, z0, cfg: MapConfig):
    """Fixed-rate gradient ascent with step halving until the objective improves.

    Returns ``(z, value, grad, trace, n_iters, converged)``; ``trace`` holds the
    objective at the start and after every accepted step, so it never decreases.
    """
    z = np.array(z0, dtype=float)
    val, g = f(z)
    if not np.isfinite(val):
        raise NonFinite("log posterior is not finite at the initial point")
    trace = [val]
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        if np.max(np.abs(g)) <= cfg.grad_tol:
            converged = True
            it -= 1
            break
        # trial points need only the value; the gradient is taken once accepted
        step = cfg.learning_rate
        for _ in range(cfg.max_halvings + 1):
            z_new = z + step * g
            val_new, _ = f(z_new, grad=False)
            if np.isfinite(val_new) and val_new >= val:
                val_new, g_new = f(z_new)
                if g_new is not None and val_new >= val:
                    break
            step *= 0.5
        else:
            converged = True
            it -= 1
            break
        z, val, g = z_new, val_new, g_new
        trace.append(val)
    else:
        converged = bool(np.max(np.abs(g)) <= cfg.grad_tol)
    return z, val, g, trace, it, converged


def adam_ascent(f, z0, cfg: MapConfig, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """Adam ascent at ``cfg.learning_rate``, returning the best iterate seen.

    Non-finite proposals are rejected and the moment estimates kept. ``trace``
    holds the best log posterior so far, so it never decreases either.
    """
    z = np.array(z0, dtype=float)
    val, g = f(z)
    if not np.isfinite(val):
        raise NonFinite("log posterior is not finite at the initial point")
    best = (z.copy(), val, g)
    trace = [val]
    m1 = np.zeros_like(z)
    m2 = np.zeros_like(z)
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        if np.max(np.abs(g)) <= cfg.grad_tol:
            converged = True
            it -= 1
            break
        m1 = beta1 * m1 + (1 - beta1) * g
        m2 = beta2 * m2 + (1 - beta2) * g * g
        step = cfg.learning_rate * (m1 / (1 - beta1**it)) / (np.sqrt(m2 / (1 - beta2**it)) + eps)
        z_new = z + step
        val_new, g_new = f(z_new)
        if g_new is not None:
            z, val, g = z_new, val_new, g_new
            if val > best[1]:
                best = (z.copy(), val, g)
        trace.append(best[1])
    z, val, g = best
    return z, val, g, trace, it, converged or bool(np.max(np.abs(g)) <= cfg.grad_tol)


def map_fit(ep, kind, priors: PriorSpec | None = None, cfg: MapConfig | None = None,
            init: ModelParams | None = None) -> MapResult:
    """MAP estimate by ascent on the log marginal posterior.

    ``cfg.optimizer`` selects fixed-rate gradient ascent with step halving
    (``"gd"``) or Adam (``"adam"``); both use ``cfg.learning_rate``.

    Restart 0 starts from :func:`initial_params` (or ``init``); further
    restarts perturb that point in whitened space with the configured seed.
    The restart with the highest final log posterior is returned.
    """
    priors = priors or PriorSpec()
    cfg = cfg or MapConfig()
    if init is None:
        init = initial_params(ep, kind, priors, cfg.window_w)
    whitener = Whitener(init)
    f = _objective(whitener, priors, ep, jacobian=False)
    z0 = whitener.to_z(init.to_vector())
    rng = make_rng(cfg.seed)
    ascend = adam_ascent if cfg.optimizer == "adam" else gradient_ascent
    best = None
    for r in range(cfg.restarts + 1):
        start = z0 if r == 0 else z0 + 0.1 * rng.standard_normal(z0.size)
        try:
            z, val, g, trace, n_it, conv = ascend(f, start, cfg)
        except NonFinite:
            if r == 0:
                raise
            continue
        log.debug("restart %d: log posterior %.6g after %d iterations", r, val, n_it)
        if best is None or val > best.log_post:
            best = MapResult(whitener.params(z), val, trace, float(np.max(np.abs(g))), n_it, conv)
    return best


def hmc(logp_grad, x0, cfg: HmcConfig, rng=None):
    """Hamiltonian Monte Carlo with identity mass matrix.

    ``logp_grad(x)`` returns ``(log density, gradient)``; a non-finite density
    rejects the proposal. Returns ``(samples, log_densities, accepted)`` for the
    ``cfg.n_samples`` iterations after ``cfg.n_burnin`` discarded ones.
    """
    rng = make_rng(cfg.seed) if rng is None else rng
    x = np.array(x0, dtype=float)
    lp, g = logp_grad(x)
    if not np.isfinite(lp):
        raise NonFinite("log density is not finite at the initial point")
    eps = cfg.step_size
    total = cfg.n_burnin + cfg.n_samples
    xs = np.empty((cfg.n_samples, x.size))
    lps = np.empty(cfg.n_samples)
    acc = np.zeros(cfg.n_samples, dtype=bool)
    for it in range(total):
        p0 = rng.standard_normal(x.size)
        u = rng.uniform()
        xn, p, gn = x.copy(), p0 + 0.5 * eps * g, g
        lpn = lp
        for step in range(cfg.n_leapfrog):
            xn = xn + eps * p
            lpn, gn = logp_grad(xn)
            if not np.isfinite(lpn):
                break
            if step < cfg.n_leapfrog - 1:
                p = p + eps * gn
        accepted = False
        if np.isfinite(lpn):
            p = p + 0.5 * eps * gn
            log_ratio = (lpn - 0.5 * p @ p) - (lp - 0.5 * p0 @ p0)
            if np.log(u) < log_ratio:
                x, lp, g = xn, lpn, gn
                accepted = True
        k = it - cfg.n_burnin
        if k >= 0:
            xs[k], lps[k], acc[k] = x, lp, accepted
    return xs, lps, acc


def hmc_sample(ep, kind, priors: PriorSpec | None, cfg: HmcConfig, init: ModelParams) -> list[PosteriorSample]:
    """Sample the marginal posterior (with the noise-variance Jacobian) by HMC."""
    priors = priors or PriorSpec()
    if ModelKind.parse(kind) is not init.kind:
        raise ValueError(f"init is a {init.kind.value} state, asked to sample {kind}")
    whitener = Whitener(init)
    f = _objective(whitener, priors, ep, jacobian=True)
    z0 = whitener.to_z(init.to_vector())
    zs, lps, acc = hmc(f, z0, cfg)
    return [PosteriorSample(whitener.params(z), float(lp), bool(a)) for z, lp, a in zip(zs, lps, acc)]


def derive_corr_sd(sample, t: float):
    """Correlation matrix and per-output standard deviation at time ``t``.

    Accepts a :class:`PosteriorSample` or :class:`ModelParams`.
    """
    params = sample.params if isinstance(sample, PosteriorSample) else sample
    lat = params.latent_at(np.atleast_1d(float(t)))
    L = lat["lfac"][0]
    B = L @ L.T
    var = np.diag(B).copy()
    if np.any(var <= 1e-12):
        raise ZeroVariance(f"output variance {var.min():.3g} at t={t}")
    sd = np.sqrt(var)
    corr = B / np.outer(sd, sd)
    corr = np.clip(0.5 * (corr + corr.T), -1.0, 1.0)
    np.fill_diagonal(corr, 1.0)
    return corr, sd
