"""Synthetic bivariate series with time-varying length-scale, sds and correlation."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .episode import Episode
from .errors import NotPositiveDefinite
from .infer import derive_corr_sd, make_rng
from .kernels import ModelKind, assemble_cov
from .latent import GpPrior, LatentProcess, conditional_mean
from .linalg import cholesky
from .model import ModelParams, PriorSpec

CORR_CURVES = {
    "cos": lambda t: np.cos(np.pi * t),
    "zero": lambda t: np.zeros_like(t),
    "one": lambda t: np.ones_like(t),
}


@dataclass(frozen=True)
class SynthConfig:
    n_points: int = 200
    m_dims: int = 2
    seed: int = 0
    noise_var: float = 1e-6
    loglen_prior: GpPrior = field(default_factory=lambda: GpPrior(0.0, 4.0, 0.4))
    logsd_prior: GpPrior = field(default_factory=lambda: GpPrior(0.0, 1.0, 0.1))
    corr_fn: str = "cos"
    missing_frac: float = 0.0

    def __post_init__(self):
        if self.n_points < 2:
            raise ValueError("n_points must be at least 2")
        if self.m_dims not in (1, 2):
            raise ValueError("only one or two output dimensions are supported")
        if not self.noise_var > 0:
            raise ValueError("noise_var must be positive")
        if self.corr_fn not in CORR_CURVES:
            raise ValueError(f"unknown corr_fn {self.corr_fn!r}; choose from {sorted(CORR_CURVES)}")
        if not 0.0 <= self.missing_frac < 1.0:
            raise ValueError("missing_frac must be in [0, 1)")


@dataclass(frozen=True)
class SynthTruth:
    """Ground-truth latent processes at the generated timestamps."""

    times: np.ndarray
    loglen: np.ndarray
    logsd: np.ndarray  # (N, M)
    corr: np.ndarray
    coreg: np.ndarray  # (N, M, M)
    config: SynthConfig

    def as_params(self, priors: PriorSpec | None = None) -> ModelParams:
        """The truth as GNMGP parameters; by default ``loglen`` interpolates under its generating prior."""
        priors = priors or PriorSpec(loglen_prior=self.config.loglen_prior)
        return ModelParams(ModelKind.GNMGP, self.times, self.config.noise_var, self.coreg, self.loglen, None, priors)

    def corr_at(self, t):
        return CORR_CURVES[self.config.corr_fn](np.asarray(t, dtype=float))

    def logsd_at(self, t) -> np.ndarray:
        prior = self.config.logsd_prior
        return np.column_stack([
            conditional_mean(LatentProcess("logsd", self.logsd[:, m], prior), self.times, t)
            for m in range(self.logsd.shape[1])
        ])

    def loglen_at(self, t) -> np.ndarray:
        return conditional_mean(LatentProcess("loglen", self.loglen, self.config.loglen_prior), self.times, t)


def coreg_from_sd_corr(sd, r) -> np.ndarray:
    """Lower-triangular factors with output sds ``sd`` (N, M) and correlation ``r`` (N,)."""
    sd = np.atleast_2d(sd)
    n, m = sd.shape
    out = np.zeros((n, m, m))
    out[:, 0, 0] = sd[:, 0]
    if m == 2:
        out[:, 1, 0] = sd[:, 1] * r
        out[:, 1, 1] = sd[:, 1] * np.sqrt(np.clip(1.0 - r * r, 0.0, None))
    return out


def _draw(rng, times, prior: GpPrior, size=None):
    chol = cholesky(prior.cov(times))
    z = rng.standard_normal((times.size,) if size is None else (times.size, size))
    return prior.mean + chol.lower @ z


def generate(cfg: SynthConfig | None = None) -> tuple[Episode, SynthTruth]:
    """Draw one episode from the nonseparable model with the configured latent processes."""
    cfg = cfg or SynthConfig()
    rng = make_rng(cfg.seed)
    last = None
    for _ in range(4):
        times = np.sort(rng.uniform(0.0, 1.0, cfg.n_points))
        try:
            loglen = _draw(rng, times, cfg.loglen_prior)
            logsd = _draw(rng, times, cfg.logsd_prior, cfg.m_dims)
            r = CORR_CURVES[cfg.corr_fn](times)
            coreg = coreg_from_sd_corr(np.exp(logsd), r)
            params = ModelParams(ModelKind.GNMGP, times, cfg.noise_var, coreg, loglen, None)
            kf = assemble_cov(params)
            kf[np.diag_indices_from(kf)] += cfg.noise_var
            chol = cholesky(kf)
        except NotPositiveDefinite as exc:
            last = exc
            continue
        vec = chol.lower @ rng.standard_normal(kf.shape[0])
        y = vec.reshape(cfg.m_dims, cfg.n_points).T
        mask = np.ones_like(y, dtype=bool)
        if cfg.missing_frac > 0:
            mask = rng.uniform(size=y.shape) >= cfg.missing_frac
            empty = ~mask.any(axis=1)
            mask[empty, 0] = True
        ep = Episode(times, np.where(mask, y, np.nan), mask, f"synth-{cfg.seed}",
                     tuple(f"y{m + 1}" for m in range(cfg.m_dims)))
        truth = SynthTruth(times, loglen, logsd, r, coreg, cfg)
        return ep, truth
    raise NotPositiveDefinite(f"covariance not positive definite after 4 draws: {last}")


def default_grid(n: int = 100) -> np.ndarray:
    """Cell midpoints of ``n`` equal cells on (0, 1)."""
    return (np.arange(n) + 0.5) / n


def score_recovery(truth: SynthTruth, fitted, grid=None) -> dict:
    """RMSE of fitted correlation, sd and log length-scale processes against the truth.

    Also reports ``corr_sign_agreement``: the fraction of grid points with
    ``|r(t)| >= 0.1`` where the fitted correlation has the true sign.
    """
    grid = default_grid() if grid is None else np.asarray(grid, dtype=float).ravel()
    corr_fit, sd_fit = [], []
    for t in grid:
        c, s = derive_corr_sd(fitted, t)
        corr_fit.append(c[1, 0] if c.shape[0] > 1 else 1.0)
        sd_fit.append(s)
    corr_fit, sd_fit = np.array(corr_fit), np.array(sd_fit)
    corr_true = truth.corr_at(grid)
    sd_true = np.exp(truth.logsd_at(grid))
    lat = fitted.latent_at(grid)
    out = {
        "corr_rmse": float(np.sqrt(np.mean((corr_fit - corr_true) ** 2))),
        "sd_rmse": [float(v) for v in np.sqrt(np.mean((sd_fit - sd_true) ** 2, axis=0))],
        "loglen_rmse": float(np.sqrt(np.mean((np.log(lat["len"]) - truth.loglen_at(grid)) ** 2))),
    }
    keep = np.abs(corr_true) >= 0.1
    out["corr_sign_agreement"] = float(np.mean(np.sign(corr_fit[keep]) == np.sign(corr_true[keep]))) if keep.any() else 1.0
    return out
