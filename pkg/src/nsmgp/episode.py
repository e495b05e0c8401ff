"""Irregularly sampled multivariate time series container."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, DuplicateTimestamp, EmptyTraining, ParseError


@dataclass(frozen=True)
class Episode:
    """One multivariate series observed at strictly increasing times.

    ``obs`` has shape ``(N, M)``; entries where ``mask`` is False are missing and
    are stored as NaN. Vectorized observations use dimension-major order, so
    entry ``(n, m)`` sits at index ``m * N + n``.
    """

    times: np.ndarray
    obs: np.ndarray
    mask: np.ndarray | None = None
    id: str = "episode"
    channels: tuple = field(default=())

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).ravel()
        obs = np.array(self.obs, dtype=float)
        if obs.ndim == 1:
            obs = obs[:, None]
        if obs.shape[0] != times.size:
            raise DimensionMismatch(f"{times.size} times but {obs.shape[0]} observation rows")
        if self.mask is None:
            mask = np.isfinite(obs)
        else:
            mask = np.asarray(self.mask, dtype=bool)
            if mask.shape != obs.shape:
                raise DimensionMismatch("mask shape differs from obs shape")
            mask = mask & np.isfinite(obs)
        if not np.all(np.isfinite(times)):
            raise ParseError("timestamps must be finite")
        dup = np.flatnonzero(np.diff(times) == 0)
        if dup.size:
            raise DuplicateTimestamp(f"duplicate timestamp {times[dup[0]]!r}")
        if np.any(np.diff(times) < 0):
            raise ParseError("timestamps must be strictly increasing")
        if times.size and not np.all(mask.any(axis=1)):
            bad = int(np.flatnonzero(~mask.any(axis=1))[0])
            raise ParseError(f"row {bad} (time {times[bad]!r}) has no observed entry")
        obs = np.where(mask, obs, np.nan)
        channels = tuple(self.channels) or tuple(f"y{m + 1}" for m in range(obs.shape[1]))
        if len(channels) != obs.shape[1]:
            raise DimensionMismatch("number of channel names differs from obs columns")
        for arr in (times, obs, mask):
            arr.flags.writeable = False
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "obs", obs)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "channels", channels)

    @property
    def n_times(self) -> int:
        return self.times.size

    @property
    def n_dims(self) -> int:
        return self.obs.shape[1]

    @property
    def complete(self) -> bool:
        return bool(self.mask.all())

    def vec_y(self) -> np.ndarray:
        """Dimension-major vector of all entries (NaN where missing)."""
        return self.obs.T.ravel()

    def observed_index(self) -> np.ndarray:
        """Positions of the present entries within :meth:`vec_y`."""
        return np.flatnonzero(self.mask.T.ravel())

    def observed_y(self) -> np.ndarray:
        return self.vec_y()[self.observed_index()]

    def subset(self, rows) -> "Episode":
        rows = np.asarray(rows)
        return Episode(self.times[rows], self.obs[rows], self.mask[rows], self.id, self.channels)

    def split_holdout(self, k: int) -> tuple["Episode", "Episode"]:
        """Split into (training, last ``k`` observations by time)."""
        if k < 0:
            raise ValueError("hold-out size must be non-negative")
        if k >= self.n_times:
            raise EmptyTraining(f"hold-out of {k} leaves no training data (N={self.n_times})")
        cut = self.n_times - k
        return self.subset(np.arange(cut)), self.subset(np.arange(cut, self.n_times))
