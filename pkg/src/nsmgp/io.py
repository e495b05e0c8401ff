"""Episode CSV ingestion and the CSV/JSON artifact formats."""
from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from .episode import Episode
from .errors import EmptyFile, ParseError
from .kernels import ModelKind
from .latent import GpPrior
from .model import ModelParams, PriorSpec

SCHEMA_VERSION = "1.0"


def fmt(x) -> str:
    """Decimal text that round-trips a float exactly (17 significant digits)."""
    return "" if x is None or not np.isfinite(x) else f"{float(x):.17g}"


def read_episodes(path) -> list[Episode]:
    """All episodes of an episode CSV, in order of first appearance."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or not any(cell.strip() for cell in rows[0]):
        raise EmptyFile(f"{path}: file is empty")
    header = [h.strip() for h in rows[0]]
    if len(header) < 3 or header[0] != "episode_id" or header[1] != "time":
        raise ParseError(f"{path}: header must be 'episode_id,time,<channel>,...', got {','.join(header)}")
    channels = tuple(header[2:])
    body = [r for r in rows[1:] if any(cell.strip() for cell in r)]
    if not body:
        raise EmptyFile(f"{path}: no data rows")
    grouped: dict[str, list] = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if not any(cell.strip() for cell in row):
            continue
        if len(row) != len(header):
            raise ParseError(f"{path}:{lineno}: expected {len(header)} columns, got {len(row)}")
        try:
            t = float(row[1])
        except ValueError:
            raise ParseError(f"{path}:{lineno}: column 'time' is not a number: {row[1]!r}") from None
        vals = []
        for col, cell in enumerate(row[2:], start=2):
            cell = cell.strip()
            if cell == "":
                vals.append(np.nan)
                continue
            try:
                vals.append(float(cell))
            except ValueError:
                raise ParseError(f"{path}:{lineno}: column {header[col]!r} is not a number: {cell!r}") from None
        grouped.setdefault(row[0].strip(), []).append((t, vals))
    out = []
    for eid, items in grouped.items():
        items.sort(key=lambda it: it[0])
        times = np.array([it[0] for it in items])
        obs = np.array([it[1] for it in items], dtype=float)
        out.append(Episode(times, obs, np.isfinite(obs), eid, channels))
    return out


def ingest_csv(path) -> Episode:
    """Read a single-episode CSV; empty cells become missing entries."""
    episodes = read_episodes(path)
    if len(episodes) != 1:
        raise ParseError(f"{path}: expected one episode, found {len(episodes)}")
    return episodes[0]


def write_episode_csv(ep: Episode, path, mode: str = "w"):
    path = Path(path)
    with path.open(mode, newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if mode == "w":
            w.writerow(["episode_id", "time", *ep.channels])
        for t, row, present in zip(ep.times, ep.obs, ep.mask):
            w.writerow([ep.id, fmt(t), *[fmt(v) if p else "" for v, p in zip(row, present)]])


def write_truth_csv(truth, path):
    n, m, _ = truth.coreg.shape
    tri = list(zip(*np.tril_indices(m)))
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "loglen", *[f"logsd_{k + 1}" for k in range(m)], "corr",
                    *[f"L_{i + 1}{j + 1}" for i, j in tri]])
        for k in range(n):
            w.writerow([fmt(truth.times[k]), fmt(truth.loglen[k]), *[fmt(v) for v in truth.logsd[k]],
                        fmt(truth.corr[k]), *[fmt(truth.coreg[k, i, j]) for i, j in tri]])


def write_rows_csv(path, header, rows):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(config: dict) -> str:
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()[:16]


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def prior_to_dict(p: GpPrior) -> dict:
    return {"mean": p.mean, "amp": p.amp, "len": p.len}


def priors_to_dict(p: PriorSpec) -> dict:
    return {
        "ig_a": p.ig_a, "ig_b": p.ig_b, "coreg_var_c": p.coreg_var_c,
        "loglen": prior_to_dict(p.loglen_prior),
        "logsd": prior_to_dict(p.logsd_prior),
        "coreg": prior_to_dict(p.coreg_prior),
    }


def priors_from_dict(d: dict) -> PriorSpec:
    d = dict(d)
    kw = {k: float(d[k]) for k in ("ig_a", "ig_b", "coreg_var_c") if k in d}
    for key, field in (("loglen", "loglen_prior"), ("logsd", "logsd_prior"), ("coreg", "coreg_prior")):
        if key in d:
            kw[field] = GpPrior(**{k: float(v) for k, v in d[key].items()})
    return PriorSpec(**kw)


def params_to_dict(p: ModelParams) -> dict:
    def arr(x):
        return np.asarray(x, dtype=float).tolist()

    if p.kind is ModelKind.SMGP:
        loglen, logsd = [p.loglen], [p.logsd]
    else:
        loglen = arr(p.loglen)
        logsd = arr(p.logsd) if p.logsd is not None else None
    return {
        "model_kind": p.kind.value,
        "noise_var": p.noise_var,
        "times": arr(p.times),
        "coreg": arr(p.coreg),
        "loglen": loglen,
        "logsd": logsd,
        "priors": priors_to_dict(p.priors),
    }


def params_from_dict(d: dict) -> ModelParams:
    kind = ModelKind.parse(d["model_kind"])
    loglen, logsd = d["loglen"], d.get("logsd")
    if kind is ModelKind.SMGP:
        loglen, logsd = loglen[0], logsd[0]
    return ModelParams(kind, np.array(d["times"]), float(d["noise_var"]), np.array(d["coreg"]),
                       loglen, logsd, priors_from_dict(d.get("priors", {})))
