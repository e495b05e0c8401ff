"""Command-line entry point.

Every command takes a TOML config file::

    nsmgp fit     run.toml   # MAP fit -> params.json, trace.csv
    nsmgp hmc     run.toml   # MAP then HMC -> samples.npz, hmc_summary.json, curves.csv
    nsmgp predict run.toml   # hold-out prediction -> predictions.csv, metrics.json
    nsmgp synth   run.toml   # synthetic episodes -> <id>.csv, <id>_truth.csv
    nsmgp eval    run.toml   # hold-out protocol over a directory -> summary.json

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.
Failures print one JSON object ``{"error", "message", "exit_code"}`` to stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import io
from .errors import ConfigError, EmptyTraining, NsmgpError, ParseError
from .infer import HmcConfig, MapConfig, derive_corr_sd, hmc_sample, map_fit
from .kernels import ModelKind
from .latent import GpPrior
from .model import PriorSpec
from .predict import lpd, predict, rmse
from .synth import SynthConfig, generate

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger("nsmgp")

SECTIONS = {"run", "priors", "map", "hmc", "synth", "eval"}
# keys accepted by the sections that are not a dataclass's own fields
KEYS = {
    "run": {"model", "seed", "holdout", "input", "output", "params"},
    "priors": {"ig_a", "ig_b", "coreg_var_c", "loglen", "logsd", "coreg"},
    "synth": {"n_episodes", "n_points", "m_dims", "noise_var", "loglen", "logsd", "corr_fn", "missing_frac"},
    "eval": {"models", "workers"},
}
GP_KEYS = {"mean", "amp", "len"}


def _gp(d, default: GpPrior) -> GpPrior:
    if d is None:
        return default
    if not isinstance(d, dict) or set(d) - GP_KEYS:
        raise ValueError(f"GP prior must be a table with keys {sorted(GP_KEYS)}, got {d!r}")
    return GpPrior(float(d.get("mean", default.mean)), float(d.get("amp", default.amp)), float(d.get("len", default.len)))


def load_config(path) -> dict:
    """Parse a TOML run config and fill in every default.

    The returned dict is fully resolved, so hashing it identifies the run.
    """
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    unknown = set(raw) - SECTIONS
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    for name, allowed in KEYS.items():
        extra = set(raw.get(name, {})) - allowed
        if extra:
            raise ConfigError(f"unknown keys in [{name}]: {sorted(extra)}")
    base = path.parent
    run = dict(raw.get("run", {}))
    try:
        kind = ModelKind.parse(run.get("model", "GNMGP")).value
        seed = int(run.get("seed", 0))
        cfg = {
            "run": {
                "model": kind,
                "seed": seed,
                "holdout": int(run.get("holdout", 5)),
                "input": str(base / run["input"]) if "input" in run else None,
                "output": str(base / run.get("output", "out")),
                "params": str(base / run["params"]) if "params" in run else None,
            }
        }
        p = raw.get("priors", {})
        d = PriorSpec()
        priors = PriorSpec(
            float(p.get("ig_a", d.ig_a)), float(p.get("ig_b", d.ig_b)), float(p.get("coreg_var_c", d.coreg_var_c)),
            _gp(p.get("loglen"), d.loglen_prior), _gp(p.get("logsd"), d.logsd_prior), _gp(p.get("coreg"), d.coreg_prior),
        )
        cfg["priors"] = io.priors_to_dict(priors)
        m = raw.get("map", {})
        cfg["map"] = asdict(MapConfig(**{**m, "seed": seed}))
        h = raw.get("hmc", {})
        cfg["hmc"] = asdict(HmcConfig(**{**h, "seed": seed}))
        s = dict(raw.get("synth", {}))
        n_episodes = int(s.pop("n_episodes", 1))
        sd = SynthConfig()
        synth = SynthConfig(
            n_points=int(s.get("n_points", sd.n_points)), m_dims=int(s.get("m_dims", sd.m_dims)), seed=seed,
            noise_var=float(s.get("noise_var", sd.noise_var)),
            loglen_prior=_gp(s.get("loglen"), sd.loglen_prior), logsd_prior=_gp(s.get("logsd"), sd.logsd_prior),
            corr_fn=str(s.get("corr_fn", sd.corr_fn)), missing_frac=float(s.get("missing_frac", sd.missing_frac)),
        )
        cfg["synth"] = {
            "n_episodes": n_episodes, "n_points": synth.n_points, "m_dims": synth.m_dims,
            "noise_var": synth.noise_var, "corr_fn": synth.corr_fn, "missing_frac": synth.missing_frac,
            "loglen": io.prior_to_dict(synth.loglen_prior), "logsd": io.prior_to_dict(synth.logsd_prior),
        }
        e = raw.get("eval", {})
        models = [ModelKind.parse(k).value for k in e.get("models", ["SMGP", "NMGP", "GNMGP"])]
        cfg["eval"] = {"models": models, "workers": int(e.get("workers", 1))}
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if cfg["run"]["holdout"] < 0:
        raise ConfigError("holdout must be non-negative")
    return cfg


def _priors(cfg) -> PriorSpec:
    return io.priors_from_dict(cfg["priors"])


def _map_cfg(cfg) -> MapConfig:
    return MapConfig(**cfg["map"])


def _meta(cfg, kind=None) -> dict:
    return {
        "schema_version": io.SCHEMA_VERSION,
        "config_hash": io.config_hash(cfg),
        "seed": cfg["run"]["seed"],
        "model_kind": kind or cfg["run"]["model"],
    }


def _input_episode(cfg):
    if not cfg["run"]["input"]:
        raise ConfigError("run.input is required for this command")
    return io.ingest_csv(cfg["run"]["input"])


def _outdir(cfg) -> Path:
    out = Path(cfg["run"]["output"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_fit(cfg) -> int:
    ep = _input_episode(cfg)
    res = map_fit(ep, cfg["run"]["model"], _priors(cfg), _map_cfg(cfg))
    out = _outdir(cfg)
    doc = {**io.params_to_dict(res.params), **_meta(cfg), "episode_id": ep.id,
           "log_posterior": res.log_post, "n_iters": res.n_iters, "converged": res.converged}
    io.write_json(out / "params.json", doc)
    io.write_rows_csv(out / "trace.csv", ["iteration", "log_posterior"], [(i, float(v)) for i, v in enumerate(res.trace)])
    return 0


def cmd_hmc(cfg) -> int:
    ep = _input_episode(cfg)
    kind, priors = cfg["run"]["model"], _priors(cfg)
    if cfg["run"]["params"]:
        init = io.params_from_dict(json.loads(Path(cfg["run"]["params"]).read_text()))
    else:
        init = map_fit(ep, kind, priors, _map_cfg(cfg)).params
    hcfg = HmcConfig(**cfg["hmc"])
    samples = hmc_sample(ep, kind, priors, hcfg, init)
    out = _outdir(cfg)
    np.savez(out / "samples.npz", theta=np.array([s.params.to_vector() for s in samples]),
             log_post=np.array([s.log_post for s in samples]), accepted=np.array([s.accepted for s in samples]))
    grid = np.linspace(ep.times[0], ep.times[-1], 100)
    m = ep.n_dims
    pairs = [(i, j) for i in range(m) for j in range(i)]
    rows = []
    for k, s in enumerate(samples):
        for t in grid:
            corr, sd = derive_corr_sd(s, t)
            rows.append([k, float(t), *[float(v) for v in sd], *[float(corr[i, j]) for i, j in pairs]])
    header = ["sample", "time", *[f"sd_{c}" for c in ep.channels],
              *[f"corr_{ep.channels[i]}_{ep.channels[j]}" for i, j in pairs]]
    io.write_rows_csv(out / "curves.csv", header, rows)
    io.write_json(out / "hmc_summary.json", {
        **_meta(cfg), "episode_id": ep.id, "n_samples": len(samples),
        "acceptance_rate": float(np.mean([s.accepted for s in samples])),
        "log_post_mean": float(np.mean([s.log_post for s in samples])),
        "hmc": cfg["hmc"],
    })
    return 0


def holdout_scores(ep, kind, priors, map_cfg, k) -> dict:
    """Fit on all but the last ``k`` observations and score the last ``k``."""
    train, test = ep.split_holdout(k)
    if test.n_times == 0:
        raise EmptyTraining("hold-out size is zero; nothing to predict")
    res = map_fit(train, kind, priors, map_cfg)
    pred = predict(res.params, train, test.times)
    return {"episode_id": ep.id, "model_kind": ModelKind.parse(kind).value,
            "rmse": rmse(pred, test.obs), "lpd": lpd(pred, test.obs),
            "pred": pred, "test": test, "params": res.params}


def cmd_predict(cfg) -> int:
    ep = _input_episode(cfg)
    k = cfg["run"]["holdout"]
    r = holdout_scores(ep, cfg["run"]["model"], _priors(cfg), _map_cfg(cfg), k)
    pred, test = r["pred"], r["test"]
    out = _outdir(cfg)
    mean, sd = pred.mean_table(), pred.sd_table()
    noise_sd = np.sqrt(np.diag(pred.cov) + pred.noise_var).reshape(pred.n_dims, -1).T
    rows = []
    for q, t in enumerate(test.times):
        for m, ch in enumerate(ep.channels):
            truth = test.obs[q, m] if test.mask[q, m] else float("nan")
            rows.append([float(t), ch, float(mean[q, m]), float(sd[q, m]), float(noise_sd[q, m]), float(truth)])
    io.write_rows_csv(out / "predictions.csv", ["time", "channel", "mean", "sd_f", "sd_y", "truth"], rows)
    io.write_json(out / "metrics.json", {
        **_meta(cfg), "episode_id": ep.id, "holdout": k, "rmse": r["rmse"], "lpd": r["lpd"],
        "lpd_convention": "per scored scalar: joint log density of held-out observations (noise included) / number of scored scalars",
    })
    return 0


def cmd_synth(cfg) -> int:
    s = cfg["synth"]
    out = _outdir(cfg)
    for e in range(s["n_episodes"]):
        sc = SynthConfig(n_points=s["n_points"], m_dims=s["m_dims"], seed=cfg["run"]["seed"] + e,
                         noise_var=s["noise_var"], loglen_prior=GpPrior(**s["loglen"]),
                         logsd_prior=GpPrior(**s["logsd"]), corr_fn=s["corr_fn"], missing_frac=s["missing_frac"])
        ep, truth = generate(sc)
        io.write_episode_csv(ep, out / f"{ep.id}.csv")
        io.write_truth_csv(truth, out / f"{ep.id}_truth.csv")
    io.write_json(out / "synth_manifest.json", {**_meta(cfg, "GNMGP"), "synth": s})
    return 0


def _eval_one(args):
    path, kind, priors_d, map_d, k = args
    ep = io.ingest_csv(path)
    r = holdout_scores(ep, kind, io.priors_from_dict(priors_d), MapConfig(**map_d), k)
    return {"episode_id": r["episode_id"], "model_kind": r["model_kind"], "rmse": r["rmse"], "lpd": r["lpd"]}


def run_eval(cfg) -> dict:
    src = cfg["run"]["input"]
    if not src or not Path(src).is_dir():
        raise ConfigError("run.input must be a directory of episode CSVs for eval")
    files = sorted(p for p in Path(src).glob("*.csv") if not p.name.endswith("_truth.csv"))
    if not files:
        raise ConfigError(f"no episode CSVs in {src}")
    jobs = [(str(f), kind, cfg["priors"], cfg["map"], cfg["run"]["holdout"])
            for kind in cfg["eval"]["models"] for f in files]
    workers = cfg["eval"]["workers"]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_eval_one, jobs))
    else:
        results = [_eval_one(j) for j in jobs]
    summary = {}
    for kind in cfg["eval"]["models"]:
        rs = [r for r in results if r["model_kind"] == kind]
        rm = np.array([r["rmse"] for r in rs])
        lp = np.array([r["lpd"] for r in rs])
        summary[kind] = {"rmse_mean": float(rm.mean()), "rmse_sd": float(rm.std(ddof=1)) if rm.size > 1 else 0.0,
                         "lpd_mean": float(lp.mean()), "lpd_sd": float(lp.std(ddof=1)) if lp.size > 1 else 0.0,
                         "n_episodes": int(rm.size)}
    return {"summary": summary, "episodes": results}


def cmd_eval(cfg) -> int:
    res = run_eval(cfg)
    out = _outdir(cfg)
    meta = _meta(cfg, ",".join(cfg["eval"]["models"]))
    io.write_json(out / "summary.json", {**meta, "holdout": cfg["run"]["holdout"], "models": res["summary"],
                                         "lpd_convention": "per scored scalar observation, noise included"})
    io.write_rows_csv(out / "episodes.csv", ["episode_id", "model_kind", "rmse", "lpd"],
                      [(r["episode_id"], r["model_kind"], r["rmse"], r["lpd"]) for r in res["episodes"]])
    return 0


COMMANDS = {"fit": cmd_fit, "hmc": cmd_hmc, "predict": cmd_predict, "synth": cmd_synth, "eval": cmd_eval}


def main(argv=None) -> int:
    _, _, rest = __doc__.partition("\n\n")
    parser = argparse.ArgumentParser(prog="nsmgp", description="Fit, sample, predict, synthesize and evaluate "
                                     "multi-output Gaussian process models of episode time series.",
                                     epilog=rest, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("config", help="TOML run configuration")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        cfg = load_config(args.config)
        return COMMANDS[args.command](cfg)
    except NsmgpError as exc:
        code = exc.exit_code
        err = exc
    except (ParseError, FileNotFoundError) as exc:
        code, err = 3, exc
    except (ValueError, TypeError) as exc:
        code, err = 2, exc
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        code, err = 4, exc
    print(json.dumps({"error": type(err).__name__, "message": str(err), "exit_code": code}), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
