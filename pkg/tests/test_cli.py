import csv
import json

import numpy as np
import pytest

from nsmgp import io
from nsmgp.cli import load_config, main
from nsmgp.errors import DuplicateTimestamp, EmptyFile, ParseError
from nsmgp.synth import SynthConfig, generate

FAST_MAP = "[map]\nmax_iters = 15\n"


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def config(tmp_path, body, name="run.toml"):
    return str(write(tmp_path / name, body))


@pytest.fixture
def episode_csv(tmp_path):
    ep, _ = generate(SynthConfig(n_points=30, seed=2))
    path = tmp_path / "ep.csv"
    io.write_episode_csv(ep, path)
    return path


class TestIngest:
    def test_happy_path(self, tmp_path):
        p = write(tmp_path / "a.csv", "episode_id,time,hr,sbp\ne1,0.5,80,120\ne1,0.0,82,118\ne1,1.5,79,121\n")
        ep = io.ingest_csv(p)
        assert ep.n_times == 3 and ep.mask.all()
        np.testing.assert_array_equal(ep.times, [0.0, 0.5, 1.5])
        np.testing.assert_array_equal(ep.obs[:, 0], [82, 80, 79])
        assert ep.channels == ("hr", "sbp") and ep.id == "e1"

    def test_missing_cell(self, tmp_path):
        p = write(tmp_path / "a.csv", "episode_id,time,hr,sbp\ne1,0,80,\ne1,1,81,120\n")
        ep = io.ingest_csv(p)
        assert not ep.mask[0, 1] and ep.mask[0, 0]
        assert list(ep.observed_index()) == [0, 1, 3]

    def test_duplicate_time(self, tmp_path):
        p = write(tmp_path / "a.csv", "episode_id,time,hr\ne1,2.25,80\ne1,2.25,81\n")
        with pytest.raises(DuplicateTimestamp, match="2.25"):
            io.ingest_csv(p)

    def test_empty(self, tmp_path):
        with pytest.raises(EmptyFile):
            io.ingest_csv(write(tmp_path / "a.csv", ""))
        with pytest.raises(EmptyFile):
            io.ingest_csv(write(tmp_path / "b.csv", "episode_id,time,hr\n"))

    def test_parse_errors_name_location(self, tmp_path):
        with pytest.raises(ParseError, match=r":3: column 'hr'"):
            io.ingest_csv(write(tmp_path / "a.csv", "episode_id,time,hr\ne,0,1\ne,1,abc\n"))
        with pytest.raises(ParseError, match="header"):
            io.ingest_csv(write(tmp_path / "b.csv", "id,t,hr\ne,0,1\n"))
        with pytest.raises(ParseError, match="columns"):
            io.ingest_csv(write(tmp_path / "c.csv", "episode_id,time,hr\ne,0,1,2\n"))
        with pytest.raises(ParseError, match="no observed entry"):
            io.ingest_csv(write(tmp_path / "d.csv", "episode_id,time,hr\ne,0,\n"))

    def test_multiple_episodes(self, tmp_path):
        p = write(tmp_path / "a.csv", "episode_id,time,hr\na,0,1\nb,0,2\na,1,3\n")
        assert [e.id for e in io.read_episodes(p)] == ["a", "b"]
        with pytest.raises(ParseError):
            io.ingest_csv(p)

    def test_round_trip_exact(self, tmp_path):
        ep, truth = generate(SynthConfig(n_points=25, seed=11, missing_frac=0.2))
        io.write_episode_csv(ep, tmp_path / "e.csv")
        back = io.ingest_csv(tmp_path / "e.csv")
        np.testing.assert_array_equal(back.times, ep.times)
        np.testing.assert_array_equal(back.mask, ep.mask)
        np.testing.assert_array_equal(back.obs[ep.mask], ep.obs[ep.mask])

    def test_params_round_trip(self):
        from test_kernels import random_params
        r = np.random.default_rng(0)
        for kind in ("SMGP", "NMGP", "GNMGP"):
            p = random_params(r, kind, 4, 2)
            q = io.params_from_dict(json.loads(json.dumps(io.params_to_dict(p))))
            np.testing.assert_array_equal(q.to_vector(), p.to_vector())


class TestConfig:
    def test_defaults(self, tmp_path):
        cfg = load_config(config(tmp_path, ""))
        assert cfg["run"]["holdout"] == 5 and cfg["run"]["model"] == "GNMGP"
        assert cfg["map"]["learning_rate"] == 0.01
        assert cfg["eval"]["models"] == ["SMGP", "NMGP", "GNMGP"]

    def test_errors_exit_2(self, tmp_path, capsys):
        for body in ("[run]\nmodel = 'XMGP'\n", "[bogus]\n", "[map]\nlearning_rate = -1\n", "[map]\nnope = 1\n",
                     "[run]\nnope = 1\n", "[synth]\nnope = 1\n", "[priors]\nloglen = {mean = 0, nope = 1}\n",
                     "not toml ["):
            assert main(["fit", config(tmp_path, body)]) == 2
            err = json.loads(capsys.readouterr().err)
            assert err["exit_code"] == 2 and err["message"]
        assert main(["fit", str(tmp_path / "missing.toml")]) == 2


class TestCommands:
    def test_fit_deterministic(self, tmp_path, episode_csv):
        out = []
        for k in range(2):
            cfg = config(tmp_path, f"[run]\nmodel='NMGP'\nseed=4\ninput='ep.csv'\noutput='fit{k}'\n" + FAST_MAP)
            assert main(["fit", cfg]) == 0
            out.append((tmp_path / f"fit{k}" / "params.json").read_bytes())
        a, b = (json.loads(x) for x in out)
        assert a["config_hash"] != b["config_hash"]  # output path differs
        a.pop("config_hash"), b.pop("config_hash")
        assert a == b
        cfg = config(tmp_path, "[run]\nmodel='NMGP'\nseed=4\ninput='ep.csv'\noutput='fit0'\n" + FAST_MAP)
        assert main(["fit", cfg]) == 0
        assert (tmp_path / "fit0" / "params.json").read_bytes() == out[0]
        doc = json.loads(out[0])
        for key in ("config_hash", "seed", "model_kind", "schema_version", "noise_var", "coreg", "loglen", "logsd"):
            assert key in doc
        with open(tmp_path / "fit0" / "trace.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["iteration", "log_posterior"] and len(rows) >= 2

    def test_predict(self, tmp_path, episode_csv):
        cfg = config(tmp_path, "[run]\nmodel='SMGP'\ninput='ep.csv'\noutput='pred'\nholdout=5\n" + FAST_MAP)
        assert main(["predict", cfg]) == 0
        m = json.loads((tmp_path / "pred" / "metrics.json").read_text())
        assert np.isfinite(m["rmse"]) and np.isfinite(m["lpd"]) and m["holdout"] == 5
        assert "per" in m["lpd_convention"]
        with open(tmp_path / "pred" / "predictions.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 10 and float(rows[0]["sd_y"]) >= float(rows[0]["sd_f"])

    def test_predict_holdout_everything(self, tmp_path, episode_csv, capsys):
        cfg = config(tmp_path, "[run]\ninput='ep.csv'\nholdout=30\n" + FAST_MAP)
        assert main(["predict", cfg]) == 2
        assert json.loads(capsys.readouterr().err)["error"] == "EmptyTraining"

    def test_data_errors_exit_3(self, tmp_path, capsys):
        write(tmp_path / "dup.csv", "episode_id,time,hr\ne,1,2\ne,1,3\n")
        assert main(["fit", config(tmp_path, "[run]\ninput='dup.csv'\n")]) == 3
        assert json.loads(capsys.readouterr().err)["error"] == "DuplicateTimestamp"
        write(tmp_path / "flat.csv", "episode_id,time,hr\n" + "".join(f"e,{k},1\n" for k in range(8)))
        assert main(["fit", config(tmp_path, "[run]\ninput='flat.csv'\n")]) == 3

    def test_synth_and_hmc(self, tmp_path):
        cfg = config(tmp_path, "[run]\nseed=7\noutput='syn'\n[synth]\nn_episodes=2\nn_points=20\n")
        assert main(["synth", cfg]) == 0
        files = sorted(p.name for p in (tmp_path / "syn").iterdir())
        assert files == ["synth-7.csv", "synth-7_truth.csv", "synth-8.csv", "synth-8_truth.csv", "synth_manifest.json"]
        ep = io.ingest_csv(tmp_path / "syn" / "synth-7.csv")
        ref, _ = generate(SynthConfig(n_points=20, seed=7))
        np.testing.assert_array_equal(ep.obs, ref.obs)
        np.testing.assert_array_equal(ep.times, ref.times)

        body = ("[run]\nmodel='SMGP'\nseed=1\ninput='syn/synth-7.csv'\noutput='hmc'\n" + FAST_MAP
                + "[hmc]\nstep_size=0.05\nn_leapfrog=3\nn_samples=4\nn_burnin=2\n")
        assert main(["hmc", config(tmp_path, body)]) == 0
        with open(tmp_path / "hmc" / "curves.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["sample", "time", "sd_y1", "sd_y2", "corr_y2_y1"] and len(rows) == 1 + 4 * 100
        summary = json.loads((tmp_path / "hmc" / "hmc_summary.json").read_text())
        assert summary["n_samples"] == 4 and summary["seed"] == 1
        assert np.load(tmp_path / "hmc" / "samples.npz")["theta"].shape[0] == 4

    def test_eval_shape_and_determinism(self, tmp_path):
        assert main(["synth", config(tmp_path, "[run]\noutput='eps'\n[synth]\nn_episodes=10\nn_points=20\n")]) == 0
        body = "[run]\ninput='eps'\noutput='ev'\nholdout=3\n[map]\nmax_iters=3\n"
        assert main(["eval", config(tmp_path, body)]) == 0
        first = (tmp_path / "ev" / "summary.json").read_bytes()
        doc = json.loads(first)
        assert set(doc["models"]) == {"SMGP", "NMGP", "GNMGP"}
        for stats in doc["models"].values():
            assert set(stats) == {"rmse_mean", "rmse_sd", "lpd_mean", "lpd_sd", "n_episodes"}
            assert stats["n_episodes"] == 10 and stats["rmse_sd"] > 0
        assert main(["eval", config(tmp_path, body)]) == 0
        assert (tmp_path / "ev" / "summary.json").read_bytes() == first

    def test_eval_needs_directory(self, tmp_path, episode_csv):
        assert main(["eval", config(tmp_path, "[run]\ninput='ep.csv'\n")]) == 2
