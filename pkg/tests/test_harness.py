import json
import math
import os

import pytest

from tokenmac.cli import main
from tokenmac.harness import (CSV_FIELDS, ExperimentConfig, StageError, _trial_seed,
                              load_config, record_to_row, report_csv, run_sweep,
                              run_trial, stage_rng)

HEADER = ("trial,K,L,M,Q,N,snr_db,tder,nmse_db,ter_todma,ter_nonorth,ter_orth,"
          "latency_todma_s,latency_orth_s,seed")


def desk_cfg(tmp_path=None, **over):
    """Small configuration so one trial takes well under a second."""
    raw = {
        "sim": {"K_T": 4, "K": 3, "M": 8, "L": 8, "Q": 16, "N": 6, "snr_db": 25.0},
        "trials": 1,
        "master_seed": 11,
    }
    if tmp_path is not None:
        raw["output_dir"] = str(tmp_path / "out")
    raw.update(over)
    return ExperimentConfig.from_dict(raw)


class TestConfig:
    def test_defaults_fill_in(self):
        cfg = ExperimentConfig.from_dict({})
        assert cfg.sim["Q"] == 1024
        assert cfg.detector["T0"] == 30
        assert cfg.trials == 1

    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError, match="unknown"):
            ExperimentConfig.from_dict({"simulation": {}})

    def test_sweep_key_validated(self):
        with pytest.raises(ValueError):
            ExperimentConfig.from_dict({"sweep": {"T0": [10, 20]}})
        with pytest.raises(ValueError):
            ExperimentConfig.from_dict({"sweep": {"L": []}})

    def test_apply_override_parses_json(self):
        cfg = desk_cfg()
        cfg.apply_override("sim.K", "2")
        assert cfg.sim["K"] == 2
        cfg.apply_override("sweep.L", "[6, 8]")
        assert cfg.sweep == {"L": [6, 8]}
        cfg.apply_override("source.kind", "random")
        assert cfg.source["kind"] == "random"

    def test_apply_override_bad_section(self):
        with pytest.raises(KeyError):
            desk_cfg().apply_override("nosuch.key", "1")

    def test_load_config(self, tmp_path):
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps({"sim": {"K": 5}, "master_seed": 3}))
        cfg = load_config(str(p))
        assert cfg.sim["K"] == 5 and cfg.master_seed == 3


class TestSeeds:
    def test_trial_seeds_distinct_and_stable(self):
        seeds = [_trial_seed(0, t) for t in range(50)]
        assert len(set(seeds)) == 50
        assert seeds == [_trial_seed(0, t) for t in range(50)]

    def test_stage_streams_independent(self):
        a = stage_rng(0, 0, 1).standard_normal(4)
        b = stage_rng(0, 0, 2).standard_normal(4)
        c = stage_rng(0, 1, 1).standard_normal(4)
        assert not (a == b).all() and not (a == c).all()
        assert (a == stage_rng(0, 0, 1).standard_normal(4)).all()


class TestRunTrial:
    def test_deterministic_rows(self):
        cfg = desk_cfg()
        r1 = run_trial(cfg, 0)
        r2 = run_trial(cfg, 0)
        assert record_to_row(r1) == record_to_row(r2)

    def test_trials_differ(self):
        cfg = desk_cfg()
        assert record_to_row(run_trial(cfg, 0)) != record_to_row(run_trial(cfg, 1))

    def test_row_shape_and_seed(self):
        cfg = desk_cfg()
        rec = run_trial(cfg, 2)
        row = record_to_row(rec)
        assert len(row) == len(CSV_FIELDS)
        assert rec.seed == _trial_seed(cfg.master_seed, 2)
        assert rec.latency_todma_s == 8 * 6 / 1e7

    def test_default_codeword_length(self):
        cfg = desk_cfg()
        cfg.sim["L"] = None
        rec = run_trial(cfg, 0)
        assert rec.L == cfg.sim["K"] + 1

    def test_clean_recovery_at_high_snr(self):
        # frozen smoke configuration; all tokens land, nothing to predict wrong
        cfg = ExperimentConfig.from_dict({
            "sim": {"K_T": 4, "K": 4, "M": 16, "L": 8, "Q": 32, "N": 16,
                    "snr_db": 25.0},
            "master_seed": 7,
        })
        rec = run_trial(cfg, 0)
        assert rec.tder == 0.0
        assert rec.ter_todma == 0.0
        assert rec.nmse_db < -10.0

    def test_config_stage_tagged(self):
        cfg = desk_cfg()
        cfg.sim["Q"] = cfg.sim["K"]   # invalid: codebook must exceed device count
        with pytest.raises(StageError) as exc:
            run_trial(cfg, 0)
        assert exc.value.stage == "config"

    def test_predictor_stage_tagged(self):
        cfg = desk_cfg()
        cfg.predictor["kind"] = "nosuch"
        with pytest.raises(StageError) as exc:
            run_trial(cfg, 0)
        assert exc.value.stage == "predictor"

    def test_random_predictor_runs(self):
        cfg = desk_cfg(predictor={"kind": "random"})
        run_trial(cfg, 0)


class TestRunSweep:
    def test_grid_rows_and_header(self, tmp_path):
        cfg = desk_cfg(tmp_path, sweep={"L": [6, 8]}, trials=2)
        records, manifest = run_sweep(cfg)
        assert len(records) == 4
        lines = (tmp_path / "out" / "results.csv").read_text().splitlines()
        assert lines[0] == HEADER
        assert len(lines) == 5
        assert manifest["trials_run"] == 4
        assert manifest["resumed_rows_skipped"] == 0
        assert json.loads((tmp_path / "out" / "manifest.json").read_text())[
            "master_seed"] == cfg.master_seed

    def test_resume_completes_identically(self, tmp_path):
        cfg = desk_cfg(tmp_path, sweep={"L": [6, 8]}, trials=2)
        run_sweep(cfg)
        csv_path = tmp_path / "out" / "results.csv"
        full = csv_path.read_bytes()

        lines = full.split(b"\n")
        csv_path.write_bytes(b"\n".join(lines[:3]) + b"\n")   # header + 2 rows
        _, manifest = run_sweep(cfg)
        assert csv_path.read_bytes() == full
        assert manifest["resumed_rows_skipped"] == 2
        assert manifest["trials_run"] == 2

    def test_resume_header_only_file(self, tmp_path):
        cfg = desk_cfg(tmp_path)
        out = tmp_path / "out"
        out.mkdir()
        (out / "results.csv").write_text(HEADER + "\n")
        run_sweep(cfg)
        text = (out / "results.csv").read_text()
        assert text.count("trial,K,") == 1
        assert len(text.splitlines()) == 2

    def test_nothing_left_to_do(self, tmp_path):
        cfg = desk_cfg(tmp_path)
        run_sweep(cfg)
        before = (tmp_path / "out" / "results.csv").read_bytes()
        records, manifest = run_sweep(cfg)
        assert records == []
        assert manifest["trials_run"] == 0
        assert (tmp_path / "out" / "results.csv").read_bytes() == before

    def test_workers_match_serial(self, tmp_path):
        cfg = desk_cfg(tmp_path, sweep={"L": [6, 8]}, trials=2)
        run_sweep(cfg)
        serial = (tmp_path / "out" / "results.csv").read_bytes()
        cfg2 = desk_cfg(tmp_path, sweep={"L": [6, 8]}, trials=2)
        cfg2.output_dir = str(tmp_path / "out2")
        run_sweep(cfg2, workers=2)
        assert (tmp_path / "out2" / "results.csv").read_bytes() == serial

    def test_unwritable_output_fails_before_compute(self, tmp_path):
        blocker = tmp_path / "blocker"
        blocker.write_text("")
        cfg = desk_cfg()
        cfg.output_dir = str(blocker / "out")
        with pytest.raises(StageError) as exc:
            run_sweep(cfg)
        assert exc.value.stage == "output"


class TestReport:
    def test_group_means(self, tmp_path):
        p = tmp_path / "r.csv"
        rows = [
            "0,2,3,4,16,8,25.0,0.1,-10.0,0.0,0.2,0.0,0.001,0.002,5",
            "1,2,3,4,16,8,25.0,0.3,-12.0,0.1,0.4,0.0,0.001,0.002,6",
            "0,2,5,4,16,8,25.0,0.5,-8.0,0.2,0.5,0.0,0.001,0.002,5",
        ]
        p.write_text(HEADER + "\n" + "\n".join(rows) + "\n")
        out = report_csv(str(p))
        assert len(out) == 2
        assert out[0]["L"] == "3" and out[0]["trials"] == 2
        assert out[0]["tder"] == pytest.approx(0.2)
        assert out[0]["nmse_db"] == pytest.approx(-11.0)
        assert out[1]["L"] == "5" and out[1]["trials"] == 1


class TestCli:
    def test_run_writes_outputs(self, tmp_path, capsys):
        out = tmp_path / "out"
        rc = main(["run", "--out", str(out), "--seed", "11",
                   "--set", "sim.K=3", "--set", "sim.K_T=4",
                   "--set", "sim.M=8", "--set", "sim.L=8",
                   "--set", "sim.Q=16", "--set", "sim.N=6"])
        assert rc == 0
        assert (out / "results.csv").exists()
        assert (out / "manifest.json").exists()
        assert "1 trial(s)" in capsys.readouterr().out

    def test_run_matches_library_row(self, tmp_path):
        out = tmp_path / "out"
        main(["run", "--out", str(out), "--seed", "11",
              "--set", "sim.K=3", "--set", "sim.K_T=4",
              "--set", "sim.M=8", "--set", "sim.L=8",
              "--set", "sim.Q=16", "--set", "sim.N=6"])
        line = (out / "results.csv").read_text().splitlines()[1]
        assert line == ",".join(record_to_row(run_trial(desk_cfg(), 0)))

    def test_report_prints_table(self, tmp_path, capsys):
        p = tmp_path / "r.csv"
        p.write_text(HEADER + "\n"
                     "0,2,3,4,16,8,25.0,0.1,-10.0,0.0,0.2,0.0,0.001,0.002,5\n")
        assert main(["report", str(p)]) == 0
        out = capsys.readouterr().out
        assert "tder" in out and "trials" in out

    def test_bad_set_value(self, tmp_path, capsys):
        rc = main(["run", "--out", str(tmp_path / "o"), "--set", "oops"])
        assert rc == 1
        assert "error" in capsys.readouterr().err

    def test_missing_config_file(self, tmp_path, capsys):
        rc = main(["run", "--config", str(tmp_path / "nope.json")])
        assert rc == 1
        assert "error" in capsys.readouterr().err

    def test_stage_error_reported(self, tmp_path, capsys):
        blocker = tmp_path / "blocker"
        blocker.write_text("")
        rc = main(["run", "--out", str(blocker / "out")])
        assert rc == 1
        assert "[output]" in capsys.readouterr().err
