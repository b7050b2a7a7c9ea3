import json
import subprocess
import sys

import pytest

from sorbet.cli import EXIT_FAIL, EXIT_OK, EXIT_USAGE, RunConfig, main

SMALL = ["--dim", "16", "--seq", "8", "--blocks", "1", "--batch", "2"]


def read(path):
    return json.loads(path.read_text())


class TestVerify:
    def test_pass(self, tmp_path):
        rc = main(["verify", "--suites", "op_counts,gradients,lemma1", "--samples", "2000",
                   "--out", str(tmp_path)])
        assert rc == EXIT_OK
        doc = read(tmp_path / "report.json")
        assert doc["passed"] and doc["run_config"]["suites"] == ["op_counts", "gradients", "lemma1"]

    def test_ceil_mode_fails(self, tmp_path):
        rc = main(["verify", "--k-mode", "ceil", "--suites", "lemma1,decomposition", "--samples", "3000",
                   "--out", str(tmp_path)])
        assert rc == EXIT_FAIL
        doc = read(tmp_path / "report.json")
        assert doc["results"][0]["counterexamples"]

    def test_stdout_when_no_out(self, capsys):
        assert main(["verify", "--suites", "op_counts"]) == EXIT_OK
        assert json.loads(capsys.readouterr().out)["passed"]


class TestUsage:
    @pytest.mark.parametrize("argv", [
        ["verify", "--k-mode", "floor"],
        ["verify", "--seed", "abc"],
        ["verify", "--suites", "bogus"],
        ["demo", "--heads", "3"],
        ["demo", "--timesteps", "4"],
        ["frobnicate"],
        [],
    ])
    def test_exit_two(self, argv):
        assert main(argv) == EXIT_USAGE

    def test_malformed_config_file(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("seed 3\n")
        assert main(["verify", "--config", str(cfg)]) == EXIT_USAGE
        cfg.write_text("colour = blue\n")
        assert main(["verify", "--config", str(cfg)]) == EXIT_USAGE
        assert main(["verify", "--config", str(tmp_path / "missing.cfg")]) == EXIT_USAGE

    def test_flags_override_config(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("# toy\nseed = 3\nk-mode = ceil\nclamp_max = none\nsuites = op_counts\nsizes = 8\n")
        out = tmp_path / "o"
        assert main(["bench-ops", "--config", str(cfg), "--seed", "4", "--out", str(out)]) == EXIT_OK
        rc = read(out / "report.json")["run_config"]
        assert rc["seed"] == 4 and rc["k_mode"] == "ceil" and rc["clamp_max"] is None and rc["sizes"] == [8]

    def test_run_config_validation(self):
        with pytest.raises(ValueError):
            RunConfig(samples=0)


class TestBenchOps:
    def test_rows(self, tmp_path):
        assert main(["bench-ops", "--sizes", "1,64", "--out", str(tmp_path)]) == EXIT_OK
        doc = read(tmp_path / "report.json")
        assert doc["measured_matches_table"]
        row = next(r for r in doc["rows"] if r["kernel"] == "ptsoftmax" and r["n"] == 64)
        assert {k: v for k, v in row["counts"].items() if v} == {"add": 63, "sub": 64, "shift": 64, "lut": 1}
        one = next(r for r in doc["rows"] if r["kernel"] == "softmax" and r["n"] == 1)
        assert one["counts"]["add"] == 0 and one["counts"]["exp"] == 1


class TestDemo:
    def test_outputs_and_determinism(self, tmp_path):
        out = tmp_path / "demo"
        assert main(["demo", *SMALL, "--out", str(out)]) == EXIT_OK
        first = {p.name: p.read_bytes() for p in out.iterdir() if p.is_file()}
        assert main(["demo", *SMALL, "--out", str(out)]) == EXIT_OK
        second = {p.name: p.read_bytes() for p in out.iterdir() if p.is_file()}
        assert first == second and set(first) == {"report.json", "spikes.csv"}
        doc = read(out / "report.json")
        assert doc["stage_s_multiplier_free"] and doc["stage_s_counts"]["mul"] == 0
        assert doc["stages"][-1]["max_abs"] == 0.0
        be = doc["break_even"]
        assert be["break_even_rate"] == 0.31875
        for b in be["blocks"]:
            assert b["energy_favorable"] == (b["rate"] < 0.31875)
        assert (out / "spikes.csv").read_text().startswith("block,rate\n")
        assert (out / "checkpoint" / "manifest.json").exists()

    def test_spike_report_from_checkpoint(self, tmp_path):
        out = tmp_path / "demo"
        main(["demo", *SMALL, "--out", str(out)])
        rep = tmp_path / "rep"
        assert main(["spike-report", "--checkpoint", str(out / "checkpoint"), "--batch", "2",
                     "--out", str(rep)]) == EXIT_OK
        assert (rep / "spikes.csv").read_text() == (out / "spikes.csv").read_text()


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "sorbet", "bench-ops", "--sizes", "8"],
                       capture_output=True, text=True, check=False)
    assert r.returncode == 0
    assert json.loads(r.stdout)["measured_matches_table"]
