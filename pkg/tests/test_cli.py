"""Command-line interface: config parsing, outputs, manifests, exit codes."""

import csv
import math
import os

import numpy as np
import pytest

from driftdiffuse.cli import (config_to_lines, main, parse_config, write_csv,
                              _fmt)
from driftdiffuse.errors import ConfigurationError

FAST = ["--modes", "5", "--paths", "64", "--horizon", "0.2", "--dt", "0.01",
        "--stride", "5"]


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


class TestConfigParsing:
    def test_defaults(self):
        cfg = parse_config()
        assert (cfg.dim, cfg.modes, cfg.cutoff_k) == (2, 1000, 10.0)
        assert (cfg.alpha, cfg.theta, cfg.sigma) == (0.75, 10.0, 0.1)
        assert cfg.scheme.kind == "midpoint2d"

    def test_file_and_overrides(self, tmp_path):
        cfile = tmp_path / "run.cfg"
        cfile.write_text("# comment\n"
                         "dim = 3\n"
                         "scheme = modesplit\n"
                         "theta = 2.5\n"
                         "drift_correct = true\n")
        cfg = parse_config(str(cfile), {"theta": 4.0, "modes": 100})
        assert cfg.dim == 3
        assert cfg.scheme.kind == "modesplit"
        assert cfg.theta == 4.0           # flag beats file
        assert cfg.modes == 100
        assert cfg.drift_correct is True

    @pytest.mark.parametrize("text", [
        "unknown_key = 1\n",
        "dim\n",
        "dim = banana\n",
        "scheme = rk4\n",
        "drift_correct = maybe\n",
        "alpha = 1.5\n",
        "dim = 3\nscheme = midpoint2d\n",
    ])
    def test_rejects_bad_files(self, tmp_path, text):
        cfile = tmp_path / "bad.cfg"
        cfile.write_text(text)
        with pytest.raises(ConfigurationError):
            parse_config(str(cfile))

    def test_missing_file(self):
        with pytest.raises(ConfigurationError):
            parse_config("/nonexistent/path.cfg")

    def test_config_lines_roundtrip(self, tmp_path):
        cfg = parse_config(None, {"dt": 0.0125, "alpha": 0.6,
                                  "scheme": "modesplit", "seed": 99})
        cfile = tmp_path / "echo.cfg"
        cfile.write_text("\n".join(config_to_lines(cfg)) + "\n")
        again = parse_config(str(cfile))
        assert again == cfg

    def test_float_format_is_lossless(self):
        for v in (0.1, 1 / 3, 1e-17, 1234.5678901234567):
            assert float(_fmt(v)) == v


class TestSimulateCommand:
    def test_produces_outputs(self, tmp_path):
        out = str(tmp_path / "run")
        code = main(["simulate", "--out", out, "--seed", "3"] + FAST)
        assert code == 0
        rows = read_csv(out + ".csv")
        assert rows[0] == ["t", "D11", "D11_se", "D22", "D22_se", "D12",
                           "count"]
        assert len(rows) == 1 + 4          # 20 steps / stride 5
        assert int(rows[-1][-1]) == 64
        assert os.path.exists(out + ".png")
        assert os.path.exists(out + ".manifest.txt")

    def test_manifest_reruns_bit_identical(self, tmp_path):
        out1 = str(tmp_path / "a")
        assert main(["simulate", "--out", out1, "--seed", "5"] + FAST) == 0
        # the manifest parses as a config file and reproduces the CSV
        out2 = str(tmp_path / "b")
        assert main(["simulate", "--config", out1 + ".manifest.txt",
                     "--out", out2]) == 0
        assert read_csv(out1 + ".csv") == read_csv(out2 + ".csv")

    def test_threads_do_not_change_results(self, tmp_path):
        outs = []
        for label, threads in (("t1", "1"), ("t3", "3")):
            out = str(tmp_path / label)
            args = ["simulate", "--out", out, "--seed", "2",
                    "--threads", threads, "--modes", "5", "--paths", "600",
                    "--horizon", "0.1", "--dt", "0.01", "--stride", "10"]
            assert main(args) == 0
            outs.append(read_csv(out + ".csv"))
        assert outs[0] == outs[1]

    def test_threads_env_fallback(self, tmp_path, monkeypatch):
        monkeypatch.setenv("DRIFTDIFFUSE_THREADS", "2")
        out = str(tmp_path / "env")
        assert main(["simulate", "--out", out, "--seed", "2"] + FAST) == 0

    def test_raw_moments_output(self, tmp_path):
        out = str(tmp_path / "raw")
        moments = str(tmp_path / "moments.csv")
        assert main(["simulate", "--out", out, "--raw-moments", moments,
                     "--seed", "3"] + FAST) == 0
        rows = read_csv(moments)
        assert rows[0] == ["t", "count", "sumX_1", "sumX_2", "sumXX_11",
                           "sumXX_12", "sumXX_22", "sumB_1", "sumB_2",
                           "failed"]

    def test_3d_csv_schema(self, tmp_path):
        out = str(tmp_path / "d3")
        args = ["simulate", "--out", out, "--dim", "3",
                "--scheme", "modesplit"] + FAST
        assert main(args) == 0
        header = read_csv(out + ".csv")[0]
        assert "D33" in header and "D33_se" in header

    def test_drift_corrected_variant(self, tmp_path):
        out = str(tmp_path / "dc")
        assert main(["simulate", "--out", out, "--drift-correct", "true",
                     "--seed", "3"] + FAST) == 0


class TestExitCodes:
    def test_config_error_is_1(self, tmp_path, capsys):
        assert main(["simulate", "--alpha", "2.0",
                     "--out", str(tmp_path / "x")]) == 1
        assert "configuration error" in capsys.readouterr().err

    def test_numerical_error_is_2(self, tmp_path, capsys):
        args = ["simulate", "--out", str(tmp_path / "x"),
                "--solver-max-iter", "1", "--solver-tol", "1e-300"] + FAST
        assert main(args) == 2
        assert "numerical abort" in capsys.readouterr().err

    def test_io_error_is_3(self, tmp_path, capsys):
        args = ["simulate", "--out", "/nonexistent/dir/x"] + FAST
        assert main(args) == 3
        assert "I/O error" in capsys.readouterr().err


class TestOtherCommands:
    def test_convergence_command(self, tmp_path):
        out = str(tmp_path / "conv")
        args = ["convergence", "--out", out, "--dts", "0.1,0.05,0.025",
                "--reference", "0.005", "--modes", "4", "--paths", "64",
                "--horizon", "0.4", "--theta", "1.0", "--seed", "6",
                "--scheme", "euler", "--stride", "4"]
        code = main(args)
        assert code in (0, 1)  # tiny run may be all-noise (honest failure)
        if code == 0:
            rows = read_csv(out + ".csv")
            assert rows[0] == ["dt", "abs_error", "stderr",
                               "included_in_fit"]
            assert os.path.exists(out + ".png")

    def test_decay_command(self, tmp_path):
        out = str(tmp_path / "decay")
        args = ["decay", "--out", out, "--states", "10",
                "--inner-paths", "40", "--steps", "15", "--modes", "10",
                "--scheme", "euler", "--dt", "0.02", "--horizon", "0.3",
                "--theta", "5.0"]
        assert main(args) == 0
        rows = read_csv(out + ".csv")
        assert rows[0] == ["n", "t", "variance", "floor"]
        assert len(rows) == 1 + 16
        assert os.path.exists(out + ".png")

    def test_residual_command(self, tmp_path):
        out = str(tmp_path / "res")
        args = ["residual", "--out", out, "--sigmas", "0.4,0.2",
                "--modes", "4", "--paths", "64", "--horizon", "0.2",
                "--dt", "0.01", "--stride", "5", "--scheme", "euler"]
        assert main(args) == 0
        rows = read_csv(out + ".csv")
        assert rows[0] == ["kappa", "D11", "D11_se"]
        assert float(rows[1][0]) == pytest.approx(0.08)

    def test_fieldcheck_command(self, tmp_path, capsys):
        dump = str(tmp_path / "modes.csv")
        args = ["fieldcheck", "--modes", "2000", "--dump-modes", dump]
        assert main(args) == 0
        text = capsys.readouterr().out
        assert "PASS" in text and "FAIL" not in text
        rows = read_csv(dump)
        assert rows[0] == ["m", "k_1", "k_2", "xi_1", "eta_1"]
        assert len(rows) == 1 + 2000

    def test_fieldcheck_3d(self, capsys):
        assert main(["fieldcheck", "--dim", "3", "--modes", "2000",
                     "--scheme", "modesplit"]) == 0
        assert "FAIL" not in capsys.readouterr().out


def test_write_csv_precision(tmp_path):
    path = str(tmp_path / "p.csv")
    write_csv(path, ["a"], [[1 / 3]])
    assert float(read_csv(path)[1][0]) == 1 / 3
