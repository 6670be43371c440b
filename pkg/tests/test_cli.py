import csv

import numpy as np
import pytest

from fermibgk import cli
from fermibgk.equilibrium import FermiParams, equilibrium_moments
from fermibgk.fdintegrals import LN3, beta
from fermibgk.phasegrid import load_snapshot


def run(argv, tmp_path):
    return cli.main([*argv, "--out", str(tmp_path)])


def read_csv(path):
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def write_toml(tmp_path, text, name="cfg.toml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


class TestBetatable:
    @pytest.mark.parametrize("c_min,c_max,n", [(-LN3, 10.0, 100), (0.0, 0.0, 1), (-1.0, 20.0, 7)])
    def test_table(self, tmp_path, capsys, c_min, c_max, n):
        code = run(["betatable", "--c-min", repr(c_min), "--c-max", repr(c_max), "--n", str(n)], tmp_path)
        assert code == 0
        rows = read_csv(tmp_path / "betatable.csv")
        assert len(rows) == n
        c = np.array([float(r["c"]) for r in rows])
        np.testing.assert_allclose([float(r["beta"]) for r in rows], beta(c), rtol=1e-15)
        assert "monotone decreasing: PASS" in capsys.readouterr().out

    def test_below_branch_notice(self, tmp_path, capsys):
        assert run(["betatable", "--c-min", "-2", "--c-max", "10", "--n", "50"], tmp_path) == 0
        out = capsys.readouterr().out
        assert "notice" in out and "PASS" not in out

    def test_header_records_seed(self, tmp_path):
        run(["betatable", "--n", "3", "--seed", "17"], tmp_path)
        head = (tmp_path / "betatable.csv").read_text().splitlines()
        assert any(ln.startswith("#") and "seed" in ln and "17" in ln for ln in head)

    def test_bad_range(self, tmp_path, capsys):
        assert run(["betatable", "--c-min", "1", "--c-max", "0"], tmp_path) == 2


class TestInvert:
    @pytest.mark.parametrize("mode", ["continuous", "discrete"])
    def test_point(self, tmp_path, capsys, mode):
        m = equilibrium_moments(FermiParams(1.3, np.zeros(3), 0.4))
        argv = ["invert", "--N", repr(float(m.N)), "--E", repr(float(m.E)), "--P", "0,0,0", "--mode", mode]
        assert run(argv, tmp_path) == 0
        out = dict(ln.split(" = ", 1) for ln in capsys.readouterr().out.strip().splitlines())
        assert float(out["B"]) < float(out["beta_lower"])
        tol = 1e-8 if mode == "continuous" else 1e-3
        assert float(out["a"]) == pytest.approx(1.3, rel=tol)
        assert float(out["c"]) == pytest.approx(0.4, rel=tol)

    def test_inadmissible(self, tmp_path, capsys):
        # B = N / E^(3/5) well above beta(-ln 3)
        assert run(["invert", "--N", "10", "--E", "1"], tmp_path) == 3
        assert "admissibility" in capsys.readouterr().err

    def test_half_specified(self, tmp_path):
        assert run(["invert", "--N", "1"], tmp_path) == 2

    def test_roundtrip(self, tmp_path, capsys):
        cfg = write_toml(tmp_path, "[run]\nn_samples = 10\n")
        assert run(["invert", "--config", cfg, "--scenario", "invert-roundtrip"], tmp_path) == 0
        assert "roundtrip: PASS" in capsys.readouterr().out


class TestConfigErrors:
    @pytest.mark.parametrize(
        "text",
        [
            "[tau]\nC4 = 0.0\n",
            "[run]\ndt = 'fast'\n",
            "[nonsense]\nx = 1\n",
            "[grid]\nwidth = 3\n",
            "[run]\nscenario = 'nope'\n",
            "[run]\ndt = 0.1\nt_final = 1.0\n[equilibrium]\nc0 = -1.0\n[grid]\nn_p = 4\n",
        ],
    )
    def test_exit_2_or_3(self, tmp_path, text):
        code = run(["simulate", "--config", write_toml(tmp_path, text)], tmp_path)
        assert code in (2, 3)

    def test_zero_relaxation_rate(self, tmp_path, capsys):
        cfg = write_toml(tmp_path, "[tau]\nC4 = 0.0\n")
        assert run(["simulate", "--scenario", "relax0d", "--config", cfg], tmp_path) == 2
        assert "config error" in capsys.readouterr().err

    def test_global_equilibrium_below_branch(self, tmp_path):
        cfg = write_toml(tmp_path, "[equilibrium]\nc0 = -1.2\n")
        assert run(["simulate", "--scenario", "decay1x3v", "--config", cfg], tmp_path) == 3

    def test_missing_file(self, tmp_path):
        assert run(["simulate", "--config", str(tmp_path / "missing.toml")], tmp_path) == 2

    def test_bad_log_level(self, tmp_path, monkeypatch):
        monkeypatch.setenv("FERMIBGK_LOG", "chatty")
        assert run(["betatable", "--n", "2"], tmp_path) == 2

    def test_threads(self, tmp_path):
        assert run(["betatable", "--n", "2", "--threads", "0"], tmp_path) == 2
        assert run(["betatable", "--n", "2", "--threads", "1"], tmp_path) == 0


class TestSimulate:
    def test_relax0d_deterministic(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        cfg = write_toml(tmp_path, "[run]\nt_final = 2.0\n")
        assert cli.main(["simulate", "--scenario", "relax0d", "--config", cfg, "--out", str(a)]) == 0
        assert cli.main(["simulate", "--scenario", "relax0d", "--config", cfg, "--out", str(b)]) == 0
        assert (a / "timeseries.csv").read_bytes() == (b / "timeseries.csv").read_bytes()
        assert (a / "final.snap").read_bytes() == (b / "final.snap").read_bytes()

    def test_outputs(self, tmp_path):
        cfg = write_toml(tmp_path, "[run]\nt_final = 4.0\n")
        assert run(["simulate", "--scenario", "relax0d", "--config", cfg], tmp_path) == 0
        rows = read_csv(tmp_path / "timeseries.csv")
        assert len(rows) == 81
        assert list(rows[0])[:11] == list(cli.CSV_COLUMNS)
        kv = dict(ln.split("=", 1) for ln in (tmp_path / "fit.kv").read_text().splitlines())
        assert float(kv["rate"]) > 0
        summary = (tmp_path / "summary.txt").read_text()
        assert summary.startswith("[run]\n") and "[decay]" in summary
        assert load_snapshot(tmp_path / "final.snap").time == pytest.approx(4.0)

    def test_checkpoint_written_on_admissibility_failure(self, tmp_path, capsys):
        # cold, nearly filled lobes put B above beta(-ln 3) from the start
        cfg = write_toml(
            tmp_path,
            "[run]\nt_final = 0.1\n[initial]\nkind = 'bimodal'\na = 6.0\nc = -20.0\ndrift = 0.0\n[grid]\nn_p = 24\np_max = 4.0\n",
        )
        assert run(["simulate", "--scenario", "relax0d", "--config", cfg], tmp_path) == 3
        assert (tmp_path / "checkpoint.snap").exists()
        assert "beta(-ln 3)" in capsys.readouterr().err


class TestPicard:
    def test_short(self, tmp_path, capsys):
        cfg = write_toml(tmp_path, "[run]\nt_final = 0.2\nn_iter = 3\n[grid]\nn_x = 8\n")
        assert run(["picard", "--config", cfg, "--scenario", "picard"], tmp_path) == 0
        rows = read_csv(tmp_path / "picard.csv")
        assert [int(r["iteration"]) for r in rows] == [1, 2, 3]
        assert "monotone_decrease = true" in capsys.readouterr().out


class TestLincheck:
    SMALL = "[run]\nn_coercivity = 5\nn_residual = 2\n"

    def test_pass(self, tmp_path, capsys):
        assert run(["lincheck", "--config", write_toml(tmp_path, self.SMALL)], tmp_path) == 0
        text = (tmp_path / "lincheck.txt").read_text()
        assert "FAIL" not in text and "seed = 0" in text

    @pytest.mark.parametrize("how", ["flag", "config"])
    def test_fault_injection(self, tmp_path, how):
        text = self.SMALL + ("fault_injection = 'basis'\n" if how == "config" else "")
        argv = ["lincheck", "--config", write_toml(tmp_path, text)]
        if how == "flag":
            argv += ["--inject-fault", "basis"]
        assert run(argv, tmp_path) == 4
        assert "FAIL" in (tmp_path / "lincheck.txt").read_text()

    def test_near_boundary_warns(self, tmp_path, capsys):
        text = self.SMALL + "[equilibrium]\nc0 = %r\n" % (-LN3 + 1e-6)
        assert run(["lincheck", "--config", write_toml(tmp_path, text)], tmp_path) == 0
        assert "warning" in capsys.readouterr().err
