import pytest

from spdelab.cli import main as cli_main
from spdelab.config import parse_config
from spdelab.errors import ConfigError
from spdelab.experiments import ExperimentOutcome, REGISTRY, RunReport, Table
from spdelab.plots import emit_plot_script


class TestConfigParsing:
    def test_empty_file_missing_experiment(self):
        with pytest.raises(ConfigError, match="missing experiment"):
            parse_config("")

    def test_minimal_config_fills_defaults(self):
        cfg = parse_config("[experiment]\nname = toy-carleman\n")
        assert cfg.name == "toy-carleman"
        assert cfg.seed == 1234
        assert cfg.get("ensemble", "paths") == 100  # experiment default
        assert cfg.get("time", "steps") == 256
        echo = "\n".join(cfg.echo_lines())
        assert "name = toy-carleman" in echo
        assert "paths = 100" in echo

    def test_experiment_defaults_yield_to_explicit_values(self):
        cfg = parse_config(
            "[experiment]\nname = backward-rate\n[time]\nhorizon = 0.16\n")
        assert cfg.get("time", "horizon") == 0.16
        assert cfg.get("time", "t0") == 0.04  # still the experiment default

    def test_unknown_key_is_position_annotated(self):
        text = "[experiment]\nname = toy-carleman\n[grid]\nspacemesh = 3\n"
        with pytest.raises(ConfigError, match="line 4"):
            parse_config(text)

    def test_unknown_section_rejected(self):
        with pytest.raises(ConfigError, match="unknown section"):
            parse_config("[experiment]\nname = toy-carleman\n[turbo]\nx = 1\n")

    def test_bad_value_type(self):
        with pytest.raises(ConfigError, match="line 3"):
            parse_config("[experiment]\nname = toy-carleman\nseed = soon\n")

    def test_unknown_experiment_name(self):
        with pytest.raises(ConfigError, match="must be one of"):
            parse_config("[experiment]\nname = warp-drive\n")

    def test_backward_ordering_validated(self):
        text = ("[experiment]\nname = backward-rate\n"
                "[time]\nt1 = 0.06\n")  # t1 > t2 = 0.03 under the defaults
        with pytest.raises(ConfigError, match="t1 < t2 < t0"):
            parse_config(text)

    def test_source_ordering_validated(self):
        text = ("[experiment]\nname = inverse-source-gram\n"
                "[time]\nt1 = 0.45\n")
        with pytest.raises(ConfigError, match="t1 < t2 < t0"):
            parse_config(text)

    def test_comments_and_blank_lines_ignored(self):
        cfg = parse_config("# header\n\n[experiment]\n# inner\nname = ito-check\n")
        assert cfg.name == "ito-check"

    def test_source_flags_parse(self):
        cfg = parse_config(
            "[experiment]\nname = inverse-source-gram\n"
            "[source]\nrecovery_demo = true\nobserved_faces = x1=0,x1=l\n")
        assert cfg.get("source", "recovery_demo") is True
        assert cfg.get("source", "observed_faces") == ["x1=0", "x1=l"]
        with pytest.raises(ConfigError):
            parse_config("[experiment]\nname = toy-carleman\n"
                         "[source]\nrecovery_demo = maybe\n")


class TestCli:
    def test_list_experiments(self, capsys):
        assert cli_main(["list-experiments"]) == 0
        out = capsys.readouterr().out
        assert "toy-carleman" in out and "inverse-source-gram" in out

    def test_validate_ok(self, tmp_path, capsys):
        cfg = tmp_path / "a.cfg"
        cfg.write_text("[experiment]\nname = toy-carleman\n")
        assert cli_main(["validate", str(cfg)]) == 0
        assert "config ok" in capsys.readouterr().out

    def test_validate_bad_config_exit_2(self, tmp_path, capsys):
        cfg = tmp_path / "a.cfg"
        cfg.write_text("[experiment]\nname = toy-carleman\nbogus = 1\n")
        assert cli_main(["validate", str(cfg)]) == 2
        assert "line 3" in capsys.readouterr().err

    def test_missing_file_exit_2(self):
        assert cli_main(["validate", "/nonexistent/x.cfg"]) == 2

    def test_run_toy_pass_exit_0(self, tmp_path, capsys):
        cfg = tmp_path / "a.cfg"
        cfg.write_text("[experiment]\nname = toy-carleman\n")
        out = tmp_path / "out"
        assert cli_main(["run", str(cfg), "--out", str(out)]) == 0
        assert (out / "report.txt").exists()
        assert (out / "toy_carleman.csv").exists()
        assert (out / "plot.gp").exists()

    def test_seed_override_changes_report(self, tmp_path):
        cfg = tmp_path / "a.cfg"
        cfg.write_text("[experiment]\nname = ito-check\n")
        cli_main(["run", str(cfg), "--out", str(tmp_path / "o1"), "--seed", "1"])
        cli_main(["run", str(cfg), "--out", str(tmp_path / "o2"), "--seed", "2"])
        a = (tmp_path / "o1" / "ito_residuals.csv").read_bytes()
        b = (tmp_path / "o2" / "ito_residuals.csv").read_bytes()
        assert a != b


class TestDeterminism:
    def run_twice(self, tmp_path, name, workers=("1", "1")):
        cfg = tmp_path / "a.cfg"
        cfg.write_text(f"[experiment]\nname = {name}\n"
                       "[ensemble]\npaths = 300\n"
                       "[grid]\ninterior_points = 17\n[time]\nsteps = 32\n")
        outs = []
        for i, w in enumerate(workers):
            out = tmp_path / f"out{i}"
            code = cli_main(["run", str(cfg), "--out", str(out), "--workers", w])
            assert code == 0
            outs.append(out)
        return outs

    def test_identical_runs_identical_csv_bytes(self, tmp_path):
        a, b = self.run_twice(tmp_path, "energy-bound")
        for csv in sorted(p.name for p in a.glob("*.csv")):
            assert (a / csv).read_bytes() == (b / csv).read_bytes()

    def test_worker_count_does_not_change_bytes(self, tmp_path):
        a, b = self.run_twice(tmp_path, "energy-bound", workers=("1", "4"))
        for csv in sorted(p.name for p in a.glob("*.csv")):
            assert (a / csv).read_bytes() == (b / csv).read_bytes()

    def test_report_identical_except_wall_clock(self, tmp_path):
        a, b = self.run_twice(tmp_path, "energy-bound")
        ra = [l for l in (a / "report.txt").read_text().splitlines()
              if not l.startswith("wall_clock")]
        rb = [l for l in (b / "report.txt").read_text().splitlines()
              if not l.startswith("wall_clock")]
        assert ra == rb


class TestFailClosed:
    def test_nan_in_table_fails_run(self, tmp_path, monkeypatch):
        def poisoned(cfg):
            out = ExperimentOutcome()
            t = Table("poisoned", ("a", "b"))
            t.add(1.0, float("nan"))
            out.tables.append(t)
            out.check("always", True, "fine")
            return out

        monkeypatch.setitem(REGISTRY, "toy-carleman", poisoned)
        cfg_file = tmp_path / "a.cfg"
        cfg_file.write_text("[experiment]\nname = toy-carleman\n")
        code = cli_main(["run", str(cfg_file), "--out", str(tmp_path / "o")])
        assert code == 1
        report = (tmp_path / "o" / "report.txt").read_text()
        assert "FAIL nan-scan" in report

    def test_failed_verdict_fails_run(self, tmp_path, monkeypatch):
        def failing(cfg):
            out = ExperimentOutcome()
            out.check("tolerance", False, "breached")
            return out

        monkeypatch.setitem(REGISTRY, "toy-carleman", failing)
        cfg_file = tmp_path / "a.cfg"
        cfg_file.write_text("[experiment]\nname = toy-carleman\n")
        assert cli_main(["run", str(cfg_file), "--out", str(tmp_path / "o")]) == 1


class TestTables:
    def test_row_width_checked(self):
        t = Table("t", ("a", "b"))
        with pytest.raises(Exception):
            t.add(1.0)

    def test_csv_text_format(self):
        t = Table("t", ("a", "b", "c"))
        t.add(1, 0.5, True)
        assert t.csv_text() == "a,b,c\n1,0.5,true\n"

    def test_nan_detection(self):
        t = Table("t", ("a",))
        t.add(float("nan"))
        assert t.has_nan()


class TestPlotScript:
    def make_report(self, tables):
        cfg = parse_config("[experiment]\nname = toy-carleman\n")
        outcome = ExperimentOutcome(tables=tables)
        return RunReport(config=cfg, outcome=outcome, wall_clock=0.0, nan_tables=[])

    def test_empty_report_header_only(self):
        script = emit_plot_script(self.make_report([]))
        assert script.startswith("# gnuplot")
        assert "nothing to plot" in script

    def test_sweep_one_plot_per_lambda(self):
        t = Table("carleman_sweep", tuple("s,lambda,lhs_grad,lhs_zero,rhs_terminal,"
                                          "rhs_initial,rhs_data,ratio,mc_stderr".split(",")))
        t.add(1.0, 1.0, 0, 0, 0, 0, 0, 0.5, 0)
        t.add(1.0, 2.0, 0, 0, 0, 0, 0, 0.4, 0)
        script = emit_plot_script(self.make_report([t]))
        assert script.count("lambda=") == 2

    def test_rate_report_loglog_with_fit(self):
        t = Table("rate_pairs", ("delta_noise", "alpha", "err_t0", "slope_running"))
        t.add(1e-1, 1e-2, 1e-2, 0.0)
        t.add(1e-2, 1e-4, 3e-3, 0.5)
        script = emit_plot_script(self.make_report([t]))
        assert "set logscale xy" in script
        assert "c*x**m" in script
