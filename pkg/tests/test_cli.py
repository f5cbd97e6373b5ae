import csv
import os
import subprocess
import sys

import pytest

from puma_lab.cli import (
    ConfigError,
    PlotError,
    emit_plot,
    format_config,
    main,
    parse_config,
    parse_config_text,
    write_atomic,
)


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


class TestParse:
    def test_minimal_defaults(self):
        cfg = parse_config_text("command = verify-marginal\n")
        assert cfg.section("chain")["K"] == 4
        assert cfg.section("policy")["kind"] == "max_prob"
        assert cfg.seed == 0

    def test_unknown_key_named(self):
        with pytest.raises(ConfigError, match="foo"):
            parse_config_text("command = verify-marginal\nfoo = 1\n")

    def test_tau_out_of_range(self):
        with pytest.raises(ConfigError, match="threshold"):
            parse_config_text("command = train\n[policy]\nthreshold = 1.5\n")

    def test_errors_listed_exhaustively(self):
        with pytest.raises(ConfigError) as exc:
            parse_config_text(
                "command = train\n[policy]\nthreshold = 1.5\ncount = 0\n[train]\nlr = -1\nbatch_size = x\n[nope]\na = 1\n"
            )
        msg = str(exc.value)
        for word in ("threshold", "count", "lr", "batch_size", "[nope]"):
            assert word in msg

    def test_syntax_error_line_number(self):
        with pytest.raises(ConfigError, match="line 3"):
            parse_config_text("command = train\n[train]\nlr 0.1\n")

    def test_duplicate_key_line(self):
        with pytest.raises(ConfigError, match="line 3"):
            parse_config_text("command = train\nseed = 1\nseed = 2\n")

    def test_eval_every_must_divide(self):
        with pytest.raises(ConfigError, match="divide"):
            parse_config_text("command = train\n[train]\ntotal_steps = 10\neval_every = 3\n")

    def test_missing_command(self):
        with pytest.raises(ConfigError, match="command"):
            parse_config_text("seed = 1\n")

    def test_command_mismatch(self):
        with pytest.raises(ConfigError, match="not"):
            parse_config_text("command = train\n", overrides={"command": "plot"})

    def test_plot_inputs_must_exist(self, tmp_path):
        with pytest.raises(ConfigError, match="does not exist"):
            parse_config_text("command = plot\n[plot]\ninputs = missing.csv\n", str(tmp_path))

    def test_round_trip(self, tmp_path):
        text = (
            "command = sample-complexity\nseed = 7\n[dist]\nkind = zm\nd = 3\neta = 0.05\n"
            "[policy]\nthreshold = 0.9\nblock_size = 2\n[complexity]\nd_range = 2,4\nuniform_t = yes\n"
            "[chain]\nprompt = 0 1\n"
        )
        cfg = parse_config_text(text)
        echo = write(tmp_path, "echo.ini", format_config(cfg))
        assert parse_config(echo) == cfg

    def test_seed_override(self, tmp_path):
        p = write(tmp_path, "c.ini", "command = train\nseed = 2\n")
        assert parse_config(p, overrides={"seed": 9}).seed == 9


class TestRun:
    def test_verify_marginal_two_point(self, tmp_path, capsys):
        p = write(tmp_path, "c.ini", "command = verify-marginal\n[dist]\nkind = two_point\n")
        assert main(["verify-marginal", "--config", str(p), "--out", str(tmp_path / "o")]) == 0
        assert "max_tv < 1e-10" in capsys.readouterr().out
        assert (tmp_path / "o" / "marginal.csv").read_text().startswith("step,tv,tolerance\n")

    def test_verify_minimizer_leaking_fails(self, tmp_path, capsys):
        p = write(tmp_path, "c.ini", "command = verify-minimizer\n[chain]\nforward = leaking\nK = 2\n")
        assert main(["verify-minimizer", "--config", str(p), "--out", str(tmp_path / "o")]) == 1
        assert "FAIL" in capsys.readouterr().out

    def test_verify_minimizer_passes(self, tmp_path):
        p = write(tmp_path, "c.ini", "command = verify-minimizer\n[dist]\nkind = zm\n[chain]\nK = 3\n")
        assert main(["verify-minimizer", "--config", str(p), "--out", str(tmp_path / "o")]) == 0

    def test_usage_error_exit(self, tmp_path, capsys):
        p = write(tmp_path, "c.ini", "command = train\nfoo = 1\n")
        assert main(["train", "--config", str(p)]) == 2
        assert "foo" in capsys.readouterr().err
        assert main(["train", "--config", str(tmp_path / "missing.ini")]) == 2
        assert main(["train", "--config", str(p), "--jobs", "0"]) == 2

    def test_complexity_csv(self, tmp_path):
        p = write(tmp_path, "c.ini", "command = sample-complexity\n[complexity]\nd_range = 2..4\nseeds = 2\ntrials = 40\n")
        out = tmp_path / "o"
        assert main(["sample-complexity", "--config", str(p), "--out", str(out)]) == 0
        lines = (out / "complexity.csv").read_text().splitlines()
        assert lines[0] == "d,method,samples,error_rate,seed"
        assert len(lines) == 1 + 2 * 2 * 2

    def test_jobs_do_not_change_output(self, tmp_path):
        p = write(tmp_path, "c.ini", "command = sample-complexity\n[complexity]\nd_range = 2,3\nseeds = 2\ntrials = 30\n")
        main(["sample-complexity", "--config", str(p), "--out", str(tmp_path / "a")])
        main(["sample-complexity", "--config", str(p), "--out", str(tmp_path / "b"), "--jobs", "2"])
        assert (tmp_path / "a" / "complexity.csv").read_bytes() == (tmp_path / "b" / "complexity.csv").read_bytes()

    def test_train_deterministic_and_echo(self, tmp_path):
        text = "command = train\n[dist]\nkind = zm\nd = 3\n[train]\ntotal_steps = 20\neval_every = 5\ntraj_probes = 5\n"
        p = write(tmp_path, "c.ini", text)
        for name in ("a", "b"):
            assert main(["train", "--config", str(p), "--out", str(tmp_path / name)]) == 0
        a, b = tmp_path / "a", tmp_path / "b"
        assert (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()
        assert (a / "model.txt").read_bytes() == (b / "model.txt").read_bytes()
        assert parse_config(a / "config.ini") == parse_config(p)

    def test_env_out_dir(self, tmp_path, monkeypatch):
        p = write(tmp_path, "c.ini", "command = verify-marginal\n")
        monkeypatch.setenv("PUMA_LAB_OUT", str(tmp_path / "env"))
        assert main(["verify-marginal", "--config", str(p)]) == 0
        assert (tmp_path / "env" / "marginal.csv").exists()

    def test_compare(self, tmp_path, capsys):
        text = ("command = compare\n[dist]\nkind = zm\nd = 4\neta = 0.05\n"
                "[train]\ntotal_steps = 30\neval_every = 3\ntraj_probes = 0\n[compare]\nseeds = 2\n")
        p = write(tmp_path, "c.ini", text)
        assert main(["compare", "--config", str(p), "--out", str(tmp_path / "o")]) == 0
        assert "ratio" in capsys.readouterr().out
        rows = list(csv.DictReader(open(tmp_path / "o" / "compare.csv")))
        assert len(rows) == 2

    def test_compare_unreachable(self, tmp_path):
        text = ("command = compare\n[train]\ntotal_steps = 1\neval_every = 1\ntraj_probes = 0\n"
                "[compare]\nthreshold = 1.0\nseeds = 1\n")
        p = write(tmp_path, "c.ini", text)
        assert main(["compare", "--config", str(p), "--out", str(tmp_path / "o")]) == 1

    def test_console_script(self, tmp_path):
        p = write(tmp_path, "c.ini", "command = verify-marginal\n[dist]\nkind = three_point\n")
        res = subprocess.run([sys.executable, "-m", "puma_lab.cli", "verify-marginal", "--config", str(p),
                              "--out", str(tmp_path / "o")], capture_output=True, text=True)
        assert res.returncode == 0 and "PASS" in res.stdout


class TestPlot:
    def test_two_series(self, tmp_path):
        a = write(tmp_path, "a.csv", "step,gen_accuracy\n0,0.1\n10,0.5\n")
        b = write(tmp_path, "b.csv", "step,gen_accuracy\n0,0.2\n10,0.9\n")
        svg = emit_plot([a, b], y="gen_accuracy", labels=["puma", "vanilla"])
        assert svg.count("<polyline") == 2
        assert "puma" in svg and "vanilla" in svg and svg.startswith("<svg")

    def test_empty_csv(self, tmp_path):
        with pytest.raises(PlotError):
            emit_plot([write(tmp_path, "e.csv", "step,gen_accuracy\n")], y="gen_accuracy")

    def test_missing_column(self, tmp_path):
        with pytest.raises(PlotError, match="posterior_l1"):
            emit_plot([write(tmp_path, "a.csv", "step,gen_accuracy\n0,1\n")], y="posterior_l1")

    def test_log_scale_complexity(self, tmp_path):
        c = write(tmp_path, "c.csv", "d,method,samples,error_rate,seed\n2,random-masking,10,0.1,0\n"
                                     "4,random-masking,50,0.1,0\n2,puma-oracle,3,0.0,0\n4,puma-oracle,5,0.0,0\n")
        svg = emit_plot([c], y="samples", yscale="log")
        assert svg.count("<polyline") == 2 and "(log)" in svg
        bad = write(tmp_path, "z.csv", "d,samples\n2,0\n")
        with pytest.raises(PlotError):
            emit_plot([bad], y="samples", yscale="log")

    def test_plot_command(self, tmp_path):
        write(tmp_path, "a.csv", "step,gen_accuracy\n0,0.1\n10,0.5\n")
        p = write(tmp_path, "c.ini", "command = plot\n[plot]\ninputs = a.csv\n")
        assert main(["plot", "--config", str(p), "--out", str(tmp_path / "o")]) == 0
        assert (tmp_path / "o" / "plot.svg").read_text().count("<polyline") == 1

    def test_plot_command_empty_is_usage_error(self, tmp_path):
        write(tmp_path, "a.csv", "step,gen_accuracy\n")
        p = write(tmp_path, "c.ini", "command = plot\n[plot]\ninputs = a.csv\n")
        assert main(["plot", "--config", str(p), "--out", str(tmp_path / "o")]) == 2


class TestAtomicWrite:
    def test_no_temp_left(self, tmp_path):
        write_atomic(tmp_path / "x" / "f.csv", "a\n")
        assert os.listdir(tmp_path / "x") == ["f.csv"]
