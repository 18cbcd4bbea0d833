"""CLI verbs exercised in-process plus one real console-script call."""

import subprocess

import pytest

from trafficmon.cli import derive_c_hat, main


def test_calibrate_tau_a_output(capsys):
    assert main(["calibrate-tau-a"]) == 0
    out = capsys.readouterr().out
    assert "tau_a = 9072 px" in out
    assert main(["calibrate-tau-a", "--meters-per-pixel", "0.1"]) == 0
    assert "tau_a = 2268 px" in capsys.readouterr().out


def test_console_script_on_path():
    proc = subprocess.run(["trafficmon", "calibrate-tau-a", "--vehicles", "1"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "tau_a = 3024 px" in proc.stdout


def test_make_trace(tmp_path, capsys):
    rc = main(["make-trace", "--duration", "30", "--limit-rate", "1000",
               "--limit-window", "10", "20", "--out", str(tmp_path),
               "--file", "t.csv"])
    assert rc == 0
    path = tmp_path / "t.csv"
    assert str(path) in capsys.readouterr().out
    lines = path.read_text().splitlines()
    assert lines[0] == "t_start_s,rate_bytes_per_s"
    # default base rate is the uncompressed stream rate
    assert lines[1] == "0.000000,10368000.000"
    assert lines[2] == "10.000000,1000.000"


def test_make_trace_rejects_bad_window(tmp_path, capsys):
    rc = main(["make-trace", "--limit-rate", "1000",
               "--limit-window", "20", "10", "--out", str(tmp_path)])
    assert rc == 2
    assert "must lie inside" in capsys.readouterr().err


def test_run_micro_config(tmp_path, capsys, monkeypatch):
    monkeypatch.delenv("TRAFFICMON_OUT", raising=False)
    cfg = tmp_path / "micro.yaml"
    cfg.write_text(
        "name: micro\n"
        "scene: {preset: free_flow, duration_s: 6}\n"
        "weathers: [sunny]\n"
        "strategies: [edge]\n"
        "seeds: [1, 2]\n"
    )
    out = tmp_path / "r"
    rc = main(["run", "--config", str(cfg), "--seed", "2",
               "--no-figures", "--out", str(out)])
    assert rc == 0
    printed = capsys.readouterr().out
    for name in ("results.csv", "curves.csv", "anova.csv",
                 "switches.csv", "summary.txt"):
        assert (out / name).exists()
        assert name in printed
    assert not list(out.glob("*.png"))
    rows = (out / "results.csv").read_text().splitlines()
    assert len(rows) == 2  # --seed narrowed two seeds to one
    assert rows[1].startswith("sunny,edge,2,")


def test_run_renders_figures(tmp_path):
    cfg = tmp_path / "fig.yaml"
    cfg.write_text(
        "name: fig\n"
        "scene: {preset: free_flow, duration_s: 6}\n"
        "weathers: [sunny]\n"
        "strategies: [edge, cloud, hybrid]\n"
        "seeds: [1]\n"
    )
    out = tmp_path / "r"
    rc = main(["run", "--config", str(cfg), "--out", str(out)])
    assert rc == 0
    pngs = {p.name for p in out.glob("*.png")}
    assert "errors.png" in pngs
    assert "curve_sunny.png" in pngs
    assert "trace.png" in pngs


def test_run_strategy_filter(tmp_path):
    cfg = tmp_path / "s.yaml"
    cfg.write_text(
        "scene: {preset: free_flow, duration_s: 6}\n"
        "weathers: [sunny]\n"
        "strategies: [edge, cloud]\n"
        "seeds: [1]\n"
    )
    out = tmp_path / "r"
    rc = main(["run", "--config", str(cfg), "--strategy", "edge",
               "--no-figures", "--out", str(out)])
    assert rc == 0
    rows = (out / "results.csv").read_text().splitlines()
    assert len(rows) == 2
    assert rows[1].startswith("sunny,edge,1,")


def test_run_bad_config_exit_code(tmp_path, capsys):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text("name: x\nbogus: 1\n")
    rc = main(["run", "--config", str(cfg), "--no-figures"])
    assert rc == 2
    assert "config error" in capsys.readouterr().err


def test_sweep_threshold(tmp_path, capsys):
    rc = main(["sweep-threshold", "--rates", "0.25,1.0",
               "--duration", "6", "--out", str(tmp_path)])
    assert rc == 0
    out = capsys.readouterr().out
    path = tmp_path / "threshold.csv"
    assert path.exists() and str(path) in out
    lines = path.read_text().splitlines()
    assert lines[0] == "rate_frac,c_mean,eps_s_edge,eps_s_cloud"
    assert len(lines) == 3
    assert "derived c_hat" in out or "no crossover" in out


def test_sweep_threshold_bad_rates(capsys):
    assert main(["sweep-threshold", "--rates", "abc"]) == 2
    assert "--rates" in capsys.readouterr().err
    assert main(["sweep-threshold", "--rates", "0.5,-1"]) == 2
    assert "positive" in capsys.readouterr().err


def test_derive_c_hat_rules():
    rows = [(0.25, 0.25, 0.1, 0.9), (0.75, 0.75, 0.1, 0.05), (1.0, 1.0, 0.1, 0.0)]
    assert derive_c_hat(rows) == pytest.approx(0.5)  # midpoint of the step
    assert derive_c_hat([(0.5, 0.5, 0.1, 0.05)]) == 0.5  # first row already below
    assert derive_c_hat([(0.5, 0.5, 0.1, 0.9)]) is None
