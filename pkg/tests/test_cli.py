import csv
import json

import pytest

from tcct import cli
from tcct.data import load_csv

FAST = ["--synth-length", "300", "--input-len", "16", "--epochs", "1", "--d-model", "8", "--heads", "2"]


def run(tmp_path, *extra, name="out"):
    out = tmp_path / name
    code = cli.main(["run", *FAST, "--out", str(out), *extra])
    return code, out


def test_run_file_contract(tmp_path):
    code, out = run(tmp_path, "--variant", "TCCT_III", "--pred-len", "8", "16")
    assert code == 0
    assert sorted(p.name for p in out.iterdir()) == [
        "complexity_TCCT_III.json", "manifest.json", "metrics_TCCT_III_pl16.csv", "metrics_TCCT_III_pl8.csv"]
    man = json.loads((out / "manifest.json").read_text())
    assert man["spec"]["pred_lens"] == [8, 16] and man["seeds"] == [0]
    assert man["spec_hash"] == cli.ExperimentSpec(**{k: tuple(v) if isinstance(v, list) else v
                                                      for k, v in man["spec"].items()}).digest()
    comp = json.loads((out / "complexity_TCCT_III.json").read_text())
    assert comp["ratios"]["l2"] == 0.5 and comp["ratios"]["params"] == 0.3125


def test_aggregate_row_and_rfc4180(tmp_path):
    code, out = run(tmp_path, "--repeats", "3", "--pred-len", "4")
    assert code == 0
    raw = (out / "metrics_TCCT_III_pl4.csv").read_bytes()
    assert raw.count(b"\r\n") == 5
    rows = list(csv.DictReader(raw.decode().splitlines()))
    assert [r["run_seed"] for r in rows] == ["0", "1", "2", "aggregate"]
    agg = rows[-1]
    assert float(agg["msd"]) > 0 and agg["cv_percent"]
    mses = [float(r["mse"]) for r in rows[:3]]
    assert float(agg["mse"]) == pytest.approx(sum(mses) / 3, rel=1e-12)


def test_rerun_and_manifest_replay_are_bitwise(tmp_path):
    _, a = run(tmp_path, "--pred-len", "4", "--repeats", "2", name="a")
    _, b = run(tmp_path, "--pred-len", "4", "--repeats", "2", "--parallel-repeats", "2", name="b")
    c_code = cli.main(["run", "--from-manifest", str(a / "manifest.json"), "--out", str(tmp_path / "c")])
    assert c_code == 0
    for name in ("metrics_TCCT_III_pl4.csv", "complexity_TCCT_III.json", "manifest.json"):
        ref = (a / name).read_bytes()
        assert (b / name).read_bytes() == ref
        assert (tmp_path / "c" / name).read_bytes() == ref


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "exp.toml"
    cfg.write_text('[experiment]\nvariant = "Informer"\npred_len = [4]\n[train]\nepochs = 1\n'
                   '[model]\nd_model = 8\nheads = 2\n[data.synth]\nlength = 300\n')
    out = tmp_path / "o"
    assert cli.main(["run", "--config", str(cfg), "--input-len", "16", "--variant", "TCCT_I", "--out", str(out)]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["spec"]["variant"] == "TCCT_I" and man["spec"]["synth_length"] == 300


def test_env_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "envout"))
    assert cli.main(["run", *FAST, "--pred-len", "4"]) == 0
    assert (tmp_path / "envout" / "manifest.json").exists()


def test_exit_codes(tmp_path, capsys):
    assert run(tmp_path, "--variant", "TCCT_IX")[0] == cli.EXIT_VARIANT
    assert run(tmp_path, "--data", str(tmp_path / "missing.csv"))[0] == cli.EXIT_DATA
    assert run(tmp_path, "--input-len", "18")[0] == cli.EXIT_CONFIG
    assert run(tmp_path, "--pred-len", "0")[0] == cli.EXIT_CONFIG
    bad = tmp_path / "bad.toml"
    bad.write_text("[train]\nwarmup = 3\n")
    assert cli.main(["run", "--config", str(bad)]) == cli.EXIT_CONFIG
    with pytest.raises(SystemExit) as e:
        cli.main(["run", "--repeats", "many"])
    assert e.value.code == cli.EXIT_USAGE
    assert "error:" in capsys.readouterr().err


def test_short_data_is_a_data_error(tmp_path):
    data = tmp_path / "s.csv"
    assert cli.main(["synth", "--length", "60", "--out", str(data)]) == 0
    assert cli.main(["run", "--data", str(data), "--input-len", "32", "--out", str(tmp_path / "x")]) == cli.EXIT_DATA


def test_run_on_csv(tmp_path):
    data = tmp_path / "s.csv"
    assert cli.main(["synth", "--length", "300", "--n-series", "2", "--out", str(data)]) == 0
    assert load_csv(data).n_series == 2
    code, out = run(tmp_path, "--data", str(data), "--mode", "uni", "--pred-len", "4")
    assert code == 0
    rows = list(csv.DictReader((out / "metrics_TCCT_III_pl4.csv").read_text().splitlines()))
    assert rows[0]["dataset"] == "s" and rows[0]["mode"] == "uni"


def test_analyze(tmp_path, capsys):
    assert cli.main(["analyze", "--d-model", "16", "--heads", "2", "--out", str(tmp_path), "--svg"]) == 0
    rows = list(csv.DictReader((tmp_path / "complexity_sweep.csv").read_text().splitlines()))
    assert [int(r["L"]) for r in rows] == list(range(48, 433, 48))
    ratios = [float(r["analytic_ratio"]) for r in rows]
    assert ratios == sorted(ratios) and 0.49 < ratios[-1] < 0.5
    assert (tmp_path / "complexity_sweep.svg").read_text().startswith("<svg")
    assert cli.main(["analyze", "--lengths", "--out", str(tmp_path)]) == cli.EXIT_CONFIG


def test_check_verb(capsys):
    assert cli.main(["check", "--suite", "complexity", "receptive"]) == 0
    out = capsys.readouterr().out
    assert out.count("[PASS]") == 2
