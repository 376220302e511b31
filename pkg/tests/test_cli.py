import numpy as np
import pandas as pd
import pytest

from src.cli import EXIT_CONFIG, EXIT_OK, EXIT_TOO_FEW_FLIGHTS, build_parser, main
from src.flightlog import FlightLog, write_log


def test_parser_commands():
    parser = build_parser()
    args = parser.parse_args(["fly", "--config", "hovering.ini", "--seed", "4", "--no-recovery"])
    assert args.command == "fly" and args.seed == 4 and args.no_recovery
    args = parser.parse_args(["tune", "a.csv", "b.csv", "--detector", "cusum", "--states", "gyro", "baro"])
    assert args.logs == ["a.csv", "b.csv"] and args.states == ["gyro", "baro"]
    with pytest.raises(SystemExit):
        parser.parse_args(["batch", "--config", "m.ini", "--detector", "kalman"])


def test_missing_config_is_a_config_error(tmp_path):
    assert main(["fly", "--config", str(tmp_path / "nope.ini"), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_bad_scenario_is_a_config_error(tmp_path):
    path = tmp_path / "bad.ini"
    path.write_text("[scenario]\nmission = loop\n")
    assert main(["fly", "--config", str(path), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_tune_with_too_few_logs(tmp_path):
    paths = []
    for i in range(4):
        log = FlightLog(pd.DataFrame({"t": np.arange(10) * 0.004, "res_imu0_gyro_0": np.zeros(10)}))
        paths.append(str(write_log(log, tmp_path, f"free_{i}")))
    assert main(["tune", *paths, "--out", str(tmp_path / "tuned")]) == EXIT_TOO_FEW_FLIGHTS


def test_report_command(tmp_path, capsys):
    path = tmp_path / "gyro_outcomes.csv"
    pd.DataFrame([
        {"case": "hovering|none|default", "status": "ok", "attack": "none", "detected": False,
         "alarmed": False, "ttd": None, "recovery_duration": None, "terminal": "time_limit"},
    ]).to_csv(path, index=False)
    out = tmp_path / "report.md"
    assert main(["report", str(path), "--title", "gyro", "--out", str(out)]) == EXIT_OK
    assert capsys.readouterr().out.startswith("# gyro")
    assert out.read_text().startswith("# gyro\n")


def test_fly_writes_log_and_outcome(tmp_path, configs_dir, capsys):
    scenario = tmp_path / "short.ini"
    scenario.write_text(
        "[scenario]\n"
        "name = short\n"
        "mission = hovering\n"
        "hover_time = 1\n"
        "time_limit = 1.0\n"
        f"vehicle = {configs_dir / 'sim_quad.ini'}\n"
    )
    out = tmp_path / "runs"
    assert main(["fly", "--config", str(scenario), "--seed", "2", "--out", str(out)]) == EXIT_OK
    assert (out / "short_s2.csv").exists()
    assert (out / "short_s2.json").exists()
    outcome = pd.read_csv(out / "short_s2_outcome.csv")
    assert outcome.loc[0, "terminal"] == "time_limit"
    assert "time_limit" in capsys.readouterr().out
