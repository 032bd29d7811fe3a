import argparse
import json
from unittest.mock import patch

import pytest

import main
from desmr.config_manager import ConfigManager
from desmr.simulator_app import SimulatorApp, build_parser, experiment_overrides, parse_sweep

TINY = [
    "--m", "3",
    "--n", "30",
    "--p", "5",
    "--s", "2",
    "--topology", "ring",
    "--noise", "normal(0,1)",
    "--methods", "local_mr,avg_mr",
    "--repetitions", "2",
    "--grid-size", "4",
]


@pytest.mark.parametrize(
    "text, expected",
    [
        ("m=5,10,20", ("m", [5, 10, 20])),
        ("p_c=0.1, 0.3", ("p_c", [0.1, 0.3])),
        ("topology=ring,complete", ("topology", ["ring", "complete"])),
    ],
)
def test_parse_sweep(text, expected):
    assert parse_sweep(text) == expected


@pytest.mark.parametrize("text", ["m", "alpha=1,2", "m=a,b"])
def test_parse_sweep_invalid(text):
    with pytest.raises(argparse.ArgumentTypeError):
        parse_sweep(text)


def test_experiment_overrides():
    args = build_parser().parse_args(["simulate", "--m", "5", "--V", "3", "--printed-update"])
    overrides = experiment_overrides(args)
    assert overrides == {"m": 5, "V": 3, "printed_update": True}
    assert args.design == "table"


def test_simulate_table(tmp_path, capsys):
    args = build_parser().parse_args(["simulate"] + TINY + ["--output-dir", str(tmp_path)])
    with patch("desmr.config_manager.os.getenv", return_value=None):
        cm = ConfigManager(overrides=experiment_overrides(args))
    reports = SimulatorApp(cm).run(args)
    assert set(reports) == {"table"}
    assert (tmp_path / "report.csv").exists()
    saved = json.loads((tmp_path / "config.json").read_text(encoding="utf-8"))
    assert saved["methods"] == ["local_mr", "avg_mr"]
    out = capsys.readouterr().out
    assert "local_mr" in out and "avg_mr" in out


def test_simulate_sweep(tmp_path):
    args = build_parser().parse_args(
        ["simulate"] + TINY + ["--repetitions", "1", "--sweep", "m=3,4", "--output-dir", str(tmp_path)]
    )
    with patch("desmr.config_manager.os.getenv", return_value=None):
        cm = ConfigManager(overrides=experiment_overrides(args))
    app = SimulatorApp(cm)
    reports = app.run(args)
    assert set(reports) == {"m=3", "m=4"}
    assert app.stats["reports"] == 2


def test_main_rejects_invalid_config(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    with pytest.raises(SystemExit) as exc:
        main.main(["simulate", "--p", "5", "--s", "10"])
    assert exc.value.code == 1


def test_setup_logging_unknown_level():
    with pytest.raises(SystemExit):
        main.setup_logging("LOUD")
