import json

import pandas as pd
import pytest
from adapters.results_writer import (
    CURVE_COLUMNS,
    SUMMARY_COLUMNS,
    curve_path,
    summary_frame,
    write_curve,
    write_meta,
    write_settings,
    write_summary,
)
from config.config import PACKAGE_VERSION, PsoHyperparams, Settings, SweepConfig, SystemConfig, load_config
from interfaces.solutions import Protocol, TradeoffCurve, TradeoffPoint

NAN = float("nan")


@pytest.fixture
def curve():
    """✅ Three-point WS curve whose last point is infeasible."""
    return TradeoffCurve(Protocol.WS, [
        TradeoffPoint(2.0, 2.0, 1.5e-6, 63.2, Protocol.WS, True),
        TradeoffPoint(4.0, 4.0, 2.5e-5, 126.0, Protocol.WS, True),
        TradeoffPoint(6.0, NAN, NAN, NAN, Protocol.WS, False),
    ])


def test_curve_path_naming(tmp_path):
    """✅ Test `<protocol>_drop<NNN>.csv` naming."""
    assert curve_path(tmp_path, Protocol.WM, 7).name == "wm_drop007.csv"
    assert curve_path(tmp_path, Protocol.BASELINE, 12).name == "baseline_drop012.csv"


def test_write_curve_format(tmp_path, curve):
    """✅ Test header, row count, 1/0 feasibility and NaN spelling."""
    path = write_curve(curve, tmp_path, 0)
    lines = path.read_text().splitlines()

    assert path.name == "ws_drop000.csv"
    assert lines[0] == ",".join(CURVE_COLUMNS)
    assert len(lines) == 4
    assert lines[1] == "2,2,1.5e-06,63.2,1"
    assert lines[3] == "6,nan,nan,nan,0"


def test_written_curve_reads_back(tmp_path, curve):
    """✅ Test that pandas reads the file back with the same values."""
    frame = pd.read_csv(write_curve(curve, tmp_path, 1))
    assert frame["power_w"].iloc[1] == pytest.approx(2.5e-5)
    assert frame["feasible"].tolist() == [1, 1, 0]
    assert frame["se"].isna().tolist() == [False, False, True]


def test_summary_stacks_protocols(tmp_path, curve):
    """✅ Test that summary.csv holds one block per protocol with feasible fractions."""
    ws = TradeoffCurve(Protocol.WS, curve.points, metadata={"feasible_fraction": [1.0, 0.5, 0.0]})
    wm = TradeoffCurve(Protocol.WM, curve.points[:2] + [curve.points[2]], metadata={"feasible_fraction": [1.0, 1.0, 0.0]})
    frame = summary_frame([ws, wm])
    assert list(frame.columns) == SUMMARY_COLUMNS
    assert frame["protocol"].tolist() == ["ws"] * 3 + ["wm"] * 3
    assert frame["feasible"].tolist() == [1.0, 0.5, 0.0, 1.0, 1.0, 0.0]

    path = write_summary([ws, wm], tmp_path)
    assert path.name == "summary.csv"
    assert path.read_text().splitlines()[0] == ",".join(SUMMARY_COLUMNS)


def test_empty_summary_has_header(tmp_path):
    """✅ Test that no curves still give a header-only summary."""
    path = write_summary([], tmp_path)
    assert path.read_text().strip() == ",".join(SUMMARY_COLUMNS)


def test_meta_reloads_as_configuration(tmp_path):
    """✅ Test that meta.txt is a valid system configuration carrying the run selectors."""
    cfg = SystemConfig(N=3, gamma=[0.5, 1.5])
    path = write_meta(cfg, tmp_path, seed=2 ** 63 + 5, drops=4, grid=9, protocol="all", settings=Settings())

    assert load_config(path) == cfg
    text = path.read_text()
    assert f"# seed = {2 ** 63 + 5}" in text
    assert "# drops = 4" in text
    assert "# grid = 9" in text
    assert "# protocol = all" in text
    assert f"# version = {PACKAGE_VERSION}" in text


def test_meta_records_solver_settings(tmp_path):
    """✅ Test that solver settings are echoed as JSON without the logging section."""
    path = write_meta(SystemConfig(), tmp_path, 0, 1, 12, "ws", settings=Settings())
    line = next(line for line in path.read_text().splitlines() if line.startswith("# settings = "))
    solver = json.loads(line.removeprefix("# settings = "))
    assert "logging" not in solver
    assert solver["pso"]["swarm_size"] == 50
    assert solver["sweep"]["grid_points"] == 12


def test_written_settings_reload(tmp_path):
    """✅ Test that the settings YAML next to meta.txt loads back into the same settings."""
    settings = Settings(pso=PsoHyperparams(swarm_size=7, inertia=0.61), sweep=SweepConfig(grid_points=5, workers=0))
    path = write_settings(settings, tmp_path)
    assert path.name == "settings.yaml"
    assert Settings.load(path) == settings


def test_meta_points_at_settings_file(tmp_path):
    """✅ Test that meta.txt names the settings YAML it was written with."""
    settings = Settings(sweep=SweepConfig(bracket_fanout=3))
    path = write_meta(SystemConfig(), tmp_path, 0, 1, 12, "ws", settings=settings)
    assert "# settings_file = settings.yaml" in path.read_text().splitlines()
    assert Settings.load(tmp_path / "settings.yaml") == settings


def test_meta_without_settings_writes_no_yaml(tmp_path):
    """✅ Test that no settings file appears when no settings are passed."""
    write_meta(SystemConfig(), tmp_path, 0, 1, 12, "ws")
    assert not (tmp_path / "settings.yaml").exists()
