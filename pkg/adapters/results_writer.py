"""CSV and run-metadata output for tradeoff curves."""

import json
import logging
from pathlib import Path

import pandas as pd
import yaml

from config.config import PACKAGE_VERSION

logger = logging.getLogger(__name__)

CURVE_COLUMNS = ["eps_se", "se", "power_w", "ee", "feasible"]
SUMMARY_COLUMNS = ["protocol", "eps_se", "se", "power_w", "ee", "feasible"]
FLOAT_FORMAT = "%.12g"
SETTINGS_FILENAME = "settings.yaml"


def curve_frame(curve):
    """One row per sweep point; `feasible` is written as 1/0."""
    rows = [
        {"eps_se": p.eps_se, "se": p.se, "power_w": p.power_w, "ee": p.ee, "feasible": int(p.feasible)}
        for p in curve.points
    ]
    return pd.DataFrame(rows, columns=CURVE_COLUMNS)


def summary_frame(averaged_curves):
    """Stacks averaged curves; `feasible` holds the share of drops feasible at that index."""
    frames = []
    for curve in averaged_curves:
        frame = curve_frame(curve)
        frame["feasible"] = curve.metadata.get("feasible_fraction", frame["feasible"].tolist())
        frame.insert(0, "protocol", curve.protocol.value)
        frames.append(frame)
    if not frames:
        return pd.DataFrame(columns=SUMMARY_COLUMNS)
    return pd.concat(frames, ignore_index=True)[SUMMARY_COLUMNS]


def _save_csv(df, filepath):
    df.to_csv(filepath, index=False, float_format=FLOAT_FORMAT, na_rep="nan", lineterminator="\n")


def curve_path(out_dir, protocol, drop):
    return Path(out_dir) / f"{protocol.value}_drop{drop:03d}.csv"


def write_curve(curve, out_dir, drop):
    filepath = curve_path(out_dir, curve.protocol, drop)
    _save_csv(curve_frame(curve), filepath)
    logger.debug("Wrote %s", filepath, extra={"protocol": curve.protocol.value, "drop": drop})
    return filepath


def write_summary(averaged_curves, out_dir):
    filepath = Path(out_dir) / "summary.csv"
    _save_csv(summary_frame(averaged_curves), filepath)
    return filepath


def write_settings(settings, out_dir):
    """Dumps the run settings as YAML that `--settings` / `Settings.load` accept."""
    filepath = Path(out_dir) / SETTINGS_FILENAME
    with open(filepath, "w", encoding="utf-8") as f:
        yaml.safe_dump(settings.model_dump(mode="json"), f, sort_keys=False)
    return filepath


def write_meta(cfg, out_dir, seed, drops, grid, protocol, settings=None):
    """
    meta.txt is the system configuration in `load_config` syntax followed by
    `#` lines holding the run selectors, solver settings and library version.

    When `settings` is given it is also written to `settings.yaml` in `out_dir`,
    so `--config meta.txt --settings settings.yaml` replays the run.
    """
    lines = [
        cfg.to_toml().rstrip("\n"),
        f"# seed = {seed}",
        f"# drops = {drops}",
        f"# grid = {grid}",
        f"# protocol = {protocol}",
        f"# version = {PACKAGE_VERSION}",
    ]
    if settings is not None:
        solver = settings.model_dump(exclude={"logging"})
        lines.append(f"# settings = {json.dumps(solver, sort_keys=True)}")
        lines.append(f"# settings_file = {write_settings(settings, out_dir).name}")
    filepath = Path(out_dir) / "meta.txt"
    filepath.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return filepath
