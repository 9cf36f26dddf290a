"""
Command-line front end: reads the system configuration, runs the requested
sweeps over seeded user drops and writes per-drop CSVs, summary.csv and meta.txt.

Exit codes: 0 success, 2 when some curve has no feasible point, 1 on errors.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from adapters.results_writer import write_curve, write_meta, write_summary
from di.di_container import Container
from interfaces.solutions import Protocol
from services.tradeoff import average_curves, run_drops
from utils.exceptions import PassError
from utils.logging_config import shutdown_logging

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INFEASIBLE = 2


class RunSpec(BaseModel):
    """One experiment; seed and grid are echoed verbatim into meta.txt."""
    config: Path
    protocol: Literal["wm", "ws", "baseline", "all"] = "all"
    seed: int = Field(0, ge=0, lt=2 ** 64)
    drops: int = Field(1, ge=1)
    grid: Optional[int] = Field(None, ge=1)
    out: Path = Path("results")
    settings: Optional[Path] = None

    model_config = ConfigDict(frozen=True)

    @property
    def protocols(self):
        return list(Protocol) if self.protocol == "all" else [Protocol(self.protocol)]


def build_parser():
    parser = argparse.ArgumentParser(
        prog="pass-tradeoff",
        description="SE-EE tradeoff sweeps for pinching-antenna systems (WM, WS, conventional baseline)",
    )
    parser.add_argument("--config", required=True, type=Path, help="System configuration file (flat key = value)")
    parser.add_argument("--protocol", choices=["wm", "ws", "baseline", "all"], default="all")
    parser.add_argument("--seed", type=int, default=0, help="Master seed (unsigned 64-bit)")
    parser.add_argument("--drops", type=int, default=1, help="Number of seeded user drops")
    parser.add_argument("--grid", type=int, default=None, help="Sweep grid size (default: settings sweep.grid_points)")
    parser.add_argument("--out", type=Path, default=Path("results"), help="Output directory")
    parser.add_argument("--settings", type=Path, default=None, help="Run settings YAML (default: config/settings.yaml)")
    return parser


def run(spec: RunSpec, container: Container = None):
    """Executes the sweeps described by `spec` and returns the process exit code."""
    container = container or Container()
    container.config.from_dict({
        "settings_path": str(spec.settings) if spec.settings else None,
        "system_path": str(spec.config),
    })

    try:
        settings = container.settings()
        _, listener = container.logging()
    except (PassError, OSError, ValueError, yaml.YAMLError) as e:
        print(f"❌ Failed to initialize run: {e}", file=sys.stderr)
        return EXIT_ERROR

    grid = spec.grid or settings.sweep.grid_points
    context = {"seed": spec.seed}
    dead_curves = 0
    try:
        cfg = container.system_config()
        spec.out.mkdir(parents=True, exist_ok=True)
        logger.info(
            "ℹ️ Run started: protocol=%s drops=%d grid=%d", spec.protocol, spec.drops, grid, extra=context,
        )

        averaged = []
        for protocol in spec.protocols:
            curves = run_drops(protocol, cfg, spec.drops, grid, spec.seed, settings)
            for drop, curve in enumerate(curves):
                write_curve(curve, spec.out, drop)
                if not curve.feasible_points:
                    dead_curves += 1
                    logger.warning("⚠️ No feasible point", extra={**context, "protocol": protocol.value, "drop": drop})
            summary = average_curves(curves)
            logger.info(
                "✅ %s: max SE %.4f bit/s/Hz, peak EE %.4f bit/s/Hz/W", protocol.value, summary.max_se, summary.peak_ee,
                extra={**context, "protocol": protocol.value},
            )
            averaged.append(summary)

        write_summary(averaged, spec.out)
        write_meta(cfg, spec.out, spec.seed, spec.drops, grid, spec.protocol, settings)
        logger.info("✅ Results written to %s", spec.out, extra=context)
    except (PassError, OSError) as e:
        logger.error("❌ Run failed: %s", e, exc_info=True, extra=context)
        return EXIT_ERROR
    finally:
        shutdown_logging(listener)

    return EXIT_INFEASIBLE if dead_curves else EXIT_OK


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        spec = RunSpec(**vars(args))
    except ValidationError as e:
        print(f"❌ Invalid arguments: {e}", file=sys.stderr)
        return EXIT_ERROR
    return run(spec)
