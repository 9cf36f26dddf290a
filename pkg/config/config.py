import math
import os
import re
import sys
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Optional, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from scipy import constants
from typing_extensions import Annotated

from utils.exceptions import ConfigParseError, ConfigValidationError

PACKAGE_VERSION = "1.0.0"

# ✅ Store configuration errors for later logging
CONFIG_ERRORS = []

SETTINGS_PATH_ENV = "PASS_SETTINGS_PATH"
SPEED_OF_LIGHT = constants.c  # exactly 2.99792458e8 m/s

LogLevel = Annotated[str, Field(pattern="^(DEBUG|INFO|WARNING|ERROR|CRITICAL)$")]


class LoggingConfig(BaseModel):
    """Logging settings validation."""
    log_level: LogLevel = "INFO"
    file_log_level: LogLevel = "DEBUG"
    console_log_level: LogLevel = "WARNING"
    log_file_path: str = "logs/pass_tradeoff.log"
    error_log_file_path: str = "logs/error.log"
    log_queue_size: int = Field(10000, gt=0)
    max_log_file_size: int = Field(5000000, gt=0)
    max_backup_files: int = Field(5, ge=0)

    enable_memory_logging: bool = True
    enable_execution_time_logging: bool = True
    enable_run_metadata: bool = True
    enable_stack_trace_logging: bool = True


class PsoHyperparams(BaseModel):
    """Particle swarm settings for the pinching-beamforming search."""
    swarm_size: int = Field(50, ge=2)
    max_iterations: int = Field(300, ge=1)
    inertia: float = Field(0.72, ge=0.0, le=1.0)
    c1: float = Field(1.49, ge=0.0)
    c2: float = Field(1.49, ge=0.0)
    xi: float = Field(1000.0, ge=0.0)
    eta: float = Field(1000.0, ge=0.0)
    v_max_frac: float = Field(0.2, gt=0.0, le=1.0)

    model_config = ConfigDict(frozen=True)


class ScaConfig(BaseModel):
    """Successive convex approximation loop controls."""
    max_iterations: int = Field(30, ge=1)
    rel_tolerance: float = Field(1e-5, gt=0.0)
    restoration_iterations: int = Field(30, ge=1)

    model_config = ConfigDict(frozen=True)


class SdpConfig(BaseModel):
    """Conic back-end selection and rank-one recovery controls."""
    solver: str = "CLARABEL"
    fallback_solver: Optional[str] = "SCS"
    tightness_threshold: float = Field(0.999, gt=0.0, le=1.0)
    randomization_candidates: int = Field(200, ge=1)

    model_config = ConfigDict(frozen=True)


class AoConfig(BaseModel):
    """Alternating optimization controls for the WM solver."""
    max_rounds: int = Field(10, ge=1)
    rel_tolerance: float = Field(1e-4, gt=0.0)
    restarts: int = Field(3, ge=1)

    model_config = ConfigDict(frozen=True)


class PlacementConfig(BaseModel):
    """Phase-alignment search controls for WS PA placement."""
    window_wavelengths: float = Field(1.0, gt=0.0)
    resolution_divisor: int = Field(512, ge=8)
    refine_tolerance: float = Field(1e-6, gt=0.0)
    max_refine_passes: int = Field(50, ge=1)

    model_config = ConfigDict(frozen=True)


class SweepConfig(BaseModel):
    """Epsilon-constraint sweep controls."""
    grid_points: int = Field(12, ge=1)
    bracket_tolerance: float = Field(0.05, gt=0.0)
    bracket_fanout: int = Field(1, ge=1)
    workers: int = Field(1, ge=0)

    model_config = ConfigDict(frozen=True)


class Settings(BaseModel):
    """
    Run settings for the toolkit.

    - ✅ Uses `pydantic` for structured validation.
    - ✅ Every section falls back to defaults when absent from the YAML file.
    - ✅ Frozen (immutable) so worker processes see exactly what was loaded.
    """
    logging: LoggingConfig = Field(default_factory=LoggingConfig)
    pso: PsoHyperparams = Field(default_factory=PsoHyperparams)
    sca: ScaConfig = Field(default_factory=ScaConfig)
    sdp: SdpConfig = Field(default_factory=SdpConfig)
    ao: AoConfig = Field(default_factory=AoConfig)
    placement: PlacementConfig = Field(default_factory=PlacementConfig)
    sweep: SweepConfig = Field(default_factory=SweepConfig)

    model_config = ConfigDict(frozen=True)

    @classmethod
    def load(cls, settings_file=None):
        """
        Loads settings from a YAML file and validates them using `pydantic`.

        Path precedence: explicit argument, then `PASS_SETTINGS_PATH`, then
        `config/settings.yaml` next to this module.

        Raises:
            FileNotFoundError: If the settings file is missing.
            yaml.YAMLError: If there is a YAML parsing error.
            ValidationError: If a setting is invalid.
        """
        if settings_file is None:
            settings_file = os.getenv(SETTINGS_PATH_ENV) or Path(__file__).resolve().parent / "settings.yaml"
        settings_file = Path(settings_file).resolve()

        try:
            with open(settings_file, "r") as file:
                settings = yaml.safe_load(file) or {}
        except FileNotFoundError:
            error_msg = f"❌ Settings file `{settings_file}` not found."
            print(error_msg, file=sys.stderr)
            CONFIG_ERRORS.append(error_msg)
            raise FileNotFoundError(error_msg)
        except yaml.YAMLError as e:
            error_msg = f"❌ Error parsing YAML file `{settings_file}`: {e}"
            print(error_msg, file=sys.stderr)
            CONFIG_ERRORS.append(error_msg)
            raise yaml.YAMLError(error_msg)

        if not isinstance(settings, dict):
            error_msg = f"❌ Settings file `{settings_file}` must hold a mapping."
            CONFIG_ERRORS.append(error_msg)
            raise ValueError(error_msg)
        return cls(**settings)

    @classmethod
    def generate_schema(cls):
        """Returns the JSON Schema of the settings model."""
        return cls.model_json_schema()


def load_settings(settings_file=None):
    """
    Returns a validated `Settings` instance.

    Usage:
        settings = load_settings()
        print(settings.pso.swarm_size)
    """
    return Settings.load(settings_file)


Gamma = Union[Annotated[float, Field(ge=0.0)], list[Annotated[float, Field(ge=0.0)]]]


class SystemConfig(BaseModel):
    """Physical and budget parameters of a PASS deployment (SI units)."""
    L: float = Field(10.0, gt=0.0)
    H: float = Field(3.0, gt=0.0)
    d: float = Field(1.0, gt=0.0)
    M: int = Field(2, ge=1)
    K: int = Field(2, ge=1)
    N: int = Field(4, ge=1)
    f_c: float = Field(28e9, gt=0.0)
    n_eff: float = Field(1.4, gt=0.0)
    sigma2: float = Field(1e-12, gt=0.0)
    P_max: float = Field(0.1, gt=0.0)
    P_RF: float = Field(0.0316, gt=0.0)
    gamma: Gamma = 1.0
    delta_min: Optional[float] = Field(None, gt=0.0)

    model_config = ConfigDict(frozen=True, extra="forbid")

    @model_validator(mode="before")
    @classmethod
    def _default_spacing(cls, data):
        if isinstance(data, dict) and data.get("delta_min") is None:
            f_c = data.get("f_c", cls.model_fields["f_c"].default)
            if isinstance(f_c, (int, float)) and f_c > 0:
                data = {**data, "delta_min": SPEED_OF_LIGHT / f_c / 2.0}
        return data

    @model_validator(mode="after")
    def _check_invariants(self):
        if self.M != self.K:
            raise ValueError(f"waveguide count M={self.M} must equal user count K={self.K}")
        if isinstance(self.gamma, list) and len(self.gamma) != self.K:
            raise ValueError(f"gamma lists {len(self.gamma)} QoS floors for K={self.K} users")
        if (self.M - 1) * self.d > self.L:
            raise ValueError(f"waveguides span {(self.M - 1) * self.d} m, wider than region side L={self.L}")
        return self

    @property
    def wavelength(self):
        return SPEED_OF_LIGHT / self.f_c

    @property
    def guided_wavelength(self):
        return self.wavelength / self.n_eff

    @property
    def sqrt_eta(self):
        return SPEED_OF_LIGHT / (4.0 * math.pi * self.f_c)

    @property
    def eta(self):
        return self.sqrt_eta ** 2

    @property
    def spacing(self):
        """Minimum PA spacing Δ (delta_min is always resolved after validation)."""
        return float(self.delta_min)

    @property
    def bounds(self):
        return (-self.L / 2.0, self.L / 2.0)

    @property
    def waveguide_y(self):
        """y_m = (m - (M+1)/2) * d for m = 1..M, centered on the origin."""
        m = np.arange(1, self.M + 1, dtype=float)
        return (m - (self.M + 1) / 2.0) * self.d

    @property
    def qos(self):
        """Per-user QoS floors γ_k as a length-K array."""
        if isinstance(self.gamma, list):
            return np.asarray(self.gamma, dtype=float)
        return np.full(self.K, float(self.gamma))

    def to_toml(self):
        """Renders the configuration in the flat `key = value` grammar `load_config` reads."""
        lines = []
        for key, value in self.model_dump().items():
            if isinstance(value, list):
                rendered = "[" + ", ".join(_format_number(v) for v in value) + "]"
            else:
                rendered = _format_number(value)
            lines.append(f"{key} = {rendered}")
        return "\n".join(lines) + "\n"


def _format_number(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    return repr(float(value))


DBM_KEYS = {"sigma2_dbm": "sigma2", "P_max_dbm": "P_max", "P_RF_dbm": "P_RF"}


def dbm_to_watts(dbm):
    return 10.0 ** ((dbm - 30.0) / 10.0)


def _decode_error_line(error):
    line = getattr(error, "lineno", None)
    if line is None:
        match = re.search(r"at line (\d+)", str(error))
        line = int(match.group(1)) if match else None
    return line


def _key_line(text, key):
    pattern = re.compile(rf"^\s*\[?\s*{re.escape(key)}\b")
    for number, raw in enumerate(text.splitlines(), start=1):
        if pattern.match(raw):
            return number
    return None


def load_config(path):
    """
    Reads a flat TOML `key = value` system configuration.

    Missing keys fall back to the reference deployment (H=3 m, d=1 m, L=10 m,
    28 GHz, 100 mW budget, 31.6 mW per RF chain, -90 dBm noise, 1 bit/s/Hz QoS).

    Raises:
        FileNotFoundError: If the file is missing.
        ConfigParseError: On TOML syntax errors or nested tables (with line number).
        ConfigValidationError: When a value breaks a `SystemConfig` invariant.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        error_msg = f"❌ Configuration file `{path}` not found."
        CONFIG_ERRORS.append(error_msg)
        raise FileNotFoundError(error_msg)

    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        error_msg = f"Error parsing configuration file `{path}`: {e}"
        CONFIG_ERRORS.append(error_msg)
        raise ConfigParseError(error_msg, line=_decode_error_line(e)) from e

    for key, value in raw.items():
        if isinstance(value, dict):
            raise ConfigParseError(f"nested table `{key}` is not supported", line=_key_line(text, key))

    for dbm_key, linear_key in DBM_KEYS.items():
        if dbm_key in raw:
            if linear_key in raw:
                raise ConfigValidationError(f"`{dbm_key}` and `{linear_key}` are mutually exclusive")
            raw[linear_key] = dbm_to_watts(float(raw.pop(dbm_key)))

    try:
        return SystemConfig(**raw)
    except ValidationError as e:
        error_msg = f"Invalid configuration `{path}`: {e}"
        CONFIG_ERRORS.append(error_msg)
        raise ConfigValidationError(error_msg) from e
