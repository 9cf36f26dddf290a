"""Geometry records: user drops and PA layouts."""

from dataclasses import dataclass

import numpy as np

from utils.exceptions import LayoutError

# Absolute slack for floating-point spacing/bound checks (meters)
GEOMETRY_TOLERANCE = 1e-12


@dataclass(frozen=True)
class UserSet:
    """User ground positions u_k = (x_k, y_k, 0), shape (K, 2)."""

    positions: np.ndarray

    def __post_init__(self):
        positions = np.asarray(self.positions, dtype=float).reshape(-1, 2)
        object.__setattr__(self, "positions", positions)

    @property
    def K(self):
        return self.positions.shape[0]

    @property
    def x(self):
        return self.positions[:, 0]

    @property
    def y(self):
        return self.positions[:, 1]

    def validate(self, cfg):
        half = cfg.L / 2.0
        if self.K != cfg.K:
            raise LayoutError(f"{self.K} users supplied for K={cfg.K}")
        if np.any(np.abs(self.positions) > half + GEOMETRY_TOLERANCE):
            raise LayoutError(f"users must lie inside the {cfg.L} m x {cfg.L} m region")
        return self


def check_positions(x, cfg, check_spacing=True):
    """
    Validates one waveguide's PA coordinates.

    Coordinates must be strictly increasing, inside [-L/2, L/2] and, when
    `check_spacing` is set, at least delta_min apart.
    """
    x = np.asarray(x, dtype=float)
    lo, hi = cfg.bounds
    if x.ndim != 1 or x.size == 0:
        raise LayoutError("a waveguide must carry at least one PA")
    if np.any(x < lo - GEOMETRY_TOLERANCE) or np.any(x > hi + GEOMETRY_TOLERANCE):
        raise LayoutError(f"PA coordinates must lie in [{lo}, {hi}]")
    gaps = np.diff(x)
    if np.any(gaps <= 0.0):
        raise LayoutError("PA coordinates must be strictly increasing")
    if check_spacing and np.any(gaps < cfg.spacing - GEOMETRY_TOLERANCE):
        raise LayoutError(f"PA spacing below delta_min={cfg.spacing:.6g} m")
    return x


@dataclass(frozen=True)
class PinchingLayout:
    """Per-waveguide ordered PA x-coordinates; waveguides[m] is x_m."""

    waveguides: tuple

    def __post_init__(self):
        object.__setattr__(self, "waveguides", tuple(np.asarray(x, dtype=float).ravel() for x in self.waveguides))

    @property
    def M(self):
        return len(self.waveguides)

    @property
    def counts(self):
        return tuple(x.size for x in self.waveguides)

    def flatten(self):
        """Concatenates x_1..x_M into the particle layout [x_{1,1}..x_{1,N}, .., x_{M,N}]."""
        return np.concatenate(self.waveguides)

    @classmethod
    def from_flat(cls, X, counts):
        X = np.asarray(X, dtype=float)
        splits = np.cumsum(counts)[:-1]
        return cls(tuple(np.split(X, splits)))

    @classmethod
    def uniform(cls, x, M):
        return cls(tuple(np.array(x, dtype=float) for _ in range(M)))

    def validate(self, cfg, check_spacing=True):
        for x in self.waveguides:
            check_positions(x, cfg, check_spacing=check_spacing)
        return self
