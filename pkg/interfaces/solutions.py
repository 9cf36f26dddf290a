"""Solver inputs/outputs and tradeoff records."""

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from interfaces.geometry import PinchingLayout


class Protocol(str, Enum):
    WM = "wm"
    WS = "ws"
    BASELINE = "baseline"


class SolverStatus(str, Enum):
    OPTIMAL = "optimal"
    OPTIMAL_INACCURATE = "optimal_inaccurate"


@dataclass(frozen=True)
class SdpProblem:
    """One SCA-linearized baseband subproblem at a fixed layout."""

    channels: np.ndarray  # (K, M) complex, row k is h_k
    qos: np.ndarray  # (K,) γ_k
    eps_se: float
    p_max: float
    sigma2: float
    expansion: tuple  # K Hermitian PSD (M, M) matrices W_k^(l)

    @property
    def K(self):
        return self.channels.shape[0]

    @property
    def M(self):
        return self.channels.shape[1]


@dataclass
class SdpSolution:
    matrices: list  # K Hermitian PSD (M, M) matrices, watts
    objective: float
    residuals: dict
    status: SolverStatus

    @property
    def power(self):
        return float(sum(np.real(np.trace(W)) for W in self.matrices))


@dataclass
class BasebandSolution:
    """Outcome of the SCA loop at a fixed layout."""

    matrices: list  # relaxed W_k at convergence
    beams: np.ndarray  # (K, M) rank-one beams, row k is w_k
    tightness: np.ndarray  # λ_max / Tr per user
    power: float  # Σ ||w_k||^2 after certification
    iterations: int
    certified: bool


@dataclass
class PowerAllocation:
    powers: np.ndarray  # P_k, watts

    @property
    def total(self):
        return float(np.sum(self.powers))


@dataclass
class WmSolution:
    layout: PinchingLayout
    beams: np.ndarray  # (K, M) complex, row k is w_k
    rates: np.ndarray
    se: float
    power: float
    ee: float
    feasible: bool = True
    tightness: Optional[np.ndarray] = None
    trace: list = field(default_factory=list)  # accepted transmit power per AO round


@dataclass
class WsSolution:
    waveguides: np.ndarray  # selected waveguide index m* per user (0-based)
    placements: list  # per-user PA coordinate vector, length M*N
    channel_gains: np.ndarray  # |h_k|^2
    powers: np.ndarray  # P_k
    rates: np.ndarray  # R_k^WS including the 1/K factor
    se: float
    power: float
    ee: float
    feasible: bool = True


@dataclass(frozen=True)
class TradeoffPoint:
    eps_se: float
    se: float
    power_w: float
    ee: float
    protocol: Protocol
    feasible: bool


@dataclass
class TradeoffCurve:
    protocol: Protocol
    points: list
    metadata: dict = field(default_factory=dict)

    @property
    def feasible_points(self):
        return [p for p in self.points if p.feasible]

    @property
    def max_se(self):
        feasible = self.feasible_points
        return max(p.se for p in feasible) if feasible else float("nan")

    @property
    def peak_ee(self):
        feasible = self.feasible_points
        return max(p.ee for p in feasible) if feasible else float("nan")
