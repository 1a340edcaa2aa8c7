"""
Fit problem and result definitions, plus the init documents of the three
model families.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from src.errors import PreconditionError
from src.models import EmitterParams, G2Mode, StarkParams, TpiConfig

ModelFunction = Callable[[np.ndarray, np.ndarray], np.ndarray]


class FitStatus(str, Enum):
    CONVERGED = "converged"
    MAX_ITER = "max_iter"
    SINGULAR = "singular"


@dataclass
class FitProblem:
    """Weighted least-squares problem over a named parameter vector.

    `model(params, x)` receives the full vector, fixed entries included.
    Without `sigma` the points get unit weights and the covariance is
    scaled by the reduced chi-square.
    """

    model: ModelFunction
    x: np.ndarray
    y: np.ndarray
    initial: np.ndarray
    names: List[str]
    sigma: Optional[np.ndarray] = None
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None
    fixed: Optional[np.ndarray] = None
    absolute_sigma: bool = True
    metadata: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        self.initial = np.asarray(self.initial, dtype=float)
        n = self.initial.size

        if len(self.names) != n:
            raise PreconditionError(
                f"{len(self.names)} names for {n} parameters"
            )
        if self.sigma is None:
            self.sigma = np.ones_like(self.y)
            self.absolute_sigma = False
        self.sigma = np.asarray(self.sigma, dtype=float)
        if self.sigma.shape != self.y.shape:
            raise PreconditionError("sigma and y differ in shape")
        if np.any(~(self.sigma > 0)):
            raise PreconditionError("every sigma must be positive")

        self.lower = (
            np.full(n, -np.inf)
            if self.lower is None
            else np.asarray(self.lower, dtype=float)
        )
        self.upper = (
            np.full(n, np.inf)
            if self.upper is None
            else np.asarray(self.upper, dtype=float)
        )
        self.fixed = (
            np.zeros(n, dtype=bool)
            if self.fixed is None
            else np.asarray(self.fixed, dtype=bool)
        )
        outside = (self.initial < self.lower) | (self.initial > self.upper)
        if np.any(outside):
            names = [self.names[i] for i in np.flatnonzero(outside)]
            raise PreconditionError(
                f"initial values outside bounds: {', '.join(names)}"
            )
        if self.y.size < self.free_count:
            raise PreconditionError(
                f"{self.y.size} data points for {self.free_count} free "
                f"parameters"
            )

    @property
    def free_count(self) -> int:
        return int(np.count_nonzero(~self.fixed))

    @property
    def free_index(self) -> np.ndarray:
        return np.flatnonzero(~self.fixed)


class FitResult(BaseModel):
    model_config = ConfigDict(protected_namespaces=())

    model: str = ""
    params: Dict[str, float]
    sigmas: Dict[str, Optional[float]] = Field(
        default_factory=dict,
        description="Standard deviations; null for unidentifiable ones.",
    )
    covariance: List[List[float]] = Field(default_factory=list)
    chi2: float = 0.0
    chi2_reduced: float
    iterations: int
    status: FitStatus
    fixed: List[str] = Field(default_factory=list)
    unidentifiable: List[str] = Field(default_factory=list)
    history: List[float] = Field(
        default_factory=list, description="chi2 after each accepted step."
    )
    derived: Dict[str, Optional[float]] = Field(default_factory=dict)

    def vector(self, names: List[str]) -> np.ndarray:
        return np.array([self.params[n] for n in names])

    def flag(self, *names: str) -> None:
        for name in names:
            if name not in self.unidentifiable and name not in self.fixed:
                self.unidentifiable.append(name)
                self.sigmas[name] = None


HOM_PARAMETERS = [
    "eta",
    "detuning",
    "sd_sigma",
    "gamma1",
    "gamma2",
    "rho1",
    "rho2",
    "scale",
]
RABI_PARAMETERS = [
    "rabi_frequency",
    "dephasing_rate",
    "excitation_rate",
    "radiative_lifetime",
    "rho",
    "scale",
]
STARK_PARAMETERS = [
    "mu_tin",
    "alpha",
    "beta",
    "gamma_4",
    "trap_field",
    "a0",
    "mu_trap",
    "thermal_energy",
    "voltage_to_field",
    "field_offset",
]


def _check_names(value: List[str], allowed: List[str]) -> List[str]:
    unknown = [v for v in value if v not in allowed]
    if unknown:
        raise ValueError(
            f"unknown parameter(s) {', '.join(unknown)}; "
            f"choose from {', '.join(allowed)}"
        )
    return value


class HomFitInit(BaseModel):
    tpi: TpiConfig = Field(
        ...,
        description=(
            "Starting configuration. Emitter lifetimes and source rates "
            "fix c1, c2 and the single-source terms."
        ),
    )
    free: List[str] = Field(
        default_factory=lambda: ["eta", "detuning", "sd_sigma", "scale"]
    )
    jitter_sigma_ps: float = Field(
        0.0, ge=0, description="Delay jitter of the detector pair, ps."
    )
    bin_width_ps: Optional[float] = Field(
        None, gt=0, description="Defaults to the curve's bin width."
    )
    fit_window_ps: Optional[float] = Field(
        None, gt=0, description="Only bins with |tau| <= window are fitted."
    )
    estimate_from_data: bool = Field(
        True,
        description="Start detuning and sd_sigma from the curve's spectrum.",
    )

    @field_validator("free")
    @classmethod
    def _known(cls, value: List[str]) -> List[str]:
        return _check_names(value, HOM_PARAMETERS)


class RabiFitInit(BaseModel):
    emitter: EmitterParams
    mode: G2Mode = G2Mode.COHERENT_DRIVE
    rho: float = Field(1.0, ge=0, le=1, description="Signal fraction S/I.")
    scale: float = Field(1.0, gt=0)
    free: Optional[List[str]] = Field(
        None, description="Defaults depend on the mode."
    )
    jitter_sigma_ps: float = Field(0.0, ge=0)
    bin_width_ps: Optional[float] = Field(None, gt=0)

    @field_validator("free")
    @classmethod
    def _known(cls, value: Optional[List[str]]) -> Optional[List[str]]:
        return None if value is None else _check_names(value, RABI_PARAMETERS)

    def free_parameters(self) -> List[str]:
        if self.free is not None:
            return self.free
        if self.mode is G2Mode.COHERENT_DRIVE:
            return ["rabi_frequency", "dephasing_rate", "rho", "scale"]
        return ["excitation_rate", "rho", "scale"]


class StarkFitInit(BaseModel):
    params: StarkParams = Field(default_factory=StarkParams)
    fixed: List[str] = Field(
        default_factory=lambda: [
            "thermal_energy",
            "voltage_to_field",
            "field_offset",
        ]
    )
    polynomial_start: bool = Field(
        True,
        description=(
            "Seed the polynomial coefficients from a quartic least-squares "
            "fit when they are all zero."
        ),
    )
    range_bracket_v: Optional[List[float]] = Field(
        None,
        min_length=2,
        max_length=2,
        description="Voltage span for the tuning range; defaults to the data.",
    )

    @field_validator("fixed")
    @classmethod
    def _known(cls, value: List[str]) -> List[str]:
        return _check_names(value, STARK_PARAMETERS)
