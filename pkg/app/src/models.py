import math
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    field_validator,
    model_validator,
)

TWO_PI = 2.0 * math.pi


class G2Mode(str, Enum):
    RATE_EQUATION = "rate_equation"
    COHERENT_DRIVE = "coherent_drive"


class MixingMode(str, Enum):
    INTERFERING = "interfering"
    DISTINGUISHABLE = "distinguishable"


class DomainModel(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class EmitterParams(DomainModel):
    radiative_lifetime: float = Field(
        ..., gt=0, description="Radiative lifetime T1 in ns."
    )
    dephasing_rate: float = Field(
        0.0,
        ge=0,
        description="Pure dephasing rate in rad/s, added to 1/(2 T1).",
    )
    center_frequency_offset: float = Field(
        0.0,
        description="Transition frequency relative to a shared reference, Hz.",
    )
    spectral_diffusion_sigma: float = Field(
        0.0, ge=0, description="Spectral diffusion standard deviation, Hz."
    )
    spectral_diffusion_correlation_time: float = Field(
        0.0,
        ge=0,
        description=(
            "Time in ns over which a diffused frequency is held before a "
            "fresh draw. 0 draws independently for every photon."
        ),
    )
    excitation_rate: float = Field(
        0.0, ge=0, description="Incoherent pump rate in 1/s."
    )
    rabi_frequency: float = Field(
        0.0,
        ge=0,
        description="Coherent drive Rabi frequency in rad/s.",
    )

    @property
    def t1(self) -> float:
        """Radiative lifetime in seconds."""
        return self.radiative_lifetime * 1e-9

    @property
    def decay_rate(self) -> float:
        return 1.0 / self.t1

    @property
    def coherence_rate(self) -> float:
        """gamma = 1/(2 T1) + pure dephasing, in 1/s."""
        return 0.5 / self.t1 + self.dephasing_rate

    @property
    def linewidth(self) -> float:
        """FWHM linewidth in Hz, the Fourier limit at zero dephasing."""
        return self.coherence_rate / math.pi

    @property
    def emission_rate(self) -> float:
        """Mean photon rate of the pump/decay renewal process in 1/s."""
        if self.excitation_rate == 0:
            return 0.0
        return 1.0 / (1.0 / self.excitation_rate + self.t1)


class SourceRates(DomainModel):
    signal_rate: float = Field(..., ge=0, description="S_i in counts/s.")
    total_rate: float = Field(
        ..., gt=0, description="I_i in counts/s, signal plus background."
    )

    @model_validator(mode="after")
    def _signal_within_total(self) -> "SourceRates":
        if self.signal_rate > self.total_rate:
            raise ValueError(
                f"signal_rate ({self.signal_rate}) exceeds total_rate "
                f"({self.total_rate})"
            )
        return self

    @property
    def signal_fraction(self) -> float:
        return self.signal_rate / self.total_rate


class SourceConfig(DomainModel):
    emitter: EmitterParams
    rates: SourceRates


class TpiConfig(DomainModel):
    source1: SourceConfig
    source2: SourceConfig
    eta: float = Field(
        1.0, ge=0, le=1, description="Visibility reduction factor."
    )
    detuning: float = Field(
        0.0, description="Delta omega = omega1 - omega2 in rad/s."
    )
    sd_sigma_combined: float = Field(
        0.0,
        description=(
            "Standard deviation of the detuning kernel in rad/s. Checked by "
            "the evaluators, which reject negative values."
        ),
    )
    single_mode: G2Mode = G2Mode.RATE_EQUATION

    @property
    def c1(self) -> float:
        i1 = self.source1.rates.total_rate
        i2 = self.source2.rates.total_rate
        return i1 / (i1 + i2)

    @property
    def c2(self) -> float:
        i1 = self.source1.rates.total_rate
        i2 = self.source2.rates.total_rate
        return i2 / (i1 + i2)

    @property
    def overlap_factor(self) -> float:
        """eta * S1 S2 / (I1 I2)."""
        return (
            self.eta
            * self.source1.rates.signal_fraction
            * self.source2.rates.signal_fraction
        )

    @classmethod
    def from_sources(
        cls,
        source1: SourceConfig,
        source2: SourceConfig,
        eta: float = 1.0,
        single_mode: G2Mode = G2Mode.RATE_EQUATION,
    ) -> "TpiConfig":
        """Detuning and combined diffusion width from the two emitters."""
        e1, e2 = source1.emitter, source2.emitter
        detuning = TWO_PI * (
            e1.center_frequency_offset - e2.center_frequency_offset
        )
        sigma = TWO_PI * math.hypot(
            e1.spectral_diffusion_sigma, e2.spectral_diffusion_sigma
        )
        return cls(
            source1=source1,
            source2=source2,
            eta=eta,
            detuning=detuning,
            sd_sigma_combined=sigma,
            single_mode=single_mode,
        )


class InhomogeneousDist(DomainModel):
    mean_offset: float = Field(0.0, description="Mean ZPL offset in Hz.")
    sigma: float = Field(..., gt=0, description="ZPL spread in Hz.")


class StarkModel(DomainModel):
    mu_tin: float = Field(0.0, description="Linear coefficient, Hz/field.")
    alpha: float = Field(0.0, description="2nd-order coefficient.")
    beta: float = Field(0.0, description="3rd-order coefficient.")
    gamma_4: float = Field(0.0, description="4th-order coefficient.")
    field_offset: float = Field(
        0.0, description="Static internal field, field units."
    )
    trap_field: float = Field(
        0.0, description="Field offset produced by the charge trap."
    )
    voltage_to_field: float = Field(
        1.0, description="Field units per applied volt."
    )

    @model_validator(mode="after")
    def _finite_and_scaled(self) -> "StarkModel":
        for name, value in self.model_dump().items():
            if not math.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value}")
        if self.voltage_to_field == 0:
            raise ValueError("voltage_to_field must be non-zero")
        return self

    def field_at(self, voltage):
        return self.voltage_to_field * voltage + self.field_offset


class TrapParams(DomainModel):
    a0: float = Field(0.0, description="Trap population offset, energy.")
    mu_trap: float = Field(0.0, description="Trap dipole moment.")
    thermal_energy: float = Field(
        1.0, gt=0, description="k_B T in the same energy units."
    )


class StarkParams(DomainModel):
    """A Stark model together with its charge trap, as stored on disk."""

    model: StarkModel = Field(default_factory=StarkModel)
    trap: TrapParams = Field(default_factory=TrapParams)


class DetectorModel(DomainModel):
    efficiency: float = Field(0.6, ge=0, le=1)
    timing_jitter_sigma: float = Field(
        350.0, ge=0, description="Gaussian timing jitter in ps."
    )
    dead_time: float = Field(22.0, ge=0, description="Dead time in ns.")
    dark_rate: float = Field(100.0, ge=0, description="Dark counts per s.")
    resolution: int = Field(
        1, gt=0, description="Tag quantization in ps."
    )


class ExperimentConfig(DomainModel):
    sources: List[SourceConfig] = Field(..., min_length=1, max_length=2)
    detector: DetectorModel = Field(default_factory=DetectorModel)
    detector_port2: Optional[DetectorModel] = Field(
        None,
        description="Detector on output port 2; defaults to `detector`.",
    )
    mixing_mode: MixingMode = MixingMode.INTERFERING
    eta: float = Field(1.0, ge=0, le=1)
    duration: float = Field(..., gt=0, description="Acquisition time in s.")
    seed: int = Field(0, ge=0)
    slices: int = Field(8, ge=1, description="Independent time slices.")
    coherence_window: float = Field(
        10.0,
        gt=0,
        description="Pairing window for interference, in units of T1.",
    )

    @model_validator(mode="after")
    def _shared_resolution(self) -> "ExperimentConfig":
        if (
            self.detector_port2 is not None
            and self.detector_port2.resolution != self.detector.resolution
        ):
            raise ValueError(
                "detector_port2.resolution must equal detector.resolution"
            )
        return self

    @property
    def detectors(self) -> Tuple[DetectorModel, DetectorModel]:
        return (self.detector, self.detector_port2 or self.detector)


class FileDigest(BaseModel):
    path: str
    sha256: str


class RunManifest(BaseModel):
    command: str
    tool_version: str
    config: Dict[str, Any] = Field(default_factory=dict)
    seed: Optional[int] = None
    inputs: List[FileDigest] = Field(default_factory=list)
    outputs: List[FileDigest] = Field(default_factory=list)
    started_at: str
    wall_clock_s: float = Field(..., ge=0)
    metadata: Dict[str, Any] = Field(default_factory=dict)

    @field_validator("outputs")
    @classmethod
    def _outputs_hashed(cls, value: List[FileDigest]) -> List[FileDigest]:
        for digest in value:
            if not digest.sha256:
                raise ValueError(f"output '{digest.path}' has no hash")
        return value
