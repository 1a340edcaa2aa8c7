import os
from dataclasses import dataclass
from typing import Optional, Tuple

from dotenv import load_dotenv

TOOL_VERSION = "0.1.0"

THREADS_ENV = "HOMLAB_THREADS"
LOG_FILE_ENV = "HOMLAB_LOG_FILE"


@dataclass
class QuadratureSpec:
    """Gauss-Legendre rule for the spectral-diffusion convolution.

    `nodes` is the node count per panel. Panels are added per delay so that
    no panel spans more than `nodes` radians of cosine phase.
    """

    nodes: int = 129
    span_sigmas: float = 6.0
    max_panels: int = 512


@dataclass
class ResponseSpec:
    """Gauss-Legendre panels for averaging a model over jitter and a bin.

    Like `QuadratureSpec`, panels are added until none spans more than its
    node count in radians at the highest beat frequency of the model.
    """

    bin_nodes: int = 8
    jitter_nodes: int = 16
    span_sigmas: float = 6.0
    max_panels: int = 64


@dataclass
class CorrelationSettings:
    bin_width_ps: int = 512
    window_ps: int = 100_000
    chunk_events: int = 200_000


@dataclass
class FitSettings:
    max_iter: int = 500
    xtol: float = 1e-10
    initial_damping: float = 1e-3
    max_damping: float = 1e16
    condition_limit: float = 1e8


@dataclass
class StarkSolverSettings:
    tolerance_hz: float = 1e3
    scan_points: int = 4001
    default_bracket_v: Tuple[float, float] = (-100.0, 130.0)


@dataclass
class RuntimeSettings:
    threads: int = 1
    log_file: Optional[str] = None


def get_default_quadrature() -> QuadratureSpec:
    return QuadratureSpec()


def get_default_response() -> ResponseSpec:
    return ResponseSpec()


def get_default_correlation() -> CorrelationSettings:
    return CorrelationSettings()


def get_default_fit_settings() -> FitSettings:
    return FitSettings()


def get_default_stark_solver() -> StarkSolverSettings:
    return StarkSolverSettings()


def get_runtime_settings(threads: Optional[int] = None) -> RuntimeSettings:
    """Resolve runtime settings: explicit argument, then env, then default.

    A `.env` file in the working directory is honoured.
    """
    load_dotenv()

    if threads is None:
        raw = os.getenv(THREADS_ENV)
        if raw:
            try:
                threads = int(raw)
            except ValueError:
                raise ValueError(
                    f"{THREADS_ENV} must be an integer, got '{raw}'"
                )

    threads = max(1, threads or 1)
    return RuntimeSettings(
        threads=threads,
        log_file=os.getenv(LOG_FILE_ENV) or None,
    )
