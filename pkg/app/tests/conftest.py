import numpy as np
import pytest

from src.data_models import TagStream
from src.models import (
    DetectorModel,
    EmitterParams,
    SourceConfig,
    SourceRates,
    StarkModel,
    TpiConfig,
    TrapParams,
)

T1_NS = 5.6


def make_emitter(**overrides) -> EmitterParams:
    values = {"radiative_lifetime": T1_NS, "excitation_rate": 1e6}
    values.update(overrides)
    return EmitterParams(**values)


def make_source(rho: float = 1.0, **emitter) -> SourceConfig:
    """Source whose signal rate is the emitter's own emission rate."""
    params = make_emitter(**emitter)
    signal = params.emission_rate
    return SourceConfig(
        emitter=params,
        rates=SourceRates(signal_rate=signal, total_rate=signal / rho),
    )


def make_tpi(
    eta: float = 1.0,
    detuning_hz: float = 0.0,
    sd_sigma_hz: float = 0.0,
    rho: float = 1.0,
) -> TpiConfig:
    return TpiConfig(
        source1=make_source(rho),
        source2=make_source(rho),
        eta=eta,
        detuning=2 * np.pi * detuning_hz,
        sd_sigma_combined=2 * np.pi * sd_sigma_hz,
    )


IDEAL_DETECTOR = DetectorModel(
    efficiency=1.0,
    timing_jitter_sigma=0.0,
    dead_time=0.0,
    dark_rate=0.0,
    resolution=1,
)

# tuning curve spanning [-100, 130] V with its kink at -50 V
ACCEPTANCE_STARK = StarkModel(
    mu_tin=-1.5e7,
    alpha=-1e5,
    beta=30.0,
    gamma_4=0.24,
    trap_field=5.0,
)
ACCEPTANCE_TRAP = TrapParams(a0=100.0, mu_trap=1.0, thermal_energy=1.0)


@pytest.fixture
def tpi():
    return make_tpi


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def poisson_stream(rng):
    """Two independent Poisson channels at 1e5 counts/s for 100 s."""
    duration_ps = 100 * 10**12
    parts = []
    for channel in (1, 2):
        n = rng.poisson(1e5 * 100)
        times = np.sort(rng.integers(0, duration_ps, n))
        parts.append((times, np.full(n, channel)))
    timestamps = np.concatenate([p[0] for p in parts])
    channels = np.concatenate([p[1] for p in parts])
    order = np.lexsort((channels, timestamps))
    return TagStream(
        timestamps=timestamps[order],
        channels=channels[order],
        channel_count=2,
        duration_ps=duration_ps,
    )
