"""
Monte Carlo model of the two-node interference experiment.

Emitters are renewal processes (exponential re-excitation followed by an
exponential emission delay). At the beam splitter each photon picks a port
spin s = +-1 with no bias; signal photons from different sources closer
than the coherence window are correlated so that
E[s_i s_j] = eta |g1_i| |g1_j| cos(dw tau), i.e. they leave through
different ports with probability 1/2 [1 - eta |g1_1| |g1_2| cos(dw tau)].
Detectors then thin, jitter, add dark counts, apply dead time and quantize.

Internal times are float ps until quantization to integer ps tags.
"""

import logging
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.data_models import PhotonStream, TagStream
from src.errors import DomainError, PreconditionError
from src.models import (
    DetectorModel,
    EmitterParams,
    ExperimentConfig,
    MixingMode,
    SourceRates,
)
from src.parallel import WorkerPool

logger = logging.getLogger("montecarlo")

PS_PER_S = 1e12
TWO_PI = 2.0 * np.pi

SeedLike = Union[int, np.random.SeedSequence, np.random.Generator]


def excitation_rate_for(
    target_detected_rate: float, t1: float, efficiency: float
) -> float:
    """Pump rate R that gives `target_detected_rate` counts/s after detection.

    The renewal process emits 1 / (1/R + T1) photons per second; `t1` is in
    seconds.
    """
    if not target_detected_rate > 0 or not efficiency > 0:
        raise DomainError("target rate and efficiency must be positive")
    inverse = efficiency / target_detected_rate - t1
    if inverse <= 0:
        raise DomainError(
            f"{target_detected_rate:.3g} counts/s exceeds the saturated "
            f"rate {efficiency / t1:.3g} counts/s"
        )
    return 1.0 / inverse


def _renewal_times(
    rng: np.random.Generator, rate: float, t1_ps: float, duration_ps: float
) -> np.ndarray:
    mean_cycle = 1.0 / rate + t1_ps
    expected = duration_ps / mean_cycle
    batch = int(expected + 5.0 * np.sqrt(expected) + 16)

    chunks = []
    last = 0.0
    while last < duration_ps:
        cycles = rng.exponential(1.0 / rate, batch) + rng.exponential(
            t1_ps, batch
        )
        times = last + np.cumsum(cycles)
        chunks.append(times)
        last = float(times[-1])

    emitted = np.concatenate(chunks)
    return emitted[emitted < duration_ps]


def _diffused_frequencies(
    rng: np.random.Generator, emitter: EmitterParams, times: np.ndarray
) -> np.ndarray:
    center = emitter.center_frequency_offset
    sigma = emitter.spectral_diffusion_sigma
    if sigma == 0 or times.size == 0:
        return np.full(times.size, center)

    hold_ps = emitter.spectral_diffusion_correlation_time * 1e3
    if hold_ps <= 0:
        return center + rng.normal(0.0, sigma, times.size)

    blocks = np.floor(times / hold_ps).astype(np.int64)
    unique, inverse = np.unique(blocks, return_inverse=True)
    draws = rng.normal(0.0, sigma, unique.size)
    return center + draws[inverse]


def simulate_stream(
    emitter: EmitterParams,
    rates: SourceRates,
    duration: float,
    seed: SeedLike,
    source_id: int = 0,
) -> PhotonStream:
    """Photons emitted by one source during `duration` seconds.

    Signal photons follow the renewal process at `emitter.excitation_rate`.
    When `rates` has signal_rate < total_rate an uncorrelated background
    stream at emission_rate * (I/S - 1) is added; background photons never
    interfere.
    """
    if not duration > 0:
        raise DomainError(f"duration must be positive, got {duration}")
    if rates.signal_rate == 0:
        raise DomainError("simulation needs a non-zero signal_rate")

    rng = np.random.default_rng(seed)
    duration_ps = duration * PS_PER_S
    t1_ps = emitter.radiative_lifetime * 1e3

    if emitter.excitation_rate > 0:
        signal = _renewal_times(
            rng, emitter.excitation_rate / PS_PER_S, t1_ps, duration_ps
        )
    else:
        signal = np.empty(0)

    background_rate = emitter.emission_rate * (1.0 / rates.signal_fraction - 1)
    n_background = rng.poisson(background_rate * duration)
    background = np.sort(rng.uniform(0.0, duration_ps, n_background))

    times = np.concatenate([signal, background])
    is_background = np.concatenate(
        [np.zeros(signal.size, bool), np.ones(background.size, bool)]
    )
    order = np.argsort(times, kind="stable")
    times = times[order]
    is_background = is_background[order]

    frequencies = _diffused_frequencies(rng, emitter, times)
    frequencies[is_background] = emitter.center_frequency_offset

    return PhotonStream(
        source_id=source_id,
        emission_time=times,
        frequency_offset=frequencies,
        background=is_background,
        envelope_decay=emitter.decay_rate,
    )


def _overlap_clusters(
    times: np.ndarray, window_ps: float
) -> Tuple[np.ndarray, np.ndarray]:
    """Start offsets and sizes of runs chained by gaps below the window."""
    if times.size == 0:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    breaks = np.diff(times) >= window_ps
    starts = np.flatnonzero(np.concatenate([[True], breaks]))
    sizes = np.diff(np.append(starts, times.size))
    return starts, sizes


def _spin_correlations(
    members: np.ndarray,
    times: np.ndarray,
    source: np.ndarray,
    frequency: np.ndarray,
    coherence: np.ndarray,
    eta: float,
    window_ps: float,
) -> Tuple[np.ndarray, np.ndarray]:
    """Target E[s_i s_j] inside each cluster and the interfering-pair mask.

    Cross-source pairs inside the window get eta |g1_i g1_j| cos(dw tau),
    everything else 0; the diagonal is 1.
    """
    t = times[members]
    src = source[members]
    f = frequency[members]
    tau_ps = np.abs(t[:, :, None] - t[:, None, :])
    tau = tau_ps / PS_PER_S
    gamma = coherence[src]
    g1 = np.exp(-0.5 * (gamma[:, :, None] + gamma[:, None, :]) * tau)
    beat = np.cos(TWO_PI * (f[:, :, None] - f[:, None, :]) * tau)
    interfering = (src[:, :, None] != src[:, None, :]) & (tau_ps < window_ps)
    target = np.where(interfering, eta * g1 * beat, 0.0)
    diagonal = np.arange(members.shape[1])
    target[:, diagonal, diagonal] = 1.0
    return target, interfering


def _route_ports(
    rng: np.random.Generator,
    times: np.ndarray,
    source: np.ndarray,
    frequency: np.ndarray,
    background: np.ndarray,
    coherence: np.ndarray,
    eta: float,
    window_ps: float,
) -> Tuple[np.ndarray, Dict[str, int]]:
    """Beam-splitter output port (0 or 1) of every photon.

    Ports are spins s = +-1. Signal photons chained by gaps shorter than the
    window form clusters, routed in time order: each spin is drawn with
    conditional mean sum_i w_i s_i over the earlier members, where C w = v
    holds for the target correlations C among the earlier members and v
    towards the new one. Every pair then meets its target and every spin
    stays unbiased. Means outside [-1, 1] (dense overlaps at high
    visibility) are clipped and counted.
    """
    ports = rng.integers(0, 2, times.size)
    counters = {"paired": 0, "triple_overlaps": 0, "clipped_routing": 0}

    signal = np.flatnonzero(~background)
    starts, sizes = _overlap_clusters(times[signal], window_ps)
    for size in np.unique(sizes[sizes > 1]):
        k = int(size)
        members = signal[starts[sizes == k][:, None] + np.arange(k)]
        target, interfering = _spin_correlations(
            members, times, source, frequency, coherence, eta, window_ps
        )
        spins = 1 - 2 * ports[members]
        for j in range(1, k):
            towards = target[:, :j, j]
            if j == 1:
                weights = towards
            else:
                inverse = np.linalg.pinv(target[:, :j, :j], hermitian=True)
                weights = (inverse @ towards[:, :, None])[:, :, 0]
            mean = np.sum(weights * spins[:, :j], axis=1)
            counters["clipped_routing"] += int(
                np.count_nonzero(np.abs(mean) > 1.0)
            )
            mean = np.clip(mean, -1.0, 1.0)
            spins[:, j] = np.where(
                rng.random(mean.size) < 0.5 * (1.0 + mean), 1, -1
            )
        ports[members] = (1 - spins) // 2

        counters["paired"] += int(np.count_nonzero(np.triu(interfering, 1)))
        if k > 2:
            counters["triple_overlaps"] += int(members.shape[0])

    if counters["clipped_routing"]:
        logger.warning(
            f"{counters['clipped_routing']} photon(s) in dense overlaps "
            f"could not meet all pair correlations; their means were clipped"
        )
    return ports, counters


def _dead_time_mask(times: np.ndarray, dead_ps: float) -> np.ndarray:
    """Events that survive non-paralyzable dead time, on sorted times."""
    keep = np.ones(times.size, dtype=bool)
    if dead_ps <= 0 or times.size < 2:
        return keep
    while True:
        index = np.flatnonzero(keep)
        violates = np.concatenate([[False], np.diff(times[index]) < dead_ps])
        if not violates.any():
            return keep
        # a violator whose predecessor is clean follows a surely kept event
        certain = violates & ~np.concatenate([[False], violates[:-1]])
        keep[index[certain]] = False


def _apply_dead_time(times: np.ndarray, dead_ps: float) -> np.ndarray:
    if dead_ps <= 0 or times.size < 2:
        return times
    return times[_dead_time_mask(times, dead_ps)]


def _detect(
    rng: np.random.Generator,
    times: np.ndarray,
    detector: DetectorModel,
    duration_ps: int,
) -> Tuple[np.ndarray, Dict[str, int]]:
    survived = times[rng.random(times.size) < detector.efficiency]
    if detector.timing_jitter_sigma > 0:
        survived = survived + rng.normal(
            0.0, detector.timing_jitter_sigma, survived.size
        )

    n_dark = rng.poisson(detector.dark_rate * duration_ps / PS_PER_S)
    darks = rng.uniform(0.0, duration_ps, n_dark)

    clicks = np.sort(np.concatenate([survived, darks]))
    clicks = _apply_dead_time(clicks, detector.dead_time * 1e3)
    clicks = clicks[(clicks >= 0) & (clicks < duration_ps)]

    resolution = detector.resolution
    tags = (np.floor(clicks / resolution) * resolution).astype(np.int64)
    return tags, {"photons_in": int(times.size), "dark_counts": int(n_dark)}


def interfere_and_detect(
    streams: Sequence[PhotonStream],
    config: ExperimentConfig,
    duration_ps: Optional[int] = None,
    seed: Optional[SeedLike] = None,
) -> TagStream:
    """Route photons through the beam splitter and detect both ports.

    Port 0 feeds channel 1 and port 1 feeds channel 2.
    """
    for stream in streams:
        if not stream.is_sorted():
            raise PreconditionError(
                f"photon stream of source {stream.source_id} is not sorted"
            )
    if duration_ps is None:
        duration_ps = int(round(config.duration * PS_PER_S))
    rng = np.random.default_rng(config.seed if seed is None else seed)

    times = np.concatenate([s.emission_time for s in streams])
    source = np.concatenate(
        [np.full(len(s), s.source_id, dtype=np.int64) for s in streams]
    )
    frequency = np.concatenate([s.frequency_offset for s in streams])
    background = np.concatenate([s.background for s in streams])
    order = np.argsort(times, kind="stable")
    times, source = times[order], source[order]
    frequency, background = frequency[order], background[order]

    coherence = np.array(
        [src.emitter.coherence_rate for src in config.sources]
    )
    if config.mixing_mode is MixingMode.INTERFERING and len(streams) > 1:
        longest_t1_ps = max(
            src.emitter.radiative_lifetime for src in config.sources
        ) * 1e3
        ports, routing = _route_ports(
            rng,
            times,
            source,
            frequency,
            background,
            coherence,
            config.eta,
            config.coherence_window * longest_t1_ps,
        )
    else:
        ports = rng.integers(0, 2, times.size)
        routing = {"paired": 0, "triple_overlaps": 0, "clipped_routing": 0}

    all_tags = []
    all_channels = []
    counters: Dict[str, int] = {
        "generated": int(times.size),
        "background": int(np.count_nonzero(background)),
        **routing,
    }
    for port, detector in enumerate(config.detectors):
        tags, stats = _detect(
            rng, times[ports == port], detector, duration_ps
        )
        channel = port + 1
        all_tags.append(tags)
        all_channels.append(np.full(tags.size, channel, dtype=np.uint16))
        counters[f"dark_counts_ch{channel}"] = stats["dark_counts"]
        counters[f"detected_ch{channel}"] = int(tags.size)

    timestamps = np.concatenate(all_tags)
    channels = np.concatenate(all_channels)
    order = np.lexsort((channels, timestamps))

    return TagStream(
        timestamps=timestamps[order],
        channels=channels[order],
        channel_count=2,
        resolution_ps=config.detector.resolution,
        duration_ps=duration_ps,
        metadata={"counters": counters},
    )


def _detector_metadata(config: ExperimentConfig) -> Dict[str, dict]:
    return {
        f"ch{port + 1}": detector.model_dump()
        for port, detector in enumerate(config.detectors)
    }


def _slice_edges(config: ExperimentConfig) -> np.ndarray:
    total_ps = int(round(config.duration * PS_PER_S))
    resolution = config.detector.resolution
    edges = np.array(
        [total_ps * k // config.slices for k in range(config.slices + 1)],
        dtype=np.int64,
    )
    return (edges // resolution) * resolution


def _join_slices(
    parts: Sequence[TagStream], config: ExperimentConfig
) -> Tuple[np.ndarray, np.ndarray]:
    """Slice tags joined in time, with dead time carried over the edges."""
    timestamps = np.concatenate([p.timestamps for p in parts])
    channels = np.concatenate([p.channels for p in parts])
    if len(parts) < 2:
        return timestamps, channels

    keep = np.ones(timestamps.size, dtype=bool)
    for port, detector in enumerate(config.detectors):
        mine = np.flatnonzero(channels == port + 1)
        keep[mine] = _dead_time_mask(
            timestamps[mine], detector.dead_time * 1e3
        )
    return timestamps[keep], channels[keep]


def simulate_experiment(
    config: ExperimentConfig,
    threads: int = 1,
    pool: Optional[WorkerPool] = None,
) -> TagStream:
    """Full run split into independent time slices.

    Each slice gets its own SeedSequence child, so the tags depend only on
    (config, seed) and not on how many workers execute the slices.
    """
    edges = _slice_edges(config)
    children = np.random.SeedSequence(config.seed).spawn(config.slices)

    def run_slice(k: int) -> TagStream:
        slice_ps = int(edges[k + 1] - edges[k])
        if slice_ps <= 0:
            return TagStream(
                timestamps=np.empty(0, np.int64),
                channels=np.empty(0, np.uint16),
                channel_count=2,
                resolution_ps=config.detector.resolution,
                duration_ps=0,
                metadata={"counters": {}},
            )
        seeds = children[k].spawn(len(config.sources) + 1)
        streams = [
            simulate_stream(
                src.emitter,
                src.rates,
                slice_ps / PS_PER_S,
                seeds[i],
                source_id=i,
            )
            for i, src in enumerate(config.sources)
        ]
        tags = interfere_and_detect(
            streams, config, duration_ps=slice_ps, seed=seeds[-1]
        )
        tags.timestamps = tags.timestamps + edges[k]
        return tags

    owned = pool is None
    pool = pool or WorkerPool(threads)
    try:
        logger.info(
            f"Simulating {config.duration} s in {config.slices} slice(s) "
            f"on {pool.threads} thread(s)"
        )
        parts: List[TagStream] = pool.map(run_slice, range(config.slices))
    finally:
        if owned:
            pool.stop()

    counters: Dict[str, int] = {}
    for part in parts:
        for key, value in part.metadata.get("counters", {}).items():
            counters[key] = counters.get(key, 0) + value

    timestamps, channels = _join_slices(parts, config)
    for channel in (1, 2):
        counters[f"detected_ch{channel}"] = int(
            np.count_nonzero(channels == channel)
        )

    stream = TagStream(
        timestamps=timestamps,
        channels=channels,
        channel_count=2,
        resolution_ps=config.detector.resolution,
        duration_ps=int(edges[-1]),
        metadata={
            "counters": counters,
            "detectors": _detector_metadata(config),
            "mixing_mode": config.mixing_mode.value,
            "seed": config.seed,
            "slices": config.slices,
        },
    )
    logger.info(
        f"Generated {counters.get('generated', 0)} photons, detected "
        f"{len(stream)} tags ({counters.get('paired', 0)} interfering pairs)"
    )
    return stream
