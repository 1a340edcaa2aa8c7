"""
Analytic correlation functions for two-photon interference between two
solid-state emitters, and the inhomogeneous frequency distribution.

Times are in seconds, angular frequencies in rad/s and frequencies in Hz.
Every evaluator is a pure function of its arguments.
"""

import logging
import math
from functools import lru_cache
from typing import Callable, Optional, Tuple

import numpy as np
from scipy import special

from src.config import (
    QuadratureSpec,
    ResponseSpec,
    get_default_quadrature,
    get_default_response,
)
from src.errors import (
    AccuracyError,
    DomainError,
    EmptyRequestError,
    InvariantViolation,
)
from src.g2_strategies import G2StrategyFactory
from src.models import (
    EmitterParams,
    G2Mode,
    InhomogeneousDist,
    TpiConfig,
)

logger = logging.getLogger("model")

MIN_SPAN_SIGMAS = 6.0
_CHUNK_ELEMENTS = 1 << 21
_WASHOUT = 9.0


def _finish(values: np.ndarray, tau):
    if np.ndim(tau) == 0:
        return float(np.asarray(values).reshape(()))
    return values


def fourier_limit(t1: float) -> float:
    """Fourier-limited FWHM linewidth 1/(2 pi T1) in Hz for T1 in seconds."""
    if not t1 > 0:
        raise DomainError(f"t1 must be positive, got {t1}")
    return 1.0 / (2.0 * math.pi * t1)


def eval_g1_mag(gamma: float, tau):
    """|g1(tau)| = exp(-gamma |tau| / 2)."""
    if gamma < 0:
        raise DomainError(f"gamma must be non-negative, got {gamma}")
    values = np.exp(-0.5 * gamma * np.abs(np.asarray(tau, dtype=float)))
    return _finish(values, tau)


def eval_g2_single(
    params: EmitterParams, tau, mode: G2Mode = G2Mode.RATE_EQUATION
):
    """Autocorrelation of a single background-free emitter."""
    strategy = G2StrategyFactory.get_strategy(mode)
    values = strategy.evaluate(params, np.asarray(tau, dtype=float))
    return _finish(values, tau)


def _diluted_g2(
    params: EmitterParams, rho: float, tau: np.ndarray, mode: G2Mode
) -> np.ndarray:
    """Single-source g2 seen through uncorrelated background, rho = S/I."""
    g2 = G2StrategyFactory.get_strategy(mode).evaluate(params, tau)
    return 1.0 + rho**2 * (g2 - 1.0)


def _tpi_terms(
    cfg: TpiConfig, tau: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """Split g2_tpi into its detuning-free part and the beat amplitude.

    g2_tpi(tau, dw) = auto + 2 c1 c2 (1 - amplitude cos(dw tau)).
    """
    c1, c2 = cfg.c1, cfg.c2
    if abs(c1 + c2 - 1.0) > 1e-12:
        raise InvariantViolation(f"c1 + c2 = {c1 + c2}, expected 1")

    src1, src2 = cfg.source1, cfg.source2
    g2_11 = _diluted_g2(
        src1.emitter, src1.rates.signal_fraction, tau, cfg.single_mode
    )
    g2_22 = _diluted_g2(
        src2.emitter, src2.rates.signal_fraction, tau, cfg.single_mode
    )
    auto = c1**2 * g2_11 + c2**2 * g2_22

    g1_product = np.exp(
        -0.5
        * (src1.emitter.coherence_rate + src2.emitter.coherence_rate)
        * np.abs(tau)
    )
    amplitude = cfg.overlap_factor * g1_product
    return auto, amplitude


def _tpi_from_terms(
    cfg: TpiConfig, auto, amplitude, cos_term
) -> np.ndarray:
    return auto + 2.0 * cfg.c1 * cfg.c2 * (1.0 - amplitude * cos_term)


def eval_g2_tpi(cfg: TpiConfig, tau):
    """Cross-correlation of two interfering sources at a fixed detuning."""
    t = np.asarray(tau, dtype=float)
    auto, amplitude = _tpi_terms(cfg, t)
    values = _tpi_from_terms(cfg, auto, amplitude, np.cos(cfg.detuning * t))
    return _finish(values, tau)


@lru_cache(maxsize=32)
def _legendre_rule(nodes: int) -> Tuple[np.ndarray, np.ndarray]:
    return special.roots_legendre(nodes)


def _panel_rule(
    lower: float, upper: float, panels: int, nodes: int
) -> Tuple[np.ndarray, np.ndarray]:
    base_x, base_w = _legendre_rule(nodes)
    edges = np.linspace(lower, upper, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    x = (mid[:, None] + half[:, None] * base_x[None, :]).ravel()
    w = (half[:, None] * base_w[None, :]).ravel()
    return x, w


def panels_for(
    sigma: float, tau: np.ndarray, quadrature: QuadratureSpec
) -> np.ndarray:
    """Panel count per delay so that no panel exceeds `nodes` radians."""
    phase_span = 2.0 * quadrature.span_sigmas * sigma * np.abs(tau)
    panels = np.ceil(phase_span / quadrature.nodes).astype(int)
    return np.clip(panels, 1, quadrature.max_panels)


def eval_g2_sd(
    cfg: TpiConfig, tau, quadrature: Optional[QuadratureSpec] = None
):
    """g2_tpi averaged over a Gaussian detuning kernel centred on cfg.detuning.

    The integral runs over +-span_sigmas sigma with composite Gauss-Legendre
    panels; the truncated kernel is renormalized on the nodes.
    """
    quadrature = quadrature or get_default_quadrature()
    sigma = cfg.sd_sigma_combined
    if sigma < 0:
        raise DomainError(f"sd_sigma_combined must be >= 0, got {sigma}")
    if quadrature.span_sigmas < MIN_SPAN_SIGMAS:
        raise AccuracyError(
            f"quadrature span of {quadrature.span_sigmas} sigma is below "
            f"the required {MIN_SPAN_SIGMAS} sigma"
        )
    if sigma == 0:
        return eval_g2_tpi(cfg, tau)

    t = np.asarray(tau, dtype=float)
    flat = t.ravel()
    auto, amplitude = _tpi_terms(cfg, flat)
    result = np.empty_like(flat)

    # beyond sigma |tau| = 9 the averaged cosine is below exp(-40)
    washed = sigma * np.abs(flat) > _WASHOUT
    result[washed] = auto[washed] + 2.0 * cfg.c1 * cfg.c2

    center = cfg.detuning
    half_span = quadrature.span_sigmas * sigma
    panels = panels_for(sigma, flat, quadrature)
    panels[washed] = 0

    for count in np.unique(panels[~washed]):
        (index,) = np.nonzero(panels == count)
        x, w = _panel_rule(
            center - half_span,
            center + half_span,
            int(count),
            quadrature.nodes,
        )
        kernel = w * np.exp(-0.5 * ((x - center) / sigma) ** 2)
        kernel /= kernel.sum()

        rows = max(1, _CHUNK_ELEMENTS // x.size)
        for start in range(0, index.size, rows):
            chunk = index[start : start + rows]
            grid = _tpi_from_terms(
                cfg,
                auto[chunk, None],
                amplitude[chunk, None],
                np.cos(flat[chunk, None] * x[None, :]),
            )
            result[chunk] = grid @ kernel

    if panels.size and panels.max() > 1:
        logger.debug(
            f"g2_sd used up to {panels.max()} panels of "
            f"{quadrature.nodes} nodes"
        )
    return _finish(result.reshape(t.shape), tau)


def combined_jitter(sigma_a: float, sigma_b: float) -> float:
    """Timing jitter of a start-stop delay between two detectors."""
    return math.hypot(sigma_a, sigma_b)


def _response_panels(phase_span: float, nodes: int, limit: int) -> int:
    return int(np.clip(math.ceil(phase_span / nodes), 1, limit))


def _response_rule(
    jitter_sigma: float,
    bin_width: float,
    max_frequency: float,
    response: ResponseSpec,
) -> Tuple[np.ndarray, np.ndarray]:
    if bin_width > 0:
        panels = _response_panels(
            max_frequency * bin_width, response.bin_nodes, response.max_panels
        )
        box_x, box_w = _panel_rule(
            -0.5 * bin_width, 0.5 * bin_width, panels, response.bin_nodes
        )
    else:
        box_x, box_w = np.zeros(1), np.ones(1)

    if jitter_sigma > 0:
        half_span = response.span_sigmas * jitter_sigma
        panels = _response_panels(
            2.0 * half_span * max_frequency,
            response.jitter_nodes,
            response.max_panels,
        )
        jit_x, jit_w = _panel_rule(
            -half_span, half_span, panels, response.jitter_nodes
        )
        jit_w = jit_w * np.exp(-0.5 * (jit_x / jitter_sigma) ** 2)
    else:
        jit_x, jit_w = np.zeros(1), np.ones(1)

    offsets = (box_x[:, None] + jit_x[None, :]).ravel()
    weights = (box_w[:, None] * jit_w[None, :]).ravel()
    return offsets, weights / weights.sum()


def detector_average(
    fn: Callable[[np.ndarray], np.ndarray],
    tau,
    jitter_sigma: float = 0.0,
    bin_width: float = 0.0,
    response: Optional[ResponseSpec] = None,
    max_frequency: float = 0.0,
):
    """Average fn over Gaussian delay jitter and a histogram bin around tau.

    `jitter_sigma` is the jitter of the delay, i.e. already combined over
    both detectors. `max_frequency` (rad/s) is the fastest oscillation in
    fn and sets the panel count. Zero jitter and zero width return fn(tau).
    """
    if jitter_sigma < 0 or bin_width < 0:
        raise DomainError("jitter_sigma and bin_width must be non-negative")
    response = response or get_default_response()

    t = np.asarray(tau, dtype=float)
    offsets, weights = _response_rule(
        jitter_sigma, bin_width, abs(max_frequency), response
    )
    shifted = t.ravel()[:, None] + offsets[None, :]
    values = np.asarray(fn(shifted), dtype=float)
    return _finish((values @ weights).reshape(t.shape), tau)


def eval_g2_detected(
    cfg: TpiConfig,
    tau,
    quadrature: Optional[QuadratureSpec] = None,
    jitter_sigma: float = 0.0,
    bin_width: float = 0.0,
    response: Optional[ResponseSpec] = None,
):
    """Expected normalized histogram value of g2_sd for real detectors."""
    quadrature = quadrature or get_default_quadrature()
    fastest = abs(cfg.detuning) + quadrature.span_sigmas * abs(
        cfg.sd_sigma_combined
    )
    return detector_average(
        lambda t: eval_g2_sd(cfg, t, quadrature),
        tau,
        jitter_sigma=jitter_sigma,
        bin_width=bin_width,
        response=response,
        max_frequency=fastest,
    )


def temporal_filter_bandwidth(bin_width: float) -> float:
    """Angular frequency resolution 2 pi / bin_width of a detection bin."""
    if not bin_width > 0:
        raise DomainError(f"bin_width must be positive, got {bin_width}")
    return 2.0 * math.pi / bin_width


def reference_g2_zero(cfg: TpiConfig) -> float:
    """c1^2 g2_11(0) + c2^2 g2_22(0) + 2 c1 c2, the distinguishable value."""
    auto, _ = _tpi_terms(cfg, np.zeros(1))
    return float(auto[0] + 2.0 * cfg.c1 * cfg.c2)


def sample_inhomogeneous(
    dist: InhomogeneousDist, n: int, seed: int
) -> np.ndarray:
    """n independent Gaussian ZPL offsets in Hz."""
    if n < 1:
        raise EmptyRequestError(f"need at least one sample, got n = {n}")
    rng = np.random.default_rng(seed)
    return rng.normal(dist.mean_offset, dist.sigma, size=n)


def fit_inhomogeneous(offsets) -> InhomogeneousDist:
    """Maximum-likelihood Gaussian for a set of measured ZPL offsets."""
    values = np.asarray(offsets, dtype=float)
    if values.size < 2:
        raise EmptyRequestError("need at least two offsets to fit a width")
    sigma = float(values.std())
    if sigma == 0:
        raise DomainError("all offsets are identical; width is zero")
    return InhomogeneousDist(mean_offset=float(values.mean()), sigma=sigma)


def tunable_pair_fraction(
    dist: InhomogeneousDist, tuning_range: float
) -> float:
    """Probability that two emitters lie within `tuning_range` Hz."""
    if tuning_range < 0:
        raise DomainError("tuning_range must be non-negative")
    return float(special.erf(tuning_range / (2.0 * dist.sigma)))
