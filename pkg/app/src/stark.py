"""
Stark tuning of an emitter with a single effective charge trap.

All shifts are in Hz; field quantities are in the model's own field units
and voltages in V. E = voltage_to_field * V + field_offset.
"""

import logging
from typing import Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field
from scipy import optimize, special

from src.config import StarkSolverSettings, get_default_stark_solver
from src.errors import DomainError, RootNotBracketedError
from src.data_models import TuningCurve
from src.models import StarkModel, TrapParams

logger = logging.getLogger("stark")

EXPONENT_LIMIT = 700.0


class VoltageSolution(BaseModel):
    voltage: float = Field(..., description="Applied voltage in V.")
    unique: bool = Field(
        True, description="False when the scan found more than one root."
    )
    residual_hz: float = Field(
        ..., description="stark_total(voltage) - target, in Hz."
    )


def _finish(values, x):
    if np.ndim(x) == 0:
        return float(values)
    return values


def stark_branch(model: StarkModel, field, sign: int):
    """Shift of the trap-filled (+1) or trap-empty (-1) branch."""
    if sign not in (1, -1):
        raise DomainError(f"sign must be +1 or -1, got {sign}")
    x = np.asarray(field, dtype=float) + sign * model.trap_field
    shift = -(
        model.mu_tin * x
        + model.alpha / 2.0 * x**2
        + model.beta / 6.0 * x**3
        + model.gamma_4 / 24.0 * x**4
    )
    return _finish(shift, field)


def trap_occupation(trap: TrapParams, field):
    """p = 1 / (1 + exp((A0 + 2 mu_trap E) / kT)), saturated for |z| > 700."""
    if not trap.thermal_energy > 0:
        raise DomainError("thermal_energy must be positive")
    e = np.asarray(field, dtype=float)
    z = (trap.a0 + 2.0 * trap.mu_trap * e) / trap.thermal_energy
    p = np.where(
        z > EXPONENT_LIMIT,
        0.0,
        np.where(z < -EXPONENT_LIMIT, 1.0, special.expit(-z)),
    )
    return _finish(p, field)


def stark_total(model: StarkModel, trap: TrapParams, voltage):
    """Occupation-weighted mix of both branches at the applied voltage."""
    field = model.field_at(np.asarray(voltage, dtype=float))
    p = trap_occupation(trap, field)
    plus = stark_branch(model, field, +1)
    minus = stark_branch(model, field, -1)
    return _finish(p * plus + (1.0 - p) * minus, voltage)


def tuning_curve(
    model: StarkModel,
    trap: TrapParams,
    voltages,
    sigma: Optional[float] = None,
) -> TuningCurve:
    v = np.asarray(voltages, dtype=float)
    detuning = stark_total(model, trap, v)
    errors = None if sigma is None else np.full(v.shape, float(sigma))
    return TuningCurve(voltage=v, detuning=detuning, sigma=errors)


def kink_voltage(model: StarkModel, trap: TrapParams) -> Optional[float]:
    """Voltage of the logistic midpoint p = 1/2; None without a trap dipole."""
    if trap.mu_trap == 0:
        return None
    field = -trap.a0 / (2.0 * trap.mu_trap)
    return (field - model.field_offset) / model.voltage_to_field


def tuning_range(
    model: StarkModel,
    trap: TrapParams,
    bracket: Tuple[float, float],
    points: int = 4001,
) -> float:
    """Peak-to-peak shift reachable inside the voltage bracket, in Hz."""
    grid = np.linspace(bracket[0], bracket[1], points)
    shifts = stark_total(model, trap, grid)
    return float(shifts.max() - shifts.min())


def voltage_for_detuning(
    model: StarkModel,
    trap: TrapParams,
    target: float,
    bracket: Optional[Tuple[float, float]] = None,
    settings: Optional[StarkSolverSettings] = None,
) -> VoltageSolution:
    """Voltage at which stark_total equals `target` Hz.

    The bracket is scanned on a uniform grid for sign changes; the root
    nearest the lower edge is refined with Brent's method. More than one
    root marks the solution non-unique.
    """
    settings = settings or get_default_stark_solver()
    v_min, v_max = bracket or settings.default_bracket_v
    if not v_max > v_min:
        raise DomainError(f"empty voltage bracket ({v_min}, {v_max})")

    def residual(v):
        return stark_total(model, trap, v) - target

    grid = np.linspace(v_min, v_max, settings.scan_points)
    values = residual(grid)

    exact = np.flatnonzero(values == 0.0)
    crossings = np.flatnonzero(values[:-1] * values[1:] < 0.0)
    if exact.size == 0 and crossings.size == 0:
        raise RootNotBracketedError(
            f"target {target:.6g} Hz is not reached between {v_min} V and "
            f"{v_max} V (shift range {values.min() + target:.6g} .. "
            f"{values.max() + target:.6g} Hz)"
        )

    roots_found = exact.size + crossings.size
    first_exact = grid[exact[0]] if exact.size else np.inf
    first_crossing = grid[crossings[0]] if crossings.size else np.inf

    if first_exact <= first_crossing:
        voltage = float(first_exact)
    else:
        lo = float(grid[crossings[0]])
        hi = float(grid[crossings[0] + 1])
        voltage = optimize.brentq(residual, lo, hi, xtol=1e-12)

    remainder = float(residual(voltage))
    if abs(remainder) > settings.tolerance_hz:
        raise DomainError(
            f"root refinement stalled at {voltage} V with residual "
            f"{remainder:.3g} Hz"
        )

    unique = roots_found == 1
    if not unique:
        logger.warning(
            f"{roots_found} voltages reach {target:.6g} Hz; "
            f"returning the one nearest {v_min} V"
        )
    return VoltageSolution(
        voltage=voltage, unique=unique, residual_hz=remainder
    )
