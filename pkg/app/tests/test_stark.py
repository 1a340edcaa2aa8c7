import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import ACCEPTANCE_STARK, ACCEPTANCE_TRAP
from src.config import StarkSolverSettings
from src.errors import DomainError, RootNotBracketedError
from src.models import StarkModel, TrapParams
from src.stark import (
    kink_voltage,
    stark_branch,
    stark_total,
    trap_occupation,
    tuning_curve,
    tuning_range,
    voltage_for_detuning,
)

BRACKET = (-100.0, 130.0)


def test_branch_polynomial():
    model = StarkModel(mu_tin=1.0, alpha=2.0, trap_field=0.5)
    assert stark_branch(model, 1.0, +1) == pytest.approx(-3.75)
    assert stark_branch(model, 1.0, -1) == pytest.approx(-0.75)


def test_branch_rejects_bad_sign():
    with pytest.raises(DomainError):
        stark_branch(StarkModel(), 1.0, 0)


def test_occupation_is_one_half_at_the_kink():
    kink = kink_voltage(ACCEPTANCE_STARK, ACCEPTANCE_TRAP)
    assert kink == pytest.approx(-50.0)
    field = ACCEPTANCE_STARK.field_at(kink)
    assert trap_occupation(ACCEPTANCE_TRAP, field) == 0.5


def test_occupation_saturates_without_overflow():
    trap = TrapParams(a0=0.0, mu_trap=1e6, thermal_energy=1.0)
    assert trap_occupation(trap, 1.0) == 0.0
    assert trap_occupation(trap, -1.0) == 1.0


def test_occupation_rejects_non_positive_temperature():
    trap = TrapParams.model_construct(a0=0.0, mu_trap=1.0, thermal_energy=0.0)
    with pytest.raises(DomainError):
        trap_occupation(trap, 0.0)


def test_no_trap_dipole_means_no_kink():
    assert kink_voltage(ACCEPTANCE_STARK, TrapParams()) is None


@given(voltage=st.floats(-100, 130))
def test_total_lies_between_branches(voltage):
    field = ACCEPTANCE_STARK.field_at(voltage)
    plus = stark_branch(ACCEPTANCE_STARK, field, +1)
    minus = stark_branch(ACCEPTANCE_STARK, field, -1)
    total = stark_total(ACCEPTANCE_STARK, ACCEPTANCE_TRAP, voltage)
    slack = 1e-6 * max(abs(plus), abs(minus), 1.0)
    assert min(plus, minus) - slack <= total <= max(plus, minus) + slack


def test_tuning_range_spans_gigahertz():
    span = tuning_range(ACCEPTANCE_STARK, ACCEPTANCE_TRAP, BRACKET)
    assert 3e9 < span < 4.5e9


def test_tuning_curve_carries_sigma():
    curve = tuning_curve(
        ACCEPTANCE_STARK, ACCEPTANCE_TRAP, np.arange(-100, 130.5, 0.5), 1e6
    )
    assert len(curve) == 461
    assert np.all(curve.sigma == 1e6)


def test_zero_target_with_zero_offsets_is_zero_volts():
    model = StarkModel(mu_tin=-1.5e7)
    solution = voltage_for_detuning(model, TrapParams(), 0.0, BRACKET)
    assert solution.voltage == pytest.approx(0.0, abs=1e-9)
    assert solution.unique


def test_setpoint_on_a_slope_matches_grid_scan():
    target = 800e6
    solution = voltage_for_detuning(
        ACCEPTANCE_STARK, ACCEPTANCE_TRAP, target, BRACKET
    )
    assert solution.unique
    assert abs(solution.residual_hz) < 1e3

    grid = np.linspace(*BRACKET, 230001)
    values = stark_total(ACCEPTANCE_STARK, ACCEPTANCE_TRAP, grid) - target
    crossing = np.flatnonzero(values[:-1] * values[1:] <= 0)[0]
    assert solution.voltage == pytest.approx(grid[crossing], abs=2e-3)


def test_target_at_the_kink_has_three_voltages():
    target = stark_total(ACCEPTANCE_STARK, ACCEPTANCE_TRAP, -50.0)
    solution = voltage_for_detuning(
        ACCEPTANCE_STARK, ACCEPTANCE_TRAP, target, BRACKET
    )
    assert not solution.unique
    # the trap-filled branch reaches the value first, about 5 V below
    assert solution.voltage == pytest.approx(-54.873, abs=1e-3)


def test_unreachable_target():
    with pytest.raises(RootNotBracketedError):
        voltage_for_detuning(ACCEPTANCE_STARK, ACCEPTANCE_TRAP, 5e9, BRACKET)


def test_empty_bracket():
    with pytest.raises(DomainError):
        voltage_for_detuning(
            ACCEPTANCE_STARK, ACCEPTANCE_TRAP, 0.0, (10.0, 10.0)
        )


def test_default_bracket_comes_from_settings():
    settings = StarkSolverSettings(default_bracket_v=(0.0, 130.0))
    with pytest.raises(RootNotBracketedError):
        voltage_for_detuning(
            ACCEPTANCE_STARK, ACCEPTANCE_TRAP, -5e8, settings=settings
        )
