import math

import numpy as np
import pytest

from conftest import ACCEPTANCE_STARK, ACCEPTANCE_TRAP, make_emitter, make_tpi
from src.data_models import G2Curve, TuningCurve
from src.fit_adapters import (
    FitModelFactory,
    HomFitModel,
    fit_g2_hom,
    fit_rabi,
    fit_stark,
    hom_config,
)
from src.fit_models import HomFitInit, RabiFitInit, StarkFitInit
from src.model import detector_average, eval_g2_detected, eval_g2_single
from src.models import G2Mode, StarkModel, StarkParams, TrapParams
from src.stark import tuning_curve

BIN_PS = 100.0


def synthetic_curve(values: np.ndarray, tau_ps: np.ndarray) -> G2Curve:
    return G2Curve(
        tau_ps=tau_ps,
        g2=values,
        sigma=np.full(tau_ps.size, 0.01),
        counts=np.zeros(tau_ps.size),
        bin_width_ps=BIN_PS,
    )


def hom_curve(truth, half_window_ps: float = 30000.0) -> G2Curve:
    tau_ps = np.arange(-half_window_ps, half_window_ps + 1, BIN_PS)
    values = eval_g2_detected(truth, tau_ps * 1e-12, bin_width=BIN_PS * 1e-12)
    return synthetic_curve(values, tau_ps)


def test_factory_lists_models():
    assert FitModelFactory.names() == ["hom", "rabi", "stark"]
    assert isinstance(FitModelFactory.get_strategy("hom"), HomFitModel)
    with pytest.raises(ValueError):
        FitModelFactory.get_strategy("lorentzian")


def test_hom_config_substitutes_parameters():
    base = make_tpi()
    gamma = base.source1.emitter.coherence_rate + 1e8
    cfg = hom_config(
        base,
        {
            "eta": 0.7,
            "detuning": 1e9,
            "sd_sigma": 2e8,
            "gamma1": gamma,
            "gamma2": base.source2.emitter.coherence_rate,
            "rho1": 0.9,
            "rho2": 1.0,
            "scale": 1.0,
        },
    )
    assert cfg.eta == 0.7
    assert cfg.detuning == 1e9
    assert cfg.source1.emitter.coherence_rate == pytest.approx(gamma)
    assert cfg.source1.rates.signal_fraction == pytest.approx(0.9)
    assert cfg.source2.emitter.dephasing_rate == 0.0


def test_hom_fit_recovers_detuned_interference():
    truth = make_tpi(eta=0.8, detuning_hz=800e6, sd_sigma_hz=50e6)
    curve = hom_curve(truth)
    result = fit_g2_hom(curve, HomFitInit(tpi=make_tpi(eta=0.5)))

    assert result.model == "hom"
    assert result.params["eta"] == pytest.approx(0.8, abs=0.02)
    assert result.derived["detuning_hz"] == pytest.approx(800e6, rel=0.02)
    assert result.params["sd_sigma"] == pytest.approx(
        2 * math.pi * 50e6, rel=0.1
    )
    assert result.params["scale"] == pytest.approx(1.0, abs=0.01)

    kwargs = {"bin_width": BIN_PS * 1e-12}
    distinguishable = truth.model_copy(update={"eta": 0.0})
    v_true = 1 - eval_g2_detected(truth, 0.0, **kwargs) / eval_g2_detected(
        distinguishable, 0.0, **kwargs
    )
    assert result.derived["v_hom"] == pytest.approx(v_true, abs=0.01)
    assert result.derived["v_hom_sigma"] is not None
    assert "v_hom_bin_zero" in result.derived


def test_hom_fit_reaches_the_noise_floor_from_a_poor_start(rng):
    truth = make_tpi(eta=0.73, detuning_hz=800e6, sd_sigma_hz=35e6)
    clean = hom_curve(truth, half_window_ps=10000.0)
    curve = synthetic_curve(
        clean.g2 + rng.normal(0.0, 0.01, len(clean)), clean.tau_ps
    )
    result = fit_g2_hom(curve, HomFitInit(tpi=make_tpi(eta=0.5)))

    assert result.chi2_reduced < 1.5
    assert result.params["eta"] == pytest.approx(0.73, abs=0.03)
    assert abs(result.derived["detuning_hz"]) == pytest.approx(
        800e6, rel=0.02
    )


def test_hom_fit_window_restricts_the_data():
    truth = make_tpi(eta=0.9)
    curve = hom_curve(truth)
    init = HomFitInit(
        tpi=make_tpi(eta=0.5),
        free=["eta", "scale"],
        fit_window_ps=10000.0,
        estimate_from_data=False,
    )
    result = fit_g2_hom(curve, init)
    assert result.params["eta"] == pytest.approx(0.9, abs=0.01)
    assert sorted(result.fixed) == [
        "detuning",
        "gamma1",
        "gamma2",
        "rho1",
        "rho2",
        "sd_sigma",
    ]
    assert result.sigmas["detuning"] == 0.0


def test_hom_fit_without_interference_flags_eta():
    curve = hom_curve(make_tpi(eta=0.0))
    init = HomFitInit(
        tpi=make_tpi(eta=0.5), free=["eta", "scale"], estimate_from_data=False
    )
    result = fit_g2_hom(curve, init)
    assert "eta" in result.unidentifiable
    assert result.sigmas["eta"] is None
    assert result.derived["v_hom_sigma"] is None


def test_rabi_fit_finds_the_drive_from_the_spectrum():
    omega = 2 * math.pi * 300e6
    truth = make_emitter(rabi_frequency=omega, dephasing_rate=5e7)
    tau_ps = np.arange(-10000.0, 10001.0, BIN_PS)
    values = detector_average(
        lambda t: eval_g2_single(truth, t, G2Mode.COHERENT_DRIVE),
        tau_ps * 1e-12,
        bin_width=BIN_PS * 1e-12,
        max_frequency=omega,
    )
    curve = synthetic_curve(values, tau_ps)
    start = make_emitter(rabi_frequency=0.0, dephasing_rate=7.5e7)
    result = fit_rabi(curve, RabiFitInit(emitter=start))

    assert result.model == "rabi"
    assert result.params["rabi_frequency"] == pytest.approx(omega, rel=0.01)
    assert result.derived["rabi_frequency_hz"] == pytest.approx(
        300e6, rel=0.01
    )
    assert result.derived["g2_zero"] == pytest.approx(values[100], abs=0.02)


def test_rabi_free_parameters_follow_the_mode():
    emitter = make_emitter()
    coherent = RabiFitInit(emitter=emitter)
    pumped = RabiFitInit(emitter=emitter, mode=G2Mode.RATE_EQUATION)
    assert "rabi_frequency" in coherent.free_parameters()
    assert pumped.free_parameters() == ["excitation_rate", "rho", "scale"]
    with pytest.raises(ValueError):
        RabiFitInit(emitter=emitter, free=["temperature"])


def acceptance_curve(voltages, sigma=1e6):
    return tuning_curve(ACCEPTANCE_STARK, ACCEPTANCE_TRAP, voltages, sigma)


def test_stark_fit_recovers_kink_and_coefficients():
    curve = acceptance_curve(np.arange(-100.0, 130.5, 0.5))
    init = StarkFitInit(
        params=StarkParams(
            model=StarkModel(trap_field=4.5),
            trap=TrapParams(a0=98.0, mu_trap=1.0),
        )
    )
    result = fit_stark(curve, init)

    assert result.model == "stark"
    assert result.params["mu_tin"] == pytest.approx(-1.5e7, rel=0.05)
    assert result.params["alpha"] == pytest.approx(-1e5, rel=0.05)
    assert result.params["beta"] == pytest.approx(30.0, rel=0.05)
    assert result.params["gamma_4"] == pytest.approx(0.24, rel=0.05)
    assert result.params["trap_field"] == pytest.approx(5.0, rel=0.1)
    assert result.derived["kink_voltage"] == pytest.approx(-50.0, abs=1.0)
    assert 3e9 < result.derived["tuning_range_hz"] < 4.5e9
    assert result.sigmas["thermal_energy"] == 0.0


def test_stark_fit_with_noise_still_finds_the_kink(rng):
    curve = acceptance_curve(np.arange(-100.0, 130.5, 0.5))
    noisy = TuningCurve(
        voltage=curve.voltage,
        detuning=curve.detuning + rng.normal(0.0, 1e6, len(curve)),
        sigma=curve.sigma,
    )
    init = StarkFitInit(
        params=StarkParams(
            model=StarkModel(trap_field=4.5),
            trap=TrapParams(a0=98.0, mu_trap=1.0),
        )
    )
    result = fit_stark(noisy, init)
    assert result.derived["kink_voltage"] == pytest.approx(-50.0, abs=1.0)
    assert 0.5 < result.chi2_reduced < 2.0


def test_stark_fit_flags_a_trap_outside_the_data():
    curve = acceptance_curve(np.arange(0.0, 130.5, 0.5))
    init = StarkFitInit(
        params=StarkParams(
            model=StarkModel(trap_field=4.5),
            trap=TrapParams(a0=98.0, mu_trap=1.0),
        )
    )
    result = fit_stark(curve, init)
    assert {"a0", "mu_trap"} <= set(result.unidentifiable)
    assert result.sigmas["a0"] is None


def test_stark_init_rejects_unknown_names():
    with pytest.raises(ValueError):
        StarkFitInit(fixed=["voltage"])
