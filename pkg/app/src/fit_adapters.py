"""
Model families fitted by `lsq_fit`: HOM cross-correlations, single-emitter
autocorrelations and Stark tuning curves. Each family is a strategy that
turns data plus an init document into a FitProblem and adds derived
quantities to the result.
"""

import logging
import math
from abc import ABC, abstractmethod
from typing import Callable, Dict, List, Optional, Tuple, Type

import numpy as np
from pydantic import BaseModel

from src.data_models import G2Curve, TuningCurve
from src.errors import DomainError, EvaluationError, PreconditionError
from src.fit import lsq_fit, propagate
from src.fit_models import (
    HOM_PARAMETERS,
    RABI_PARAMETERS,
    STARK_PARAMETERS,
    FitProblem,
    FitResult,
    HomFitInit,
    RabiFitInit,
    StarkFitInit,
)
from src.model import (
    detector_average,
    eval_g2_detected,
    eval_g2_sd,
    eval_g2_single,
    fourier_limit,
    reference_g2_zero,
)
from src.models import G2Mode, StarkModel, TpiConfig, TrapParams
from src.stark import kink_voltage, stark_branch, stark_total, tuning_range
from src.tagproc import ModelBaseline, dominant_beat_frequency, hom_visibility

logger = logging.getLogger("fit")

PS = 1e-12
TWO_PI = 2.0 * math.pi


class FitModelAdapter(ABC):
    name: str
    data_kind: str
    init_model: Type[BaseModel]

    @abstractmethod
    def fit(self, data, init) -> FitResult:
        pass


def _fixed_mask(names: List[str], free: List[str]) -> np.ndarray:
    return np.array([name not in free for name in names])


# --- HOM -------------------------------------------------------------------


def hom_config(base: TpiConfig, values: Dict[str, float]) -> TpiConfig:
    """Copy of `base` with the fitted HOM parameters substituted."""

    def source(src, gamma, rho):
        emitter = src.emitter.model_copy(
            update={"dephasing_rate": max(gamma - 0.5 / src.emitter.t1, 0.0)}
        )
        rates = src.rates.model_copy(
            update={"signal_rate": rho * src.rates.total_rate}
        )
        return src.model_copy(update={"emitter": emitter, "rates": rates})

    return base.model_copy(
        update={
            "source1": source(base.source1, values["gamma1"], values["rho1"]),
            "source2": source(base.source2, values["gamma2"], values["rho2"]),
            "eta": values["eta"],
            "detuning": values["detuning"],
            "sd_sigma_combined": values["sd_sigma"],
        }
    )


class HomFitModel(FitModelAdapter):
    name = "hom"
    data_kind = "g2"
    init_model = HomFitInit

    sd_scan = TWO_PI * np.geomspace(1e6, 2e9, 32)
    sd_fallback = TWO_PI * 50e6
    padding = 4
    seeds = 2
    detuning_offsets = (-1.0, -0.5, 0.0, 0.5, 1.0)

    def _start(self, init: HomFitInit) -> Dict[str, float]:
        tpi = init.tpi
        return {
            "eta": tpi.eta,
            "detuning": abs(tpi.detuning),
            "sd_sigma": tpi.sd_sigma_combined,
            "gamma1": tpi.source1.emitter.coherence_rate,
            "gamma2": tpi.source2.emitter.coherence_rate,
            "rho1": tpi.source1.rates.signal_fraction,
            "rho2": tpi.source2.rates.signal_fraction,
            "scale": 1.0,
        }

    def _bounds(self, init: HomFitInit) -> Tuple[np.ndarray, np.ndarray]:
        tpi = init.tpi
        lower = {
            "eta": 0.0,
            "detuning": 0.0,
            "sd_sigma": 0.0,
            "gamma1": 0.5 / tpi.source1.emitter.t1,
            "gamma2": 0.5 / tpi.source2.emitter.t1,
            "rho1": 0.0,
            "rho2": 0.0,
            "scale": 0.0,
        }
        upper = {"eta": 1.0, "rho1": 1.0, "rho2": 1.0}
        return (
            np.array([lower[n] for n in HOM_PARAMETERS]),
            np.array([upper.get(n, np.inf) for n in HOM_PARAMETERS]),
        )

    def _profile(
        self,
        values: Dict[str, float],
        init: HomFitInit,
        curve: G2Curve,
        evaluate: Callable[[Dict[str, float], np.ndarray], np.ndarray],
    ) -> float:
        """Set the best eta and scale for the shape in `values`.

        The model is scale * (base + eta * slope), so both follow from
        weighted linear least squares. Returns the resulting chi2.
        """
        unit = {**values, "scale": 1.0}
        base = evaluate({**unit, "eta": 0.0}, curve.tau_s)
        slope = evaluate({**unit, "eta": 1.0}, curve.tau_s) - base
        weight = 1.0 / curve.sigma
        target = curve.g2 * weight
        eta, scale = values["eta"], values["scale"]

        if "eta" in init.free and "scale" in init.free:
            design = np.column_stack([base, slope]) * weight[:, None]
            (u, v), *_ = np.linalg.lstsq(design, target, rcond=None)
            if u > 0:
                eta = float(np.clip(v / u, 0.0, 1.0))
        elif "eta" in init.free and scale > 0:
            column = scale * slope * weight
            norm = float(column @ column)
            if norm > 0:
                residual = target - scale * base * weight
                eta = float(np.clip(column @ residual / norm, 0.0, 1.0))
        if "scale" in init.free:
            column = (base + eta * slope) * weight
            norm = float(column @ column)
            if norm > 0:
                scale = max(float(column @ target) / norm, 0.0)

        values["eta"], values["scale"] = eta, scale
        residual = target - scale * (base + eta * slope) * weight
        chi2 = float(residual @ residual)
        return chi2 if np.isfinite(chi2) else np.inf

    def _estimate(
        self,
        start: Dict[str, float],
        init: HomFitInit,
        curve: G2Curve,
        evaluate: Callable[[Dict[str, float], np.ndarray], np.ndarray],
    ) -> List[Dict[str, float]]:
        """Starting points for the fit, best first."""
        t1 = max(init.tpi.source1.emitter.t1, init.tpi.source2.emitter.t1)

        peak, step = None, 0.0
        if "detuning" in init.free:
            baseline = evaluate({**start, "eta": 0.0}, curve.tau_s)
            peak = dominant_beat_frequency(
                curve, baseline=baseline, padding=self.padding
            )
            step = 1.0 / (self.padding * len(curve) * curve.bin_width_ps * PS)
            floor = 0.1 * fourier_limit(t1)
            peak = max(peak, floor)
            start["detuning"] = TWO_PI * peak
            logger.debug(f"detuning start from spectrum: {peak:.4g} Hz")

        sigmas = (
            self.sd_scan if "sd_sigma" in init.free else [start["sd_sigma"]]
        )
        scan = []
        for sigma in sigmas:
            trial = {**start, "sd_sigma": float(sigma)}
            scan.append((self._profile(trial, init, curve, evaluate), trial))

        chi2 = np.array([c for c, _ in scan])
        padded = np.concatenate([[np.inf], chi2, [np.inf]])
        minima = np.flatnonzero(
            (chi2 <= padded[:-2]) & (chi2 <= padded[2:]) & np.isfinite(chi2)
        )
        if minima.size == 0:
            fallback = {**start, "sd_sigma": self.sd_fallback}
            self._profile(fallback, init, curve, evaluate)
            return [fallback]
        minima = minima[np.argsort(chi2[minima])][: self.seeds]

        seeds = []
        for index in minima:
            best_chi2, best = scan[index]
            if peak is not None:
                for offset in self.detuning_offsets:
                    if offset == 0.0:
                        continue
                    trial = {
                        **best,
                        "detuning": TWO_PI * max(peak + offset * step, 0.0),
                    }
                    trial_chi2 = self._profile(trial, init, curve, evaluate)
                    if trial_chi2 < best_chi2:
                        best_chi2, best = trial_chi2, trial
            logger.debug(
                f"start: sd_sigma {best['sd_sigma'] / TWO_PI:.4g} Hz, "
                f"eta {best['eta']:.3g}, chi2 {best_chi2:.4g}"
            )
            seeds.append((best_chi2, best))
        seeds.sort(key=lambda pair: pair[0])
        return [values for _, values in seeds]

    def fit(self, data: G2Curve, init: HomFitInit) -> FitResult:
        curve = data
        if init.fit_window_ps is not None:
            keep = np.abs(curve.tau_ps) <= init.fit_window_ps
            curve = G2Curve(
                tau_ps=curve.tau_ps[keep],
                g2=curve.g2[keep],
                sigma=curve.sigma[keep],
                counts=curve.counts[keep],
                bin_width_ps=curve.bin_width_ps,
            )

        t1 = max(init.tpi.source1.emitter.t1, init.tpi.source2.emitter.t1)
        if np.max(np.abs(curve.tau_s)) < 10 * t1:
            logger.warning(
                f"curve reaches |tau| = "
                f"{np.max(np.abs(curve.tau_ps)):.0f} ps, "
                f"less than 10 T1; gamma and sd_sigma may be poorly defined"
            )

        jitter = init.jitter_sigma_ps * PS
        bin_width = (init.bin_width_ps or curve.bin_width_ps) * PS

        def evaluate(values: Dict[str, float], tau: np.ndarray) -> np.ndarray:
            cfg = hom_config(init.tpi, values)
            return values["scale"] * eval_g2_detected(
                cfg, tau, jitter_sigma=jitter, bin_width=bin_width
            )

        starts = [self._start(init)]
        if init.estimate_from_data:
            starts = self._estimate(starts[0], init, curve, evaluate)

        def model(params: np.ndarray, tau: np.ndarray) -> np.ndarray:
            return evaluate(dict(zip(HOM_PARAMETERS, params)), tau)

        lower, upper = self._bounds(init)
        result: Optional[FitResult] = None
        for index, start in enumerate(starts):
            initial = np.clip(
                [start[n] for n in HOM_PARAMETERS], lower, upper
            )
            candidate = FitProblem(
                model=model,
                x=curve.tau_s,
                y=curve.g2,
                sigma=curve.sigma,
                initial=initial,
                names=list(HOM_PARAMETERS),
                lower=lower,
                upper=upper,
                fixed=_fixed_mask(HOM_PARAMETERS, init.free),
            )
            try:
                fitted = lsq_fit(candidate)
            except EvaluationError as e:
                if index == 0:
                    raise
                logger.warning(f"Skipping start {index}: {e}")
                continue
            logger.debug(f"start {index}: chi2 = {fitted.chi2:.6g}")
            if result is None or fitted.chi2 < result.chi2:
                result, problem = fitted, candidate
        assert result is not None
        result.model = self.name

        self._flat_check(result, problem)
        self._derive(result, init, curve, jitter, bin_width, lower, upper)
        return result

    def _flat_check(self, result: FitResult, problem: FitProblem) -> None:
        if "eta" in result.fixed:
            return
        params = result.vector(problem.names)
        params[problem.names.index("eta")] = 0.0
        prediction = problem.model(params, problem.x)
        residual = (problem.y - prediction) / problem.sigma
        chi2_zero = float(residual @ residual)
        gain = chi2_zero - result.chi2
        if not problem.absolute_sigma and result.chi2_reduced > 0:
            gain /= result.chi2_reduced
        if gain < 1.0:
            logger.warning(
                "Curve shows no interference feature; eta is unidentifiable"
            )
            result.flag("eta")

    def _derive(
        self,
        result: FitResult,
        init: HomFitInit,
        curve: G2Curve,
        jitter: float,
        bin_width: float,
        lower: np.ndarray,
        upper: np.ndarray,
    ) -> None:
        def visibility(params: np.ndarray) -> float:
            cfg = hom_config(init.tpi, dict(zip(HOM_PARAMETERS, params)))
            distinguishable = cfg.model_copy(update={"eta": 0.0})
            kwargs = {"jitter_sigma": jitter, "bin_width": bin_width}
            return 1.0 - eval_g2_detected(cfg, 0.0, **kwargs) / (
                eval_g2_detected(distinguishable, 0.0, **kwargs)
            )

        def intrinsic(params: np.ndarray) -> float:
            cfg = hom_config(init.tpi, dict(zip(HOM_PARAMETERS, params)))
            return 1.0 - eval_g2_sd(cfg, 0.0) / reference_g2_zero(cfg)

        params = result.vector(HOM_PARAMETERS)
        derived: Dict[str, Optional[float]] = {
            "v_hom": visibility(params),
            "v_hom_sigma": propagate(
                visibility, result, HOM_PARAMETERS, lower, upper
            ),
            "v_hom_intrinsic": intrinsic(params),
            "v_hom_intrinsic_sigma": propagate(
                intrinsic, result, HOM_PARAMETERS, lower, upper
            ),
            "detuning_hz": result.params["detuning"] / TWO_PI,
            "sd_sigma_hz": result.params["sd_sigma"] / TWO_PI,
            "bin_width_ps": bin_width / PS,
        }
        if "eta" in result.unidentifiable:
            derived["v_hom_sigma"] = None
            derived["v_hom_intrinsic_sigma"] = None

        try:
            scale = result.params["scale"]
            scaled = G2Curve(
                tau_ps=curve.tau_ps,
                g2=curve.g2 / scale,
                sigma=curve.sigma / scale,
                counts=curve.counts,
                bin_width_ps=curve.bin_width_ps,
            )
            fitted = hom_config(init.tpi, result.params)
            bin_zero = hom_visibility(scaled, ModelBaseline(fitted))
            derived["v_hom_bin_zero"] = bin_zero.visibility
            derived["v_hom_bin_zero_sigma"] = bin_zero.sigma
        except (ValueError, DomainError) as e:
            logger.warning(f"No bin-zero visibility: {e}")

        result.derived.update(derived)


# --- single emitter ----------------------------------------------------------


class RabiFitModel(FitModelAdapter):
    name = "rabi"
    data_kind = "g2"
    init_model = RabiFitInit

    def fit(self, data: G2Curve, init: RabiFitInit) -> FitResult:
        curve = data
        emitter = init.emitter
        jitter = init.jitter_sigma_ps * PS
        bin_width = (init.bin_width_ps or curve.bin_width_ps) * PS

        start = {
            "rabi_frequency": emitter.rabi_frequency,
            "dephasing_rate": emitter.dephasing_rate,
            "excitation_rate": emitter.excitation_rate,
            "radiative_lifetime": emitter.radiative_lifetime,
            "rho": init.rho,
            "scale": init.scale,
        }
        if init.mode is G2Mode.COHERENT_DRIVE and start["rabi_frequency"] <= 0:
            peak = dominant_beat_frequency(
                curve, baseline=1.0, min_frequency=fourier_limit(emitter.t1)
            )
            start["rabi_frequency"] = TWO_PI * peak
            logger.debug(f"Rabi frequency start from spectrum: {peak:.4g} Hz")

        def model(params: np.ndarray, tau: np.ndarray) -> np.ndarray:
            values = dict(zip(RABI_PARAMETERS, params))
            trial = emitter.model_copy(
                update={
                    "rabi_frequency": values["rabi_frequency"],
                    "dephasing_rate": values["dephasing_rate"],
                    "excitation_rate": values["excitation_rate"],
                    "radiative_lifetime": values["radiative_lifetime"],
                }
            )
            g2 = detector_average(
                lambda t: eval_g2_single(trial, t, init.mode),
                tau,
                jitter_sigma=jitter,
                bin_width=bin_width,
                max_frequency=values["rabi_frequency"],
            )
            return values["scale"] * (1.0 + values["rho"] ** 2 * (g2 - 1.0))

        lower = np.array([1.0, 0.0, 0.0, 1e-6, 0.0, 0.0])
        upper = np.array([np.inf, np.inf, np.inf, np.inf, 1.0, np.inf])
        initial = np.clip([start[n] for n in RABI_PARAMETERS], lower, upper)
        problem = FitProblem(
            model=model,
            x=curve.tau_s,
            y=curve.g2,
            sigma=curve.sigma,
            initial=initial,
            names=list(RABI_PARAMETERS),
            lower=lower,
            upper=upper,
            fixed=_fixed_mask(RABI_PARAMETERS, init.free_parameters()),
        )
        result = lsq_fit(problem)
        result.model = self.name

        params = result.vector(RABI_PARAMETERS)
        result.derived.update(
            {
                "g2_zero": float(model(params, np.zeros(1))[0]),
                "rabi_frequency_hz": result.params["rabi_frequency"] / TWO_PI,
            }
        )
        return result


# --- Stark tuning ------------------------------------------------------------


def stark_objects(values: Dict[str, float]) -> Tuple[StarkModel, TrapParams]:
    """Unvalidated model/trap pair for use inside the fitter."""
    model = StarkModel.model_construct(
        mu_tin=values["mu_tin"],
        alpha=values["alpha"],
        beta=values["beta"],
        gamma_4=values["gamma_4"],
        trap_field=values["trap_field"],
        field_offset=values["field_offset"],
        voltage_to_field=values["voltage_to_field"],
    )
    trap = TrapParams.model_construct(
        a0=values["a0"],
        mu_trap=values["mu_trap"],
        thermal_energy=values["thermal_energy"],
    )
    return model, trap


class StarkFitModel(FitModelAdapter):
    name = "stark"
    data_kind = "tuning"
    init_model = StarkFitInit

    trap_parameters = ["trap_field", "a0", "mu_trap", "thermal_energy"]

    def _start(
        self, init: StarkFitInit, curve: TuningCurve
    ) -> Dict[str, float]:
        model, trap = init.params.model, init.params.trap
        start = {**model.model_dump(), **trap.model_dump()}
        polynomial = ("mu_tin", "alpha", "beta", "gamma_4")
        coefficients = [start[n] for n in polynomial]

        if init.polynomial_start and not any(coefficients):
            field = model.field_at(curve.voltage)
            weights = None if curve.sigma is None else 1.0 / curve.sigma
            c4, c3, c2, c1, _ = np.polyfit(field, curve.detuning, 4, w=weights)
            start.update(
                mu_tin=-c1, alpha=-2.0 * c2, beta=-6.0 * c3, gamma_4=-24.0 * c4
            )
            logger.debug("Polynomial coefficients seeded from a quartic fit")
        return start

    def fit(self, data: TuningCurve, init: StarkFitInit) -> FitResult:
        curve = data
        if len(curve) < 2:
            raise PreconditionError("tuning curve needs at least two points")

        start = self._start(init, curve)

        def model(params: np.ndarray, voltage: np.ndarray) -> np.ndarray:
            stark, trap = stark_objects(dict(zip(STARK_PARAMETERS, params)))
            return stark_total(stark, trap, voltage)

        lower = np.full(len(STARK_PARAMETERS), -np.inf)
        lower[STARK_PARAMETERS.index("thermal_energy")] = 1e-12
        fixed = _fixed_mask(
            STARK_PARAMETERS,
            [n for n in STARK_PARAMETERS if n not in init.fixed],
        )
        problem = FitProblem(
            model=model,
            x=curve.voltage,
            y=curve.detuning,
            sigma=curve.sigma,
            initial=np.array([start[n] for n in STARK_PARAMETERS]),
            names=list(STARK_PARAMETERS),
            lower=lower,
            fixed=fixed,
        )
        result = lsq_fit(problem)
        result.model = self.name

        self._check_trap(result, curve)
        self._derive(result, init, curve, lower)
        return result

    def _check_trap(self, result: FitResult, curve: TuningCurve) -> None:
        free_trap = [
            n for n in self.trap_parameters if n not in result.fixed
        ]
        if not free_trap:
            return

        stark, trap = stark_objects(result.params)
        kink = kink_voltage(stark, trap)
        inside = kink is not None and (
            curve.voltage.min() <= kink <= curve.voltage.max()
        )

        field = stark.field_at(curve.voltage)
        split = np.abs(
            stark_branch(stark, field, +1) - stark_branch(stark, field, -1)
        )
        if curve.sigma is None:
            noise = math.sqrt(max(result.chi2_reduced, 0.0))
        else:
            noise = float(np.median(curve.sigma))
        resolved = float(split.max()) >= 3.0 * noise

        if not (inside and resolved):
            logger.warning(
                "Charge trap not constrained by the data "
                f"(kink inside span: {inside}, branches resolved: {resolved})"
            )
            result.flag(*free_trap)

    def _derive(
        self,
        result: FitResult,
        init: StarkFitInit,
        curve: TuningCurve,
        lower: np.ndarray,
    ) -> None:
        stark, trap = stark_objects(result.params)
        bracket = init.range_bracket_v or [
            float(curve.voltage.min()),
            float(curve.voltage.max()),
        ]
        kink = kink_voltage(stark, trap)

        def kink_of(params: np.ndarray) -> float:
            s, t = stark_objects(dict(zip(STARK_PARAMETERS, params)))
            value = kink_voltage(s, t)
            return float("nan") if value is None else value

        kink_sigma: Optional[float] = None
        if kink is not None and "a0" not in result.unidentifiable:
            kink_sigma = propagate(kink_of, result, STARK_PARAMETERS, lower)

        result.derived.update(
            {
                "kink_voltage": kink,
                "kink_voltage_sigma": kink_sigma,
                "tuning_range_hz": tuning_range(
                    stark, trap, (bracket[0], bracket[1])
                ),
            }
        )


class FitModelFactory:
    _strategies: Dict[str, FitModelAdapter] = {
        "hom": HomFitModel(),
        "rabi": RabiFitModel(),
        "stark": StarkFitModel(),
    }

    @classmethod
    def get_strategy(cls, name: str) -> FitModelAdapter:
        strategy = cls._strategies.get(name)

        if strategy is None:
            raise ValueError(f"No fit model found for name: {name}")

        return strategy

    @classmethod
    def names(cls) -> List[str]:
        return sorted(cls._strategies)


def fit_g2_hom(curve: G2Curve, init: HomFitInit) -> FitResult:
    return FitModelFactory.get_strategy("hom").fit(curve, init)


def fit_rabi(curve: G2Curve, init: RabiFitInit) -> FitResult:
    return FitModelFactory.get_strategy("rabi").fit(curve, init)


def fit_stark(curve: TuningCurve, init: StarkFitInit) -> FitResult:
    return FitModelFactory.get_strategy("stark").fit(curve, init)
