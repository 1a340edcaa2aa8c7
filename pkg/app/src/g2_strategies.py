from abc import ABC, abstractmethod

import numpy as np
from scipy.integrate import solve_ivp

from src.errors import DomainError
from src.models import EmitterParams, G2Mode


class SingleEmitterG2Strategy(ABC):
    """Normalized autocorrelation g2(tau) of one background-free emitter."""

    @abstractmethod
    def evaluate(self, params: EmitterParams, tau: np.ndarray) -> np.ndarray:
        pass


class RateEquationStrategy(SingleEmitterG2Strategy):
    """Incoherent pumping: g2 = 1 - exp(-(R + 1/T1) |tau|)."""

    def evaluate(self, params: EmitterParams, tau: np.ndarray) -> np.ndarray:
        rate = params.excitation_rate + params.decay_rate
        return -np.expm1(-rate * np.abs(tau))


class CoherentDriveStrategy(SingleEmitterG2Strategy):
    """Resonantly driven two-level system from the optical Bloch equations.

    g2(tau) = rho_ee(tau | ground state at 0) / rho_ee(steady state). Time is
    integrated in units of T1 with the Bloch components (v, w), w being the
    population inversion.
    """

    rtol = 1e-10
    atol = 1e-12

    def evaluate(self, params: EmitterParams, tau: np.ndarray) -> np.ndarray:
        if params.rabi_frequency <= 0:
            raise DomainError(
                "coherent_drive mode needs a positive rabi_frequency"
            )

        tau = np.asarray(tau, dtype=float)
        if tau.size == 0:
            return np.zeros_like(tau)

        t1 = params.t1
        omega = params.rabi_frequency * t1
        g_perp = 0.5 + params.dephasing_rate * t1

        s_eval, inverse = np.unique(
            np.abs(tau).ravel() / t1, return_inverse=True
        )
        if s_eval[-1] == 0.0:
            return np.zeros_like(tau)

        def bloch(_s, y):
            v, w = y
            return [-g_perp * v + omega * w, -omega * v - (w + 1.0)]

        solution = solve_ivp(
            bloch,
            (0.0, float(s_eval[-1])),
            [0.0, -1.0],
            method="DOP853",
            t_eval=s_eval,
            rtol=self.rtol,
            atol=self.atol,
        )
        if not solution.success:
            raise DomainError(
                f"Bloch equation integration failed: {solution.message}"
            )

        rho_ee = 0.5 * (1.0 + solution.y[1])
        rho_ee_steady = omega**2 / (2.0 * (g_perp + omega**2))
        g2 = rho_ee / rho_ee_steady
        # the integrator returns y0 at s = 0, so g2(0) is exactly 0
        return g2[inverse].reshape(tau.shape)


class G2StrategyFactory:
    _strategies = {
        G2Mode.RATE_EQUATION: RateEquationStrategy(),
        G2Mode.COHERENT_DRIVE: CoherentDriveStrategy(),
    }

    @classmethod
    def get_strategy(cls, mode: G2Mode) -> SingleEmitterG2Strategy:
        strategy = cls._strategies.get(G2Mode(mode))

        if strategy is None:
            raise ValueError(f"No g2 strategy found for mode: {mode}")

        return strategy
