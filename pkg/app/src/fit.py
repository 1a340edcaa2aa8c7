"""
Damped Gauss-Newton (Levenberg-Marquardt) least squares with bounds,
numeric Jacobians and an identifiability check on the result.
"""

import logging
from typing import List, Optional, Tuple

import numpy as np

from src.config import FitSettings, get_default_fit_settings
from src.errors import EvaluationError, PreconditionError
from src.fit_models import FitProblem, FitResult, FitStatus, ModelFunction

logger = logging.getLogger("fit")

EPS = np.finfo(float).eps


def _evaluate(
    model: ModelFunction,
    params: np.ndarray,
    x: np.ndarray,
    names: Optional[List[str]] = None,
) -> np.ndarray:
    values = np.asarray(model(params, x), dtype=float)
    if not np.all(np.isfinite(values)):
        raise EvaluationError(
            "model returned non-finite values", params, names
        )
    return values


def numeric_jacobian(
    model: ModelFunction,
    params: np.ndarray,
    x: np.ndarray,
    columns: Optional[np.ndarray] = None,
    lower: Optional[np.ndarray] = None,
    upper: Optional[np.ndarray] = None,
    method: str = "central",
    names: Optional[List[str]] = None,
) -> np.ndarray:
    """d model / d params[columns] by finite differences.

    Steps are relative, eps^(1/3) max(|p|, 1) for central and eps^(1/2) for
    forward differences; near a bound the difference turns one-sided.
    """
    if method not in ("central", "forward"):
        raise PreconditionError(f"unknown difference method '{method}'")
    params = np.asarray(params, dtype=float)
    n = params.size
    columns = np.arange(n) if columns is None else np.asarray(columns)
    lower = np.full(n, -np.inf) if lower is None else lower
    upper = np.full(n, np.inf) if upper is None else upper

    base = None
    power = 1.0 / 3.0 if method == "central" else 0.5
    jac = np.empty((np.size(x), columns.size))

    for out, j in enumerate(columns):
        h = EPS**power * max(abs(params[j]), 1.0)
        up_ok = params[j] + h <= upper[j]
        down_ok = params[j] - h >= lower[j]

        if method == "central" and up_ok and down_ok:
            plus, minus = params.copy(), params.copy()
            plus[j] += h
            minus[j] -= h
            jac[:, out] = (
                _evaluate(model, plus, x, names)
                - _evaluate(model, minus, x, names)
            ) / (2.0 * h)
            continue

        if base is None:
            base = _evaluate(model, params, x, names)
        step = h if up_ok else -h
        shifted = params.copy()
        shifted[j] += step
        jac[:, out] = (_evaluate(model, shifted, x, names) - base) / step
    return jac


def _chi2(
    problem: FitProblem, params: np.ndarray
) -> Tuple[float, np.ndarray]:
    prediction = _evaluate(problem.model, params, problem.x, problem.names)
    residual = (problem.y - prediction) / problem.sigma
    return float(residual @ residual), residual


def _weighted_jacobian(
    problem: FitProblem, params: np.ndarray
) -> np.ndarray:
    jac = numeric_jacobian(
        problem.model,
        params,
        problem.x,
        columns=problem.free_index,
        lower=problem.lower,
        upper=problem.upper,
        names=problem.names,
    )
    return jac / problem.sigma[:, None]


def unidentifiable_columns(
    information: np.ndarray, condition_limit: float
) -> np.ndarray:
    """Mask of parameters that the information matrix cannot pin down.

    Columns without information are always flagged. If the correlation
    structure is worse conditioned than `condition_limit`, every parameter
    that carries weight in one of the offending eigen-directions is
    flagged as well.
    """
    diag = np.diag(information).copy()
    scale = diag.max() if diag.size else 0.0
    empty = diag <= EPS * scale if scale > 0 else np.ones(diag.size, bool)
    flagged = empty.copy()

    keep = np.flatnonzero(~empty)
    if keep.size < 2:
        return flagged

    d = np.sqrt(diag[keep])
    normalized = information[np.ix_(keep, keep)] / np.outer(d, d)
    values, vectors = np.linalg.eigh(normalized)
    top = values.max()
    weak = values * condition_limit < top
    if weak.any():
        heavy = np.abs(vectors[:, weak]) > 0.1
        flagged[keep[heavy.any(axis=1)]] = True
    return flagged


def lsq_fit(
    problem: FitProblem, settings: Optional[FitSettings] = None
) -> FitResult:
    settings = settings or get_default_fit_settings()
    free = problem.free_index
    lower = problem.lower[free]
    upper = problem.upper[free]

    params = problem.initial.copy()
    chi2, residual = _chi2(problem, params)
    history = [chi2]
    damping = settings.initial_damping
    status = FitStatus.MAX_ITER
    iterations = 0

    if free.size == 0 or chi2 == 0.0:
        status = FitStatus.CONVERGED

    while status is FitStatus.MAX_ITER and iterations < settings.max_iter:
        iterations += 1
        jac = _weighted_jacobian(problem, params)
        information = jac.T @ jac
        gradient = jac.T @ residual
        diag = np.diag(information).copy()
        if not np.all(np.isfinite(information)) or diag.max() <= 0:
            status = FitStatus.SINGULAR
            break
        diag = np.maximum(diag, EPS * diag.max())
        # steps are measured in the scaled variables sqrt(diag) * p
        scale = np.sqrt(diag)

        stepped = False
        while damping <= settings.max_damping:
            system = information + damping * np.diag(diag)
            delta = np.linalg.lstsq(system, gradient, rcond=None)[0]
            trial_free = np.clip(params[free] + delta, lower, upper)
            step = trial_free - params[free]
            small = np.linalg.norm(scale * step) <= settings.xtol * (
                np.linalg.norm(scale * params[free]) + settings.xtol
            )

            trial = params.copy()
            trial[free] = trial_free
            trial_chi2, trial_residual = _chi2(problem, trial)

            if trial_chi2 < chi2:
                params, chi2, residual = trial, trial_chi2, trial_residual
                history.append(chi2)
                damping = max(damping / 10.0, EPS)
                stepped = True
                if small or chi2 == 0.0:
                    status = FitStatus.CONVERGED
                break
            if small:
                status = FitStatus.CONVERGED
                break
            damping *= 10.0

        logger.debug(
            f"iteration {iterations}: chi2 = {chi2:.6g}, "
            f"damping = {damping:.1e}"
        )
        if status is not FitStatus.MAX_ITER:
            break
        if not stepped:
            # no downhill step even at maximum damping
            status = FitStatus.CONVERGED
            break

    return _summarize(
        problem, params, chi2, iterations, status, history, settings
    )


def _summarize(
    problem: FitProblem,
    params: np.ndarray,
    chi2: float,
    iterations: int,
    status: FitStatus,
    history: List[float],
    settings: FitSettings,
) -> FitResult:
    n = params.size
    free = problem.free_index
    dof = problem.y.size - free.size
    chi2_reduced = chi2 / dof if dof > 0 else float("nan")

    covariance = np.zeros((n, n))
    flagged_free = np.zeros(free.size, dtype=bool)
    if free.size:
        jac = _weighted_jacobian(problem, params)
        information = jac.T @ jac
        if np.all(np.isfinite(information)):
            cov_free = np.linalg.pinv(
                information, rcond=1e-15, hermitian=True
            )
            if not problem.absolute_sigma and dof > 0:
                cov_free *= chi2_reduced
            covariance[np.ix_(free, free)] = cov_free
            flagged_free = unidentifiable_columns(
                information, settings.condition_limit
            )
            if flagged_free.any():
                # rank-deficient normal equations
                status = FitStatus.SINGULAR
        else:
            status = FitStatus.SINGULAR
            flagged_free[:] = True

    names = problem.names
    flagged = [names[free[i]] for i in np.flatnonzero(flagged_free)]
    sigmas = {}
    for i, name in enumerate(names):
        if problem.fixed[i]:
            sigmas[name] = 0.0
        elif name in flagged:
            sigmas[name] = None
        else:
            sigmas[name] = float(np.sqrt(max(covariance[i, i], 0.0)))

    if flagged:
        logger.warning(f"Unidentifiable parameter(s): {', '.join(flagged)}")
    logger.info(
        f"Fit {status.value} after {iterations} iteration(s), "
        f"reduced chi2 = {chi2_reduced:.4g}"
    )
    return FitResult(
        params={name: float(v) for name, v in zip(names, params)},
        sigmas=sigmas,
        covariance=covariance.tolist(),
        chi2=chi2,
        chi2_reduced=chi2_reduced,
        iterations=iterations,
        status=status,
        fixed=[names[i] for i in np.flatnonzero(problem.fixed)],
        unidentifiable=flagged,
        history=history,
    )


def propagate(
    fn,
    result: FitResult,
    names: List[str],
    lower: Optional[np.ndarray] = None,
    upper: Optional[np.ndarray] = None,
    relative_step: float = 1e-6,
) -> float:
    """Standard deviation of fn(params) from the fit covariance.

    Uses a finite-difference gradient over the parameters in `names`,
    one-sided where a central step would leave the bounds.
    """
    params = result.vector(names)
    n = params.size
    lower = np.full(n, -np.inf) if lower is None else lower
    upper = np.full(n, np.inf) if upper is None else upper
    covariance = np.asarray(result.covariance)
    gradient = np.zeros(n)
    base = None
    for j in range(n):
        if covariance[j, j] <= 0:
            continue
        h = relative_step * max(abs(params[j]), np.sqrt(covariance[j, j]))
        plus, minus = params.copy(), params.copy()
        plus[j] += h
        minus[j] -= h
        if plus[j] <= upper[j] and minus[j] >= lower[j]:
            gradient[j] = (fn(plus) - fn(minus)) / (2.0 * h)
            continue
        if base is None:
            base = fn(params)
        if plus[j] <= upper[j]:
            gradient[j] = (fn(plus) - base) / h
        else:
            gradient[j] = (base - fn(minus)) / h
    variance = float(gradient @ covariance @ gradient)
    return float(np.sqrt(max(variance, 0.0)))
