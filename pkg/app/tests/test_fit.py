import numpy as np
import pytest

from src.errors import EvaluationError, PreconditionError
from src.fit import lsq_fit, numeric_jacobian, propagate
from src.fit_models import FitProblem, FitStatus


def line(p, x):
    return p[0] * x + p[1]


def decay(p, x):
    return p[0] * np.exp(-x / p[1])


def test_exact_line_fit():
    x = np.linspace(0, 10, 21)
    problem = FitProblem(
        model=line,
        x=x,
        y=2.0 * x + 1.0,
        initial=np.array([0.5, 0.0]),
        names=["slope", "offset"],
        sigma=np.full(x.size, 0.1),
    )
    result = lsq_fit(problem)
    assert result.status is FitStatus.CONVERGED
    assert result.params["slope"] == pytest.approx(2.0, abs=1e-8)
    assert result.params["offset"] == pytest.approx(1.0, abs=1e-8)
    assert result.chi2 == pytest.approx(0.0, abs=1e-10)
    assert not result.unidentifiable


def test_chi2_history_never_increases():
    x = np.linspace(0, 10, 50)
    problem = FitProblem(
        model=decay,
        x=x,
        y=decay([10.0, 2.0], x),
        initial=np.array([3.0, 7.0]),
        names=["amplitude", "tau"],
        sigma=np.full(x.size, 0.2),
    )
    result = lsq_fit(problem)
    assert np.all(np.diff(result.history) <= 0)
    assert result.params["tau"] == pytest.approx(2.0, rel=1e-6)


def test_data_order_does_not_change_the_fit(rng):
    x = np.linspace(0, 10, 50)
    y = decay([10.0, 2.0], x) + rng.normal(0.0, 0.2, x.size)
    sigma = rng.uniform(0.1, 0.3, x.size)
    order = rng.permutation(x.size)

    def fit(index):
        return lsq_fit(
            FitProblem(
                model=decay,
                x=x[index],
                y=y[index],
                initial=np.array([8.0, 3.0]),
                names=["amplitude", "tau"],
                sigma=sigma[index],
            )
        )

    plain, shuffled = fit(np.arange(x.size)), fit(order)
    assert shuffled.chi2 == pytest.approx(plain.chi2, rel=1e-6)
    for name in ("amplitude", "tau"):
        assert shuffled.params[name] == pytest.approx(
            plain.params[name], rel=1e-6
        )
        assert shuffled.sigmas[name] == pytest.approx(
            plain.sigmas[name], rel=1e-4
        )


def test_uncertainties_cover_the_truth(rng):
    x = np.linspace(0, 10, 50)
    truth = np.array([10.0, 2.0])
    sigma = np.full(x.size, 0.2)
    covered = np.zeros(2, dtype=int)
    for _ in range(100):
        y = decay(truth, x) + rng.normal(0.0, 0.2, x.size)
        result = lsq_fit(
            FitProblem(
                model=decay,
                x=x,
                y=y,
                initial=np.array([8.0, 3.0]),
                names=["amplitude", "tau"],
                sigma=sigma,
            )
        )
        fitted = result.vector(["amplitude", "tau"])
        errors = np.array([result.sigmas["amplitude"], result.sigmas["tau"]])
        covered += np.abs(fitted - truth) <= 3 * errors
    assert np.all(covered >= 95)


def test_numeric_jacobian_matches_analytic():
    x = np.linspace(0, 10, 30)
    p = np.array([10.0, 2.0])
    analytic = np.column_stack(
        [np.exp(-x / p[1]), p[0] * x / p[1] ** 2 * np.exp(-x / p[1])]
    )
    for method in ("central", "forward"):
        numeric = numeric_jacobian(decay, p, x, method=method)
        scale = np.abs(analytic).max(axis=0)
        error = np.abs(numeric - analytic).max(axis=0) / scale
        assert np.all(error < 1e-4)


def test_jacobian_turns_one_sided_at_a_bound():
    x = np.linspace(0, 1, 5)
    p = np.array([1.0, 0.0])
    jac = numeric_jacobian(
        lambda q, t: q[0] * t + np.sqrt(q[1]),
        p,
        x,
        columns=np.array([0]),
        lower=np.array([0.0, 0.0]),
        upper=np.array([1.0, np.inf]),
    )
    np.testing.assert_allclose(jac[:, 0], x, atol=1e-6)


def test_numeric_jacobian_rejects_unknown_method():
    with pytest.raises(PreconditionError):
        numeric_jacobian(line, np.ones(2), np.ones(3), method="complex")


def test_degenerate_product_flags_both_factors():
    x = np.linspace(1, 5, 20)
    problem = FitProblem(
        model=lambda p, t: p[0] * p[1] * t,
        x=x,
        y=6.0 * x,
        initial=np.array([1.0, 1.0]),
        names=["a", "b"],
        sigma=np.full(x.size, 0.1),
    )
    result = lsq_fit(problem)
    assert sorted(result.unidentifiable) == ["a", "b"]
    assert result.sigmas["a"] is None
    assert result.sigmas["b"] is None
    assert result.status is FitStatus.SINGULAR


def test_redundant_sum_is_singular():
    x = np.linspace(1, 5, 20)
    problem = FitProblem(
        model=lambda p, t: (p[0] + p[1]) * t,
        x=x,
        y=6.0 * x,
        initial=np.array([1.0, 1.0]),
        names=["a", "b"],
        sigma=np.full(x.size, 0.1),
    )
    result = lsq_fit(problem)
    assert result.status is FitStatus.SINGULAR
    assert sorted(result.unidentifiable) == ["a", "b"]
    assert result.params["a"] + result.params["b"] == pytest.approx(
        6.0, rel=1e-4
    )


def test_unused_parameter_is_flagged_and_fixed_one_has_zero_sigma():
    x = np.linspace(0, 10, 21)
    problem = FitProblem(
        model=lambda p, t: p[0] * t + p[2],
        x=x,
        y=3.0 * x + 0.5,
        initial=np.array([1.0, 4.0, 0.5]),
        names=["slope", "unused", "offset"],
        sigma=np.full(x.size, 0.1),
        fixed=np.array([False, False, True]),
    )
    result = lsq_fit(problem)
    assert result.unidentifiable == ["unused"]
    assert result.sigmas["unused"] is None
    assert result.sigmas["offset"] == 0.0
    assert result.fixed == ["offset"]
    assert result.params["slope"] == pytest.approx(3.0, abs=1e-8)


def test_bounds_are_respected():
    x = np.linspace(0, 10, 21)
    problem = FitProblem(
        model=line,
        x=x,
        y=2.0 * x + 1.0,
        initial=np.array([0.5, 0.0]),
        names=["slope", "offset"],
        upper=np.array([1.5, np.inf]),
    )
    result = lsq_fit(problem)
    assert result.params["slope"] <= 1.5


def test_preconditions():
    x = np.arange(3.0)
    with pytest.raises(PreconditionError):
        FitProblem(line, x, x, np.ones(2), ["a"])
    with pytest.raises(PreconditionError):
        FitProblem(line, x, x, np.ones(2), ["a", "b"], sigma=np.zeros(3))
    with pytest.raises(PreconditionError):
        FitProblem(
            line, x, x, np.ones(2), ["a", "b"], lower=np.array([2.0, 0.0])
        )
    with pytest.raises(PreconditionError):
        FitProblem(line, x[:1], x[:1], np.ones(2), ["a", "b"])


def test_non_finite_model_names_the_parameters():
    x = np.arange(4.0)
    problem = FitProblem(
        model=lambda p, t: np.full(t.shape, np.nan),
        x=x,
        y=x,
        initial=np.array([1.0, 2.0]),
        names=["a", "b"],
    )
    with pytest.raises(EvaluationError) as info:
        lsq_fit(problem)
    assert info.value.describe_params() == {"a": 1.0, "b": 2.0}


def test_unit_weights_rescale_covariance(rng):
    x = np.linspace(0, 10, 40)
    y = 2.0 * x + 1.0 + rng.normal(0, 0.5, x.size)
    weighted = lsq_fit(
        FitProblem(line, x, y, np.zeros(2), ["s", "o"], np.full(40, 0.5))
    )
    unweighted = lsq_fit(FitProblem(line, x, y, np.zeros(2), ["s", "o"]))
    assert unweighted.sigmas["s"] == pytest.approx(
        weighted.sigmas["s"], rel=0.4
    )


def test_propagate_sum_of_parameters():
    x = np.linspace(0, 10, 21)
    result = lsq_fit(
        FitProblem(
            line,
            x,
            2.0 * x + 1.0,
            np.zeros(2),
            ["s", "o"],
            np.full(x.size, 0.1),
        )
    )
    cov = np.asarray(result.covariance)
    expected = np.sqrt(cov[0, 0] + cov[1, 1] + 2 * cov[0, 1])
    spread = propagate(lambda p: p[0] + p[1], result, ["s", "o"])
    assert spread == pytest.approx(expected, rel=1e-5)
