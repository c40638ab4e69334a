import numpy as np
import pytest

from structpol.optim import batched_levenberg_marquardt_step, finite_difference_jacobian, levenberg_marquardt, objective


def curved(x):
    return np.array([x[0] ** 2 + np.sin(x[1]), x[0] * x[1], np.exp(0.3 * x[1])])


def curved_jacobian(x):
    return np.array([[2 * x[0], np.cos(x[1])], [x[1], x[0]], [0.0, 0.3 * np.exp(0.3 * x[1])]])


def rosenbrock(x):
    return np.array([10.0 * (x[1] - x[0] ** 2), 1.0 - x[0]])


def test_finite_differences_match_analytic_jacobian():
    rng = np.random.default_rng(0)
    for _ in range(20):
        x = rng.uniform(-2.0, 2.0, 2)
        np.testing.assert_allclose(finite_difference_jacobian(curved, x), curved_jacobian(x), atol=1e-4)


def test_finite_differences_stay_inside_bounds():
    seen = []

    def tracked(x):
        seen.append(x.copy())
        return np.array([3.0 * x[0] - x[1]])

    jac = finite_difference_jacobian(tracked, np.array([1.0, 0.0]), lower=np.array([0.0, 0.0]), upper=np.array([1.0, 1.0]))
    np.testing.assert_allclose(jac, [[3.0, -1.0]], atol=1e-6)
    assert all(np.all(x >= 0.0) and np.all(x <= 1.0) for x in seen)


def test_rosenbrock_converges():
    result = levenberg_marquardt(rosenbrock, np.array([-1.2, 1.0]), max_iterations=200)
    np.testing.assert_allclose(result.x, [1.0, 1.0], atol=1e-5)
    assert result.converged


def test_history_is_monotone_on_random_problems():
    rng = np.random.default_rng(1)
    t = np.linspace(0.0, 4.0, 30)
    for _ in range(20):
        a, b, c = rng.uniform(0.5, 2.0), rng.uniform(0.2, 1.5), rng.uniform(-0.5, 0.5)
        y = a * np.exp(-b * t) + c + rng.normal(scale=0.01, size=t.size)

        def residual(x):
            return x[0] * np.exp(-x[1] * t) + x[2] - y

        result = levenberg_marquardt(residual, rng.uniform(0.1, 3.0, 3), max_iterations=100)
        history = np.asarray(result.history)
        assert np.all(np.diff(history) <= 0.0)
        assert result.cost == pytest.approx(objective(residual(result.x)))
        assert result.cost <= history[0]


def test_solution_respects_bounds():
    result = levenberg_marquardt(lambda x: x - 5.0, np.array([0.0]), upper=np.array([2.0]))
    assert result.x[0] == pytest.approx(2.0)


def test_zero_iterations_returns_start():
    result = levenberg_marquardt(rosenbrock, np.array([-1.2, 1.0]), max_iterations=0)
    np.testing.assert_array_equal(result.x, [-1.2, 1.0])
    assert result.history == [pytest.approx(objective(rosenbrock(np.array([-1.2, 1.0]))))]
    assert result.iterations == 0


def test_batched_steps_solve_independent_problems():
    rng = np.random.default_rng(2)
    a = rng.normal(size=(40, 6, 3))
    b = rng.normal(size=(40, 6))

    def residual(x):
        return np.einsum("nrp,np->nr", a, x) - b

    x = np.zeros((40, 3))
    damping = np.full(40, 1e-3)
    previous = np.sum(residual(x) ** 2, axis=-1)
    for _ in range(30):
        step = batched_levenberg_marquardt_step(residual, x, damping)
        assert np.all(step.cost <= previous + 1e-15)
        x, damping, previous = step.x, step.damping, step.cost

    expected = np.stack([np.linalg.lstsq(a[n], b[n], rcond=None)[0] for n in range(40)])
    np.testing.assert_allclose(x, expected, atol=1e-6)


def test_batched_step_clips_into_bounds():
    step = batched_levenberg_marquardt_step(
        lambda x: x - 5.0, np.zeros((3, 1)), np.full(3, 1e-6), lower=np.array([-1.0]), upper=np.array([1.0])
    )
    np.testing.assert_allclose(step.x, 1.0)
    assert step.accepted.all()
