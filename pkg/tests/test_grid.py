import numpy as np
import pytest

from fcox.grid import Grid, integrate, make_grid, make_uniform_grid


def test_four_point_trapezoid_weights():
    g = make_uniform_grid(4)
    np.testing.assert_allclose(g.points, [0.0, 1 / 3, 2 / 3, 1.0], atol=1e-15)
    np.testing.assert_allclose(g.weights, [1 / 6, 1 / 3, 1 / 3, 1 / 6], atol=1e-15)


@pytest.mark.parametrize("size", [0, 1, 2, 3])
def test_too_small_grid_rejected(size):
    with pytest.raises(ValueError):
        make_uniform_grid(size)


def test_weights_normalized():
    g = make_uniform_grid(101)
    assert abs(g.weights.sum() - 1.0) <= 1e-14
    assert np.all(g.weights > 0)


def test_integrate_constant_and_linear_exact():
    for size in (4, 11, 101):
        g = make_uniform_grid(size)
        assert integrate(np.ones(size), g) == pytest.approx(1.0, abs=1e-14)
        # trapezoid integrates linear functions exactly
        assert integrate(g.points, g) == pytest.approx(0.5, abs=1e-14)


def test_integrate_square_against_antiderivative():
    # oracle: int_0^1 s^2 ds = s^3/3 |_0^1 = 1/3
    g = make_uniform_grid(101)
    assert integrate(g.points ** 2, g) == pytest.approx(1 / 3, abs=1e-4)


def test_integrate_length_mismatch():
    g = make_uniform_grid(11)
    with pytest.raises(ValueError):
        integrate(np.ones(10), g)


def test_integrate_is_linear():
    rng = np.random.default_rng(0)
    g = make_uniform_grid(23)
    for _ in range(20):
        f, h = rng.standard_normal((2, 23))
        a, b = rng.standard_normal(2)
        lhs = integrate(a * f + b * h, g)
        rhs = a * integrate(f, g) + b * integrate(h, g)
        assert lhs == pytest.approx(rhs, abs=1e-12)


def test_refinement_converges_quadratically():
    sizes = [11]
    while sizes[-1] < 200:
        sizes.append(2 * sizes[-1] - 1)
    errors = []
    for size in sizes:
        g = make_uniform_grid(size)
        errors.append(abs(integrate(g.points ** 2, g) - 1 / 3))
    for coarse, fine in zip(errors, errors[1:]):
        assert fine < coarse
        # halving h divides the trapezoid error by about four
        assert fine == pytest.approx(coarse / 4, rel=0.2)


def test_grid_invariants_enforced():
    with pytest.raises(ValueError):
        Grid(np.array([0.0, 0.5, 0.5, 1.0]), np.full(4, 0.25))  # not strictly increasing
    with pytest.raises(ValueError):
        Grid(np.array([0.1, 0.4, 0.7, 1.0]), np.full(4, 0.25))  # does not start at 0
    with pytest.raises(ValueError):
        Grid(np.array([0.0, 0.3, 0.6, 0.9]), np.full(4, 0.25))  # does not end at 1
    with pytest.raises(ValueError):
        Grid(np.linspace(0, 1, 4), np.array([0.5, 0.5, 0.5, -0.5]))  # negative weight
    with pytest.raises(ValueError):
        Grid(np.linspace(0, 1, 4), np.full(4, 0.3))  # does not sum to 1


def test_make_grid_non_uniform():
    pts = np.array([0.0, 0.1, 0.15, 0.4, 0.8, 1.0])
    g = make_grid(pts)
    assert abs(g.weights.sum() - 1.0) <= 1e-14
    assert integrate(2.0 * pts + 1.0, g) == pytest.approx(2.0, abs=1e-14)


def test_grid_equality_and_immutability():
    g1 = make_uniform_grid(11)
    g2 = make_uniform_grid(11)
    assert g1 == g2
    assert g1 != make_uniform_grid(12)
    with pytest.raises(ValueError):
        g1.points[0] = 0.5
