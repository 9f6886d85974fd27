import numpy as np
import pytest

from spinglass.recursion import (backward_value, gauss_hermite_normal,
                                 log_2cosh, log_cosh)

# E log 2cosh(Z), Z ~ N(0,1), from high-order quadrature (converged to
# machine precision well below order 200)
E_LOG_2COSH_STD = 1.0677143880513844


def test_gauss_hermite_normalized():
    x, w = gauss_hermite_normal(20)
    assert w.sum() == pytest.approx(1.0, abs=1e-13)
    assert (w @ x**2) == pytest.approx(1.0, abs=1e-12)


def test_gauss_hermite_log2cosh_oracle():
    x, w = gauss_hermite_normal(40)
    assert w @ log_2cosh(x) == pytest.approx(E_LOG_2COSH_STD, abs=1e-8)


def test_log_2cosh_stable():
    assert log_2cosh(0.0) == pytest.approx(np.log(2.0))
    assert log_2cosh(800.0) == pytest.approx(800.0)  # no overflow
    assert log_cosh(0.0) == 0.0


def test_no_levels_returns_terminal():
    assert backward_value([], log_2cosh, x0=0.3) == pytest.approx(
        log_2cosh(0.3))


def test_zero_variance_levels_drop():
    a = backward_value([(1.0, 0.5)], log_2cosh)
    b = backward_value([(0.0, 0.2), (1.0, 0.5), (0.0, 0.9)], log_2cosh)
    assert a == pytest.approx(b, abs=1e-14)


def test_single_level_plain_average():
    # zeta = 0 collapses to E log 2cosh(sqrt(v) Z)
    v = 1.0
    assert backward_value([(v, 0.0)], log_2cosh, quad_order=40) == \
        pytest.approx(E_LOG_2COSH_STD, abs=1e-8)


def test_zeta_one_is_moment_generating():
    # zeta = 1: log E exp(log 2cosh(sqrt(v) Z)) = log E 2cosh = log 2 + v/2
    v = 0.7
    got = backward_value([(v, 1.0)], log_2cosh, quad_order=40)
    assert got == pytest.approx(np.log(2.0) + v / 2.0, abs=1e-10)


def test_small_zeta_continuous_at_zero():
    a = backward_value([(0.5, 0.0)], log_2cosh, quad_order=40)
    b = backward_value([(0.5, 1e-10)], log_2cosh, quad_order=40)
    assert a == pytest.approx(b, abs=1e-8)


@pytest.mark.parametrize("levels", [
    [(0.3, 0.0), (0.4, 0.25), (0.3, 0.75)],
    [(0.1, 0.0), (0.2, 0.2), (0.3, 0.5), (0.4, 0.9)],
])
def test_tree_and_grid_agree(levels):
    tree = backward_value(levels, log_2cosh, quad_order=40, mode="tree")
    grid = backward_value(levels, log_2cosh, quad_order=40, mode="grid")
    assert grid == pytest.approx(tree, abs=1e-9)


def test_grid_refinement_converges():
    levels = [(0.5, 0.0), (0.5, 0.5)]
    exact = backward_value(levels, log_2cosh, quad_order=60, mode="tree")
    coarse = backward_value(levels, log_2cosh, quad_order=40, mode="grid",
                            nx=401)
    fine = backward_value(levels, log_2cosh, quad_order=40, mode="grid",
                          nx=1601)
    assert abs(fine - exact) < abs(coarse - exact) + 1e-12
    assert fine == pytest.approx(exact, abs=1e-9)


def test_nonzero_x0():
    got = backward_value([(0.4, 0.0)], log_2cosh, quad_order=40, x0=1.3)
    x, w = gauss_hermite_normal(40)
    want = w @ log_2cosh(1.3 + np.sqrt(0.4) * x)
    assert got == pytest.approx(want, abs=1e-12)


def test_validation():
    with pytest.raises(ValueError):
        backward_value([(1.0, 0.0)], log_2cosh, quad_order=1)
    with pytest.raises(ValueError):
        backward_value([(1.0, -0.5)], log_2cosh)
    with pytest.raises(ValueError):
        # 40^20 nodes cannot be forced through tree mode
        backward_value([(0.1, 0.0)] * 20, log_2cosh, mode="tree")
    with pytest.raises(ValueError):
        backward_value([(1.0, 0.0)], log_2cosh, mode="magic")
