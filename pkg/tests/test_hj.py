import numpy as np
import pytest

from spinglass.core import MixtureFunction
from spinglass.hj import (CharacteristicPrediction, PathPair, StepPath,
                          characteristic_predict, characteristics_through,
                          hj_residual, hopf_lax, limit_free_energy_from_hj,
                          path_gradient, psi_initial)
from spinglass.recursion import gauss_hermite_normal, log_2cosh

SK = MixtureFunction.sk()


def _psi_constant_oracle(h):
    """psi(q = h) = h - E log 2cosh(sqrt(2h) Z), by adaptive quadrature."""
    from scipy.integrate import quad
    density = lambda z: np.exp(-z * z / 2) / np.sqrt(2 * np.pi)
    integral, _ = quad(lambda z: density(z) * log_2cosh(np.sqrt(2 * h) * z),
                       -12, 12, limit=200)
    return float(h - integral)


def _tanh2_oracle(h, order=80):
    """E tanh^2(sqrt(2h) Z), the flat psi gradient density at q = h."""
    x, w = gauss_hermite_normal(order)
    return float(w @ np.tanh(np.sqrt(2 * h) * x) ** 2)


class TestPaths:
    def test_validation(self):
        with pytest.raises(ValueError):
            StepPath((0.2, 0.1))
        with pytest.raises(ValueError):
            StepPath((-0.1, 0.2))
        with pytest.raises(ValueError):
            StepPath(())

    def test_constant(self):
        q = StepPath.constant(0.3, 4)
        assert q.values == (0.3,) * 4 and q.m == 4

    def test_pair_grid_mismatch(self):
        with pytest.raises(ValueError):
            PathPair(StepPath.constant(0.1, 4), StepPath.constant(0.1, 5))


class TestPsiInitial:
    def test_zero_path(self):
        assert psi_initial(StepPath.constant(0.0, 8)) == pytest.approx(
            -np.log(2.0), abs=1e-12)

    # Gauss-Hermite converges slowly on the log cosh kink as the variance
    # grows, so the tolerance widens with h
    @pytest.mark.parametrize("h,tol", [(0.1, 1e-10), (0.5, 1e-8), (1.3, 1e-5)])
    @pytest.mark.parametrize("m", [1, 4, 16])
    def test_constant_closed_form(self, h, tol, m):
        got = psi_initial(StepPath.constant(h, m), quad_order=40)
        assert got == pytest.approx(_psi_constant_oracle(h), abs=tol)

    def test_degenerate_steps_collapse(self):
        # (a,a,b,b) on m=4 carries the same levels as (a,b) on m=2
        fine = psi_initial(StepPath((0.2, 0.2, 0.7, 0.7)), quad_order=40)
        coarse = psi_initial(StepPath((0.2, 0.7)), quad_order=40)
        assert fine == pytest.approx(coarse, abs=1e-12)

    def test_bipartite_additive(self):
        q1 = StepPath((0.1, 0.3, 0.6, 0.6))
        q2 = StepPath.constant(0.4, 4)
        pair = PathPair(q1, q2)
        assert psi_initial(pair) == pytest.approx(
            psi_initial(q1) + psi_initial(q2), abs=1e-13)

    def test_monotone_grids_agree(self):
        # refining a step path on a compatible grid leaves psi unchanged
        q2 = StepPath((0.2, 0.8))
        q8 = StepPath((0.2,) * 4 + (0.8,) * 4)
        assert psi_initial(q8, quad_order=40) == pytest.approx(
            psi_initial(q2, quad_order=40), abs=1e-12)


class TestPathGradient:
    @pytest.mark.parametrize("h", [0.2, 0.8])
    def test_constant_path_density_is_flat_tanh2(self, h):
        q = StepPath.constant(h, 6)
        rho = path_gradient(lambda qq: psi_initial(qq, 40), q, merge_tol=1e-9)
        want = _tanh2_oracle(h)
        assert np.allclose(rho, want, atol=5e-6)

    def test_linear_functional_exact(self):
        # g(q) = (1/m) sum_j c_j q_j has density c
        c = np.array([0.5, 1.0, 2.0, 4.0])
        g = lambda q: float(c @ q.array()) / 4
        q = StepPath((0.1, 0.4, 0.9, 1.5))
        rho = path_gradient(g, q)
        assert np.allclose(rho, c, atol=1e-8)

    def test_step_validation(self):
        with pytest.raises(ValueError):
            path_gradient(lambda q: 0.0, StepPath.constant(0.1, 2), step=0.0)


class TestHopfLax:
    def test_t_zero_is_psi(self):
        q = StepPath((0.1, 0.2, 0.5, 0.5))
        assert hopf_lax(0.0, q, SK) == pytest.approx(psi_initial(q), abs=1e-12)

    def test_lower_bound_by_zero_increment(self):
        q = StepPath.constant(0.2, 4)
        assert hopf_lax(0.05, q, SK, seed=1) >= psi_initial(q) - 1e-9

    def test_monotone_in_t(self):
        q = StepPath.constant(0.0, 4)
        vals = [hopf_lax(t, q, SK, seed=1) for t in (0.02, 0.1, 0.2)]
        assert vals[0] <= vals[1] + 1e-9 <= vals[2] + 2e-9

    def test_rs_regime_flat(self):
        # below the symmetry-breaking time t = 1/4 the optimizer stays at
        # q' = 0 and f(t, 0) = psi(0) = -log 2
        value = hopf_lax(0.1, StepPath.constant(0.0, 8), SK, seed=0)
        assert value == pytest.approx(-np.log(2.0), abs=1e-9)

    def test_bridge_to_parisi_value(self):
        beta = 0.3
        t = beta**2 / 2
        value = hopf_lax(t, StepPath.constant(0.0, 8), SK, seed=0)
        free_energy = limit_free_energy_from_hj(value, t, SK)
        assert free_energy == pytest.approx(np.log(2.0) + beta**2 / 2,
                                            abs=1e-8)


class TestCharacteristicPredict:
    def test_validation(self):
        with pytest.raises(ValueError):
            characteristic_predict(StepPath.constant(0.1, 2), -0.1, SK)
        with pytest.raises(ValueError):
            characteristic_predict(PathPair(StepPath.constant(0.1, 2),
                                            StepPath.constant(0.1, 2)),
                                   0.1, SK)

    def test_short_time_matches_hopf_lax(self):
        t = 0.01
        q = StepPath((0.15, 0.3, 0.5, 0.75))
        pred = characteristic_predict(q, t, SK, quad_order=40)
        assert not pred.infeasible
        hl = hopf_lax(t, pred.target, SK, quad_order=40, seed=3)
        assert pred.predicted_value == pytest.approx(hl, abs=1e-4)

    def test_line_equation(self):
        t = 0.05
        q = StepPath((0.3, 0.6, 0.9, 1.2))
        pred = characteristic_predict(q, t, SK)
        p = np.array(pred.gradient[0])
        line = q.array() - t * 2.0 * p  # grad xi = 2p for SK
        assert np.allclose(pred.target.array(), line, atol=1e-10)

    def test_infeasible_target_flagged(self):
        # a large time pushes the line below zero
        q = StepPath.constant(0.05, 4)
        pred = characteristic_predict(q, 2.0, SK)
        assert pred.infeasible and pred.target is None


class TestCharacteristicsThrough:
    def test_single_type_unique_source(self):
        t = 0.02
        target = StepPath((0.1, 0.25, 0.45, 0.7))
        preds = characteristics_through(t, target, SK, n_starts=4, seed=0)
        assert len(preds) == 1
        hl = hopf_lax(t, target, SK, seed=1)
        assert preds[0].predicted_value == pytest.approx(hl, abs=1e-4)

    def test_bipartite_short_time_unique(self):
        m = 4
        target = PathPair(StepPath.constant(0.1, m), StepPath.constant(0.1, m))
        preds = characteristics_through(0.1, target, "bipartite",
                                        n_starts=4, seed=0)
        assert len(preds) == 1

    def test_bipartite_crossing_regime(self):
        # above the source-multiplicity threshold two lines hit the origin
        m = 4
        target = PathPair(StepPath.constant(0.0, m), StepPath.constant(0.0, m))
        preds = characteristics_through(0.8, target, "bipartite",
                                        n_starts=8, seed=5)
        assert len(preds) == 2
        values = sorted(p.predicted_value for p in preds)
        assert values[0] == pytest.approx(-2 * np.log(2.0), abs=1e-8)
        assert values[1] > values[0] + 1e-3

    def test_t_validation(self):
        with pytest.raises(ValueError):
            characteristics_through(0.0, StepPath.constant(0.0, 2), SK)


class TestHjResidual:
    def test_constant_path_hopf_lax_solution(self):
        def f(t, h):
            return hopf_lax(t, StepPath.constant(h, 4), SK, seed=2)
        res = hj_residual(f, 0.1, 0.2, SK, dt=1e-3, dq=1e-3,
                          constant_path=True)
        assert abs(res) <= 1e-3

    def test_stencil_validation(self):
        with pytest.raises(ValueError):
            hj_residual(lambda t, h: 0.0, 0.1, 0.1, SK, dt=0.0,
                        constant_path=True)


def test_prediction_dataclass_fields():
    pred = CharacteristicPrediction(source=StepPath.constant(0.1, 2),
                                    target=StepPath.constant(0.1, 2),
                                    t=0.1, predicted_value=-0.5,
                                    gradient=((0.1, 0.1),), infeasible=False)
    assert pred.t == 0.1
