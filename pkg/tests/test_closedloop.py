from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from conftest import CONGESTION_NE, DEMAND_NE
from pdmlab.closedloop import convergence_report, distance_to_set, integrate, integrate_batch, time_to_tolerance
from pdmlab.edm import bnn_protocol, logit_protocol, mean_dynamic, smith_protocol
from pdmlab.equilibria import EquilibriumSet, nash_set, perturbed_equilibrium
from pdmlab.errors import IntegrationDivergedError, InvalidArgumentError
from pdmlab.games import congestion_example, demand_response_example, task_allocation_example
from pdmlab.pdm import PdmModel

CONGESTION_SET = EquilibriumSet(CONGESTION_NE[None], "nash", 1e-8)
DEMAND_SET = EquilibriumSet(DEMAND_NE[None], "nash", 1e-8)


class TestIntegrate:
    def test_bnn_congestion_from_spread_state(self):
        tr = integrate(PdmModel.memoryless(congestion_example()), bnn_protocol(3), [0.8, 0.1, 0.1], T=50.0)
        assert distance_to_set(tr.x[-1], CONGESTION_SET) < 1e-3

    def test_bnn_congestion_agrees_with_adaptive_reference(self):
        g = congestion_example()
        proto = bnn_protocol(3)
        ref = solve_ivp(
            lambda t, x: mean_dynamic(proto, x, g(x)), (0, 50), [0.8, 0.1, 0.1], method="DOP853", rtol=1e-12, atol=1e-14
        )
        tr = integrate(PdmModel.memoryless(g), proto, [0.8, 0.1, 0.1], T=50.0)
        np.testing.assert_allclose(tr.x[-1], ref.y[:, -1], atol=1e-9)

    def test_smith_smoothing_demand_response(self):
        tr = integrate(PdmModel.smoothing(demand_response_example(), 1.0), smith_protocol(3), [1, 0, 0], T=50.0)
        assert distance_to_set(tr.x[-1], DEMAND_SET) < 1e-3

    @pytest.mark.parametrize("proto", [bnn_protocol(3), smith_protocol(3)], ids=["bnn", "smith"])
    @pytest.mark.parametrize("kind", ["memoryless", "smoothing", "anticipatory"])
    def test_rest_point_stays(self, proto, kind):
        g = congestion_example()
        pdm = {
            "memoryless": PdmModel.memoryless(g),
            "smoothing": PdmModel.smoothing(g, 1.0),
            "anticipatory": PdmModel.anticipatory(g, 1.0, 5.0),
        }[kind]
        tr = integrate(pdm, proto, CONGESTION_NE, T=20.0)
        assert np.max(np.abs(tr.x[-1] - CONGESTION_NE)) <= 1e-6

    def test_logit_rest_point_stays(self):
        g = task_allocation_example()
        pe = perturbed_equilibrium(g, 25.0).points[0]
        tr = integrate(PdmModel.memoryless(g), logit_protocol(3, 25.0), pe, T=20.0)
        assert np.max(np.abs(tr.x[-1] - pe)) <= 1e-6

    def test_matches_adaptive_reference(self):
        g = demand_response_example()
        pdm = PdmModel.smoothing(g, 1.0)
        proto = smith_protocol(3)
        x0 = np.array([0.7, 0.2, 0.1])

        def rhs(t, y):
            x, q = y[:3], y[3:]
            p = q  # smoothing output
            return np.concatenate([mean_dynamic(proto, x, p), g(x) - q])

        ref = solve_ivp(rhs, (0, 10), np.concatenate([x0, g(x0)]), method="DOP853", rtol=1e-12, atol=1e-13)
        tr = integrate(pdm, proto, x0, T=10.0, h=0.01)
        np.testing.assert_allclose(tr.x[-1], ref.y[:3, -1], atol=1e-8)
        np.testing.assert_allclose(tr.q[-1], ref.y[3:, -1], atol=1e-8)

    def test_samples_and_derivatives(self):
        tr = integrate(PdmModel.smoothing(congestion_example(), 1.0), bnn_protocol(3), [0.5, 0.2, 0.3], T=2.0, h=0.01)
        assert tr.t.shape == (201,) and tr.x.shape == (201, 3)
        np.testing.assert_allclose(tr.x.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(tr.x >= 0)
        central = (tr.p[2:] - tr.p[:-2]) / (2 * tr.h)
        np.testing.assert_allclose(tr.pdot[1:-1], central, atol=1e-12)
        assert tr.projection_total < 1e-5

    def test_batch_equals_single_runs(self):
        pdm = PdmModel.anticipatory(congestion_example(), 1.0, 5.0)
        X0 = np.array([[0.8, 0.1, 0.1], [0.1, 0.1, 0.8]])
        batch = integrate_batch(pdm, bnn_protocol(3), X0, T=5.0)
        for x0, tr in zip(X0, batch):
            single = integrate(pdm, bnn_protocol(3), x0, T=5.0)
            np.testing.assert_array_equal(single.x, tr.x)

    def test_step_halving(self):
        pdm = PdmModel.memoryless(congestion_example())
        a = integrate(pdm, bnn_protocol(3), [0.8, 0.1, 0.1], T=20.0, h=0.01)
        b = integrate(pdm, bnn_protocol(3), [0.8, 0.1, 0.1], T=20.0, h=0.005)
        assert np.max(np.abs(a.x[-1] - b.x[-1])) <= 1e-6

    def test_argument_checks(self):
        pdm = PdmModel.memoryless(congestion_example())
        with pytest.raises(InvalidArgumentError):
            integrate(pdm, bnn_protocol(3), [0.8, 0.1, 0.1], T=0.0)
        with pytest.raises(InvalidArgumentError):
            integrate(pdm, bnn_protocol(3), [0.8, 0.1, 0.1], T=1.0, h=2.0)
        with pytest.raises(InvalidArgumentError):
            integrate(pdm, bnn_protocol(3), [0.8, 0.3, 0.1], T=1.0)
        with pytest.raises(InvalidArgumentError):
            integrate(pdm, bnn_protocol(4), [0.25] * 4, T=1.0)

    def test_divergence_reports_time(self):
        pdm = PdmModel.anticipatory(congestion_example(), 50.0, 5.0)
        with pytest.raises(IntegrationDivergedError) as info:
            integrate(pdm, bnn_protocol(3), [0.8, 0.1, 0.1], T=50.0, h=0.01)
        assert 0 < info.value.time < 5.0


class TestDistance:
    def test_examples(self):
        pts = EquilibriumSet(np.array([[1.0, 0, 0], [0, 1.0, 0]]), "nash", 1e-8)
        assert distance_to_set([1.0, 0, 0], pts) == 0
        assert distance_to_set([0, 0, 1.0], pts) == 1
        assert distance_to_set([0.5, 0.4, 0.1], CONGESTION_SET) == pytest.approx(max(0.5 - 4 / 11, 6 / 11 - 0.4, 0.1 - 1 / 11))

    def test_empty_set(self):
        with pytest.raises(InvalidArgumentError):
            distance_to_set([1.0, 0, 0], EquilibriumSet(np.zeros((0, 3)), "nash", 1e-8))

    @settings(max_examples=100)
    @given(st.lists(st.floats(0, 1), min_size=3, max_size=3).filter(lambda w: sum(w) > 1e-3))
    def test_distance_is_min_sup_norm(self, w):
        z = np.array(w) / sum(w)
        pts = nash_set(congestion_example()).points
        assert distance_to_set(z, pts) == pytest.approx(np.max(np.abs(z - pts[0])))

    def test_time_to_tolerance(self):
        t = np.arange(5.0)
        assert time_to_tolerance(t, np.array([1, 0.5, 0.05, 0.2, 0.01]), 0.1) == 4.0
        assert time_to_tolerance(t, np.array([0.01] * 5), 0.1) == 0.0
        assert time_to_tolerance(t, np.array([1.0] * 5), 0.1) == np.inf


class TestConvergenceReport:
    def test_memoryless_gap_is_zero(self):
        g = congestion_example()
        tr = integrate(PdmModel.memoryless(g), bnn_protocol(3), [0.8, 0.1, 0.1], T=5.0)
        rep = convergence_report(tr, CONGESTION_SET, g)
        assert np.all(rep.payoff_gap == 0)

    def test_smoothing_gap_decays_after_transient(self):
        g = demand_response_example()
        tr = integrate(PdmModel.smoothing(g, 1.0), smith_protocol(3), [1, 0, 0], T=50.0)
        rep = convergence_report(tr, DEMAND_SET, g)
        assert rep.terminal_gap < 1e-9
        # the state spirals in, so the gap decays through damped oscillation; its envelope is monotone
        windows = rep.payoff_gap[tr.t >= 5.0][:4500].reshape(9, 500)
        assert np.all(np.diff(windows.max(axis=1)) < 0)
